import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffcurve.bezier import CubicBezier, arc_length
from diffcurve.errors import SceneParseError, SceneValidationError
from diffcurve.fixtures import circle_curve, dirichlet_bc, line_curve
from diffcurve.scene import (
    BoundaryCondition,
    ColorStops,
    DiffusionCurve,
    Scene,
    load_scene,
    preprocess_scene,
    sample_boundary_value,
    save_scene,
)

MINIMAL = {
    "curves": [
        {
            "id": "a",
            "spans": [[[0, 0], [0.3, 0.1], [0.7, -0.1], [1, 0]]],
            "bc": {
                "type": "dirichlet2",
                "plus": [[0, [1, 0, 0]], [1, [1, 0, 0]]],
                "minus": [[0, [0, 0, 1]], [1, [0, 0, 1]]],
            },
        }
    ]
}


def test_load_minimal_document():
    scene = load_scene(json.dumps(MINIMAL))
    assert len(scene.curves) == 1
    assert scene.curves[0].bc.kind == "dirichlet2"


def test_unsorted_stops_normalized():
    doc = json.loads(json.dumps(MINIMAL))
    doc["curves"][0]["bc"]["plus"] = [[1, [1, 1, 1]], [0.5, [0.5, 0.5, 0.5]], [0, [0, 0, 0]]]
    scene = load_scene(json.dumps(doc))
    stops = scene.curves[0].bc.plus
    assert np.all(np.diff(stops.ts) >= 0)
    assert stops.ts[0] == 0.0 and stops.ts[-1] == 1.0


def test_missing_endpoint_stops_extended():
    stops = ColorStops([(0.4, [0.2, 0.2, 0.2]), (0.6, [0.8, 0.8, 0.8])])
    assert stops.ts[0] == 0.0 and stops.ts[-1] == 1.0
    assert np.allclose(stops.sample(0.0), [0.2, 0.2, 0.2])


def test_parse_error_names_path():
    doc = json.loads(json.dumps(MINIMAL))
    doc["curves"][0]["spans"][0][2] = [1, "x"]
    with pytest.raises(SceneParseError) as err:
        load_scene(json.dumps(doc))
    assert "$.curves[0].spans[0][2]" in str(err.value)


def test_neumann_on_open_chain_rejected():
    doc = json.loads(json.dumps(MINIMAL))
    doc["curves"][0]["bc"] = {"type": "neumann", "flux": 0.0}
    with pytest.raises(SceneValidationError):
        load_scene(json.dumps(doc))


def test_ids_assigned_when_absent():
    doc = json.loads(json.dumps(MINIMAL))
    del doc["curves"][0]["id"]
    scene = load_scene(json.dumps(doc))
    assert scene.curves[0].id == "c0"


def test_save_then_load_exact():
    scene = load_scene(json.dumps(MINIMAL))
    again = load_scene(save_scene(scene))
    assert again == scene
    assert len(again.curves) == len(scene.curves)
    assert again.curves[0].spans == scene.curves[0].spans


coord = st.floats(min_value=-1e3, max_value=1e3, allow_nan=False, allow_infinity=False)
color = st.floats(min_value=0.0, max_value=1.0, allow_nan=False)


@st.composite
def scenes(draw):
    n_curves = draw(st.integers(1, 3))
    curves = []
    for i in range(n_curves):
        n_spans = draw(st.integers(1, 2))
        start = complex(draw(coord), draw(coord))
        spans = []
        for _ in range(n_spans):
            pts = [start]
            for _ in range(3):
                pts.append(pts[-1] + complex(draw(coord), draw(coord)) * 1e-2 + 0.1)
            spans.append(CubicBezier(*pts))
            start = pts[-1]
        stops_p = ColorStops([(0.0, [draw(color)] * 3), (1.0, [draw(color)] * 3)])
        stops_m = ColorStops([(0.0, [draw(color)] * 3), (0.5, [draw(color)] * 3), (1.0, [draw(color)] * 3)])
        bc = BoundaryCondition("dirichlet2", plus=stops_p, minus=stops_m)
        curves.append(DiffusionCurve(f"c{i}", spans, bc))
    return Scene(curves)


@settings(max_examples=40, deadline=None)
@given(scenes())
def test_roundtrip_property(scene):
    assert load_scene(save_scene(scene)) == scene


def test_float_serialization_bit_exact():
    val = 0.1 + 0.2  # not representable prettily
    curve = line_curve("a", complex(val, val * 7), complex(np.pi, np.e))
    scene = Scene([curve])
    back = load_scene(save_scene(scene))
    assert back.curves[0].spans[0].c0 == curve.spans[0].c0
    assert back.curves[0].spans[0].c3 == curve.spans[0].c3


def test_sample_boundary_value():
    stops = ColorStops([(0.0, [0, 0, 0]), (1.0, [1, 1, 1])])
    bc = BoundaryCondition("dirichlet2", plus=stops, minus=ColorStops.constant([0.5] * 3))
    c = line_curve("a", 0j, 1 + 0j, bc)
    assert abs(sample_boundary_value(c, 0.25, "plus", 0) - 0.25) < 1e-15
    assert abs(sample_boundary_value(c, 0.7, "minus", 2) - 0.5) < 1e-15
    with pytest.raises(ValueError):
        sample_boundary_value(c, 0.5, "plus", 3)


def test_sample_matches_independent_interp_oracle():
    rng = np.random.default_rng(0)
    ts = np.sort(np.concatenate([[0.0, 1.0], rng.random(5)]))
    cols = rng.random((len(ts), 3))
    stops = ColorStops(list(zip(ts, cols)))
    bc = BoundaryCondition("dirichlet2", plus=stops, minus=stops)
    c = line_curve("a", 0j, 1 + 0j, bc)

    def oracle(t, ch):
        i = np.searchsorted(ts, t, side="right") - 1
        i = min(max(i, 0), len(ts) - 2)
        w = (t - ts[i]) / (ts[i + 1] - ts[i])
        return (1 - w) * cols[i, ch] + w * cols[i + 1, ch]

    for t in rng.random(64):
        for ch in range(3):
            assert abs(sample_boundary_value(c, t, "plus", ch) - oracle(t, ch)) < 1e-12


# -- preprocessing ----------------------------------------------------------


def total_arc(scene):
    return sum(arc_length(s, 1.0) for c in scene.curves for s in c.spans)


def test_crossing_lines_split_into_four():
    scene = Scene([line_curve("a", -1 + 0j, 1 + 0j), line_curve("b", -1j, 1j)])
    out = preprocess_scene(scene)
    assert len(out.curves) == 4
    # all pieces meet at the intersection point
    for c in out.curves:
        ends = [c.spans[0].c0, c.spans[-1].c3]
        assert any(abs(e) < 1e-6 for e in ends)
    assert abs(total_arc(out) - total_arc(scene)) < 1e-9 * total_arc(scene)


def test_duplicate_curve_removed():
    scene = Scene([line_curve("a", 0j, 1 + 1j), line_curve("b", 1 + 1j, 0j)])
    out = preprocess_scene(scene)
    assert len(out.curves) == 1


def test_partial_span_overlap_split_not_removed():
    p, q, r, s = 0j, 1 + 0j, 2 + 0.5j, 3 + 0j

    def seg_span(a, b):
        return CubicBezier(a, a + (b - a) / 3, a + 2 * (b - a) / 3, b)

    bc = dirichlet_bc([0.3, 0.3, 0.3])
    a = DiffusionCurve("a", [seg_span(p, q), seg_span(q, r)], bc)
    b = DiffusionCurve("b", [seg_span(q, r), seg_span(r, s)], bc)
    out = preprocess_scene(Scene([a, b]))
    # the shared middle span is kept once: P-Q, Q-R, R-S
    assert len(out.curves) == 3


def test_non_intersecting_scene_unchanged():
    scene = Scene([line_curve("a", 0j, 1 + 0j), line_curve("b", 2j, 1 + 2j)])
    out = preprocess_scene(scene)
    assert [c.id for c in out.curves] == ["a", "b"]
    assert out.curves[0].spans == scene.curves[0].spans


def test_preprocess_idempotent_and_arc_preserving():
    scene = Scene(
        [
            line_curve("a", -1 + 0j, 1 + 0j),
            line_curve("b", -1j, 1j),
            circle_curve("c", 2 + 2j, 0.5),
        ]
    )
    once = preprocess_scene(scene)
    twice = preprocess_scene(once)
    assert len(once.curves) == len(twice.curves)
    for c1, c2 in zip(once.curves, twice.curves):
        assert len(c1.spans) == len(c2.spans)
        for s1, s2 in zip(c1.spans, c2.spans):
            assert abs(s1.c0 - s2.c0) < 1e-12 and abs(s1.c3 - s2.c3) < 1e-12
    assert abs(total_arc(once) - total_arc(scene)) < 1e-9 * total_arc(scene)


def test_split_colors_preserved():
    stops = ColorStops([(0.0, [0, 0, 0]), (1.0, [1, 1, 1])])
    bc = BoundaryCondition("dirichlet2", plus=stops, minus=stops)
    scene = Scene([line_curve("a", -1 + 0j, 1 + 0j, bc), line_curve("b", -1j, 1j)])
    out = preprocess_scene(scene)
    pieces = [c for c in out.curves if c.id.startswith("a#")]
    assert len(pieces) == 2
    # sampled boundary values at matched world positions are unchanged
    for piece in pieces:
        for t in (0.0, 0.3, 0.8, 1.0):
            pt = piece.chain.point(t)
            orig_t = (pt.real + 1) / 2  # parameter on the original line
            got = sample_boundary_value(piece, t, "plus", 0)
            assert abs(got - orig_t) < 1e-6
