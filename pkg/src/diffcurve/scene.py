"""Scene representation: diffusion curves, color data, JSON (de)serialization,
and geometric preprocessing (intersection splitting, duplicate removal)."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .bezier import Chain, CubicBezier, bezier_bbox, split_bezier
from .errors import SceneParseError, SceneValidationError

# Intersection / overlap tolerance, relative to the scene diagonal.
GEOM_RTOL = 1e-9


class ColorStops:
    """Sorted (t, rgb) stops on [0, 1] with piecewise-linear interpolation."""

    def __init__(self, stops):
        if not stops:
            raise SceneValidationError("color stops must be nonempty")
        order = np.argsort([s[0] for s in stops], kind="stable")
        ts = np.array([stops[i][0] for i in order], dtype=float)
        colors = np.array([stops[i][1] for i in order], dtype=float).reshape(len(ts), 3)
        if ts[0] > 0.0:
            ts = np.concatenate([[0.0], ts])
            colors = np.concatenate([colors[:1], colors])
        if ts[-1] < 1.0:
            ts = np.concatenate([ts, [1.0]])
            colors = np.concatenate([colors, colors[-1:]])
        if np.any(ts < 0.0) or np.any(ts > 1.0):
            raise SceneValidationError("color stop parameter outside [0, 1]")
        if np.any(colors < 0.0) or np.any(colors > 1.0):
            raise SceneValidationError("color value outside [0, 1]")
        self.ts = ts
        self.colors = colors

    @staticmethod
    def constant(rgb):
        return ColorStops([(0.0, rgb), (1.0, rgb)])

    def sample(self, t):
        """Piecewise-linear color at parameter(s) t; shape (..., 3)."""
        t = np.clip(np.asarray(t, dtype=float), 0.0, 1.0)
        out = np.empty(t.shape + (3,))
        for ch in range(3):
            out[..., ch] = np.interp(t, self.ts, self.colors[:, ch])
        return out

    def slice(self, ta, tb):
        """Stops restricted to [ta, tb], re-parameterized to [0, 1]."""
        if tb <= ta:
            raise ValueError("empty color slice")
        inner = [(t, c) for t, c in zip(self.ts, self.colors) if ta < t < tb]
        stops = [(0.0, self.sample(ta))] + [((t - ta) / (tb - ta), c) for t, c in inner]
        stops.append((1.0, self.sample(tb)))
        return ColorStops(stops)

    def __eq__(self, other):
        return (
            isinstance(other, ColorStops)
            and np.array_equal(self.ts, other.ts)
            and np.array_equal(self.colors, other.colors)
        )

    def to_json(self):
        return [[float(t), [float(c) for c in rgb]] for t, rgb in zip(self.ts, self.colors)]


@dataclass
class BoundaryCondition:
    """Either double-sided Dirichlet color data or a one-sided Neumann flux
    (the latter allowed on closed curves only)."""

    kind: str  # "dirichlet2" | "neumann"
    plus: ColorStops | None = None
    minus: ColorStops | None = None
    flux: float = 0.0

    def __post_init__(self):
        if self.kind not in ("dirichlet2", "neumann"):
            raise SceneValidationError(f"unknown boundary condition kind {self.kind!r}")
        if self.kind == "dirichlet2" and (self.plus is None or self.minus is None):
            raise SceneValidationError("dirichlet2 requires plus and minus stops")


@dataclass
class DiffusionCurve:
    """A chain of cubic Bezier spans with a boundary condition and stable id."""

    id: str
    spans: list
    bc: BoundaryCondition
    _chain: Chain | None = field(default=None, repr=False, compare=False)

    @property
    def chain(self) -> Chain:
        if self._chain is None:
            self._chain = Chain(self.spans)
        return self._chain

    def is_closed(self, tol=0.0):
        return self.chain.is_closed(tol)

    def __eq__(self, other):
        return (
            isinstance(other, DiffusionCurve)
            and self.id == other.id
            and self.spans == other.spans
            and self.bc == other.bc
        )


@dataclass
class Scene:
    curves: list

    def __post_init__(self):
        if not self.curves:
            raise SceneValidationError("scene must contain at least one curve")
        ids = [c.id for c in self.curves]
        if len(set(ids)) != len(ids):
            raise SceneValidationError("curve ids must be unique")

    @property
    def bounds(self):
        """(xmin, ymin, xmax, ymax) enclosing all control points."""
        boxes = [bezier_bbox(s) for c in self.curves for s in c.spans]
        boxes = np.array(boxes)
        return (
            float(boxes[:, 0].min()),
            float(boxes[:, 1].min()),
            float(boxes[:, 2].max()),
            float(boxes[:, 3].max()),
        )

    @property
    def diagonal(self):
        x0, y0, x1, y1 = self.bounds
        return float(np.hypot(x1 - x0, y1 - y0))

    def __eq__(self, other):
        return isinstance(other, Scene) and self.curves == other.curves


def sample_boundary_value(curve: DiffusionCurve, t, side: str, channel: int):
    """Boundary color of one channel at parameter t on the given side."""
    if channel not in (0, 1, 2):
        raise ValueError(f"channel {channel} out of range")
    if curve.bc.kind != "dirichlet2":
        raise SceneValidationError("boundary colors only defined for dirichlet2 curves")
    stops = curve.bc.plus if side == "plus" else curve.bc.minus
    return stops.sample(t)[..., channel]


# ---------------------------------------------------------------------------
# JSON schema


def _parse_point(obj, path):
    if not (isinstance(obj, (list, tuple)) and len(obj) == 2):
        raise SceneParseError(path, "expected [x, y]")
    x, y = obj
    if not all(isinstance(v, (int, float)) for v in (x, y)):
        raise SceneParseError(path, "coordinates must be numbers")
    if not all(np.isfinite(v) for v in (x, y)):
        raise SceneParseError(path, "coordinates must be finite")
    return complex(x, y)


def _parse_stops(obj, path):
    if not isinstance(obj, list) or not obj:
        raise SceneParseError(path, "expected nonempty list of [t, [r, g, b]]")
    stops = []
    for i, item in enumerate(obj):
        if not (isinstance(item, (list, tuple)) and len(item) == 2):
            raise SceneParseError(f"{path}[{i}]", "expected [t, [r, g, b]]")
        t, rgb = item
        if not isinstance(t, (int, float)):
            raise SceneParseError(f"{path}[{i}][0]", "t must be a number")
        if not (isinstance(rgb, (list, tuple)) and len(rgb) == 3):
            raise SceneParseError(f"{path}[{i}][1]", "expected [r, g, b]")
        stops.append((float(t), [float(v) for v in rgb]))
    try:
        return ColorStops(stops)
    except SceneValidationError as e:
        raise SceneParseError(path, str(e)) from e


def load_scene(data) -> Scene:
    """Parse a scene JSON document (bytes/str/dict) and establish invariants."""
    if isinstance(data, (bytes, str)):
        try:
            data = json.loads(data)
        except json.JSONDecodeError as e:
            raise SceneParseError("$", f"invalid JSON: {e}") from e
    if not isinstance(data, dict) or "curves" not in data:
        raise SceneParseError("$", "expected object with 'curves'")
    raw_curves = data["curves"]
    if not isinstance(raw_curves, list) or not raw_curves:
        raise SceneParseError("$.curves", "expected nonempty list")
    curves = []
    seen = set()
    for ci, raw in enumerate(raw_curves):
        path = f"$.curves[{ci}]"
        if not isinstance(raw, dict):
            raise SceneParseError(path, "expected object")
        cid = raw.get("id")
        if cid is None:
            cid = f"c{ci}"
        if not isinstance(cid, str):
            raise SceneParseError(f"{path}.id", "id must be a string")
        if cid in seen:
            raise SceneParseError(f"{path}.id", f"duplicate id {cid!r}")
        seen.add(cid)
        raw_spans = raw.get("spans")
        if not isinstance(raw_spans, list) or not raw_spans:
            raise SceneParseError(f"{path}.spans", "expected nonempty list")
        spans = []
        for si, raw_span in enumerate(raw_spans):
            spath = f"{path}.spans[{si}]"
            if not (isinstance(raw_span, list) and len(raw_span) == 4):
                raise SceneParseError(spath, "expected 4 control points")
            pts = [_parse_point(p, f"{spath}[{k}]") for k, p in enumerate(raw_span)]
            spans.append(CubicBezier(*pts))
        for si in range(1, len(spans)):
            if spans[si].c0 != spans[si - 1].c3:
                raise SceneParseError(
                    f"{path}.spans[{si}]", "span does not start at previous span's end"
                )
        raw_bc = raw.get("bc")
        if not isinstance(raw_bc, dict) or "type" not in raw_bc:
            raise SceneParseError(f"{path}.bc", "expected object with 'type'")
        kind = raw_bc["type"]
        if kind == "dirichlet2":
            bc = BoundaryCondition(
                "dirichlet2",
                plus=_parse_stops(raw_bc.get("plus"), f"{path}.bc.plus"),
                minus=_parse_stops(raw_bc.get("minus"), f"{path}.bc.minus"),
            )
        elif kind == "neumann":
            flux = raw_bc.get("flux", 0.0)
            if not isinstance(flux, (int, float)):
                raise SceneParseError(f"{path}.bc.flux", "flux must be a number")
            bc = BoundaryCondition("neumann", flux=float(flux))
        else:
            raise SceneParseError(f"{path}.bc.type", f"unknown type {kind!r}")
        curve = DiffusionCurve(cid, spans, bc)
        if kind == "neumann":
            if not curve.is_closed():
                raise SceneValidationError(
                    f"curve {cid!r}: neumann boundary condition requires a closed curve"
                )
            # normalize to counterclockwise so the normal points outward and
            # the flux sign convention is well defined
            if _signed_area(spans) < 0.0:
                curve = DiffusionCurve(cid, _reverse_spans(spans), bc)
        curves.append(curve)
    return Scene(curves)


def _signed_area(spans):
    pts = np.concatenate([s.point(np.linspace(0.0, 1.0, 17)[:-1]) for s in spans])
    nxt = np.roll(pts, -1)
    return 0.5 * float(np.sum(pts.real * nxt.imag - nxt.real * pts.imag))


def _reverse_spans(spans):
    return [CubicBezier(s.c3, s.c2, s.c1, s.c0) for s in reversed(spans)]


def save_scene(scene: Scene) -> str:
    """Serialize a scene with deterministic key order; inverse of load_scene."""
    doc = {"curves": []}
    for c in scene.curves:
        spans = [
            [[s.c0.real, s.c0.imag], [s.c1.real, s.c1.imag],
             [s.c2.real, s.c2.imag], [s.c3.real, s.c3.imag]]
            for s in c.spans
        ]
        if c.bc.kind == "dirichlet2":
            bc = {"type": "dirichlet2", "plus": c.bc.plus.to_json(), "minus": c.bc.minus.to_json()}
        else:
            bc = {"type": "neumann", "flux": c.bc.flux}
        doc["curves"].append({"id": c.id, "spans": spans, "bc": bc})
    return json.dumps(doc, sort_keys=False)


# ---------------------------------------------------------------------------
# Preprocessing: intersection splitting and duplicate removal


def _boxes_overlap(b1, b2, tol):
    return not (
        b1[2] < b2[0] - tol or b2[2] < b1[0] - tol or
        b1[3] < b2[1] - tol or b2[3] < b1[1] - tol
    )


def _box_size(b):
    return max(b[2] - b[0], b[3] - b[1])


def _span_intersections(a: CubicBezier, b: CubicBezier, tol, wa=(0.0, 1.0), wb=(0.0, 1.0)):
    """Transversal intersection parameters between two (sub)spans by recursive
    subdivision to `tol`; returns a list of (ta, tb) in the given windows."""
    out = []
    stack = [(a, wa[0], wa[1], b, wb[0], wb[1])]
    max_items = 8192  # near-tangency guard: give up rather than blow up
    while stack and len(out) < 64 and len(stack) < max_items:
        sa, a0, a1, sb, b0, b1 = stack.pop()
        ba = bezier_bbox(sa)
        bb = bezier_bbox(sb)
        if not _boxes_overlap(ba, bb, tol):
            continue
        if _box_size(ba) <= tol and _box_size(bb) <= tol:
            out.append((0.5 * (a0 + a1), 0.5 * (b0 + b1)))
            continue
        if _box_size(ba) >= _box_size(bb):
            la, ra = split_bezier(sa, 0.5)
            am = 0.5 * (a0 + a1)
            stack.append((la, a0, am, sb, b0, b1))
            stack.append((ra, am, a1, sb, b0, b1))
        else:
            lb, rb = split_bezier(sb, 0.5)
            bm = 0.5 * (b0 + b1)
            stack.append((sa, a0, a1, lb, b0, bm))
            stack.append((sa, a0, a1, rb, bm, b1))
    # cluster near-identical hits
    merged = []
    for ta, tb in sorted(out):
        if merged and abs(merged[-1][0] - ta) < 1e-6 and abs(merged[-1][1] - tb) < 1e-6:
            continue
        merged.append((ta, tb))
    return merged


def _tangents_in_half_plane(s: CubicBezier):
    """True if the hodograph control vectors fit in an open half-plane: the
    tangent never reverses, so the span cannot self-intersect."""
    vecs = [v for v in (s.c1 - s.c0, s.c2 - s.c1, s.c3 - s.c2) if abs(v) > 0]
    if len(vecs) <= 1:
        return True
    angles = sorted(np.angle(np.array(vecs)))
    gaps = [b - a for a, b in zip(angles, angles[1:])]
    gaps.append(angles[0] + 2 * np.pi - angles[-1])
    return max(gaps) > np.pi


def _span_self_intersections(s: CubicBezier, tol, window=(0.0, 1.0), depth=0):
    """Self-intersection parameters (loops) of one span; pairs (t1, t2)."""
    if depth > 24 or _box_size(bezier_bbox(s)) <= tol:
        return []
    if _tangents_in_half_plane(s):
        return []
    left, right = split_bezier(s, 0.5)
    mid = 0.5 * (window[0] + window[1])
    hits = _span_intersections(left, right, tol, (window[0], mid), (mid, window[1]))
    junction = complex(s.point(0.5))
    out = [
        (ta, tb)
        for ta, tb in hits
        if abs(complex(left.point((ta - window[0]) / (mid - window[0]))) - junction) > 16 * tol
    ]
    out += _span_self_intersections(left, tol, (window[0], mid), depth + 1)
    out += _span_self_intersections(right, tol, (mid, window[1]), depth + 1)
    return out


def _spans_coincident(a: CubicBezier, b: CubicBezier, tol):
    """True if spans coincide (same or reversed control polygon within tol)."""
    fwd = max(abs(a.c0 - b.c0), abs(a.c1 - b.c1), abs(a.c2 - b.c2), abs(a.c3 - b.c3))
    rev = max(abs(a.c0 - b.c3), abs(a.c1 - b.c2), abs(a.c2 - b.c1), abs(a.c3 - b.c0))
    return min(fwd, rev) <= tol


def _curves_coincident(a: DiffusionCurve, b: DiffusionCurve, tol):
    if len(a.spans) != len(b.spans):
        return False
    if all(_spans_coincident(sa, sb, tol) for sa, sb in zip(a.spans, b.spans)):
        return True
    return all(
        _spans_coincident(sa, sb, tol) for sa, sb in zip(a.spans, reversed(b.spans))
    )


def _split_curve_at(curve: DiffusionCurve, params, tol_param=1e-7):
    """Split a curve at the given chain parameters, re-parameterizing colors so
    sampled boundary values are unchanged.  Returns the list of pieces.

    Cuts within `tol_param` of a span boundary snap to it (intersection
    detection resolves positions only to the geometric tolerance), and cuts
    within `tol_param` of each other merge."""
    n = len(curve.spans)
    snapped = []
    for t in params:
        k = round(t * n)
        if abs(t * n - k) <= tol_param * n:
            t = k / n
        snapped.append(t)
    cuts = sorted(t for t in snapped if tol_param < t < 1.0 - tol_param)
    if not cuts:
        return [curve]
    dedup = []
    for t in cuts:
        if not dedup or t - dedup[-1] > tol_param:
            dedup.append(t)
    edges = [0.0] + dedup + [1.0]
    pieces = []
    for k in range(len(edges) - 1):
        ta, tb = edges[k], edges[k + 1]
        spans = _extract_spans(curve.spans, ta, tb, n)
        if curve.bc.kind == "dirichlet2":
            bc = BoundaryCondition(
                "dirichlet2",
                plus=curve.bc.plus.slice(ta, tb),
                minus=curve.bc.minus.slice(ta, tb),
            )
        else:
            bc = BoundaryCondition("neumann", flux=curve.bc.flux)
        pieces.append(DiffusionCurve(f"{curve.id}#{k}", spans, bc))
    return pieces


def _extract_spans(spans, ta, tb, n):
    """Sub-chain of `spans` over chain parameters [ta, tb]."""
    out = []
    i0 = min(int(ta * n), n - 1)
    i1 = min(int(tb * n - 1e-12), n - 1)
    for i in range(i0, i1 + 1):
        lo = max(ta * n - i, 0.0)
        hi = min(tb * n - i, 1.0)
        span = spans[i]
        if lo > 0.0:
            span = split_bezier(span, lo)[1]
            hi = (hi - lo) / (1.0 - lo)
        if hi < 1.0:
            span = split_bezier(span, hi)[0]
        out.append(span)
    # enforce exact chain continuity after floating-point splits
    for i in range(1, len(out)):
        prev = out[i - 1]
        cur = out[i]
        out[i] = CubicBezier(prev.c3, cur.c1, cur.c2, cur.c3)
    return out


def preprocess_scene(scene: Scene) -> Scene:
    """Split transversally intersecting curves and remove coincident duplicates.

    Closed Neumann curves are never split (splitting would break their
    boundary-condition type); they still cause crossing Dirichlet curves to
    split.  Near-tangencies below tolerance are left untouched.
    """
    tol = GEOM_RTOL * scene.diagonal
    curves = list(scene.curves)

    cut_params = {c.id: set() for c in curves}
    guard = 16 * tol  # endpoint / junction proximity radius
    for i in range(len(curves)):
        for j in range(i, len(curves)):
            a, b = curves[i], curves[j]
            na, nb = len(a.spans), len(b.spans)
            for si, sa in enumerate(a.spans):
                for sj, sb in enumerate(b.spans):
                    if i == j and sj < si:
                        continue
                    if i == j and si == sj:
                        hits = _span_self_intersections(sa, tol)
                    elif _spans_coincident(sa, sb, tol):
                        # exactly overlapping spans: cut both curves at the
                        # span boundaries so deduplication can drop one copy
                        for cid, idx, n in ((a.id, si, na), (b.id, sj, nb)):
                            cut_params[cid].add(idx / n)
                            cut_params[cid].add((idx + 1) / n)
                        continue
                    else:
                        hits = _span_intersections(sa, sb, tol)
                    for ta, tb in hits:
                        ga = (si + ta) / na
                        gb = (sj + tb) / nb
                        pt = a.chain.point(ga)
                        if i == j and abs(si - sj) == 1:
                            junction = sa.c3 if sj == si + 1 else sa.c0
                            if abs(pt - junction) <= guard:
                                continue  # chain junction, not a crossing
                        ea = min(abs(pt - a.spans[0].c0), abs(pt - a.spans[-1].c3))
                        eb = min(abs(pt - b.spans[0].c0), abs(pt - b.spans[-1].c3))
                        if ea <= guard and eb <= guard:
                            continue  # shared endpoint
                        if ea > guard:
                            cut_params[a.id].add(ga)
                        if eb > guard and not (i == j and abs(ga - gb) < 1e-9):
                            cut_params[b.id].add(gb)

    result = []
    for c in curves:
        if c.bc.kind == "neumann" or not cut_params[c.id]:
            result.append(c)
        else:
            result.extend(_split_curve_at(c, cut_params[c.id]))

    # drop exact duplicates (redundant overlapping curves)
    kept = []
    for c in result:
        if any(_curves_coincident(c, k, tol) for k in kept):
            continue
        kept.append(c)
    return Scene(kept)
