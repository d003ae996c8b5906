"""Scene builders for verification suites, benchmarks, and tests."""

from __future__ import annotations

import numpy as np

from .bezier import CubicBezier
from .scene import BoundaryCondition, ColorStops, DiffusionCurve, Scene

KAPPA = 0.5522847498307936  # cubic circle approximation constant


def dirichlet_bc(plus, minus=None):
    minus = plus if minus is None else minus
    return BoundaryCondition(
        "dirichlet2", plus=ColorStops.constant(plus), minus=ColorStops.constant(minus)
    )


def circle_curve(cid, center, r, bc=None):
    """Closed CCW 4-span cubic circle approximation."""
    k = KAPPA * r
    c = center
    spans = [
        CubicBezier(c + r, c + r + 1j * k, c + k + 1j * r, c + 1j * r),
        CubicBezier(c + 1j * r, c - k + 1j * r, c - r + 1j * k, c - r),
        CubicBezier(c - r, c - r - 1j * k, c - k - 1j * r, c - 1j * r),
        CubicBezier(c - 1j * r, c + k - 1j * r, c + r - 1j * k, c + r),
    ]
    return DiffusionCurve(cid, spans, bc or dirichlet_bc([0.5, 0.5, 0.5]))


def line_curve(cid, a, b, bc=None):
    spans = [CubicBezier(a, a + (b - a) / 3, a + 2 * (b - a) / 3, b)]
    return DiffusionCurve(cid, spans, bc or dirichlet_bc([1, 1, 1], [0, 0, 0]))


def random_scene(n_curves, seed=0, spread=1.0, wiggle=0.15) -> Scene:
    """Open cubic curves from short random walks with random constant colors."""
    rng = np.random.default_rng(seed)
    curves = []
    for i in range(n_curves):
        p0 = spread * (rng.random() + 1j * rng.random())
        pts = [p0]
        for _ in range(3):
            step = wiggle * (rng.standard_normal() + 1j * rng.standard_normal())
            pts.append(pts[-1] + step)
        bc = dirichlet_bc(rng.random(3).tolist(), rng.random(3).tolist())
        curves.append(DiffusionCurve(f"c{i}", [CubicBezier(*pts)], bc))
    return Scene(curves)


def unit_source_potential(z0):
    """The field of a unit source at z0 (the ground-truth oracle)."""

    def u(q):
        return -np.log(np.abs(np.asarray(q, dtype=complex) - z0)) / (2 * np.pi)

    return u


def single_source_scene():
    """Four closed circles around a central unit source: boundary data sampled
    from the source's potential, interior reconstruction is known exactly.
    Returns (scene, z0, blob centers, radius)."""
    centers = [0 + 0j, 1 + 0j, 1 + 1j, 0 + 1j]
    r = 0.35
    curves = [circle_curve(f"blob{i}", c, r) for i, c in enumerate(centers)]
    return Scene(curves), 0.5 + 0.5j, centers, r


def sharp_corner_scene(jump_width=0.02):
    """An L-shaped open curve whose plus-side color flips abruptly at the
    corner: the classic bleeding fixture for adaptive subdivision."""
    a, b, c = -1 + 0j, 0 + 0j, 0 + 1j
    spans = [
        CubicBezier(a, a + (b - a) / 3, a + 2 * (b - a) / 3, b),
        CubicBezier(b, b + (c - b) / 3, b + 2 * (c - b) / 3, c),
    ]
    t0 = 0.5  # corner parameter on the chain
    plus = ColorStops(
        [
            (0.0, [0.95, 0.25, 0.1]),
            (t0 - jump_width, [0.95, 0.25, 0.1]),
            (t0 + jump_width, [0.1, 0.3, 0.95]),
            (1.0, [0.1, 0.3, 0.95]),
        ]
    )
    minus = ColorStops.constant([0.92, 0.92, 0.88])
    bc = BoundaryCondition("dirichlet2", plus=plus, minus=minus)
    frame = circle_curve("frame", -0.4 + 0.45j, 1.6, dirichlet_bc([0.9, 0.9, 0.85]))
    return Scene([DiffusionCurve("corner", spans, bc), frame])


def grid_scene(n_curves, seed=0, colorful=True) -> Scene:
    """Many short curves on a jittered grid; used for scaling benchmarks and
    large local-resolve scenarios."""
    rng = np.random.default_rng(seed)
    side = int(np.ceil(np.sqrt(n_curves)))
    curves = []
    i = 0
    for gy in range(side):
        for gx in range(side):
            if i >= n_curves:
                break
            cx = (gx + 0.5) / side + 0.2 * rng.standard_normal() / side
            cy = (gy + 0.5) / side + 0.2 * rng.standard_normal() / side
            ang = 2 * np.pi * rng.random()
            half = 0.3 / side * (0.5 + rng.random())
            d = half * np.exp(1j * ang)
            p0 = complex(cx, cy) - d
            p3 = complex(cx, cy) + d
            bend = 0.3 * half * np.exp(1j * (ang + np.pi / 2)) * rng.standard_normal()
            spans = [CubicBezier(p0, p0 + (p3 - p0) / 3 + bend, p0 + 2 * (p3 - p0) / 3 + bend, p3)]
            if colorful:
                bc = dirichlet_bc(rng.random(3).tolist(), rng.random(3).tolist())
            else:
                bc = dirichlet_bc([0.5, 0.5, 0.5])
            curves.append(DiffusionCurve(f"g{i}", spans, bc))
            i += 1
    return Scene(curves)


def mixed_scene():
    """A zero-flux closed circle enclosing a constant-Dirichlet circle."""
    n = circle_curve("wall", 0j, 1.0, BoundaryCondition("neumann", flux=0.0))
    d = circle_curve("core", 0j, 0.4, dirichlet_bc([0.5, 0.5, 0.5]))
    return Scene([n, d])
