"""Cubic Bezier evaluation, arc length, and arc-length parametrization.

Points are represented as complex numbers (x + iy) throughout the numeric
core; the scene layer converts to/from [x, y] pairs at the JSON boundary.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# 16-point Gauss-Legendre rule, enough for cubic speed functions to ~1e-12.
_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)

_CUSP_EPS = 1e-12


@dataclass(frozen=True)
class CubicBezier:
    """Cubic Bezier span with complex control points c0..c3."""

    c0: complex
    c1: complex
    c2: complex
    c3: complex

    def controls(self):
        return np.array([self.c0, self.c1, self.c2, self.c3], dtype=complex)

    def point(self, t):
        t = np.asarray(t, dtype=float)
        s = 1.0 - t
        return (
            s * s * s * self.c0
            + 3.0 * t * s * s * self.c1
            + 3.0 * t * t * s * self.c2
            + t * t * t * self.c3
        )

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        s = 1.0 - t
        return 3.0 * (
            s * s * (self.c1 - self.c0)
            + 2.0 * s * t * (self.c2 - self.c1)
            + t * t * (self.c3 - self.c2)
        )

    def speed(self, t):
        return np.abs(self.derivative(t))


def evaluate_curve(b: CubicBezier, t: float):
    """Return (point, tangent, unit normal, cusp_flag) at parameter t.

    The tangent is the unnormalized derivative B'(t); the normal is the unit
    tangent rotated by -90 degrees, i.e. n = (t_y, -t_x), which fixes the
    sign convention of the jump relations ("+ side" is the side the normal
    points into).  At a cusp (B'(t) = 0) the tangent is taken from a one-sided
    parameter perturbation and the result is flagged.
    """
    point = complex(b.point(t))
    tangent = complex(b.derivative(t))
    cusp = False
    if abs(tangent) == 0.0:
        cusp = True
        # cusps are measure-zero; a tiny parameter nudge gives a usable limit
        tp = t + _CUSP_EPS if t < 1.0 else t - _CUSP_EPS
        tangent = complex(b.derivative(tp))
        if abs(tangent) == 0.0:
            tangent = 1.0 + 0.0j
    normal = -1j * tangent / abs(tangent)
    return point, tangent, normal, cusp


def arc_length(b: CubicBezier, t: float = 1.0) -> float:
    """Cumulative arc length of b over [0, t] by 16-point Gauss-Legendre."""
    if t <= 0.0:
        return 0.0
    x = 0.5 * t * (_GL_NODES + 1.0)
    return float(0.5 * t * np.dot(_GL_WEIGHTS, b.speed(x)))


def param_at_arclength(b: CubicBezier, target: float, total: float | None = None) -> float:
    """Parameter t with arc_length(b, t) == target, via Newton with bisection fallback.

    `total` may pass a precomputed arc_length(b, 1.0).
    """
    if total is None:
        total = arc_length(b, 1.0)
    if target <= 0.0:
        return 0.0
    if target >= total:
        return 1.0
    tol = 1e-12 * total
    t = target / total
    lo, hi = 0.0, 1.0
    for _ in range(50):
        err = arc_length(b, t) - target
        if abs(err) <= tol:
            return t
        if err > 0.0:
            hi = t
        else:
            lo = t
        speed = float(b.speed(t))
        if speed > 0.0:
            step = t - err / speed
        else:
            step = 0.5 * (lo + hi)
        # Newton step leaving the bracket falls back to bisection
        if not (lo < step < hi):
            step = 0.5 * (lo + hi)
        t = step
    return t


def split_bezier(b: CubicBezier, t: float):
    """de Casteljau split of b at t into two spans reproducing b pointwise."""
    p01 = b.c0 + (b.c1 - b.c0) * t
    p12 = b.c1 + (b.c2 - b.c1) * t
    p23 = b.c2 + (b.c3 - b.c2) * t
    p012 = p01 + (p12 - p01) * t
    p123 = p12 + (p23 - p12) * t
    mid = p012 + (p123 - p012) * t
    return (
        CubicBezier(b.c0, p01, p012, mid),
        CubicBezier(mid, p123, p23, b.c3),
    )


def bezier_bbox(b: CubicBezier):
    """Control-polygon bounding box (xmin, ymin, xmax, ymax); contains the span."""
    c = b.controls()
    return c.real.min(), c.imag.min(), c.real.max(), c.imag.max()


class Chain:
    """A chain of cubic Bezier spans with a global parameter t in [0, 1].

    Span k covers t in [k/n, (k+1)/n].  Provides chain-level point/arclength
    queries used by panel discretization.
    """

    def __init__(self, spans):
        if not spans:
            raise ValueError("chain needs at least one span")
        self.spans = list(spans)
        self.n = len(self.spans)
        self.span_lengths = np.array([arc_length(s, 1.0) for s in self.spans])
        self.cum_lengths = np.concatenate([[0.0], np.cumsum(self.span_lengths)])
        self.total_length = float(self.cum_lengths[-1])

    def _locate(self, t):
        k = min(int(t * self.n), self.n - 1)
        return k, t * self.n - k

    def point(self, t):
        k, u = self._locate(t)
        return complex(self.spans[k].point(u))

    def evaluate(self, t):
        k, u = self._locate(t)
        return evaluate_curve(self.spans[k], u)

    def arc_length_at(self, t):
        k, u = self._locate(t)
        return float(self.cum_lengths[k] + arc_length(self.spans[k], u))

    def param_at_arclength(self, target):
        if target <= 0.0:
            return 0.0
        if target >= self.total_length:
            return 1.0
        k = int(np.searchsorted(self.cum_lengths, target, side="right")) - 1
        k = min(max(k, 0), self.n - 1)
        local = param_at_arclength(
            self.spans[k], target - self.cum_lengths[k], self.span_lengths[k]
        )
        return (k + local) / self.n

    def is_closed(self, tol=0.0):
        gap = abs(self.spans[-1].c3 - self.spans[0].c0)
        if tol == 0.0:
            return gap == 0.0
        return gap <= tol
