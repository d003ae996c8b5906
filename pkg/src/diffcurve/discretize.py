"""Panel discretization: Gauss-Legendre quadrature nodes per panel, and
equal-arc-length BEM line segments for the solution and evaluation stages.

A *panel* is a sub-interval of one curve carrying g quadrature nodes; it is
the unit of adaptive subdivision.  Within a panel the solve discretization
uses s = 5g equal-arc segments and the evaluation discretization uses
e = ceil(arc/10) + s segments.  Segment midpoint densities are obtained from
node densities by Legendre interpolation in the arc-length fraction.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .bezier import Chain
from .legendre import gauss_legendre


@dataclass(frozen=True)
class Segment:
    """Straight boundary element carrying the true arc length of the curve
    piece it approximates (not the chord length)."""

    p1: complex
    p2: complex
    curve: int
    t1: float
    t2: float
    arc: float

    @property
    def mid(self):
        return 0.5 * (self.p1 + self.p2)

    @property
    def chord(self):
        return abs(self.p2 - self.p1)


def discretize_panel(chain: Chain, t0: float, t1: float, n: int, curve_idx: int = 0):
    """Split chain|[t0, t1] into n segments of equal arc length."""
    if n < 1:
        raise ValueError("segment count must be >= 1")
    a0 = chain.arc_length_at(t0)
    a1 = chain.arc_length_at(t1)
    total = a1 - a0
    params = [t0]
    for j in range(1, n):
        params.append(chain.param_at_arclength(a0 + total * j / n))
    params.append(t1)
    segs = []
    for j in range(n):
        pa = chain.point(params[j])
        pb = chain.point(params[j + 1])
        segs.append(Segment(pa, pb, curve_idx, params[j], params[j + 1], total / n))
    return segs


def choose_eval_segments(arc_length: float, s: int) -> int:
    """Evaluation segment count e = (curve length)/10 + s, rounded up; e >= s."""
    if arc_length <= 0.0:
        return s
    return s + int(np.ceil(arc_length / 10.0 - 1e-12))


@dataclass
class Panel:
    curve: int
    t0: float
    t1: float
    arc: float  # true arc length over [t0, t1]
    arc0: float  # cumulative arc at t0 on the parent chain
    node_t: np.ndarray  # chain parameters of the g quadrature nodes
    node_pos: np.ndarray  # complex positions on the exact curve
    node_normal: np.ndarray  # unit normals (tangent rotated -90 deg)


class SegmentSet:
    """Flat arrays over all segments of one discretization stage.

    `reuse` optionally provides (old SegmentSet, old panel index per new
    panel, -1 for changed panels): unchanged panels copy their rows instead
    of re-running the arc-length subdivision."""

    def __init__(self, panels, counts, chains, curve_of_panel, reuse=None):
        self.counts = np.asarray(counts, dtype=int)
        self.offsets = np.concatenate([[0], np.cumsum(self.counts)])
        n = int(self.offsets[-1])
        self.panel = np.empty(n, dtype=int)
        self.curve = np.empty(n, dtype=int)
        self.p1 = np.empty(n, dtype=complex)
        self.p2 = np.empty(n, dtype=complex)
        self.t1 = np.empty(n, dtype=float)
        self.t2 = np.empty(n, dtype=float)
        self.arc = np.empty(n, dtype=float)
        self.midfrac = np.empty(n, dtype=float)  # arc fraction in panel, in (-1, 1)
        old, old_panel_of = reuse if reuse is not None else (None, None)
        for pi, (panel, cnt) in enumerate(zip(panels, counts)):
            sl = slice(self.offsets[pi], self.offsets[pi + 1])
            self.panel[sl] = pi
            self.curve[sl] = panel.curve
            self.midfrac[sl] = 2.0 * (np.arange(cnt) + 0.5) / cnt - 1.0
            if old is not None and old_panel_of[pi] >= 0 and old.counts[old_panel_of[pi]] == cnt:
                osl = old.panel_slice(old_panel_of[pi])
                for name in ("p1", "p2", "t1", "t2", "arc"):
                    getattr(self, name)[sl] = getattr(old, name)[osl]
                continue
            segs = discretize_panel(
                chains[panel.curve], panel.t0, panel.t1, cnt, panel.curve
            )
            self.p1[sl] = [s.p1 for s in segs]
            self.p2[sl] = [s.p2 for s in segs]
            self.t1[sl] = [s.t1 for s in segs]
            self.t2[sl] = [s.t2 for s in segs]
            self.arc[sl] = [s.arc for s in segs]

    def __len__(self):
        return len(self.panel)

    @property
    def mid(self):
        return 0.5 * (self.p1 + self.p2)

    @property
    def chord(self):
        return np.abs(self.p2 - self.p1)

    def segment(self, i) -> Segment:
        return Segment(
            self.p1[i], self.p2[i], int(self.curve[i]),
            float(self.t1[i]), float(self.t2[i]), float(self.arc[i]),
        )

    def panel_slice(self, pi):
        return slice(int(self.offsets[pi]), int(self.offsets[pi + 1]))


class TargetSet:
    """Evaluation targets with optional on-segment annotations.

    `sing_seg[i] >= 0` marks target i as lying on that segment (index into the
    companion SegmentSet), at arc fraction `sing_frac[i]` along it; such
    targets are integrated in the chord frame (projected onto the segment) so
    that singular quadrature rules apply consistently.
    """

    def __init__(self, pos, sing_seg=None, sing_frac=None):
        self.pos = np.asarray(pos, dtype=complex)
        n = len(self.pos)
        self.sing_seg = (
            np.full(n, -1, dtype=int) if sing_seg is None else np.asarray(sing_seg, dtype=int)
        )
        self.sing_frac = (
            np.zeros(n, dtype=float) if sing_frac is None else np.asarray(sing_frac, dtype=float)
        )

    def __len__(self):
        return len(self.pos)


class Discretization:
    """Panels + solve/eval segment sets + interpolation operators for a scene."""

    def __init__(self, scene, g=4, s_mult=5, panels=None):
        self.scene = scene
        self.g = g
        self.s_mult = s_mult
        self.s_per_panel = g * s_mult
        self.basis = gauss_legendre(g)
        self.chains = [c.chain for c in scene.curves]
        if panels is None:
            panels = [
                self._make_panel(ci, 0.0, 1.0) for ci in range(len(scene.curves))
            ]
        self.panels = panels
        self._build_segments()

    def _make_panel(self, curve_idx, t0, t1) -> Panel:
        chain = self.chains[curve_idx]
        a0 = chain.arc_length_at(t0)
        a1 = chain.arc_length_at(t1)
        arc = a1 - a0
        basis = self.basis
        node_t = np.array(
            [chain.param_at_arclength(a0 + arc * 0.5 * (x + 1.0)) for x in basis.nodes]
        )
        pos = np.empty(self.g, dtype=complex)
        nrm = np.empty(self.g, dtype=complex)
        for i, t in enumerate(node_t):
            p, _, n, _ = chain.evaluate(t)
            pos[i] = p
            nrm[i] = n
        return Panel(curve_idx, t0, t1, arc, a0, node_t, pos, nrm)

    def _build_segments(self, reuse=None):
        panels = self.panels
        self.panel_curve = np.array([p.curve for p in panels], dtype=int)
        self.panel_arc = np.array([p.arc for p in panels], dtype=float)
        self.n_panels = len(panels)
        self.n_nodes = self.n_panels * self.g
        self.node_pos = np.concatenate([p.node_pos for p in panels])
        self.node_normal = np.concatenate([p.node_normal for p in panels])
        self.node_t = np.concatenate([p.node_t for p in panels])
        self.node_panel = np.repeat(np.arange(self.n_panels), self.g)
        self.node_curve = self.panel_curve[self.node_panel]

        s = self.s_per_panel
        solve_reuse = eval_reuse = None
        if reuse is not None:
            old_disc, old_panel_of = reuse
            solve_reuse = (old_disc.solve, old_panel_of)
            eval_reuse = (old_disc.evalseg, old_panel_of)
        self.solve = SegmentSet(panels, [s] * self.n_panels, self.chains,
                                self.panel_curve, reuse=solve_reuse)
        e_counts = [choose_eval_segments(p.arc, s) for p in panels]
        self.evalseg = SegmentSet(panels, e_counts, self.chains,
                                  self.panel_curve, reuse=eval_reuse)

        # node annotations: each node lies on exactly one solve segment
        nodefrac = np.tile(0.5 * (self.basis.nodes + 1.0), self.n_panels)  # arc fraction in panel
        seg_idx = np.minimum((nodefrac * s).astype(int), s - 1)
        self.node_sing_seg = self.solve.offsets[self.node_panel] + seg_idx
        self.node_sing_frac = nodefrac * s - seg_idx

        # interpolation operators (node values -> segment midpoint values)
        self._interp = {}
        self.solve_interp = self._interp_matrix(s)

    def _interp_matrix(self, count):
        m = self._interp.get(count)
        if m is None:
            fr = 2.0 * (np.arange(count) + 0.5) / count - 1.0
            m = self.basis.interp_matrix(fr)
            self._interp[count] = m
        return m

    def node_targets(self) -> TargetSet:
        """Quadrature nodes as FMM/dense collocation targets.

        Each node is annotated with the solve segment its parameter falls on
        and projected onto that segment's chord: the singular quadrature acts
        on the polyline, so collocating on the polyline keeps every
        evaluation route (dense or FMM, clipped or not) consistent."""
        j = self.node_sing_seg
        proj = self.solve.p1[j] + self.node_sing_frac * (self.solve.p2[j] - self.solve.p1[j])
        return TargetSet(proj, j, self.node_sing_frac)

    def interp_to_segments(self, node_values, segset: SegmentSet):
        """Legendre-interpolate per-panel node values (n_nodes, C) to segment
        midpoint values (n_segments, C)."""
        vals = np.asarray(node_values, dtype=float)
        squeeze = vals.ndim == 1
        if squeeze:
            vals = vals[:, None]
        per_panel = vals.reshape(self.n_panels, self.g, -1)
        out = np.empty((len(segset), per_panel.shape[2]))
        counts = segset.counts
        for count in np.unique(counts):
            m = self._interp_matrix(int(count))
            pid = np.nonzero(counts == count)[0]
            res = np.einsum("eg,pgc->pec", m, per_panel[pid])
            idx = (segset.offsets[pid][:, None] + np.arange(count)[None, :]).ravel()
            out[idx] = res.reshape(-1, per_panel.shape[2])
        return out[:, 0] if squeeze else out

    def sample_dirichlet(self, params="nodes", segset=None):
        """Boundary colors u*+ and u*- sampled at quadrature nodes (default)
        or at segment midpoints; (n, 3) each.  Neumann curves sample as zero
        (their colors are unknowns, not data)."""
        if params == "nodes":
            ts = self.node_t
            curve_of = self.node_curve
        else:
            ts = 0.5 * (segset.t1 + segset.t2)
            curve_of = segset.curve
        up = np.zeros((len(ts), 3))
        um = np.zeros((len(ts), 3))
        for ci, curve in enumerate(self.scene.curves):
            mask = curve_of == ci
            if not np.any(mask) or curve.bc.kind != "dirichlet2":
                continue
            up[mask] = curve.bc.plus.sample(ts[mask])
            um[mask] = curve.bc.minus.sample(ts[mask])
        return up, um

    def panels_of_curve(self, curve_idx):
        return np.nonzero(self.panel_curve == curve_idx)[0]

    def subdivide_panels(self, panel_ids):
        """Return a new Discretization with the given panels split at their
        arc-length midpoints (two child panels each, preserving order)."""
        panel_ids = set(int(i) for i in panel_ids)
        new_panels = []
        parent_map = []  # for each new panel: (old panel index, child slot or -1)
        for pi, p in enumerate(self.panels):
            if pi in panel_ids:
                chain = self.chains[p.curve]
                tm = chain.param_at_arclength(p.arc0 + 0.5 * p.arc)
                new_panels.append(self._make_panel(p.curve, p.t0, tm))
                parent_map.append((pi, 0))
                new_panels.append(self._make_panel(p.curve, tm, p.t1))
                parent_map.append((pi, 1))
            else:
                new_panels.append(p)
                parent_map.append((pi, -1))
        disc = Discretization.__new__(Discretization)
        disc.scene = self.scene
        disc.g = self.g
        disc.s_mult = self.s_mult
        disc.s_per_panel = self.s_per_panel
        disc.basis = self.basis
        disc.chains = self.chains
        disc.panels = new_panels
        old_panel_of = [old if slot == -1 else -1 for old, slot in parent_map]
        disc._build_segments(reuse=(self, old_panel_of))
        disc.parent_map = parent_map
        return disc
