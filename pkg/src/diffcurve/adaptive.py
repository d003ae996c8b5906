"""Adaptive panel subdivision, perturbation-probe labeling, warm-started
local re-solve, and viewport-driven updates.

A solved session holds the discretization, the solve-stage FMM context
(quadtree + precomputed tables), the node densities, and the right-hand side.
When the viewport demands finer resolution, panels whose highest-order
Legendre coefficient exceeds the global threshold are split at their
arc-length midpoint; the quadtree and caches are updated locally; curves
whose induced potential reacts to a unit-charge probe on the subdivided
curves are re-solved with GMRES warm-started from interpolated densities,
while all other densities stay frozen.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dense import DensitySet
from .discretize import Discretization
from .errors import GmresError
from .fmm import local_fmm, update_pre_fmm
from .gmres import gmres
from .solver import (
    SolverSettings,
    build_solve_context,
    eval_scene,
    solve_scene,
)

FIXED = "fixed"
INTERPOLATING = "interpolating"
RESOLVING = "resolving"

PROBE_FACTOR = 0.9
MAX_ROUNDS = 24


@dataclass
class AdaptiveThresholds:
    eps1: float  # minimum panel arc length (world units, from pixel size)
    eps2: float  # Legendre highest-coefficient threshold (global)
    probe_factor: float = PROBE_FACTOR


def default_eps2(scene, scale=1e-2):
    """Global subdivision threshold: 1e-2 x the boundary color range."""
    lo, hi = np.inf, -np.inf
    for c in scene.curves:
        if c.bc.kind != "dirichlet2":
            continue
        for stops in (c.bc.plus, c.bc.minus):
            lo = min(lo, float(stops.colors.min()))
            hi = max(hi, float(stops.colors.max()))
    rng = hi - lo if hi > lo else 1.0
    return scale * rng


@dataclass
class Session:
    """Solved scene state; single writer for adaptive updates."""

    scene: object
    settings: SolverSettings
    disc: Discretization
    ctx: object
    dens: DensitySet
    rhs: np.ndarray
    labels: dict = field(default_factory=dict)
    last_stats: dict = field(default_factory=dict)
    rounds_total: int = 0

    @staticmethod
    def open(scene, settings: SolverSettings | None = None) -> "Session":
        settings = settings or SolverSettings()
        disc = Discretization(scene, g=settings.g, s_mult=settings.s_mult)
        dens, ctx, rhs, diags = solve_scene(disc, settings)
        labels = {c.id: INTERPOLATING for c in scene.curves}
        return Session(scene, settings, disc, ctx, dens, rhs, labels,
                       {"solve_seconds": diags.solve_seconds,
                        "iterations": diags.iterations})

    def clone(self) -> "Session":
        """Independent session sharing the immutable solved state; the tree is
        deep-copied so adaptive updates do not affect the original."""
        from .fmm import FmmContext

        ctx = FmmContext.__new__(FmmContext)
        ctx.segments = self.ctx.segments
        ctx.targets = self.ctx.targets
        ctx.k = self.ctx.k
        ctx.tree = self.ctx.tree.clone()
        ctx.ft = self.ctx.ft
        ctx.pre = self.ctx.pre
        return Session(
            self.scene, self.settings, self.disc, ctx,
            DensitySet(self.dens.single.copy(), self.dens.double.copy(),
                       self.dens.constant.copy()),
            self.rhs.copy(), dict(self.labels), dict(self.last_stats),
        )


def panel_indicators(disc: Discretization, dens: DensitySet):
    """Per-panel subdivision indicator: the largest magnitude of the
    highest-order Legendre coefficient over channels and density kinds."""
    inv = disc.basis.inverse
    out = np.zeros(disc.n_panels)
    for values in (dens.single, dens.double):
        per_panel = values.reshape(disc.n_panels, disc.g, -1)
        coeffs = np.einsum("gh,phc->pgc", inv, per_panel)
        out = np.maximum(out, np.abs(coeffs[:, -1, :]).max(axis=1))
    return out


def adaptive_subdivide(disc: Discretization, dens: DensitySet,
                       thresholds: AdaptiveThresholds, candidates=None):
    """Panels to split this round: indicator above eps2 and length >= eps1."""
    ind = panel_indicators(disc, dens)
    ok = (ind > thresholds.eps2) & (disc.panel_arc >= thresholds.eps1)
    if candidates is not None:
        mask = np.zeros(disc.n_panels, dtype=bool)
        mask[list(candidates)] = True
        ok &= mask
    return np.nonzero(ok)[0].tolist()


def warm_start(old_disc: Discretization, new_disc: Discretization, values):
    """Transfer per-node values onto a refined discretization: unsplit panels
    copy, split panels Legendre-interpolate onto each child's nodes."""
    values = np.asarray(values, dtype=float)
    squeeze = values.ndim == 1
    if squeeze:
        values = values[:, None]
    g = old_disc.g
    basis = old_disc.basis
    out = np.empty((new_disc.n_nodes, values.shape[1]))
    child_params = {
        0: 0.5 * (basis.nodes - 1.0),  # first half of the parent panel
        1: 0.5 * (basis.nodes + 1.0),
    }
    interp = {slot: basis.interp_matrix(p) for slot, p in child_params.items()}
    for new_pi, (old_pi, slot) in enumerate(new_disc.parent_map):
        src = values[old_pi * g : (old_pi + 1) * g]
        dst = slice(new_pi * g, (new_pi + 1) * g)
        if slot == -1:
            out[dst] = src
        else:
            out[dst] = interp[slot] @ src
    return out[:, 0] if squeeze else out


def _segment_maps(old_disc: Discretization, new_disc: Discretization):
    """Index bookkeeping between solve segment sets across a subdivision."""
    s = old_disc.s_per_panel
    old_panel_of_new = {}
    new_of_old_panel = {}
    for new_pi, (old_pi, slot) in enumerate(new_disc.parent_map):
        if slot == -1:
            new_of_old_panel[old_pi] = new_pi
        old_panel_of_new.setdefault(old_pi, []).append(new_pi)
    index_map = np.full(len(old_disc.solve), -1, dtype=int)
    replaced_old = []
    new_ids = []
    seg_map = {}
    for old_pi in range(old_disc.n_panels):
        if old_pi in new_of_old_panel:
            new_pi = new_of_old_panel[old_pi]
            for j in range(s):
                index_map[old_pi * s + j] = new_pi * s + j
                seg_map[old_pi * s + j] = new_pi * s + j
        else:
            replaced_old.extend(range(old_pi * s, (old_pi + 1) * s))
            for new_pi in old_panel_of_new[old_pi]:
                new_ids.extend(range(new_pi * s, (new_pi + 1) * s))
    return index_map, replaced_old, sorted(new_ids), seg_map


def apply_subdivision(session: Session, panel_ids):
    """Split panels, locally update the quadtree and caches, label, and
    locally re-solve.  Returns (resolving curve ids, stats)."""
    old_disc = session.disc
    new_disc = old_disc.subdivide_panels(panel_ids)
    subdivided_curves = sorted(
        {int(old_disc.panel_curve[pi]) for pi in panel_ids}
    )
    index_map, replaced_old, new_ids, seg_map = _segment_maps(old_disc, new_disc)
    tree = session.ctx.tree
    t0 = time.perf_counter()
    affected = tree.update(new_disc.solve, replaced_old, new_ids, index_map)
    changed_cells = set(affected) | tree.clip_touched
    session.ctx = update_pre_fmm(
        session.ctx, new_disc.solve, new_disc.node_targets(), seg_map=seg_map,
        changed_cells=changed_cells,
    )
    update_seconds = time.perf_counter() - t0
    sigma0 = warm_start(old_disc, new_disc, session.dens.single)
    up, um = new_disc.sample_dirichlet()
    # the double layer is exact data on Dirichlet curves (the color jump);
    # on Neumann curves it is the interpolated unknown
    mu_new = warm_start(old_disc, new_disc, session.dens.double)
    dmask = _dirichlet_node_mask(new_disc)
    mu_new[dmask] = (up - um)[dmask]
    session.disc = new_disc
    session.dens = DensitySet(single=sigma0.copy(), double=mu_new,
                              constant=session.dens.constant)
    session.rhs = refresh_rhs(session, up, um)
    r_curves, c_curves = label_resolve_curves(session, subdivided_curves)
    stats = local_resolve(session, r_curves, sigma0)
    # the solve shifts the residual on nearby constrained rows; expand the
    # re-solving set until every frozen row stays sub-quantization accurate
    for _ in range(2):
        if stats.get("global_fallback"):
            break
        recruits = _residual_recruits(session, set(r_curves))
        if not recruits:
            break
        r_curves = sorted(set(r_curves) | recruits)
        stats = local_resolve(session, r_curves, None)
    stats["update_seconds"] = update_seconds
    return r_curves, stats


def _residual_recruits(session: Session, current):
    disc = session.disc
    if any(c.bc.kind != "dirichlet2" for c in disc.scene.curves):
        return set()
    from .fmm import fmm_eval

    sbar = disc.interp_to_segments(session.dens.single, disc.solve)
    res = session.rhs - fmm_eval("G", disc.solve, sbar, ctx=session.ctx)
    res -= session.dens.constant[None, :]
    per_node = np.abs(res).max(axis=1)
    out = set()
    for ci in range(len(disc.scene.curves)):
        if ci in current:
            continue
        vals = per_node[disc.node_curve == ci]
        if len(vals) and vals.max() > RESIDUAL_RECRUIT:
            out.add(ci)
    return out


def _dirichlet_node_mask(disc: Discretization):
    kinds = np.array([c.bc.kind for c in disc.scene.curves])
    return kinds[disc.node_curve] == "dirichlet2"


def refresh_rhs(session: Session, up=None, um=None):
    """Recompute the Dirichlet right-hand side with one cached F-layer pass.

    Interpolating the old right-hand side misses the change in the subdivided
    panels' own singular quadrature, which the ill-conditioned first-kind
    system amplifies into visible density drift; one extra FMM evaluation is
    cheap next to the GMRES loop.  Mixed scenes re-solve globally, so their
    (differently structured) right-hand side is rebuilt there instead.
    """
    from .fmm import fmm_eval

    disc = session.disc
    if any(c.bc.kind != "dirichlet2" for c in disc.scene.curves):
        return session.rhs
    if up is None:
        up, um = disc.sample_dirichlet()
    mubar = disc.interp_to_segments(session.dens.double, disc.solve)
    return 0.5 * (up + um) - fmm_eval("F", disc.solve, mubar, ctx=session.ctx)


RESIDUAL_RECRUIT = 0.4 / 255.0  # keep stale-row violations sub-quantization


def label_resolve_curves(session: Session, subdivided_curves):
    """Perturbation probe: unit charge on each subdivided curve; a curve joins
    the re-solving set if the induced potential varies over it by more than
    0.9 x the variation over the probed curve.

    The probe is supplemented by a residual screen: one cached matvec
    evaluates how strongly the subdivision violated each constrained curve's
    collocation rows, and curves above a sub-quantization threshold join the
    re-solving set too (the probe alone occasionally leaves stale rows whose
    correction is visible at the 1/255 level)."""
    disc = session.disc
    ctx = session.ctx
    n_curves = len(disc.scene.curves)
    r = set(int(c) for c in subdivided_curves)
    all_targets = np.ones(disc.n_nodes, dtype=bool)
    for alpha in subdivided_curves:
        src_mask = disc.solve.curve == alpha
        probe = np.ones(len(disc.solve))
        v = local_fmm("G", disc.solve, probe, ctx, src_mask, all_targets)
        ranges = np.empty(n_curves)
        for ci in range(n_curves):
            vals = v[disc.node_curve == ci]
            ranges[ci] = vals.max() - vals.min() if len(vals) else 0.0
        thresh = PROBE_FACTOR * ranges[alpha]
        r.update(int(ci) for ci in np.nonzero(ranges > thresh)[0])
    if all(c.bc.kind == "dirichlet2" for c in disc.scene.curves):
        from .fmm import fmm_eval

        sbar = disc.interp_to_segments(session.dens.single, disc.solve)
        res = session.rhs - fmm_eval("G", disc.solve, sbar, ctx=ctx)
        res -= session.dens.constant[None, :]
        per_node = np.abs(res).max(axis=1)
        for ci in range(n_curves):
            if ci in r:
                continue
            vals = per_node[disc.node_curve == ci]
            if len(vals) and vals.max() > RESIDUAL_RECRUIT:
                r.add(ci)
    c = sorted(set(range(n_curves)) - r)
    return sorted(r), c


def local_resolve(session: Session, r_curves, sigma0=None):
    """Re-solve the density on the re-solving curves only, holding the
    constrained curves (and the additive constant) fixed; falls back to a
    global re-solve if GMRES stalls."""
    disc = session.disc
    ctx = session.ctx
    settings = session.settings
    r_nodes = np.isin(disc.node_curve, list(r_curves))
    r_segs = np.isin(disc.solve.curve, list(r_curves))
    c_segs = ~r_segs
    nr = int(r_nodes.sum())
    t0 = time.perf_counter()
    if nr == 0:
        return {"resolve_seconds": 0.0, "resolved_nodes": 0, "iterations": []}
    dmask = _dirichlet_node_mask(disc)
    if not np.all(dmask[r_nodes]):
        # mixed scenes re-solve globally: the local block structure only
        # covers the Dirichlet single-layer unknowns
        dens, ctx2, rhs, diags = solve_scene(disc, settings, ctx=ctx)
        session.dens = dens
        session.rhs = rhs
        return {
            "resolve_seconds": time.perf_counter() - t0,
            "resolved_nodes": disc.n_nodes,
            "iterations": diags.iterations,
            "global_fallback": True,
        }

    sigma = session.dens.single.copy()
    mu = session.dens.double
    iters = []
    nch = sigma.shape[1]
    # constrained-curve contribution to the right-hand side; the additive
    # constant stays a local unknown (with the charge constraint restricted
    # to the re-solving block) so that r = everything reproduces the global
    # system exactly
    from .solver import _charge_weights

    w = _charge_weights(disc)
    sigma_c = sigma.copy()
    sigma_c[r_nodes] = 0.0
    sbar_c = disc.interp_to_segments(sigma_c, disc.solve)
    contrib_c = local_fmm("G", disc.solve, sbar_c, ctx, c_segs, r_nodes)
    rhs_rows = session.rhs[r_nodes] - contrib_c[r_nodes]
    charge_rhs = -(w * sigma_c.T).sum(axis=1) if nch else 0.0
    rhs_local = np.vstack([rhs_rows, charge_rhs[None, :]])

    tmp = np.zeros(disc.n_nodes)

    def matvec(x):
        tmp[r_nodes] = x[:nr]
        sbar = disc.interp_to_segments(tmp, disc.solve)
        pot = local_fmm("G", disc.solve, sbar, ctx, r_segs, r_nodes)
        return np.concatenate([pot[r_nodes] + x[nr], [w[r_nodes] @ x[:nr]]])

    const = session.dens.constant.copy()
    for ch in range(nch):
        s0 = (sigma0 if sigma0 is not None else sigma)[r_nodes, ch]
        x0 = np.concatenate([s0, [const[ch]]])
        res = gmres(matvec, x0, np.concatenate([rhs_local[:-1, ch], [rhs_local[-1, ch]]]),
                    tol=settings.eps, maxiter=settings.maxiter)
        if not res.converged:
            # fall back to a global re-solve
            dens, _, rhs, diags = solve_scene(disc, settings, ctx=ctx)
            session.dens = dens
            session.rhs = rhs
            return {
                "resolve_seconds": time.perf_counter() - t0,
                "resolved_nodes": disc.n_nodes,
                "iterations": diags.iterations,
                "global_fallback": True,
            }
        sigma[r_nodes, ch] = res.x[:nr]
        const[ch] = res.x[nr]
        iters.append(res.iterations)
    session.dens = DensitySet(single=sigma, double=mu, constant=const)
    return {
        "resolve_seconds": time.perf_counter() - t0,
        "resolved_nodes": nr,
        "iterations": iters,
    }


def visible_curves(scene, viewport):
    """Curve ids whose control-point bounding box intersects the viewport."""
    x0, y0, x1, y1 = viewport
    out = []
    for ci, c in enumerate(scene.curves):
        pts = np.concatenate([s.controls() for s in c.spans])
        bx0, bx1 = pts.real.min(), pts.real.max()
        by0, by1 = pts.imag.min(), pts.imag.max()
        if bx1 >= x0 and bx0 <= x1 and by1 >= y0 and by0 <= y1:
            out.append(ci)
    return out


def update_viewport(session: Session, viewport, width_px, eps2=None):
    """Adaptive loop for a viewport change (subdivide, relabel, re-solve until
    the subdivision criterion is satisfied).  Returns per-frame stats."""
    scene = session.scene
    eps1 = (viewport[2] - viewport[0]) / max(width_px, 1)
    if eps2 is None:
        eps2 = session.settings.eps2 or default_eps2(scene)
    thresholds = AdaptiveThresholds(eps1=eps1, eps2=eps2)
    vis = visible_curves(scene, viewport)
    vis_set = set(vis)
    labels = {}
    for ci, c in enumerate(scene.curves):
        labels[c.id] = INTERPOLATING if ci in vis_set else FIXED
    resolved = set()
    rounds = 0
    t0 = time.perf_counter()
    warned = False
    while rounds < MAX_ROUNDS:
        candidates = [
            pi for pi in range(session.disc.n_panels)
            if int(session.disc.panel_curve[pi]) in vis_set
        ]
        split = adaptive_subdivide(session.disc, session.dens, thresholds,
                                   candidates)
        if not split:
            break
        r_curves, stats = apply_subdivision(session, split)
        resolved.update(r_curves)
        rounds += 1
        session.rounds_total += 1
    else:
        warned = True  # max panel depth: render proceeds anyway
    for ci in resolved:
        labels[scene.curves[ci].id] = RESOLVING
    session.labels = labels
    stats = {
        "rounds": rounds,
        "resolved_curves": len(resolved),
        "interpolating_curves": sum(
            1 for v in labels.values() if v == INTERPOLATING
        ),
        "fixed_curves": sum(1 for v in labels.values() if v == FIXED),
        "solve_ms": 1000.0 * (time.perf_counter() - t0),
        "max_rounds_hit": warned,
    }
    session.last_stats = stats
    return stats


def render_session(session: Session, targets, root_box=None):
    """Evaluate the session's solved potentials at targets (eval stage)."""
    return eval_scene(session.disc, session.dens, targets, session.settings,
                      root_box=root_box)
