"""End-to-end solve pipelines: FMM-accelerated hybrid and BEM solves of the
double-sided Dirichlet (and mixed Neumann) systems, and full-scene evaluation.

The GMRES unknown vector per channel is the node density stacked with the
additive constant; the extra equation is the zero-total-charge constraint
(see dense.py).  The matvec runs the single-layer FMM over the interpolated
solve segments, so its cost is linear in the segment count.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dense import DensitySet
from .discretize import Discretization, TargetSet
from .errors import GmresError, SingularSystemError
from .fmm import FmmContext, fmm_eval, pre_fmm
from .gmres import gmres
from .quadtree import build_quadtree

DEFAULT_EPS = 1e-6
DEFAULT_MAXITER = 500


@dataclass
class SolverSettings:
    g: int = 4
    s_mult: int = 5
    k: int = 16
    eps: float = DEFAULT_EPS
    maxiter: int = DEFAULT_MAXITER
    eps2: float | None = None  # subdivision threshold; None = 1e-2 x color range
    max_depth: int = 40

    @property
    def b(self):
        return self.k


@dataclass
class SolveDiagnostics:
    iterations: list = field(default_factory=list)  # per channel
    residuals: list = field(default_factory=list)
    solve_seconds: float = 0.0

    def as_records(self):
        return [
            {"channel": i, "iterations": it, "residuals": res}
            for i, (it, res) in enumerate(zip(self.iterations, self.residuals))
        ]


def scene_root_box(scene, pad=0.05):
    """Root square for the solve quadtree: scene bounds padded 5% per side."""
    x0, y0, x1, y1 = scene.bounds
    w = max(x1 - x0, y1 - y0, 1e-300)
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    half = 0.5 * w + pad * w
    return (cx - half, cy - half, 2 * half)


def build_solve_context(disc: Discretization, settings: SolverSettings) -> FmmContext:
    tree = build_quadtree(
        disc.solve, b=settings.b, max_depth=settings.max_depth,
        root_box=scene_root_box(disc.scene),
    )
    return pre_fmm(disc.solve, disc.node_targets(), tree, k=settings.k,
                   cache_targets=True, cache_near=True)


def _charge_weights(disc: Discretization):
    """w such that w . sigma_nodes = sum of arc-weighted interpolated density."""
    s = disc.s_per_panel
    w_seg = disc.solve.arc
    per_panel = w_seg.reshape(disc.n_panels, s)
    return np.einsum("ps,sg->pg", per_panel, disc.solve_interp).ravel()


def solve_fmm_hybrid(disc: Discretization, settings: SolverSettings,
                     u_plus, u_minus, sigma0=None, ctx: FmmContext | None = None):
    """Hybrid solve (quadrature-node unknowns, FMM matvec).

    Returns (DensitySet, ctx, rhs, diagnostics); rhs is the per-node
    right-hand side b* = (u+ + u-)/2 - F-layer contribution.
    """
    if ctx is None:
        ctx = build_solve_context(disc, settings)
    u_plus = np.atleast_2d(np.asarray(u_plus, dtype=float).T).T
    u_minus = np.atleast_2d(np.asarray(u_minus, dtype=float).T).T
    mu = u_plus - u_minus
    mubar = disc.interp_to_segments(mu, disc.solve)
    rhs = 0.5 * (u_plus + u_minus) - fmm_eval("F", disc.solve, mubar, ctx=ctx)
    n = disc.n_nodes
    w = _charge_weights(disc)
    diags = SolveDiagnostics()
    t0 = time.perf_counter()

    def matvec(x):
        sbar = disc.interp_to_segments(x[:n], disc.solve)
        pot = fmm_eval("G", disc.solve, sbar, ctx=ctx) + x[n]
        return np.concatenate([pot, [w @ x[:n]]])

    sigma = np.empty((n, rhs.shape[1]))
    const = np.empty(rhs.shape[1])
    for ch in range(rhs.shape[1]):
        if sigma0 is None:
            s0 = np.ones(n)
        elif np.ndim(sigma0) == 2:
            s0 = np.asarray(sigma0, dtype=float)[:, ch]
        else:
            s0 = np.asarray(sigma0, dtype=float)
        x0 = np.concatenate([s0, [0.0]])
        res = gmres(matvec, x0, np.concatenate([rhs[:, ch], [0.0]]),
                    tol=settings.eps, maxiter=settings.maxiter)
        if not res.converged:
            raise GmresError(
                f"GMRES did not converge in {res.iterations} iterations "
                f"(residuals {res.residuals[-3:]})"
            )
        sigma[:, ch] = res.x[:n]
        const[ch] = res.x[n]
        diags.iterations.append(res.iterations)
        diags.residuals.append(res.residuals)
    diags.solve_seconds = time.perf_counter() - t0
    return DensitySet(single=sigma, double=mu, constant=const), ctx, rhs, diags


def solve_fmm_bem(disc: Discretization, settings: SolverSettings,
                  u_plus_mid, u_minus_mid, sigma0=None, ctx: FmmContext | None = None):
    """Plain-BEM solve (segment-midpoint unknowns, FMM matvec); used for the
    hybrid-vs-BEM comparisons.  Returns (sigma_bar, mu_bar, C, diagnostics)."""
    seg = disc.solve
    n = len(seg)
    if ctx is None:
        tree = build_quadtree(seg, b=settings.b, max_depth=settings.max_depth,
                              root_box=scene_root_box(disc.scene))
        coll = TargetSet(seg.mid, np.arange(n), np.full(n, 0.5))
        ctx = pre_fmm(seg, coll, tree, k=settings.k)
    u_plus_mid = np.atleast_2d(np.asarray(u_plus_mid, dtype=float).T).T
    u_minus_mid = np.atleast_2d(np.asarray(u_minus_mid, dtype=float).T).T
    mu = u_plus_mid - u_minus_mid
    rhs = 0.5 * (u_plus_mid + u_minus_mid) - fmm_eval("F", seg, mu, ctx=ctx)
    w = seg.arc
    diags = SolveDiagnostics()
    t0 = time.perf_counter()

    def matvec(x):
        pot = fmm_eval("G", seg, x[:n], ctx=ctx) + x[n]
        return np.concatenate([pot, [w @ x[:n]]])

    sigma = np.empty((n, rhs.shape[1]))
    const = np.empty(rhs.shape[1])
    for ch in range(rhs.shape[1]):
        x0 = np.concatenate([np.ones(n), [0.0]])
        res = gmres(matvec, x0, np.concatenate([rhs[:, ch], [0.0]]),
                    tol=settings.eps, maxiter=settings.maxiter)
        if not res.converged:
            raise GmresError("GMRES did not converge (BEM path)")
        sigma[:, ch] = res.x[:n]
        const[ch] = res.x[n]
        diags.iterations.append(res.iterations)
        diags.residuals.append(res.residuals)
    diags.solve_seconds = time.perf_counter() - t0
    return sigma, mu, const, diags


def solve_fmm_mixed(disc: Discretization, settings: SolverSettings,
                    u_plus, u_minus, ctx: FmmContext | None = None):
    """Mixed Dirichlet/Neumann solve with FMM matvecs over the stacked
    unknowns (sigma on Dirichlet nodes, boundary value u_n on Neumann nodes).
    Closed Neumann curves carry their known flux as single-layer density and
    -u_n as double-layer density (outward normals)."""
    if ctx is None:
        ctx = build_solve_context(disc, settings)
    kinds = np.array([c.bc.kind for c in disc.scene.curves])
    d_mask = kinds[disc.node_curve] == "dirichlet2"
    if not np.any(d_mask):
        raise SingularSystemError(
            "all-Neumann problem: solution defined only up to a constant"
        )
    didx = np.nonzero(d_mask)[0]
    nidx = np.nonzero(~d_mask)[0]
    nd, nn = len(didx), len(nidx)
    u_plus = np.atleast_2d(np.asarray(u_plus, dtype=float).T).T
    u_minus = np.atleast_2d(np.asarray(u_minus, dtype=float).T).T
    nch = u_plus.shape[1]
    mu = np.zeros((disc.n_nodes, nch))
    mu[didx] = (u_plus - u_minus)[didx]
    flux = np.zeros((disc.n_nodes, nch))
    for ci, curve in enumerate(disc.scene.curves):
        if curve.bc.kind == "neumann":
            flux[disc.node_curve == ci] = curve.bc.flux
    # fixed-density contribution: G-layer of the known flux + F-layer of mu
    fixed = fmm_eval("G", disc.solve, disc.interp_to_segments(flux, disc.solve), ctx=ctx)
    fixed += fmm_eval("F", disc.solve, disc.interp_to_segments(mu, disc.solve), ctx=ctx)
    rhs_full = np.zeros((nd + nn + 1, nch))
    rhs_full[:nd] = 0.5 * (u_plus + u_minus)[didx] - fixed[didx]
    rhs_full[nd : nd + nn] = -fixed[nidx]
    w = _charge_weights(disc)
    diags = SolveDiagnostics()

    def matvec(x):
        a = np.zeros(disc.n_nodes)
        b = np.zeros(disc.n_nodes)
        a[didx] = x[:nd]
        b[nidx] = -x[nd : nd + nn]
        pot = fmm_eval("G", disc.solve, disc.interp_to_segments(a, disc.solve), ctx=ctx)
        pot += fmm_eval("F", disc.solve, disc.interp_to_segments(b, disc.solve), ctx=ctx)
        c = x[nd + nn]
        out = np.empty(nd + nn + 1)
        out[:nd] = pot[didx] + c
        out[nd : nd + nn] = pot[nidx] + c - 0.5 * x[nd : nd + nn]
        out[nd + nn] = w[didx] @ x[:nd]
        return out

    single = np.zeros((disc.n_nodes, nch))
    double = np.zeros((disc.n_nodes, nch))
    const = np.empty(nch)
    t0 = time.perf_counter()
    for ch in range(nch):
        x0 = np.zeros(nd + nn + 1)
        res = gmres(matvec, x0, rhs_full[:, ch], tol=settings.eps,
                    maxiter=settings.maxiter)
        if not res.converged:
            raise GmresError("GMRES did not converge (mixed path)")
        single[didx, ch] = res.x[:nd]
        double[nidx, ch] = -res.x[nd : nd + nn]
        const[ch] = res.x[nd + nn]
        diags.iterations.append(res.iterations)
        diags.residuals.append(res.residuals)
    single[nidx] = flux[nidx]
    double[didx] = mu[didx]
    diags.solve_seconds = time.perf_counter() - t0
    return DensitySet(single=single, double=double, constant=const), ctx, rhs_full, diags


def solve_scene(disc: Discretization, settings: SolverSettings,
                ctx: FmmContext | None = None):
    """Solve a (preprocessed, discretized) scene: the hybrid Dirichlet path
    when every curve is Dirichlet, otherwise the mixed block path.
    Returns (DensitySet, ctx, rhs, diagnostics)."""
    up, um = disc.sample_dirichlet()
    if all(c.bc.kind == "dirichlet2" for c in disc.scene.curves):
        return solve_fmm_hybrid(disc, settings, up, um, ctx=ctx)
    return solve_fmm_mixed(disc, settings, up, um, ctx=ctx)


def eval_scene(disc: Discretization, dens: DensitySet, targets,
               settings: SolverSettings, stage="eval", eval_ctx=None,
               root_box=None):
    """FMM evaluation of the solved layer potentials at arbitrary targets
    (Algorithm step: u = G-layer + F-layer + constant)."""
    segset = disc.evalseg if stage == "eval" else disc.solve
    tset = targets if isinstance(targets, TargetSet) else TargetSet(np.asarray(targets, dtype=complex))
    if eval_ctx is None:
        box = root_box
        if box is None:
            box = _covering_box(disc.scene, tset.pos)
        tree = build_quadtree(segset, b=settings.b, max_depth=settings.max_depth,
                              root_box=box)
        eval_ctx = pre_fmm(segset, tset, tree, k=settings.k,
                           cache_targets=False, cache_near=False)
    abar = disc.interp_to_segments(dens.single, segset)
    bbar = disc.interp_to_segments(dens.double, segset)
    u = fmm_eval("G", segset, abar, ctx=eval_ctx)
    u += fmm_eval("F", segset, bbar, ctx=eval_ctx)
    return u + dens.constant[None, :]


def _covering_box(scene, pts):
    """Root square covering both the scene and the requested targets, so that
    no target needs the dense out-of-root fallback."""
    x0, y0, x1, y1 = scene.bounds
    x0 = min(x0, pts.real.min())
    x1 = max(x1, pts.real.max())
    y0 = min(y0, pts.imag.min())
    y1 = max(y1, pts.imag.max())
    w = max(x1 - x0, y1 - y0, 1e-300)
    cx, cy = 0.5 * (x0 + x1), 0.5 * (y0 + y1)
    half = 0.55 * w
    return (cx - half, cy - half, 2 * half)
