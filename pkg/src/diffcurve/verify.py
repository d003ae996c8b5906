"""Numerical oracle suites driven by `diffcurve verify` and `diffcurve bench`.

These are trimmed-down versions of the acceptance tests: each suite checks an
independent ground truth (adaptive quadrature, analytic identities, dense
solves) against the production code paths and reports the measured error.
"""

from __future__ import annotations

import time

import numpy as np
from scipy.integrate import quad

from . import fixtures
from .dense import kernel_matrices, solve_dirichlet_double_sided_dense, eval_potential_dense
from .discretize import Discretization, Segment, TargetSet
from .fmm import FmmContext, fmm_eval
from .kernels import integrate_F_pairs, integrate_G_pairs
from .solver import SolverSettings, eval_scene, solve_fmm_hybrid


def quad_G(p1, p2, arc, q):
    """Adaptive-quadrature oracle for the arc-scaled int G dS."""
    d = p2 - p1

    def f(t):
        return -np.log(abs(p1 + t * d - q)) / (2 * np.pi)

    val, _ = quad(f, 0.0, 1.0, limit=200)
    return val * arc


def quad_F(p1, p2, arc, q):
    d = p2 - p1
    n = -1j * d / abs(d)

    def f(t):
        p = p1 + t * d
        return -((p - q) * np.conj(n)).real / (2 * np.pi * abs(p - q) ** 2)

    val, _ = quad(f, 0.0, 1.0, limit=200)
    return val * arc


def suite_kernels(n_pairs=120, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(n_pairs):
        p1 = rng.standard_normal() + 1j * rng.standard_normal()
        p2 = p1 + (0.1 + rng.random()) * np.exp(2j * np.pi * rng.random())
        arc = abs(p2 - p1) * (1 + 0.5 * rng.random())
        q = 3 * (rng.standard_normal() + 1j * rng.standard_normal())
        gv = float(integrate_G_pairs(p1, p2, arc, q))
        fv = float(integrate_F_pairs(p1, p2, arc, q))
        gr = quad_G(p1, p2, arc, q)
        fr = quad_F(p1, p2, arc, q)
        worst = max(worst, abs(gv - gr) / max(1e-30, abs(gr)),
                    abs(fv - fr) / max(1e-30, abs(fr), 1e-3))
    return worst < 1e-10, f"max rel err {worst:.2e} over {n_pairs} pairs (tol 1e-10)"


def suite_gauss(n_gon=1000, n_points=50, seed=0):
    rng = np.random.default_rng(seed)
    th = 2 * np.pi * np.arange(n_gon + 1) / n_gon
    verts = np.exp(1j * th)
    p1, p2 = verts[:-1], verts[1:]
    arc = np.abs(p2 - p1)
    inner = 0.8 * np.sqrt(rng.random(n_points)) * np.exp(2j * np.pi * rng.random(n_points))
    outer = (1.3 + rng.random(n_points)) * np.exp(2j * np.pi * rng.random(n_points))
    fin = integrate_F_pairs(p1[None, :], p2[None, :], arc[None, :], inner[:, None]).sum(axis=1)
    fout = integrate_F_pairs(p1[None, :], p2[None, :], arc[None, :], outer[:, None]).sum(axis=1)
    err_in = np.abs(fin + 1.0).max()
    err_out = np.abs(fout).max()
    ok = err_in < 1e-10 and err_out < 1e-10
    return ok, f"interior |sum+1| {err_in:.2e}, exterior |sum| {err_out:.2e} (tol 1e-10)"


def suite_fmm(n_scenes=5, k=16, seed=0):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in range(n_scenes):
        scene = fixtures.random_scene(int(rng.integers(3, 15)), seed=seed * 100 + t)
        disc = Discretization(scene)
        seg = disc.solve
        dens = rng.standard_normal((len(seg), 2))
        pts = rng.random(150) * 1.5 - 0.25 + 1j * (rng.random(150) * 1.5 - 0.25)
        for tg in (TargetSet(pts), disc.node_targets()):
            ctx = FmmContext(seg, tg, k=k)
            mats = kernel_matrices(tg, seg.p1, seg.p2, seg.arc)
            for kern in ("G", "F"):
                u_f = fmm_eval(kern, seg, dens, ctx=ctx)
                worst = max(worst, np.abs(u_f - mats[kern] @ dens).max())
    return worst < 1e-6, f"max |FMM - dense| {worst:.2e} over {n_scenes} scenes (tol 1e-6)"


def suite_single_source(k_sweep=False):
    scene, z0, centers, r = fixtures.single_source_scene()
    uex = fixtures.unit_source_potential(z0)
    panels = None
    settings = SolverSettings(g=8, s_mult=5)
    disc = Discretization(scene, g=8, s_mult=5)
    panels = []
    for ci in range(len(scene.curves)):
        for kk in range(4):
            panels.append(disc._make_panel(ci, kk / 4, (kk + 1) / 4))
    disc = Discretization(scene, g=8, s_mult=5, panels=panels)
    vals = uex(disc.node_pos)
    up = np.repeat(vals[:, None], 3, axis=1)
    dens, ctx, rhs, _ = solve_fmm_hybrid(disc, settings, up, up.copy())
    xs = np.linspace(-0.4, 1.4, 128)
    grid = (xs[None, :] + 1j * xs[:, None]).ravel()
    band = 2 * disc.evalseg.arc.mean()
    keep = np.zeros(len(grid), dtype=bool)
    for c in centers:
        keep |= np.abs(grid - c) < r - band
    u = eval_scene(disc, dens, grid[keep], settings)[:, 0]
    ex = uex(grid[keep])
    rel = np.linalg.norm(u - ex) / np.linalg.norm(ex)
    return rel < 1e-3, f"interior rel L2 {rel:.2e} at g=8,s=40 (tol 1e-3)"


def suite_local(seed=0):
    from .adaptive import Session, adaptive_subdivide, AdaptiveThresholds, apply_subdivision

    scene = fixtures.grid_scene(60, seed=seed)
    settings = SolverSettings()
    session = Session.open(scene, settings)
    sess_global = Session.open(scene, settings)
    # force one subdivision round on a fixed panel
    panel = 7
    r, stats = apply_subdivision(session, [panel])
    new_disc = sess_global.disc.subdivide_panels([panel])
    from .solver import solve_scene

    dens_g, _, _, _ = solve_scene(new_disc, settings)
    pts = (np.linspace(0.1, 0.9, 24)[None, :] + 1j * np.linspace(0.1, 0.9, 24)[:, None]).ravel()
    u_local = eval_scene(session.disc, session.dens, pts, settings)
    u_global = eval_scene(new_disc, dens_g, pts, settings)
    err = np.abs(u_local - u_global).max()
    return err < 1.0 / 255.0, f"max image-space diff local vs global {err:.2e} (tol 1/255)"


def suite_k_sweep(seed=0):
    """Truncation-vs-K table: the FMM error against the dense oracle must
    decrease (within noise) as the expansion order grows."""
    rng = np.random.default_rng(seed)
    scene = fixtures.random_scene(8, seed=seed + 3)
    disc = Discretization(scene)
    seg = disc.solve
    dens = rng.standard_normal((len(seg), 1))
    pts = rng.random(200) * 1.2 - 0.1 + 1j * (rng.random(200) * 1.2 - 0.1)
    tg = TargetSet(pts)
    mats = kernel_matrices(tg, seg.p1, seg.p2, seg.arc, want_f=False)
    ref = mats["G"] @ dens
    table = []
    for k in (4, 8, 12, 16, 24):
        ctx = FmmContext(seg, tg, k=k, cache_targets=False, cache_near=False)
        err = float(np.abs(fmm_eval("G", seg, dens, ctx=ctx) - ref).max())
        table.append((k, err))
    ok = all(
        b[1] <= max(4 * a[1], 1e-13) and (b[1] <= a[1] or b[1] < 1e-10)
        for a, b in zip(table, table[1:])
    )
    pretty = ", ".join(f"K={k}: {e:.2e}" for k, e in table)
    return ok, f"truncation vs K [{pretty}]"


SUITES = {
    "kernels": suite_kernels,
    "gauss": suite_gauss,
    "fmm": suite_fmm,
    "k-sweep": suite_k_sweep,
    "single-source": suite_single_source,
    "local": suite_local,
}


def run_suites(names=None, seed=0):
    results = []
    for name, fn in SUITES.items():
        if names and name not in names:
            continue
        try:
            if "seed" in fn.__code__.co_varnames:
                ok, detail = fn(seed=seed)
            else:
                ok, detail = fn()
        except Exception as exc:  # pragma: no cover - diagnostic path
            ok, detail = False, f"exception: {exc!r}"
        results.append((name, ok, detail))
    return results


# ---------------------------------------------------------------------------
# scaling benchmark


def _bench_scene(n_segments, seed=0):
    n_curves = max(2, n_segments // 20)
    scene = fixtures.grid_scene(n_curves, seed=seed)
    disc = Discretization(scene)
    return disc


def bench_scaling(sizes, brute_limit=2000, k=16, seed=0, targets_per_segment=32):
    """Time brute force vs FMM for the evaluation stage.

    Targets form a pixel-like grid whose size scales with the segment count
    (the rendering regime has many more pixels than segments), so the brute
    cost grows quadratically while the FMM stays linear."""
    rng = np.random.default_rng(seed)
    rows = []
    for n in sizes:
        disc = _bench_scene(n, seed=seed)
        seg = disc.solve
        n_t = targets_per_segment * len(seg)
        side = int(np.ceil(np.sqrt(n_t)))
        xs = np.linspace(0.0, 1.0, side)
        pts = (xs[None, :] + 1j * xs[:, None]).ravel()[:n_t]
        dens = rng.standard_normal(len(seg))
        tg = TargetSet(pts)
        fmm_s = np.inf
        for _ in range(2):  # min of two runs: steadier doubling ratios
            t0 = time.perf_counter()
            ctx = FmmContext(seg, tg, k=k, cache_targets=False, cache_near=False)
            u_f = fmm_eval("G", seg, dens, ctx=ctx)
            fmm_s = min(fmm_s, time.perf_counter() - t0)
        brute_s = None
        if len(seg) <= brute_limit:
            t0 = time.perf_counter()
            mats = kernel_matrices(tg, seg.p1, seg.p2, seg.arc, want_f=False)
            u_b = mats["G"] @ dens
            brute_s = time.perf_counter() - t0
            assert np.abs(u_f - u_b).max() < 1e-5
        rows.append({
            "segments": len(seg),
            "targets": n_t,
            "brute_s": brute_s,
            "fmm_s": fmm_s,
        })
    return rows


def fit_scaling(rows):
    """Log-log slopes and the doubling ratios for the benchmark rows."""
    segs = np.array([r["segments"] for r in rows], dtype=float)
    fmm = np.array([r["fmm_s"] for r in rows])
    out = {}
    if len(segs) >= 2:
        slope = np.polyfit(np.log(segs), np.log(fmm), 1)[0]
        out["fmm_exponent"] = round(float(slope), 3)
        ratios = []
        for i, ri in enumerate(rows):
            for j, rj in enumerate(rows):
                if rj["segments"] == 2 * ri["segments"]:
                    ratios.append(rj["fmm_s"] / ri["fmm_s"])
        if ratios:
            out["fmm_doubling_ratio_max"] = round(float(max(ratios)), 3)
    brute = [(r["segments"], r["brute_s"]) for r in rows if r["brute_s"] is not None]
    if len(brute) >= 2:
        bs = np.array(brute, dtype=float)
        out["brute_exponent"] = round(float(np.polyfit(np.log(bs[:, 0]), np.log(bs[:, 1]), 1)[0]), 3)
    for r in rows:
        if r["brute_s"] is not None and r["segments"] >= 2000:
            out[f"speedup_at_{r['segments']}"] = round(r["brute_s"] / r["fmm_s"], 2)
    return out
