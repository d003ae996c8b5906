"""Command-line entry points: render, zoom, verify, bench, serve."""

from __future__ import annotations

import csv
import json
import sys
import time

import click
import numpy as np

from . import fixtures, render as renderer
from .adaptive import Session, default_eps2, update_viewport
from .discretize import Discretization, TargetSet
from .errors import DiffCurveError
from .render import Viewport, encode_png, full_extent_viewport
from .scene import load_scene, preprocess_scene
from .solver import SolverSettings, eval_scene, solve_scene


def _error_json(exc):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if hasattr(exc, "path"):
        payload["path"] = exc.path
    click.echo(json.dumps(payload), err=True)


def _settings(g, s_mult, k, eps, eps2):
    return SolverSettings(g=g, s_mult=s_mult, k=k, eps=eps, eps2=eps2)


def _limit_threads(threads):
    if threads is None:
        return
    try:
        from threadpoolctl import threadpool_limits

        threadpool_limits(limits=threads)
    except ImportError:
        pass  # worker parallelism is numpy-internal; cap is best-effort


common_options = [
    click.option("--g", "g", default=4, show_default=True, help="quadrature nodes per panel"),
    click.option("--s-mult", default=5, show_default=True, help="solve segments per node"),
    click.option("-K", "--expansion-order", "k", default=16, show_default=True),
    click.option("--eps", default=1e-6, show_default=True, help="GMRES relative residual"),
    click.option("--eps2", default=None, type=float, help="subdivision coefficient threshold"),
    click.option("--threads", default=None, type=int, help="cap worker threads"),
    click.option("--seed", default=0, show_default=True, help="seed for randomized fixtures"),
]


def add_options(opts):
    def wrap(fn):
        for opt in reversed(opts):
            fn = opt(fn)
        return fn

    return wrap


@click.group()
def main():
    """Diffusion-curve renderer (boundary-integral solver with FMM)."""


def _parse_viewport(text, scene, res_w, res_h):
    if text is None:
        return full_extent_viewport(scene, res_w, res_h)
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 4:
        raise click.UsageError("--viewport expects x0,y0,x1,y1")
    return Viewport(parts[0], parts[1], parts[2], parts[3], res_w, res_h)


@main.command("render")
@click.argument("scene_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--output", required=True, type=click.Path(dir_okay=False))
@click.option("--res", default=512, show_default=True, help="output resolution (square)")
@click.option("--viewport", default=None, help="world rect x0,y0,x1,y1 (default: scene bounds)")
@click.option("--aa/--no-aa", default=True, show_default=True)
@click.option("--adaptive/--no-adaptive", default=True, show_default=True)
@click.option("--float-out", default=None, type=click.Path(), help="also dump raw float buffer (.npy)")
@add_options(common_options)
def cmd_render(scene_path, output, res, viewport, aa, adaptive, float_out,
               g, s_mult, k, eps, eps2, threads, seed):
    """Render SCENE_PATH to a PNG."""
    _limit_threads(threads)
    try:
        scene = preprocess_scene(load_scene(open(scene_path, "rb").read()))
        settings = _settings(g, s_mult, k, eps, eps2)
        t0 = time.perf_counter()
        session = Session.open(scene, settings)
        solve_s = time.perf_counter() - t0
        vp = _parse_viewport(viewport, scene, res, res)
        t0 = time.perf_counter()
        if adaptive:
            update_viewport(session, (vp.x0, vp.y0, vp.x1, vp.y1), res)
        adapt_s = time.perf_counter() - t0
        t0 = time.perf_counter()
        img = renderer.render(session, vp, aa=aa)
        eval_s = time.perf_counter() - t0
        encode_png(img, output)
        if float_out:
            np.save(float_out, img)
        click.echo(json.dumps({
            "solve_s": round(solve_s, 4),
            "adaptive_s": round(adapt_s, 4),
            "eval_s": round(eval_s, 4),
            "panels": session.disc.n_panels,
            "output": output,
        }))
    except DiffCurveError as exc:
        _error_json(exc)
        sys.exit(1)


@main.command("zoom")
@click.argument("scene_path", type=click.Path(exists=True, dir_okay=False))
@click.option("-o", "--outdir", required=True, type=click.Path(file_okay=False))
@click.option("--res", default=256, show_default=True)
@click.option("--keyframes", default=None, type=click.Path(exists=True),
              help="JSON list of viewports [x0,y0,x1,y1]")
@click.option("--frames", default=6, show_default=True)
@click.option("--factor", default=2.0, show_default=True, help="zoom per frame")
@click.option("--center", default=None, help="zoom center cx,cy (default scene center)")
@click.option("--aa/--no-aa", default=True, show_default=True)
@add_options(common_options)
def cmd_zoom(scene_path, outdir, res, keyframes, frames, factor, center, aa,
             g, s_mult, k, eps, eps2, threads, seed):
    """Render a zoom sequence, reusing the solver session between frames."""
    import os

    _limit_threads(threads)
    try:
        scene = preprocess_scene(load_scene(open(scene_path, "rb").read()))
        settings = _settings(g, s_mult, k, eps, eps2)
        os.makedirs(outdir, exist_ok=True)
        if keyframes:
            views = json.load(open(keyframes))
        else:
            vp0 = full_extent_viewport(scene, res, res)
            if center:
                cx, cy = (float(v) for v in center.split(","))
            else:
                cx, cy = 0.5 * (vp0.x0 + vp0.x1), 0.5 * (vp0.y0 + vp0.y1)
            views = []
            half = 0.5 * (vp0.x1 - vp0.x0)
            for f in range(frames):
                h = half / (factor**f)
                views.append([cx - h, cy - h, cx + h, cy + h])
        session = Session.open(scene, settings)
        initial_solve_s = session.last_stats.get("solve_seconds", 0.0)
        records = []
        for i, v in enumerate(views):
            vp = Viewport(v[0], v[1], v[2], v[3], res, res)
            t0 = time.perf_counter()
            stats = update_viewport(session, tuple(v), res)
            t1 = time.perf_counter()
            img = renderer.render(session, vp, aa=aa)
            t2 = time.perf_counter()
            path = os.path.join(outdir, f"frame{i:03d}.png")
            encode_png(img, path)
            rec = {
                "frame": i,
                "viewport": v,
                "resolved": stats["resolved_curves"],
                "interpolating": stats["interpolating_curves"],
                "fixed": stats["fixed_curves"],
                "resolve_s": round(t1 - t0, 4),
                "eval_s": round(t2 - t1, 4),
                "initial_solve_s": round(initial_solve_s, 4),
            }
            records.append(rec)
            click.echo(json.dumps(rec))
        with open(os.path.join(outdir, "stats.json"), "w") as f:
            json.dump(records, f, indent=1)
    except DiffCurveError as exc:
        _error_json(exc)
        sys.exit(1)


@main.command("verify")
@click.option("--suite", multiple=True,
              type=click.Choice(["kernels", "gauss", "fmm", "k-sweep", "single-source", "local"]),
              help="run only the named suites")
@add_options(common_options)
def cmd_verify(suite, g, s_mult, k, eps, eps2, threads, seed):
    """Run the numerical oracle suites and report pass/fail."""
    _limit_threads(threads)
    from . import verify as verify_mod

    results = verify_mod.run_suites(set(suite) or None, seed=seed)
    failed = 0
    for name, ok, detail in results:
        click.echo(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")
        failed += 0 if ok else 1
    if failed:
        click.echo(f"{failed} suite(s) failed", err=True)
        sys.exit(1)
    click.echo("all suites passed")


@main.command("bench")
@click.option("--sizes", default="250,500,1000,2000,4000,8000", show_default=True)
@click.option("-o", "--output", default=None, type=click.Path(), help="CSV output path")
@click.option("--brute-limit", default=2000, show_default=True,
              help="largest size timed with brute force")
@add_options(common_options)
def cmd_bench(sizes, output, brute_limit, g, s_mult, k, eps, eps2, threads, seed):
    """Time brute-force vs FMM evaluation across scene sizes and fit scaling."""
    _limit_threads(threads)
    from . import verify as verify_mod

    sizes = [int(s) for s in sizes.split(",")]
    rows = verify_mod.bench_scaling(sizes, brute_limit=brute_limit, k=k, seed=seed)
    writer = csv.writer(open(output, "w", newline="")) if output else csv.writer(sys.stdout)
    writer.writerow(["segments", "targets", "brute_s", "fmm_s", "speedup"])
    for r in rows:
        writer.writerow([r["segments"], r["targets"],
                         "" if r["brute_s"] is None else f"{r['brute_s']:.4f}",
                         f"{r['fmm_s']:.4f}",
                         "" if r["brute_s"] is None else f"{r['brute_s'] / r['fmm_s']:.1f}"])
    fit = verify_mod.fit_scaling(rows)
    click.echo(json.dumps(fit))


@main.command("serve")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8754, show_default=True)
@add_options(common_options)
def cmd_serve(host, port, g, s_mult, k, eps, eps2, threads, seed):
    """Run the local render service for the interactive viewer."""
    import uvicorn

    from .service import create_app

    _limit_threads(threads)
    app = create_app(_settings(g, s_mult, k, eps, eps2))
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
