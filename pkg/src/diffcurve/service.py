"""Local HTTP render service maintaining per-scene solver sessions.

Loopback-bound by default; one exclusive writer per session (concurrent
render requests to the same session get 409 and should retry)."""

from __future__ import annotations

import secrets
import threading
import time

import numpy as np
from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from .adaptive import Session, update_viewport
from .errors import RenderError, SceneParseError, SceneValidationError
from .render import Viewport, png_bytes, render
from .scene import load_scene, preprocess_scene
from .solver import SolverSettings


class SessionEntry:
    def __init__(self, session: Session):
        self.session = session
        self.lock = threading.Lock()


def create_app(settings: SolverSettings | None = None) -> FastAPI:
    settings = settings or SolverSettings()
    app = FastAPI(title="diffcurve render service")
    sessions: dict[str, SessionEntry] = {}

    @app.middleware("http")
    async def allow_local_viewer(request: Request, call_next):
        response = await call_next(request)
        response.headers["Access-Control-Allow-Origin"] = "*"
        response.headers["Access-Control-Expose-Headers"] = "*"
        return response

    @app.post("/scene", status_code=201)
    async def post_scene(request: Request):
        body = await request.body()
        try:
            scene = preprocess_scene(load_scene(body))
            session = Session.open(scene, settings)
        except SceneParseError as exc:
            return JSONResponse({"error": "parse", "path": exc.path, "message": str(exc)},
                                status_code=400)
        except SceneValidationError as exc:
            return JSONResponse({"error": "validation", "message": str(exc)},
                                status_code=422)
        # complete the initial adaptive loop at a default full-extent
        # viewport so that immediate re-renders at coarser or equal
        # resolution need no further re-solving
        from .render import full_extent_viewport

        vp = full_extent_viewport(scene, 256, 256)
        update_viewport(session, (vp.x0, vp.y0, vp.x1, vp.y1), 256)
        sid = secrets.token_urlsafe(16)
        sessions[sid] = SessionEntry(session)
        return {"session": sid}

    @app.post("/session/{sid}/render")
    async def post_render(sid: str, request: Request):
        entry = sessions.get(sid)
        if entry is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        body = await request.json()
        try:
            vp = Viewport(*[float(v) for v in body["viewport"]],
                          int(body.get("width", 256)), int(body.get("height", 256)))
        except (KeyError, TypeError, ValueError, RenderError) as exc:
            return JSONResponse({"error": "bad request", "message": str(exc)},
                                status_code=422)
        aa = bool(body.get("aa", True))
        if aa and (vp.width != vp.height or (vp.width & (vp.width - 1)) != 0):
            return JSONResponse(
                {"error": "anti-aliasing requires a square power-of-two resolution"},
                status_code=422,
            )
        if not entry.lock.acquire(blocking=False):
            return JSONResponse({"error": "busy, retry"}, status_code=409)
        try:
            t0 = time.perf_counter()
            stats = update_viewport(entry.session, (vp.x0, vp.y0, vp.x1, vp.y1), vp.width)
            t1 = time.perf_counter()
            img = render(entry.session, vp, aa=aa)
            t2 = time.perf_counter()
            data = png_bytes(img)
        except RenderError as exc:
            return JSONResponse({"error": str(exc)}, status_code=422)
        finally:
            entry.lock.release()
        headers = {
            "X-Resolve-Count": str(stats["resolved_curves"]),
            "X-Interp-Count": str(stats["interpolating_curves"]),
            "X-Solve-Ms": f"{1000 * (t1 - t0):.1f}",
            "X-Eval-Ms": f"{1000 * (t2 - t1):.1f}",
        }
        return Response(content=data, media_type="image/png", headers=headers)

    @app.get("/session/{sid}/overlay")
    async def get_overlay(sid: str):
        entry = sessions.get(sid)
        if entry is None:
            return JSONResponse({"error": "unknown session"}, status_code=404)
        session = entry.session
        curves = []
        for ci, curve in enumerate(session.scene.curves):
            ts = np.linspace(0.0, 1.0, 48)
            pts = [session.disc.chains[ci].point(t) for t in ts]
            curves.append({
                "id": curve.id,
                "label": session.labels.get(curve.id, "interpolating"),
                "points": [[p.real, p.imag] for p in pts],
            })
        tree = session.ctx.tree
        cells = []
        for c in tree.cell_ids():
            x, y, w = tree.cell_box(c)
            cells.append({"x": x, "y": y, "w": w, "level": tree.level[c],
                          "leaf": tree.is_leaf(c)})
        return {"curves": curves, "cells": cells}

    @app.get("/")
    async def index():
        import os

        here = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
        page = os.path.join(here, "frontend", "dist", "index.html")
        if os.path.exists(page):
            return Response(content=open(page, "rb").read(), media_type="text/html")
        return {"service": "diffcurve", "endpoints": ["/scene", "/session/{id}/render",
                                                      "/session/{id}/overlay"]}

    @app.get("/viewer/{path:path}")
    async def viewer_assets(path: str):
        import os

        here = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
        full = os.path.normpath(os.path.join(here, "frontend", "dist", path))
        if not full.startswith(os.path.join(here, "frontend", "dist")):
            return JSONResponse({"error": "not found"}, status_code=404)
        if not os.path.exists(full):
            return JSONResponse({"error": "not found"}, status_code=404)
        media = "application/javascript" if full.endswith(".js") else "text/html"
        return Response(content=open(full, "rb").read(), media_type=media)

    app.state.sessions = sessions
    return app
