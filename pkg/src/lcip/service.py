"""HTTP + WebSocket service exposing a trained model and one control session.

Session mutations are serialized under a lock and bump a revision counter;
every response embeds the revision it was computed under so clients can
discard stale results. Map renders run in worker threads on a frozen snapshot
of the session, so they never block mutations. WebSocket consumers get
coalesced events: a slow client sees only the latest revision.
"""

from __future__ import annotations

import asyncio
import base64
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, HTTPException, WebSocket, WebSocketDisconnect
from fastapi.concurrency import run_in_threadpool
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from .control import ControlSession, ControlSpec, invert_controlled
from .data import Dataset, minmax_apply
from .decision_map import Classifier, render_decision_map
from .metrics import GridSpec, gradient_map, variance_map
from .model import LcipModel, encode, invert_fixed


def infer_image_shape(n_dims: int) -> list[int] | None:
    side = math.isqrt(n_dims)
    return [side, side] if side * side == n_dims and side >= 8 else None


@dataclass
class ServiceState:
    model: LcipModel | None = None
    dataset: Dataset | None = None  # training rows backing the scatter/targets
    classifier: Classifier | None = None
    image_shape: list[int] | None = None
    session: ControlSession | None = None
    revision: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock)
    queues: list = field(default_factory=list)

    @classmethod
    def from_model(cls, model: LcipModel, dataset: Dataset | None = None,
                   classifier: Classifier | None = None,
                   image_shape: list[int] | None = None) -> "ServiceState":
        if model.zfield is None:
            raise ValueError("service needs a model with a fitted zfield")
        state = cls(model=model, dataset=dataset, classifier=classifier)
        state.image_shape = image_shape or infer_image_shape(model.n_dims)
        state.session = ControlSession(model, model.zfield)
        return state

    def snapshot(self) -> tuple[ControlSession, int]:
        """Frozen copy of the session for render workers."""
        with self.lock:
            frozen = ControlSession(self.model, self.model.zfield)
            frozen.specs = list(self.session.specs)
            frozen._deltas = list(self.session._deltas)
            return frozen, self.revision

    def mutate(self, spec: ControlSpec) -> int:
        with self.lock:
            self.session.set_specs([spec])
            self.revision += 1
            return self.revision

    def broadcast(self, event: dict) -> None:
        for q in list(self.queues):
            if q.full():  # coalesce: drop the stale event for slow consumers
                try:
                    q.get_nowait()
                except asyncio.QueueEmpty:
                    pass
            q.put_nowait(event)


class ControlRequest(BaseModel):
    p_s: list[float]
    target_index: int
    alpha: float
    sigma: float


class InvertRequest(BaseModel):
    points: list[list[float]]


def create_app(state: ServiceState, static_dir: str | None = None) -> FastAPI:
    app = FastAPI(title="lcip service")
    app.state.service = state

    def require_model() -> ServiceState:
        if state.model is None:
            raise HTTPException(status_code=503, detail="no model loaded")
        return state

    @app.get("/api/scatter")
    async def scatter():
        s = require_model()
        field_ = s.model.zfield
        y = field_.anchors_y
        labels = None
        if s.dataset is not None and s.dataset.labels is not None:
            idx = s.dataset.train_idx
            labels = (s.dataset.labels[idx] if idx is not None
                      else s.dataset.labels)[:len(y)].tolist()
        lo, hi = y.min(axis=0), y.max(axis=0)
        with s.lock:
            revision = s.revision
        return {
            "points": y.tolist(),
            "labels": labels,
            "bounds": {"x_min": float(lo[0]), "x_max": float(hi[0]),
                       "y_min": float(lo[1]), "y_max": float(hi[1])},
            "count": int(y.shape[0]),
            "n_dims": s.model.n_dims,
            "image_shape": s.image_shape,
            "revision": revision,
        }

    @app.post("/api/control")
    async def control(req: ControlRequest):
        s = require_model()
        if not (req.sigma > 0):
            raise HTTPException(status_code=400, detail="sigma must be > 0")
        if len(req.p_s) != 2 or not all(math.isfinite(v) for v in req.p_s):
            raise HTTPException(status_code=400, detail="p_s must be 2 finite reals")
        if not math.isfinite(req.alpha):
            raise HTTPException(status_code=400, detail="alpha must be finite")
        targets = _target_source(s)
        if not 0 <= req.target_index < len(targets):
            raise HTTPException(status_code=400,
                                detail=f"target_index out of range [0, {len(targets)})")
        spec = ControlSpec(source=np.asarray(req.p_s, dtype=np.float32),
                           target_x=targets[req.target_index],
                           alpha=req.alpha, sigma=req.sigma,
                           target_index=req.target_index)
        revision = s.mutate(spec)
        s.broadcast({"revision": revision, "kind": "control_changed"})
        return {"revision": revision}

    @app.post("/api/invert")
    async def invert(req: InvertRequest):
        s = require_model()
        if not req.points:
            session, revision = s.snapshot()
            return {"revision": revision, "vectors": [], "rasters": None}
        pts = np.asarray(req.points, dtype=np.float64)
        if pts.ndim != 2 or pts.shape[1] != 2 or not np.isfinite(pts).all():
            raise HTTPException(status_code=400,
                                detail="points must be finite [x, y] pairs")
        session, revision = s.snapshot()
        q = await run_in_threadpool(invert_controlled, session,
                                    pts.astype(np.float32))
        out = {"revision": revision, "vectors": q.tolist(), "rasters": None}
        if s.image_shape is not None:
            out["rasters"] = [_raster_b64(s.model, row) for row in q]
            out["raster_shape"] = s.image_shape
        return out

    @app.get("/api/map")
    async def map_endpoint(kind: str, resolution: str = "100x100"):
        s = require_model()
        try:
            w, h = (int(v) for v in resolution.lower().split("x"))
        except ValueError:
            raise HTTPException(status_code=400,
                                detail="resolution must look like 100x100")
        if kind not in ("decision", "gradient", "variance"):
            raise HTTPException(status_code=400, detail=f"unknown map kind {kind!r}")
        if kind == "decision" and s.classifier is None:
            raise HTTPException(status_code=400, detail="no classifier loaded")
        session, revision = s.snapshot()
        grid = GridSpec.from_points(s.model.zfield.anchors_y, width=w, height=h)
        payload = await run_in_threadpool(_render_map, s, session, kind, grid)
        payload.update({"kind": kind, "revision": revision, "width": w, "height": h})
        s.broadcast({"revision": revision, "kind": "map_ready"})
        return payload

    @app.websocket("/ws")
    async def ws(socket: WebSocket):
        await socket.accept()
        queue: asyncio.Queue = asyncio.Queue(maxsize=1)
        state.queues.append(queue)
        try:
            while True:
                event = await queue.get()
                await socket.send_json(event)
        except WebSocketDisconnect:
            pass
        finally:
            state.queues.remove(queue)

    if static_dir is not None:
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


def _target_source(state: ServiceState) -> np.ndarray:
    if state.dataset is not None:
        idx = state.dataset.train_idx
        return state.dataset.X[idx] if idx is not None else state.dataset.X
    # without a dataset, targets are the decoded anchors themselves
    field_ = state.model.zfield
    return invert_fixed(state.model, field_.anchors_y)


def _raster_b64(model: LcipModel, row: np.ndarray) -> str:
    u = minmax_apply(row.reshape(1, -1), model.x_min, model.x_max)[0]
    return base64.b64encode((u * 255).astype(np.uint8).tobytes()).decode()


def _render_map(state: ServiceState, session: ControlSession, kind: str,
                grid: GridSpec) -> dict:
    if kind == "decision":
        dmap = render_decision_map(state.classifier, session, grid)
        classes = [int(c) for c in state.classifier.classes]
        index_of = {c: i for i, c in enumerate(classes)}
        raster = np.vectorize(index_of.get)(dmap.labels).astype(np.uint8)
        return {"raster_b64": base64.b64encode(raster[::-1].tobytes()).decode(),
                "classes": classes,
                "confidence_b64": base64.b64encode(
                    (dmap.confidence[::-1] * 255).astype(np.uint8).tobytes()).decode()}
    if kind == "gradient":
        smap = gradient_map(session, grid)
    else:
        Z_T = session.zfield.anchors_z
        X_T = (state.dataset.X[state.dataset.train_idx]
               if state.dataset is not None and state.dataset.train_idx is not None
               else invert_fixed(state.model, session.zfield.anchors_y))
        smap = variance_map(state.model, Z_T, X_T, grid, max_anchors=256)
    stats = smap.stats
    lo, hi = stats["min"], stats["max"]
    span = (hi - lo) or 1.0
    raster = np.clip((smap.values - lo) / span * 255, 0, 255).astype(np.uint8)
    return {"raster_b64": base64.b64encode(raster[::-1].tobytes()).decode(),
            "min": lo, "max": hi, "mean": stats["mean"],
            "values": [[round(float(v), 6) for v in row] for row in smap.values]}
