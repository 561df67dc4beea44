"""HTTP JSON API over the trained models: generate, edit, interpolate, combine.

Records are immutable once stored; every operation mints a new id. Model
weights are loaded once and shared across requests; the in-memory store is
lock-guarded. Seeds are always echoed back so any response is replayable.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from pydantic import BaseModel

from .edit import EditMode, EditRequest, ModelBundle, combine, correspond, edit, interpolate
from .geometry import PointCloud
from .nets import SparseLatent
from .plyio import ply_bytes

__all__ = ["create_app", "ShapeStore", "ShapeRecord"]


@dataclass
class ShapeRecord:
    id: str
    latent: SparseLatent
    cloud: PointCloud
    seed: int | None
    provenance: str

    def payload(self):
        return {
            "id": self.id,
            "seed": self.seed,
            "provenance": self.provenance,
            "latent": {
                "positions": self.latent.positions.tolist(),
                "features": self.latent.features.tolist(),
            },
            "cloud": {
                "positions": self.cloud.positions.tolist(),
                "normals": self.cloud.normals.tolist(),
            },
        }


@dataclass
class ShapeStore:
    persist_path: str | None = None
    _records: dict[str, ShapeRecord] = field(default_factory=dict)
    _lock: threading.Lock = field(default_factory=threading.Lock)
    _counter: int = 0

    def add(self, latent, cloud, seed, provenance) -> ShapeRecord:
        with self._lock:
            self._counter += 1
            rec = ShapeRecord(f"s{self._counter:06d}", latent, cloud, seed, provenance)
            self._records[rec.id] = rec
            if self.persist_path:
                with open(self.persist_path, "a") as f:
                    f.write(json.dumps(rec.payload()) + "\n")
        return rec

    def get(self, shape_id) -> ShapeRecord | None:
        with self._lock:
            return self._records.get(shape_id)

    def load_persisted(self):
        path = Path(self.persist_path)
        if not path.exists():
            return
        with open(path) as f:
            for line in f:
                raw = json.loads(line)
                latent = SparseLatent(
                    np.asarray(raw["latent"]["positions"], np.float32),
                    np.asarray(raw["latent"]["features"], np.float32),
                )
                cloud = PointCloud(
                    np.asarray(raw["cloud"]["positions"], np.float32),
                    np.asarray(raw["cloud"]["normals"], np.float32),
                )
                rec = ShapeRecord(raw["id"], latent, cloud, raw["seed"], raw["provenance"])
                self._records[rec.id] = rec
                self._counter = max(self._counter, int(rec.id.lstrip("s")))


class LatentIn(BaseModel):
    positions: list[list[float]]
    features: list[list[float]]


class GenerateIn(BaseModel):
    count: int = 1
    seed: int | None = None


class EditIn(BaseModel):
    id: str | None = None
    latent: LatentIn | None = None
    moved_mask: list[bool]
    mode: str
    seed: int | None = None


class InterpolateIn(BaseModel):
    id_a: str
    id_b: str
    steps: int = 5
    mask: list[bool] | None = None


class CombinePartIn(BaseModel):
    id: str
    indices: list[int]


class CombineIn(BaseModel):
    parts: list[CombinePartIn]


class ApiError(Exception):
    def __init__(self, status, message):
        self.status = status
        self.message = message


def _fresh_seed():
    return int(np.random.SeedSequence().generate_state(1)[0])


def create_app(bundle: ModelBundle, store_path=None) -> FastAPI:
    app = FastAPI(title="sparse latent point service")
    store = ShapeStore(persist_path=store_path)
    if store_path:
        store.load_persisted()
    app.state.store = store
    app.state.bundle = bundle
    k = bundle.ae.cfg.n_latent
    d = bundle.ae.cfg.feature_dim

    @app.exception_handler(ApiError)
    async def api_error_handler(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"error": exc.message})

    @app.exception_handler(RequestValidationError)
    async def validation_handler(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": str(exc.errors()[:1])})

    @app.exception_handler(Exception)
    async def fallback_handler(request: Request, exc: Exception):
        return JSONResponse(status_code=500, content={"error": "internal error"})

    def _get_or_404(shape_id):
        rec = store.get(shape_id)
        if rec is None:
            raise ApiError(404, f"unknown shape id {shape_id!r}")
        return rec

    def _latent_from(payload: LatentIn):
        pos = np.asarray(payload.positions, dtype=np.float32)
        feat = np.asarray(payload.features, dtype=np.float32)
        if pos.ndim != 2 or pos.shape != (k, 3):
            raise ApiError(409, f"latent positions must be ({k},3), got {list(pos.shape)}")
        if feat.shape != (k, d):
            raise ApiError(409, f"latent features must be ({k},{d}), got {list(feat.shape)}")
        return SparseLatent(pos, feat)

    @app.get("/v1/health")
    def health():
        return {
            "status": "ok",
            "model_config": {
                "n_points": bundle.ae.cfg.n_points,
                "n_latent": k,
                "feature_dim": d,
                "T": bundle.schedule.T,
            },
        }

    @app.post("/v1/generate")
    def generate(body: GenerateIn):
        if body.count < 1:
            raise ApiError(400, f"count must be >= 1, got {body.count}")
        base_seed = body.seed if body.seed is not None else _fresh_seed()
        out = []
        for i in range(body.count):
            seed = base_seed + i
            latent = bundle.generate(np.random.default_rng(seed))
            cloud = bundle.decode_cloud(latent)
            out.append(store.add(latent, cloud, seed, "generated").payload())
        return out

    @app.post("/v1/edit")
    def edit_shape(body: EditIn):
        if (body.id is None) == (body.latent is None):
            raise ApiError(400, "provide exactly one of id or latent")
        if body.id is not None:
            rec = _get_or_404(body.id)
            latent = rec.latent
            origin = body.id
        else:
            latent = _latent_from(body.latent)
            origin = "inline"
        try:
            mode = EditMode(body.mode)
        except ValueError:
            raise ApiError(400, f"unknown mode {body.mode!r}") from None
        mask = np.asarray(body.moved_mask, dtype=bool)
        if mask.shape != (k,):
            raise ApiError(409, f"moved_mask must have length {k}, got {len(body.moved_mask)}")
        seed = body.seed if body.seed is not None else _fresh_seed()
        try:
            req = EditRequest(latent, mask, mode, seed=seed)
        except ValueError as e:
            raise ApiError(400, str(e)) from None
        new_latent, cloud = edit(req, bundle)
        return store.add(new_latent, cloud, seed, f"edited-from {origin}").payload()

    @app.post("/v1/interpolate")
    def interpolate_shapes(body: InterpolateIn):
        if body.steps < 2:
            raise ApiError(400, f"steps must be >= 2, got {body.steps}")
        rec_a = _get_or_404(body.id_a)
        rec_b = _get_or_404(body.id_b)
        mask = None
        if body.mask is not None:
            mask = np.asarray(body.mask, dtype=bool)
            if mask.shape != (k,):
                raise ApiError(409, f"mask must have length {k}, got {len(body.mask)}")
        aligned = correspond(rec_a.latent, rec_b.latent).apply(rec_b.latent)
        out = []
        for s in np.linspace(0.0, 1.0, body.steps):
            latent = interpolate(rec_a.latent, aligned, float(s), mask=mask)
            cloud = bundle.decode_cloud(latent)
            prov = f"interpolated {rec_a.id}->{rec_b.id} s={float(s):.4f}"
            out.append(store.add(latent, cloud, None, prov).payload())
        return out

    @app.post("/v1/combine")
    def combine_shapes(body: CombineIn):
        if not body.parts:
            raise ApiError(400, "combine needs at least one part")
        parts = []
        ids = []
        for part in body.parts:
            rec = _get_or_404(part.id)
            parts.append((rec.latent, np.asarray(part.indices, dtype=np.int64)))
            ids.append(rec.id)
        try:
            latent = combine(parts)
        except ValueError as e:
            raise ApiError(409, str(e)) from None
        cloud = bundle.decode_cloud(latent)
        return store.add(latent, cloud, None, f"combined {'+'.join(ids)}").payload()

    @app.get("/v1/shapes/{shape_id}.ply")
    def shape_ply(shape_id: str):
        rec = _get_or_404(shape_id)
        return Response(content=ply_bytes(rec.cloud), media_type="application/octet-stream")

    @app.get("/v1/shapes/{shape_id}")
    def shape(shape_id: str):
        return _get_or_404(shape_id).payload()

    return app
