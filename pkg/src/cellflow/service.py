"""HTTP facade over trained checkpoints: generation, ranking, operations
simulation, model metadata, and a polled job store for long rankings.

Handlers share one immutable snapshot (models, grid contexts, fleet traces),
so concurrent requests cannot corrupt state. Response documents come from the
same serializers the CLI writes with, so payloads are byte-identical across
the two interfaces for the same inputs and seeds.
"""
from __future__ import annotations

import itertools
import os
import threading
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException, Response
from pydantic import BaseModel

from . import __version__
from ._kernels import BACKEND
from .checkpoints import load_fusion, load_generator
from .cli import rank_grid, resolve_control_target
from .errors import CellflowError, ValidationError
from .formats import (
    FORMAT_VERSION,
    control_doc,
    dump_doc,
    generation_doc,
    read_fleet,
    read_grid,
    ranking_doc,
)
from .fusion import embed_location
from .generator import generate, site_rng
from .operations import LoadTrace, simulate_control


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8000
    fusion_checkpoint: str | None = None
    generator_checkpoint: str | None = None
    grid_path: str | None = None
    fleet_path: str | None = None
    ui_path: str | None = None
    default_seed: int = 42
    rank_job_threshold: int = 64  # more feasible cells than this -> async job

    @classmethod
    def from_env(cls, **overrides) -> "ServiceConfig":
        env = {
            "host": os.environ.get("CELLFLOW_HOST"),
            "port": _maybe_int(os.environ.get("CELLFLOW_PORT")),
            "fusion_checkpoint": os.environ.get("CELLFLOW_FUSION_CHECKPOINT"),
            "generator_checkpoint": os.environ.get("CELLFLOW_GENERATOR_CHECKPOINT"),
            "grid_path": os.environ.get("CELLFLOW_GRID"),
            "fleet_path": os.environ.get("CELLFLOW_FLEET"),
            "ui_path": os.environ.get("CELLFLOW_UI"),
            "default_seed": _maybe_int(os.environ.get("CELLFLOW_DEFAULT_SEED")),
            "rank_job_threshold": _maybe_int(os.environ.get("CELLFLOW_RANK_JOB_THRESHOLD")),
        }
        merged = {k: v for k, v in env.items() if v is not None}
        merged.update({k: v for k, v in overrides.items() if v is not None})
        return cls(**merged)


def _maybe_int(value):
    return None if value is None else int(value)


@dataclass
class Snapshot:
    fusion = None
    generator = None
    grid_cells: list = field(default_factory=list)
    contexts: dict = field(default_factory=dict)
    fleet: dict = field(default_factory=dict)
    degraded: list[str] = field(default_factory=list)

    @property
    def ready(self) -> bool:
        return self.generator is not None and self.fusion is not None


def _load_snapshot(config: ServiceConfig) -> Snapshot:
    snap = Snapshot()
    if config.fusion_checkpoint:
        snap.fusion = load_fusion(config.fusion_checkpoint)
    else:
        snap.degraded.append("fusion checkpoint not configured")
    if config.generator_checkpoint:
        snap.generator = load_generator(config.generator_checkpoint)
    else:
        snap.degraded.append("generator checkpoint not configured")
    if config.grid_path:
        snap.grid_cells, _ = read_grid(config.grid_path)
        if snap.fusion is not None:
            snap.contexts = {
                c.cell_id: embed_location(snap.fusion, c.embedding).vector
                for c in snap.grid_cells
            }
    else:
        snap.degraded.append("grid not configured")
    if config.fleet_path:
        sites, _ = read_fleet(config.fleet_path)
        snap.fleet = {s.site_id: s for s in sites}
    else:
        snap.degraded.append("fleet not configured")
    return snap


class GenerateRequest(BaseModel):
    cell_id: str | None = None
    context: list[float] | None = None
    seed: int | None = None


class RankRequest(BaseModel):
    k: int
    utility: str = "lsi"
    seed: int | None = None
    as_job: bool | None = None


class OpsRequest(BaseModel):
    site_id: str
    window: int = 6
    threshold: float = 1.0


def _doc_response(doc: dict) -> Response:
    return Response(content=dump_doc(doc), media_type="application/json")


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig.from_env()
    app = FastAPI(title="cellflow", version=__version__)
    snap = _load_snapshot(config)
    jobs: dict[str, dict] = {}
    jobs_lock = threading.Lock()
    job_counter = itertools.count(1)

    def require_models():
        if not snap.ready:
            raise HTTPException(status_code=503,
                                detail={"status": "degraded", "missing": snap.degraded})

    @app.exception_handler(CellflowError)
    async def _domain_error(request, exc: CellflowError):
        code = 422 if isinstance(exc, ValidationError) else 500
        return Response(content=dump_doc({"error": str(exc)}), status_code=code,
                        media_type="application/json")

    @app.get("/health")
    def health():
        return {"status": "ready" if snap.ready else "degraded",
                "missing": snap.degraded, "version": __version__}

    @app.get("/model/info")
    def model_info():
        require_models()
        gen_cfg = snap.generator.config
        return {
            "format": "cellflow/model-info", "version": FORMAT_VERSION,
            "tool_version": __version__,
            "kernel_backend": BACKEND,
            "fusion": {
                "seed": snap.fusion.config.seed,
                "embed_dim": snap.fusion.config.embed_dim,
                "poi_dim": snap.fusion.config.poi_dim,
                "trained": snap.fusion.trained,
            },
            "generator": {
                "seed": gen_cfg.seed,
                "context_dim": gen_cfg.context_dim,
                "hidden": gen_cfg.hidden,
                "peak_head_enabled": gen_cfg.peak_head_enabled,
                "levels": [
                    {"level": l.level, "length": l.length, "steps": l.steps,
                     "clip_bound": l.clip_bound} for l in gen_cfg.levels
                ],
                "train_meta": snap.generator.train_meta,
            },
            "grid_cells": len(snap.grid_cells),
            "fleet_sites": len(snap.fleet),
            "default_seed": config.default_seed,
        }

    @app.get("/grid")
    def grid():
        if not snap.grid_cells:
            raise HTTPException(status_code=503, detail="grid not configured")
        return {
            "format": "cellflow/grid-view", "version": FORMAT_VERSION,
            "cells": [
                {"cell_id": c.cell_id, "lat": c.lat, "lon": c.lon,
                 "feasible": bool(c.feasible), "zone": c.zone}
                for c in snap.grid_cells
            ],
        }

    @app.post("/generate")
    def generate_endpoint(req: GenerateRequest):
        require_models()
        seed = config.default_seed if req.seed is None else req.seed
        if (req.cell_id is None) == (req.context is None):
            raise HTTPException(status_code=422,
                                detail="provide exactly one of cell_id or context")
        if req.cell_id is not None:
            if req.cell_id not in snap.contexts:
                raise HTTPException(status_code=404, detail=f"unknown cell {req.cell_id!r}")
            context = snap.contexts[req.cell_id]
            site_id = req.cell_id
        else:
            import numpy as np

            context = np.asarray(req.context, dtype=float)
            site_id = "inline"
        gen = generate(snap.generator, context, site_rng(seed, site_id), site_id=site_id)
        gen.seed = seed
        return _doc_response(generation_doc(gen))

    def _run_rank(req: RankRequest, seed: int) -> dict:
        result = rank_grid(snap.fusion, snap.generator, snap.grid_cells,
                           req.k, req.utility, seed)
        return ranking_doc(result)

    @app.post("/rank")
    def rank_endpoint(req: RankRequest):
        require_models()
        if not snap.grid_cells:
            raise HTTPException(status_code=503, detail="grid not configured")
        seed = config.default_seed if req.seed is None else req.seed
        feasible_count = sum(1 for c in snap.grid_cells if c.feasible)
        as_job = req.as_job if req.as_job is not None else feasible_count > config.rank_job_threshold
        if not as_job:
            return _doc_response(_run_rank(req, seed))
        job_id = f"job{next(job_counter):06d}"
        record = {"job_id": job_id, "kind": "rank",
                  "params": {"k": req.k, "utility": req.utility, "seed": seed},
                  "status": "running", "result": None, "error": None}
        with jobs_lock:
            jobs[job_id] = record
        def work():
            try:
                doc = _run_rank(req, seed)
                with jobs_lock:
                    record["result"] = doc
                    record["status"] = "done"
            except Exception as exc:  # noqa: BLE001 - job must record its failure
                with jobs_lock:
                    record["error"] = str(exc)
                    record["status"] = "error"
        threading.Thread(target=work, daemon=True).start()
        return {"job_id": job_id, "status": "running"}

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        with jobs_lock:
            record = jobs.get(job_id)
            if record is None:
                raise HTTPException(status_code=404, detail=f"unknown job {job_id!r}")
            return dict(record)

    @app.post("/ops/simulate")
    def ops_simulate(req: OpsRequest):
        if not snap.fleet:
            raise HTTPException(status_code=503, detail="fleet not configured")
        site = snap.fleet.get(req.site_id)
        if site is None:
            raise HTTPException(status_code=404, detail=f"unknown site {req.site_id!r}")
        trace = LoadTrace(site_id=site.site_id, rho=site.values / site.capacity)
        target = resolve_control_target(trace, "periodic")
        plan = simulate_control(trace, target, req.window, req.threshold)
        return _doc_response(control_doc(plan, extras={"target": "periodic",
                                                       "rho_obs": trace.rho}))

    @app.get("/fleet")
    def fleet_view():
        if not snap.fleet:
            raise HTTPException(status_code=503, detail="fleet not configured")
        return {"format": "cellflow/fleet-view", "version": FORMAT_VERSION,
                "sites": sorted(snap.fleet)}

    if config.ui_path and os.path.isdir(config.ui_path):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=config.ui_path, html=True), name="ui")

    return app
