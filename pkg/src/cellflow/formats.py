"""Canonical wire formats: line-delimited JSON for corpora and single JSON
documents for checkpoints, reports, generations, rankings, and control plans.

Every file starts with a header line/object naming its format and version.
Floats are serialized as shortest round-trip decimals (17 significant digits
at most), so write-then-read reproduces in-memory values bit for bit.
docs/FORMATS.md pins field names. Serialization lives here and only here:
the CLI and the HTTP service emit byte-identical payloads by construction.
"""
from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np

from .corpus import FleetSite, GridCellRecord
from .decomposition import SeriesLayout, TrafficSeries
from .errors import CheckpointVersionError, FormatError, ValidationError
from .fusion import PoiRecord, PoiSet, SiteEmbedding

FORMAT_VERSION = 1


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def dump_line(obj) -> str:
    return json.dumps(_jsonable(obj), separators=(",", ":"))


def dump_doc(obj) -> str:
    return json.dumps(_jsonable(obj), indent=1) + "\n"


def write_doc(path, obj) -> None:
    Path(path).write_text(dump_doc(obj), encoding="utf-8")


def read_doc(path, expected_format: str | None = None) -> dict:
    path = Path(path)
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise FormatError(f"invalid JSON: {exc.msg}", line=exc.lineno, path=str(path)) from exc
    if expected_format is not None:
        _check_header(doc, expected_format, str(path), line=1)
    return doc


def _check_header(header: dict, expected_format: str, path: str, line: int) -> None:
    if not isinstance(header, dict) or header.get("format") != expected_format:
        raise FormatError(
            f"expected format {expected_format!r}, found {header.get('format') if isinstance(header, dict) else header!r}",
            line=line, path=path,
        )
    version = header.get("version")
    if version != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: unsupported {expected_format} version {version!r} (this build reads {FORMAT_VERSION})"
        )


def _write_jsonl(path, header: dict, records) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dump_line(header) + "\n")
        for rec in records:
            fh.write(dump_line(rec) + "\n")


def _read_jsonl(path, expected_format: str):
    path = Path(path)
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty file", line=1, path=str(path))
    parsed = []
    for lineno, raw in enumerate(lines, start=1):
        if not raw.strip():
            continue
        try:
            parsed.append((lineno, json.loads(raw)))
        except json.JSONDecodeError as exc:
            raise FormatError(f"invalid JSON: {exc.msg}", line=lineno, path=str(path)) from exc
    header = parsed[0][1]
    _check_header(header, expected_format, str(path), line=parsed[0][0])
    return header, parsed[1:]


def _require(record: dict, key: str, lineno: int, path: str):
    if key not in record:
        raise FormatError(f"missing field {key!r}", line=lineno, path=path)
    return record[key]


def _vector(record: dict, key: str, dim: int, lineno: int, path: str) -> np.ndarray:
    raw = _require(record, key, lineno, path)
    arr = np.asarray(raw, dtype=np.float64)
    if arr.shape != (dim,):
        raise FormatError(f"field {key!r} must have {dim} values, got {arr.shape}",
                          line=lineno, path=path)
    if not np.all(np.isfinite(arr)):
        raise FormatError(f"field {key!r} has non-finite values", line=lineno, path=path)
    return arr


# ---------------------------------------------------------------------------
# traffic corpus

def write_traffic(path, series: list[TrafficSeries], zones: dict[str, str] | None = None,
                  extra: dict | None = None) -> None:
    layout = series[0].layout if series else SeriesLayout()
    header = {
        "format": "cellflow/traffic", "version": FORMAT_VERSION,
        "layout": {"hours_per_day": layout.hours_per_day, "days": layout.days,
                   "first_day": layout.first_day},
        "n_sites": len(series),
    }
    if extra:
        header.update(_jsonable(extra))
    records = []
    for s in series:
        rec = {"site_id": s.site_id, "values": s.values}
        if zones and s.site_id in zones:
            rec["zone"] = zones[s.site_id]
        records.append(rec)
    _write_jsonl(path, header, records)


def read_traffic(path) -> tuple[list[TrafficSeries], dict]:
    header, rows = _read_jsonl(path, "cellflow/traffic")
    lay = header.get("layout", {})
    layout = SeriesLayout(
        hours_per_day=int(lay.get("hours_per_day", 24)),
        days=int(lay.get("days", 28)),
        first_day=int(lay.get("first_day", 0)),
    )
    out = []
    for lineno, rec in rows:
        site_id = str(_require(rec, "site_id", lineno, str(path)))
        values = _vector(rec, "values", layout.horizon, lineno, str(path))
        try:
            out.append(TrafficSeries(site_id=site_id, values=values, layout=layout))
        except ValidationError as exc:
            raise FormatError(str(exc), line=lineno, path=str(path)) from exc
    return out, header


def traffic_zones(path) -> dict[str, str]:
    _, rows = _read_jsonl(path, "cellflow/traffic")
    return {rec["site_id"]: rec["zone"] for _, rec in rows if "zone" in rec}


# ---------------------------------------------------------------------------
# embeddings

def _maybe_normalize(arr: np.ndarray, what: str, lineno: int, path: str) -> np.ndarray:
    norm = float(np.linalg.norm(arr))
    if norm == 0.0:
        raise FormatError(f"{what} vector has zero norm", line=lineno, path=path)
    if abs(norm - 1.0) > 1e-6:
        warnings.warn(f"{path}:{lineno}: {what} vector not unit-norm; normalizing on ingest")
        return arr / norm
    return arr / norm  # exact unit norm either way


def write_embeddings(path, embeddings: list[SiteEmbedding], visual_dim: int,
                     poi_dim: int) -> None:
    header = {"format": "cellflow/embeddings", "version": FORMAT_VERSION,
              "visual_dim": visual_dim, "poi_dim": poi_dim, "n_sites": len(embeddings)}
    records = []
    for emb in embeddings:
        records.append({
            "site_id": emb.site_id,
            "zone": emb.zone,
            "visual": None if emb.visual is None else emb.visual,
            "pois": [{"address": r.address, "context": r.context} for r in emb.pois.records],
        })
    _write_jsonl(path, header, records)


def read_embeddings(path) -> tuple[list[SiteEmbedding], dict]:
    header, rows = _read_jsonl(path, "cellflow/embeddings")
    vdim = int(header.get("visual_dim", 32))
    pdim = int(header.get("poi_dim", 64))
    out = []
    for lineno, rec in rows:
        site_id = str(_require(rec, "site_id", lineno, str(path)))
        visual = None
        if rec.get("visual") is not None:
            visual = _maybe_normalize(_vector(rec, "visual", vdim, lineno, str(path)),
                                      "visual", lineno, str(path))
        records = []
        for poi in rec.get("pois", []):
            records.append(PoiRecord(
                address=_maybe_normalize(_vector(poi, "address", pdim, lineno, str(path)),
                                         "poi address", lineno, str(path)),
                context=_maybe_normalize(_vector(poi, "context", pdim, lineno, str(path)),
                                         "poi context", lineno, str(path)),
            ))
        out.append(SiteEmbedding(site_id=site_id, visual=visual, pois=PoiSet(records),
                                 zone=rec.get("zone")))
    return out, header


# ---------------------------------------------------------------------------
# candidate grid

def write_grid(path, cells: list[GridCellRecord], visual_dim: int, poi_dim: int) -> None:
    header = {"format": "cellflow/grid", "version": FORMAT_VERSION,
              "visual_dim": visual_dim, "poi_dim": poi_dim, "n_cells": len(cells)}
    records = []
    for c in cells:
        records.append({
            "cell_id": c.cell_id, "lat": c.lat, "lon": c.lon,
            "feasible": bool(c.feasible), "dist_to_existing_km": c.dist_to_existing_km,
            "zone": c.zone,
            "visual": None if c.embedding.visual is None else c.embedding.visual,
            "pois": [{"address": r.address, "context": r.context}
                     for r in c.embedding.pois.records],
        })
    _write_jsonl(path, header, records)


def read_grid(path) -> tuple[list[GridCellRecord], dict]:
    header, rows = _read_jsonl(path, "cellflow/grid")
    vdim = int(header.get("visual_dim", 32))
    pdim = int(header.get("poi_dim", 64))
    out = []
    for lineno, rec in rows:
        cell_id = str(_require(rec, "cell_id", lineno, str(path)))
        visual = None
        if rec.get("visual") is not None:
            visual = _maybe_normalize(_vector(rec, "visual", vdim, lineno, str(path)),
                                      "visual", lineno, str(path))
        records = []
        for poi in rec.get("pois", []):
            records.append(PoiRecord(
                address=_maybe_normalize(_vector(poi, "address", pdim, lineno, str(path)),
                                         "poi address", lineno, str(path)),
                context=_maybe_normalize(_vector(poi, "context", pdim, lineno, str(path)),
                                         "poi context", lineno, str(path)),
            ))
        out.append(GridCellRecord(
            cell_id=cell_id,
            lat=float(_require(rec, "lat", lineno, str(path))),
            lon=float(_require(rec, "lon", lineno, str(path))),
            feasible=bool(_require(rec, "feasible", lineno, str(path))),
            dist_to_existing_km=float(rec.get("dist_to_existing_km", 0.0)),
            embedding=SiteEmbedding(site_id=cell_id, visual=visual, pois=PoiSet(records),
                                    zone=rec.get("zone")),
            zone=rec.get("zone", ""),
        ))
    return out, header


# ---------------------------------------------------------------------------
# fleet (observed loads for operations)

def write_fleet(path, sites: list[FleetSite]) -> None:
    header = {"format": "cellflow/fleet", "version": FORMAT_VERSION, "n_sites": len(sites)}
    records = [{"site_id": s.site_id, "capacity": s.capacity, "values": s.values}
               for s in sites]
    _write_jsonl(path, header, records)


def read_fleet(path) -> tuple[list[FleetSite], dict]:
    header, rows = _read_jsonl(path, "cellflow/fleet")
    out = []
    for lineno, rec in rows:
        values = np.asarray(_require(rec, "values", lineno, str(path)), dtype=np.float64)
        if values.ndim != 1 or values.size == 0 or not np.all(np.isfinite(values)):
            raise FormatError("fleet values must be a finite vector", line=lineno, path=str(path))
        capacity = float(rec.get("capacity", float(values.max()) or 1.0))
        out.append(FleetSite(site_id=str(_require(rec, "site_id", lineno, str(path))),
                             capacity=capacity, values=values))
    return out, header


# ---------------------------------------------------------------------------
# parameter blobs (checkpoint fragments)

def params_to_doc(params) -> dict:
    return {
        path: {"shape": list(t.data.shape), "values": t.data.reshape(-1)}
        for path, t in params.items()
    }


def params_from_doc(doc: dict) -> dict[str, np.ndarray]:
    out = {}
    for path, entry in doc.items():
        shape = tuple(int(s) for s in entry["shape"])
        values = np.asarray(entry["values"], dtype=np.float64).reshape(shape)
        out[path] = values
    return out


# ---------------------------------------------------------------------------
# derived documents

def generation_doc(gen, extras: dict | None = None) -> dict:
    doc = {
        "format": "cellflow/generation", "version": FORMAT_VERSION,
        "site_id": gen.site_id,
        "peak_hour": gen.peak_hour,
        "seed": gen.seed,
        "traffic": gen.traffic,
        "daily": gen.daily,
        "weekly": gen.weekly,
        "periodic": gen.periodic,
        "residual": gen.residual,
    }
    if extras:
        doc.update(extras)
    return doc


def ranking_doc(result, extras: dict | None = None) -> dict:
    doc = {
        "format": "cellflow/ranking", "version": FORMAT_VERSION,
        "utility": result.utility, "k": result.k, "seed": result.seed,
        "truncated": result.truncated, "notice": result.notice,
        "entries": [
            {"rank": i + 1, "cell_id": cid, "value": val}
            for i, (cid, val) in enumerate(result.entries)
        ],
    }
    if extras:
        doc.update(extras)
    return doc


def control_doc(plan, extras: dict | None = None) -> dict:
    doc = {
        "format": "cellflow/control", "version": FORMAT_VERSION,
        "site_id": plan.site_id,
        "window_hours": plan.window_hours,
        "threshold": plan.threshold,
        "windows": [[s, e] for s, e in plan.windows],
        "eta": plan.eta,
        "qoe": plan.qoe,
        "rho_ctrl": plan.rho_ctrl,
    }
    if extras:
        doc.update(extras)
    return doc


def report_doc(report, extras: dict | None = None) -> dict:
    doc = {"format": "cellflow/report", "version": FORMAT_VERSION}
    doc.update(report.as_dict())
    if extras:
        doc.update(extras)
    return doc
