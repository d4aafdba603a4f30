"""Checkpoint persistence for the fusion and generator models.

A checkpoint is one JSON document: format version, full config, training
metadata, and every parameter tensor (path, shape, flat values). Values
round-trip exactly, so reloading and regenerating with the same seed is
bit-identical.
"""
from __future__ import annotations

from dataclasses import asdict

from .errors import CheckpointVersionError, ValidationError
from .formats import FORMAT_VERSION, params_from_doc, params_to_doc, read_doc, write_doc
from .fusion import FusionConfig, FusionModel
from .generator import GeneratorConfig, GeneratorModel, LevelConfig


def save_fusion(path, model: FusionModel, train_meta: dict | None = None) -> None:
    write_doc(path, {
        "format": "cellflow/checkpoint", "version": FORMAT_VERSION, "kind": "fusion",
        "config": asdict(model.config),
        "trained": model.trained,
        "loss_curve": model.loss_curve,
        "train_meta": train_meta or {},
        "params": params_to_doc(model.params),
    })


def _load_checkpoint_doc(path, kind: str) -> dict:
    doc = read_doc(path)
    if doc.get("format") != "cellflow/checkpoint" or doc.get("kind") != kind:
        raise ValidationError(
            f"{path}: not a {kind} checkpoint "
            f"(format={doc.get('format')!r}, kind={doc.get('kind')!r})"
        )
    if doc.get("version") != FORMAT_VERSION:
        raise CheckpointVersionError(
            f"{path}: checkpoint version {doc.get('version')!r} unsupported "
            f"(this build reads {FORMAT_VERSION})"
        )
    return doc


def load_fusion(path) -> FusionModel:
    doc = _load_checkpoint_doc(path, "fusion")
    config = FusionConfig(**doc["config"])
    model = FusionModel(config)
    model.params.load(params_from_doc(doc["params"]))
    model.trained = bool(doc.get("trained", False))
    model.loss_curve = [float(x) for x in doc.get("loss_curve", [])]
    return model


def save_generator(path, model: GeneratorModel, train_meta: dict | None = None) -> None:
    config = asdict(model.config)
    write_doc(path, {
        "format": "cellflow/checkpoint", "version": FORMAT_VERSION, "kind": "generator",
        "config": config,
        "trained": model.trained,
        "train_meta": train_meta if train_meta is not None else model.train_meta,
        "loss_history": model.loss_history,
        "params": params_to_doc(model.params),
    })


def load_generator(path) -> GeneratorModel:
    doc = _load_checkpoint_doc(path, "generator")
    raw = dict(doc["config"])
    raw["levels"] = tuple(LevelConfig(**lvl) for lvl in raw["levels"])
    raw["aux_weights"] = tuple((str(k), float(v)) for k, v in raw["aux_weights"])
    config = GeneratorConfig(**raw)
    model = GeneratorModel(config)
    model.params.load(params_from_doc(doc["params"]))
    model.trained = bool(doc.get("trained", False))
    model.train_meta = doc.get("train_meta", {})
    model.loss_history = doc.get("loss_history", [])
    return model
