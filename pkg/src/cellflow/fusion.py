"""Masked multimodal fusion of visual and POI embeddings.

Produces a unit-norm spatial context vector per location from a precomputed
satellite-image embedding and a variable-size set of POI embedding pairs.
POI pairs are score-fused, projected, and attention-pooled; a 3-token
transformer (fusion token, visual token, POI token) is trained by masking one
modality per step and reconstructing it from the other, maximizing cosine
similarity. Either modality may be missing at inference; the mask tokens
stand in.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import PoiModalityMissing, ValidationError
from .nn import Adam, ParameterSet, PortableRng, no_grad
from .nn import tensor as T
from .nn.layers import (
    add_attention_block,
    add_dense,
    attention_block,
    backward,
    dense_apply,
    mlp_apply,
    add_mlp,
)


@dataclass(frozen=True)
class FusionConfig:
    embed_dim: int = 32      # shared token dimension d
    poi_dim: int = 64        # raw POI embedding dimension
    score_hidden: int = 32
    pool_hidden: int = 32
    ffn_width: int = 64
    mask_visual_prob: float = 0.5
    lr: float = 1e-3
    seed: int = 0


@dataclass
class PoiRecord:
    address: np.ndarray   # address-prompt embedding, unit norm
    context: np.ndarray   # surrounding-context embedding, unit norm

    def __post_init__(self):
        self.address = np.asarray(self.address, dtype=np.float64)
        self.context = np.asarray(self.context, dtype=np.float64)
        if self.address.shape != self.context.shape or self.address.ndim != 1:
            raise ValidationError("POI record needs two equal-length vectors")


@dataclass
class PoiSet:
    records: list[PoiRecord] = field(default_factory=list)
    radius_km: float = 0.5

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class SiteEmbedding:
    """Raw per-site ingest payload: optional visual vector plus POIs."""

    site_id: str
    visual: np.ndarray | None
    pois: PoiSet
    zone: str | None = None


@dataclass
class SpatialContext:
    site_id: str
    vector: np.ndarray           # unit-norm fused embedding
    visual_present: bool
    poi_present: bool


class FusionModel:
    def __init__(self, config: FusionConfig):
        self.config = config
        self.trained = False
        self.loss_curve: list[float] = []
        d, dp = config.embed_dim, config.poi_dim
        ps = ParameterSet(config.seed)
        add_mlp(ps, "score", [2 * dp, config.score_hidden, 2])
        add_dense(ps, "proj", dp, d)
        add_mlp(ps, "pool", [d, config.pool_hidden, 1])
        ps.add("tok/v_mask", (d,), init="fanin")
        ps.add("tok/p_mask", (d,), init="fanin")
        ps.add("tok/fusion", (d,), init="fanin")
        add_attention_block(ps, "tf", d, config.ffn_width)
        add_dense(ps, "readout", d, d)
        add_dense(ps, "recon_v", d, d)
        add_dense(ps, "recon_p", d, d)
        self.params = ps


def fuse_poi_pair(model: FusionModel, rec: PoiRecord) -> T.Tensor:
    """Blend the record's two embeddings by learned scores, project to d."""
    dp = model.config.poi_dim
    if rec.address.shape != (dp,):
        raise ValidationError(
            f"POI vectors have dim {rec.address.shape[0]}, model expects {dp}"
        )
    pair = T.Tensor(np.concatenate([rec.address, rec.context]))
    alphas = T.softmax(mlp_apply(model.params, "score", pair, 2), axis=-1)
    fused = alphas[0] * T.Tensor(rec.address) + alphas[1] * T.Tensor(rec.context)
    return T.l2_normalize(dense_apply(model.params, "proj", fused))


def pool_pois(model: FusionModel, projected: list[T.Tensor]) -> T.Tensor:
    """Attention-pool K projected POI vectors into one (permutation-invariant)."""
    if len(projected) == 0:
        raise PoiModalityMissing("cannot pool an empty POI set")
    logits = T.concat([mlp_apply(model.params, "pool", p, 2) for p in projected], axis=0)
    betas = T.softmax(logits, axis=-1)
    pooled = betas[0] * projected[0]
    for i in range(1, len(projected)):
        pooled = pooled + betas[i] * projected[i]
    return pooled


def apply_mask(model: FusionModel, v: T.Tensor | None, p: T.Tensor | None,
               mask_visual: int, mask_poi: int, training: bool = False):
    """Replace masked modalities with their learned mask tokens."""
    if mask_visual not in (0, 1) or mask_poi not in (0, 1):
        raise ValidationError("mask bits must be 0 or 1")
    if training and mask_visual + mask_poi != 1:
        raise ValidationError("training masks exactly one modality per step")
    ps = model.params
    if mask_visual:
        v_t = ps["tok/v_mask"]
    else:
        if v is None:
            raise ValidationError("visual modality absent but not masked")
        v_t = T.as_tensor(v)
    if mask_poi:
        p_t = ps["tok/p_mask"]
    else:
        if p is None:
            raise ValidationError("POI modality absent but not masked")
        p_t = T.as_tensor(p)
    return v_t, p_t


def fuse_forward(model: FusionModel, v_tok: T.Tensor, p_tok: T.Tensor):
    """Run the 3-token transformer; returns (context, h_visual, h_poi)."""
    tokens = T.stack([model.params["tok/fusion"], T.as_tensor(v_tok), T.as_tensor(p_tok)], axis=0)
    hidden = attention_block(model.params, "tf", tokens)
    context = T.l2_normalize(dense_apply(model.params, "readout", hidden[0]))
    return context, hidden[1], hidden[2]


def reconstruction_loss(model: FusionModel, h_v: T.Tensor, h_p: T.Tensor,
                        v: np.ndarray | None, p: T.Tensor | None,
                        mask_visual: int, mask_poi: int) -> T.Tensor:
    """Cosine reconstruction of the masked modality from its hidden state."""
    if mask_visual + mask_poi != 1:
        raise ValidationError("exactly one modality must be masked")
    if mask_visual:
        v_hat = T.l2_normalize(dense_apply(model.params, "recon_v", h_v))
        return 1.0 - T.tsum(v_hat * T.Tensor(v))
    p_hat = T.l2_normalize(dense_apply(model.params, "recon_p", h_p))
    return 1.0 - T.tsum(p_hat * p)


def _poi_token(model: FusionModel, pois: PoiSet) -> T.Tensor:
    return pool_pois(model, [fuse_poi_pair(model, rec) for rec in pois.records])


def train_fusion(model: FusionModel, corpus: list[SiteEmbedding], epochs: int,
                 rng: PortableRng) -> list[float]:
    """Masked-reconstruction training; only sites with both modalities train.

    Sites missing a modality cannot supply a reconstruction target, so they
    are skipped here but still embeddable afterwards.
    """
    usable = [s for s in corpus if s.visual is not None and len(s.pois) > 0]
    if not usable:
        raise ValidationError("fusion training needs at least one site with both modalities")
    opt = Adam(model.params, lr=model.config.lr)
    curve: list[float] = []
    for _ in range(int(epochs)):
        order = rng.permutation(len(usable))
        total = 0.0
        for idx in order:
            site = usable[int(idx)]
            mask_visual = 1 if rng.uniform() < model.config.mask_visual_prob else 0
            mask_poi = 1 - mask_visual
            p_tok = _poi_token(model, site.pois)
            v_in = None if mask_visual else T.Tensor(site.visual)
            p_in = None if mask_poi else p_tok
            v_t, p_t = apply_mask(model, v_in, p_in, mask_visual, mask_poi, training=True)
            _, h_v, h_p = fuse_forward(model, v_t, p_t)
            # detach the POI target: the POI pipeline must not be able to
            # chase its own reconstruction (representation collapse)
            loss = reconstruction_loss(
                model, h_v, h_p, site.visual, p_tok.detach(), mask_visual, mask_poi
            )
            grads = backward(loss, model.params)
            opt.step(grads)
            total += loss.item()
        curve.append(total / len(usable))
    model.trained = True
    model.loss_curve = curve
    return curve


def embed_location(model: FusionModel, site: SiteEmbedding) -> SpatialContext:
    """Inference-time context: missing modalities fall back to mask tokens."""
    has_visual = site.visual is not None
    has_poi = len(site.pois) > 0
    if not has_visual and not has_poi:
        raise ValidationError(f"site {site.site_id!r} has no modality to embed")
    d = model.config.embed_dim
    if has_visual and np.asarray(site.visual).shape != (d,):
        raise ValidationError(f"visual vector must have dim {d}")
    with no_grad():
        p_tok = _poi_token(model, site.pois) if has_poi else None
        v_in = T.Tensor(site.visual) if has_visual else None
        v_t, p_t = apply_mask(
            model, v_in, p_tok,
            mask_visual=0 if has_visual else 1,
            mask_poi=0 if has_poi else 1,
        )
        context, _, _ = fuse_forward(model, v_t, p_t)
    return SpatialContext(
        site_id=site.site_id,
        vector=context.data.copy(),
        visual_present=has_visual,
        poi_present=has_poi,
    )
