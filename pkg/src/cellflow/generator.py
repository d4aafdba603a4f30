"""Three-level conditional flow-matching traffic generator.

Level 1 generates the 48-value daily profile pair, level 2 the 168-hour
weekly template conditioned on it, level 3 the 672-hour residual conditioned
on everything coarser plus a peak-hour one-hot from a linear classifier over
the spatial context. Each level trains by regressing the straight-line
velocity x1 - x0 along x_t = t*x1 + (1-t)*x0 and samples by fixed-step Euler
integration with per-step symmetric clipping. Assembly tiles the weekly
template and clamps periodic + residual at zero.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .decomposition import (
    DecompositionTargets,
    HOURS_PER_DAY,
    HORIZON,
    WEEK_HOURS,
    TrafficSeries,
    decompose_targets,
    true_peak_hour,
)
from .errors import ModelNotTrainedError, ValidationError
from .nn import Adam, ParameterSet, PortableRng, no_grad
from .nn import tensor as T
from .nn.layers import add_dense, add_mlp, backward, dense_apply, mlp_apply, sinusoidal_embedding

DAILY_LEN = 2 * HOURS_PER_DAY  # 48
AUX_NAMES = ("bnd", "tmp", "per", "bias", "peak", "corr")


@dataclass(frozen=True)
class LevelConfig:
    level: int
    length: int
    steps: int            # Euler steps at inference
    clip_bound: float
    fm_weight: float = 1.0
    init_noise_scale: float = 1.0


@dataclass(frozen=True)
class GeneratorConfig:
    context_dim: int = 32
    t_embed_dim: int = 16
    hidden: int = 256
    levels: tuple[LevelConfig, ...] = (
        LevelConfig(1, DAILY_LEN, 32, 6.0),
        LevelConfig(2, WEEK_HOURS, 32, 6.0),
        LevelConfig(3, HORIZON, 32, 3.0, init_noise_scale=0.1),
    )
    train_euler_steps: int = 8    # cheaper sampling inside the training loop
    aux_weights: tuple[tuple[str, float], ...] = (
        ("bnd", 0.1), ("tmp", 0.1), ("per", 0.1),
        ("bias", 0.1), ("peak", 1.0), ("corr", 0.1),
    )
    peak_head_enabled: bool = True
    lr: float = 1e-3
    seed: int = 0

    def aux_weight(self, name: str) -> float:
        return dict(self.aux_weights)[name]


def _level_input_dim(config: GeneratorConfig, level: int) -> int:
    d, te = config.context_dim, config.t_embed_dim
    if level == 1:
        return DAILY_LEN + te + d
    if level == 2:
        return WEEK_HOURS + te + d + DAILY_LEN
    # level 3 always reserves the peak one-hot slot; the ablated model feeds
    # zeros there so parameter shapes (and levels 1-2 behavior) are unchanged
    return HORIZON + te + d + DAILY_LEN + WEEK_HOURS + HORIZON + HOURS_PER_DAY


class GeneratorModel:
    def __init__(self, config: GeneratorConfig):
        self.config = config
        self.trained = False
        self.loss_history: list[dict[str, float]] = []
        self.train_meta: dict = {}
        ps = ParameterSet(config.seed)
        d = config.context_dim
        for lvl in (1, 2, 3):
            add_dense(ps, f"proj{lvl}", d, d)
        add_dense(ps, "peak", d, HOURS_PER_DAY)
        for cfg in config.levels:
            add_mlp(ps, f"g{cfg.level}",
                    [_level_input_dim(config, cfg.level), config.hidden, config.hidden, cfg.length])
        self.params = ps

    def level(self, level: int) -> LevelConfig:
        return self.config.levels[level - 1]


@dataclass
class FlowSample:
    """Straight-line interpolation between noise and target."""

    x0: np.ndarray
    x1: np.ndarray
    t: np.ndarray  # in (0,1), broadcastable over the last axis

    @property
    def x_t(self) -> np.ndarray:
        return self.t * self.x1 + (1.0 - self.t) * self.x0

    @property
    def velocity(self) -> np.ndarray:
        return self.x1 - self.x0


@dataclass
class GeneratedTraffic:
    site_id: str
    daily: np.ndarray      # 48
    weekly: np.ndarray     # 168
    periodic: np.ndarray   # 672
    residual: np.ndarray   # 672
    traffic: np.ndarray    # 672, nonnegative
    peak_hour: int | None  # None when the peak head is ablated
    seed: int | None = None


def project_conditions(model: GeneratorModel, context) -> tuple[T.Tensor, T.Tensor, T.Tensor]:
    """Three independent linear projections of the spatial context."""
    ctx = T.as_tensor(context)
    if ctx.shape[-1] != model.config.context_dim:
        raise ValidationError(
            f"context dim {ctx.shape[-1]} != model dim {model.config.context_dim}"
        )
    return tuple(dense_apply(model.params, f"proj{lvl}", ctx) for lvl in (1, 2, 3))


def peak_head(model: GeneratorModel, context):
    """24-way peak-hour distribution and its argmax (ties to lowest hour)."""
    if not model.config.peak_head_enabled:
        raise ValidationError("peak head is ablated in this model")
    ctx = T.as_tensor(context)
    q = T.softmax(dense_apply(model.params, "peak", ctx), axis=-1)
    hours = np.argmax(q.data, axis=-1)
    return q, (int(hours) if np.ndim(hours) == 0 else hours.astype(int))


def _velocity(model: GeneratorModel, level: int, x_t, t_values: np.ndarray, conds: dict) -> T.Tensor:
    """Evaluate the level's velocity net on concat(x_t, t-features, conditions)."""
    batch = x_t.shape[0]
    temb = sinusoidal_embedding(np.broadcast_to(np.asarray(t_values, dtype=np.float64).reshape(-1), (batch,)),
                                model.config.t_embed_dim)
    parts = [T.as_tensor(x_t), T.Tensor(temb), T.as_tensor(conds["c"])]
    if level >= 2:
        parts.append(T.as_tensor(conds["daily"]))
    if level == 3:
        parts.append(T.as_tensor(conds["weekly"]))
        parts.append(T.as_tensor(conds["periodic"]))
        parts.append(T.as_tensor(conds["peak_onehot"]))
    return mlp_apply(model.params, f"g{level}", T.concat(parts, axis=-1), 3)


def flow_loss_level(model: GeneratorModel, level: int, sample: FlowSample, conds: dict) -> T.Tensor:
    """Mean squared error against the straight-line target velocity."""
    cfg = model.level(level)
    if sample.x1.shape[-1] != cfg.length:
        raise ValidationError(f"level {level} target length {sample.x1.shape[-1]} != {cfg.length}")
    pred = _velocity(model, level, sample.x_t, sample.t, conds)
    return T.tmean(T.square(pred - T.Tensor(sample.velocity)))


def peak_onehot(hours, batch: int) -> np.ndarray:
    onehot = np.zeros((batch, HOURS_PER_DAY))
    if hours is not None:
        onehot[np.arange(batch), np.asarray(hours, dtype=int).reshape(-1)] = 1.0
    return onehot


def sample_level(model: GeneratorModel, level: int, conds: dict, noise: np.ndarray,
                 n_steps: int | None = None, velocity_fn=None) -> T.Tensor:
    """Euler-integrate the level's field from noise with per-step clipping.

    `velocity_fn(x, t)` can replace the learned field (oracle injection).
    """
    cfg = model.level(level)
    steps = cfg.steps if n_steps is None else int(n_steps)
    if steps < 1:
        raise ValidationError("Euler integration needs at least one step")
    if velocity_fn is None:
        for key in ("c",) + (("daily",) if level >= 2 else ()) + (
                ("weekly", "periodic", "peak_onehot") if level == 3 else ()):
            if key not in conds:
                raise ValidationError(f"level {level} sampling is missing condition {key!r}")
    dt = 1.0 / steps
    x = T.as_tensor(noise)
    for k in range(1, steps + 1):
        t_k = k / steps
        if velocity_fn is not None:
            v = velocity_fn(x, t_k)
        else:
            v = _velocity(model, level, x, np.full(x.shape[0], t_k), conds)
        x = T.clip_sym(x + v * dt, cfg.clip_bound)
    return x


def _run_levels(model: GeneratorModel, c1, c2, c3, onehot: np.ndarray,
                noises: tuple[np.ndarray, np.ndarray, np.ndarray],
                n_steps: int | None = None):
    """Alg-2 cascade on a batch; returns (daily, weekly, periodic, residual)."""
    d = sample_level(model, 1, {"c": c1}, noises[0], n_steps)
    w = sample_level(model, 2, {"c": c2, "daily": d}, noises[1], n_steps)
    u = T.tile_last(w, HORIZON // WEEK_HOURS)
    r = sample_level(
        model, 3,
        {"c": c3, "daily": d, "weekly": w, "periodic": u, "peak_onehot": onehot},
        noises[2], n_steps,
    )
    return d, w, u, r


def _draw_level_noises(model: GeneratorModel, rng: PortableRng, batch: int):
    return tuple(
        rng.normal((batch, cfg.length)) * cfg.init_noise_scale
        for cfg in model.config.levels
    )


def site_rng(seed: int, site_id: str) -> PortableRng:
    """The per-site noise stream every interface derives generation from."""
    return PortableRng(seed).spawn(f"gen:{site_id}")


def generate(model: GeneratorModel, context: np.ndarray, rng: PortableRng,
             site_id: str = "", n_steps: int | None = None,
             zero_residual: bool = False, allow_untrained: bool = False) -> GeneratedTraffic:
    """Generate one 672-hour sequence for a spatial context (deterministic per rng)."""
    if not model.trained and not allow_untrained:
        raise ModelNotTrainedError("generator has not been trained")
    context = np.asarray(context, dtype=np.float64)
    if context.shape != (model.config.context_dim,):
        raise ValidationError(f"context must have shape ({model.config.context_dim},)")
    with no_grad():
        ctx = context.reshape(1, -1)
        c1, c2, c3 = project_conditions(model, ctx)
        if model.config.peak_head_enabled:
            _, hours = peak_head(model, ctx)
            onehot = peak_onehot(hours, 1)
            peak = int(hours[0])
        else:
            onehot = peak_onehot(None, 1)
            peak = None
        noises = _draw_level_noises(model, rng, 1)
        d, w, u, r = _run_levels(model, c1, c2, c3, onehot, noises, n_steps)
        residual = np.zeros(HORIZON) if zero_residual else r.data[0]
        traffic = np.maximum(u.data[0] + residual, 0.0)
    return GeneratedTraffic(
        site_id=site_id,
        daily=d.data[0].copy(),
        weekly=w.data[0].copy(),
        periodic=u.data[0].copy(),
        residual=residual.copy(),
        traffic=traffic,
        peak_hour=peak,
    )


def generate_many(model: GeneratorModel, contexts: dict[str, np.ndarray], seed: int,
                  n_steps: int | None = None, allow_untrained: bool = False
                  ) -> dict[str, GeneratedTraffic]:
    """Batched generation with per-site noise streams derived from `seed`.

    Noise for each site comes from its own spawned stream, so membership of
    the batch does not change any site's draw.
    """
    if not model.trained and not allow_untrained:
        raise ModelNotTrainedError("generator has not been trained")
    if not contexts:
        raise ValidationError("no contexts to generate for")
    order = sorted(contexts)
    ctx = np.stack([np.asarray(contexts[k], dtype=np.float64) for k in order])
    batch = len(order)
    with no_grad():
        c1, c2, c3 = project_conditions(model, ctx)
        if model.config.peak_head_enabled:
            _, hours = peak_head(model, ctx)
            onehot = peak_onehot(hours, batch)
        else:
            hours = None
            onehot = peak_onehot(None, batch)
        per_site = [site_rng(seed, k) for k in order]
        noises = tuple(
            np.stack([r.normal(cfg.length) for r in per_site]) * cfg.init_noise_scale
            for cfg in model.config.levels
        )
        d, w, u, r = _run_levels(model, c1, c2, c3, onehot, noises, n_steps)
        traffic = np.maximum(u.data + r.data, 0.0)
    out = {}
    for i, k in enumerate(order):
        out[k] = GeneratedTraffic(
            site_id=k,
            daily=d.data[i].copy(),
            weekly=w.data[i].copy(),
            periodic=u.data[i].copy(),
            residual=r.data[i].copy(),
            traffic=traffic[i].copy(),
            peak_hour=None if hours is None else int(hours[i]),
            seed=seed,
        )
    return out


def auxiliary_losses(model: GeneratorModel, pre_clip: T.Tensor, traffic: T.Tensor,
                     real: np.ndarray, q: T.Tensor | None,
                     true_peaks: np.ndarray | None) -> dict[str, T.Tensor]:
    """Regularizers on a generated batch vs. the real batch.

    Definitions (repo conventions): bnd penalizes pre-clip negativity; tmp
    penalizes excess first-difference energy over the real series; per is the
    deviation across the four weekly slices; bias matches means; peak is
    cross-entropy of the peak classifier; corr is 1 - Pearson correlation.
    """
    batch = real.shape[0]
    losses: dict[str, T.Tensor] = {}
    losses["bnd"] = T.tmean(T.square(T.maximum0(-pre_clip)))

    d_gen = traffic[:, 1:] - traffic[:, :-1]
    real_diff_ms = float(np.mean(np.diff(real, axis=1) ** 2))
    losses["tmp"] = T.maximum0(T.tmean(T.square(d_gen)) - real_diff_ms)

    weeks = T.reshape(traffic, (batch, HORIZON // WEEK_HOURS, WEEK_HOURS))
    week_mean = T.tmean(weeks, axis=1, keepdims=True)
    losses["per"] = T.tmean(T.square(weeks - week_mean))

    mean_gen = T.tmean(traffic, axis=1)
    mean_real = real.mean(axis=1)
    losses["bias"] = T.tmean(T.square(mean_gen - T.Tensor(mean_real)))

    if q is not None:
        picked = T.take_per_row(q, true_peaks)
        losses["peak"] = T.tmean(-T.log(picked))

    xc = traffic - T.tmean(traffic, axis=1, keepdims=True)
    yc = real - real.mean(axis=1, keepdims=True)
    num = T.tsum(xc * T.Tensor(yc), axis=1)
    den = T.sqrt(T.tsum(T.square(xc), axis=1) * T.Tensor((yc ** 2).sum(axis=1)) + 1e-8)
    losses["corr"] = T.tmean(1.0 - num / den)
    return losses


@dataclass
class TrainingExample:
    site_id: str
    context: np.ndarray
    targets: DecompositionTargets
    values: np.ndarray
    peak: int


def build_examples(contexts: dict[str, np.ndarray],
                   series: dict[str, TrafficSeries]) -> list[TrainingExample]:
    examples = []
    for site_id in sorted(series):
        if site_id not in contexts:
            raise ValidationError(f"no context for site {site_id!r}")
        tgt = decompose_targets(series[site_id])
        examples.append(TrainingExample(
            site_id=site_id,
            context=np.asarray(contexts[site_id], dtype=np.float64),
            targets=tgt,
            values=series[site_id].values,
            peak=true_peak_hour(tgt.daily),
        ))
    return examples


def train_generator(model: GeneratorModel, examples: list[TrainingExample], epochs: int,
                    rng: PortableRng, batch_size: int = 16) -> list[dict[str, float]]:
    """Joint flow-matching + auxiliary training (Adam, seeded, reproducible)."""
    if not examples:
        raise ValidationError("empty training set")
    cfg = model.config
    opt = Adam(model.params, lr=cfg.lr)
    aux_w = dict(cfg.aux_weights)
    n = len(examples)
    ctx_all = np.stack([e.context for e in examples])
    tgt_d = np.stack([e.targets.daily for e in examples])
    tgt_w = np.stack([e.targets.weekly for e in examples])
    tgt_u = np.stack([e.targets.periodic for e in examples])
    tgt_r = np.stack([e.targets.residual for e in examples])
    x_real = np.stack([e.values for e in examples])
    peaks = np.array([e.peak for e in examples], dtype=int)

    history: list[dict[str, float]] = []
    for _ in range(int(epochs)):
        order = rng.permutation(n)
        epoch: dict[str, float] = {}
        n_batches = 0
        for start in range(0, n, batch_size):
            sel = order[start:start + batch_size]
            batch = len(sel)
            ctx = ctx_all[sel]
            c1, c2, c3 = project_conditions(model, ctx)
            if cfg.peak_head_enabled:
                q, pred_hours = peak_head(model, ctx)
                onehot = peak_onehot(pred_hours, batch)
            else:
                q, onehot = None, peak_onehot(None, batch)

            t = rng.uniform(0.0, 1.0, (batch, 1))
            terms: dict[str, T.Tensor] = {}
            level_targets = {1: tgt_d[sel], 2: tgt_w[sel], 3: tgt_r[sel]}
            level_conds = {
                1: {"c": c1},
                2: {"c": c2, "daily": tgt_d[sel]},
                3: {"c": c3, "daily": tgt_d[sel], "weekly": tgt_w[sel],
                    "periodic": tgt_u[sel], "peak_onehot": onehot},
            }
            for lvl_cfg in cfg.levels:
                lvl = lvl_cfg.level
                x0 = rng.normal((batch, lvl_cfg.length))
                sample = FlowSample(x0=x0, x1=level_targets[lvl], t=t)
                terms[f"fm{lvl}"] = flow_loss_level(model, lvl, sample, level_conds[lvl])

            noises = _draw_level_noises(model, rng, batch)
            d, w, u, r = _run_levels(model, c1, c2, c3, onehot, noises,
                                     n_steps=cfg.train_euler_steps)
            pre_clip = u + r
            traffic = T.maximum0(pre_clip)
            aux = auxiliary_losses(model, pre_clip, traffic, x_real[sel], q, peaks[sel])

            total = None
            for lvl_cfg in cfg.levels:
                part = terms[f"fm{lvl_cfg.level}"] * lvl_cfg.fm_weight
                total = part if total is None else total + part
            for name, loss in aux.items():
                total = total + loss * aux_w[name]

            grads = backward(total, model.params)
            opt.step(grads)

            n_batches += 1
            epoch["total"] = epoch.get("total", 0.0) + total.item()
            for key, val in {**terms, **aux}.items():
                epoch[key] = epoch.get(key, 0.0) + val.item()
        history.append({k: v / n_batches for k, v in epoch.items()})
    model.trained = True
    model.loss_history = history
    return history
