"""Evaluation of generated vs real traffic.

JSD here is the square root of the mixture-form Jensen-Shannon divergence in
nats: KL against M = (P+Q)/2, averaged, then rooted. The mixture form is the
one that stays finite on disjoint supports and saturates at sqrt(ln 2)
~= 0.8326; a plain symmetrized KL would diverge there. Histograms are pooled
over all sites of a corpus (not averaged per site), which the report records.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError

JSD_MAX = math.sqrt(math.log(2.0))
DEFAULT_BINS = 100


@dataclass
class DiscreteDistribution:
    edges: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        self.edges = np.asarray(self.edges, dtype=np.float64)
        self.probs = np.asarray(self.probs, dtype=np.float64)
        if self.edges.ndim != 1 or self.edges.size != self.probs.size + 1:
            raise ValidationError("edge count must be bin count + 1")
        if np.any(np.diff(self.edges) <= 0):
            raise ValidationError("bin edges must be strictly increasing")
        if np.any(self.probs < 0) or abs(self.probs.sum() - 1.0) > 1e-12:
            raise ValidationError("probabilities must be nonnegative and sum to 1")


@dataclass
class EvaluationReport:
    jsd: float
    jsd_diff: float
    rmse: float
    mae: float
    n_sites: int
    n_values: int
    bins: int
    pooled: bool = True

    def as_dict(self) -> dict:
        return {
            "jsd": self.jsd,
            "jsd_diff": self.jsd_diff,
            "rmse": self.rmse,
            "mae": self.mae,
            "n_sites": self.n_sites,
            "n_values": self.n_values,
            "bins": self.bins,
            "pooled": self.pooled,
        }


def histogram(values, edges) -> DiscreteDistribution:
    """Empirical distribution over fixed bins; outliers land in the end bins."""
    values = np.asarray(values, dtype=np.float64).reshape(-1)
    if values.size == 0:
        raise ValidationError("histogram of an empty sample")
    edges = np.asarray(edges, dtype=np.float64)
    clamped = np.clip(values, edges[0], edges[-1])
    counts, _ = np.histogram(clamped, bins=edges)
    return DiscreteDistribution(edges=edges, probs=counts / values.size)


def _kl(p: np.ndarray, q: np.ndarray) -> float:
    # 0 * ln(0/q) = 0 by convention; q is a mixture so q > 0 wherever p > 0
    mask = p > 0
    return float(np.sum(p[mask] * np.log(p[mask] / q[mask])))


def jsd(p: DiscreteDistribution, q: DiscreteDistribution) -> float:
    """sqrt of the mixture-based Jensen-Shannon divergence (nats)."""
    if p.edges.shape != q.edges.shape or not np.array_equal(p.edges, q.edges):
        raise ValidationError("distributions must share bin edges")
    m = 0.5 * (p.probs + q.probs)
    div = 0.5 * (_kl(p.probs, m) + _kl(q.probs, m))
    return math.sqrt(max(div, 0.0))


def first_diff(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.size < 2:
        raise ValidationError("first difference needs at least 2 values")
    return np.diff(x)


def rmse(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape or y.size == 0:
        raise ValidationError("rmse needs equal-length non-empty inputs")
    return float(np.sqrt(np.mean((y - y_hat) ** 2)))


def mae(y, y_hat) -> float:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    y_hat = np.asarray(y_hat, dtype=np.float64).reshape(-1)
    if y.shape != y_hat.shape or y.size == 0:
        raise ValidationError("mae needs equal-length non-empty inputs")
    return float(np.mean(np.abs(y - y_hat)))


def shared_edges(real: np.ndarray, generated: np.ndarray, bins: int) -> np.ndarray:
    lo = min(real.min(), generated.min())
    hi = max(real.max(), generated.max())
    if hi <= lo:
        hi = lo + 1.0
    return np.linspace(lo, hi, bins + 1)


def evaluate_corpus(real: dict[str, np.ndarray], generated: dict[str, np.ndarray],
                    bins: int = DEFAULT_BINS) -> EvaluationReport:
    """Corpus-level report over paired sites (pooled histograms)."""
    if set(real) != set(generated):
        unpaired = set(real) ^ set(generated)
        raise ValidationError(f"unpaired sites: {sorted(unpaired)[:5]}")
    if not real:
        raise ValidationError("empty corpus")
    order = sorted(real)
    r = np.concatenate([np.asarray(real[k], dtype=np.float64) for k in order])
    g = np.concatenate([np.asarray(generated[k], dtype=np.float64) for k in order])
    if r.shape != g.shape:
        raise ValidationError("paired series have mismatched lengths")

    edges = shared_edges(r, g, bins)
    value_jsd = jsd(histogram(r, edges), histogram(g, edges))

    rd = np.concatenate([first_diff(real[k]) for k in order])
    gd = np.concatenate([first_diff(generated[k]) for k in order])
    d_edges = shared_edges(rd, gd, bins)
    diff_jsd = jsd(histogram(rd, d_edges), histogram(gd, d_edges))

    return EvaluationReport(
        jsd=value_jsd,
        jsd_diff=diff_jsd,
        rmse=rmse(r, g),
        mae=mae(r, g),
        n_sites=len(order),
        n_values=int(r.size),
        bins=bins,
    )
