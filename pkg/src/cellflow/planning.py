"""What-if site selection: feasibility filtering, utilities over generated
traffic, and top-K ranking.

The generator and the ranking objective stay decoupled: ranking takes any
callable that maps (cell, rng) to a 672-hour sequence, and utilities are a
registry keyed by name. The top-K objective is modular, so sorting by
utility is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .decomposition import HORIZON
from .errors import ValidationError
from .nn.rng import PortableRng

LSI_EPSILON = 1e-6


@dataclass
class CandidateCell:
    cell_id: str
    lat: float
    lon: float
    feasible_flag: bool = True
    dist_to_existing_km: float | None = None
    payload: object = None  # embedding or context carried through to generation


@dataclass(frozen=True)
class FeasibilityConfig:
    require_flag: bool = True
    min_dist_km: float | None = None
    exclusion_polygons: tuple[tuple[tuple[float, float], ...], ...] = ()


@dataclass
class RankingResult:
    utility: str
    k: int
    seed: int
    entries: list[tuple[str, float]]  # (cell_id, value) descending
    truncated: bool = False
    notice: str | None = None


def _point_in_ring(lat: float, lon: float, ring) -> bool:
    # ray casting on (lat, lon) pairs
    inside = False
    n = len(ring)
    for i in range(n):
        y1, x1 = ring[i]
        y2, x2 = ring[(i + 1) % n]
        if (y1 > lat) != (y2 > lat):
            x_cross = x1 + (lat - y1) * (x2 - x1) / (y2 - y1)
            if lon < x_cross:
                inside = not inside
    return inside


def filter_feasible(cells: list[CandidateCell],
                    config: FeasibilityConfig = FeasibilityConfig()) -> list[CandidateCell]:
    """Cells passing every configured predicate, order preserved."""
    if not cells:
        raise ValidationError("empty candidate grid")
    out = []
    for cell in cells:
        if config.require_flag and not cell.feasible_flag:
            continue
        if config.min_dist_km is not None:
            if cell.dist_to_existing_km is None or cell.dist_to_existing_km < config.min_dist_km:
                continue
        if any(_point_in_ring(cell.lat, cell.lon, ring) for ring in config.exclusion_polygons):
            continue
        out.append(cell)
    return out


def lsi(traffic) -> float:
    """Load Stability Index: reciprocal of the temporal spread (population)."""
    x = np.asarray(traffic, dtype=np.float64)
    if x.shape != (HORIZON,):
        raise ValidationError(f"LSI expects a {HORIZON}-hour sequence")
    if not np.all(np.isfinite(x)):
        raise ValidationError("non-finite traffic values")
    return 1.0 / (float(x.std()) + LSI_EPSILON)


def total_volume(traffic) -> float:
    return float(np.asarray(traffic, dtype=np.float64).sum())


def peak_load(traffic) -> float:
    return float(np.asarray(traffic, dtype=np.float64).max())


UTILITIES: dict[str, Callable[[np.ndarray], float]] = {
    "lsi": lsi,
    "total-volume": total_volume,
    "peak-load": peak_load,
}


def rank_topk(cells: list[CandidateCell], k: int, utility: str,
              generate_fn: Callable[[CandidateCell, PortableRng], np.ndarray],
              run_seed: int, feasibility: FeasibilityConfig = FeasibilityConfig(),
              n_samples: int = 1) -> RankingResult:
    """Score every feasible cell on freshly generated traffic and keep the top K.

    Each cell gets its own noise stream derived from (run_seed, cell_id), so
    results do not depend on grid order or partitioning. Ties break by
    cell_id ascending; K beyond the feasible count returns everything with a
    truncation notice.
    """
    if k < 1:
        raise ValidationError("K must be >= 1")
    if utility not in UTILITIES:
        raise ValidationError(f"unknown utility {utility!r}; have {sorted(UTILITIES)}")
    if n_samples < 1:
        raise ValidationError("n_samples must be >= 1")
    feasible = filter_feasible(cells, feasibility)
    if not feasible:
        raise ValidationError("no feasible cells to rank")
    score_fn = UTILITIES[utility]
    scored = []
    for cell in feasible:
        rng = PortableRng(run_seed).spawn(f"cell:{cell.cell_id}")
        values = [score_fn(generate_fn(cell, rng)) for _ in range(n_samples)]
        scored.append((cell.cell_id, float(np.mean(values))))
    scored.sort(key=lambda item: (-item[1], item[0]))
    truncated = k > len(scored)
    return RankingResult(
        utility=utility,
        k=k,
        seed=run_seed,
        entries=scored[: min(k, len(scored))],
        truncated=truncated,
        notice=f"requested K={k} but only {len(scored)} feasible cells" if truncated else None,
    )
