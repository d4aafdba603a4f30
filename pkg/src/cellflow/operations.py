"""What-to-do engine: volatility-window detection, control-plan construction,
energy saving ratio, QoE, and a conservative load-balancing fixpoint.

Loads are normalized to [0, 1] by per-site capacity. Energy follows a linear
load-proportional power model, so the saving ratio is 1 - sum(ctrl)/sum(obs);
QoE penalizes only under-provisioning. Under pure under-provisioning
(ctrl <= obs everywhere) the two add to exactly 1.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .decomposition import SeriesLayout, TrafficSeries, decompose_targets
from .errors import ValidationError


@dataclass
class LoadTrace:
    site_id: str
    rho: np.ndarray  # normalized load in [0, 1] per hour

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=np.float64)
        if self.rho.ndim != 1 or self.rho.size == 0:
            raise ValidationError("load trace must be a non-empty vector")
        if np.any(self.rho < 0) or np.any(self.rho > 1) or not np.all(np.isfinite(self.rho)):
            raise ValidationError("normalized loads must lie in [0, 1]")


@dataclass
class ControlPlan:
    site_id: str
    rho_ctrl: np.ndarray
    windows: list[tuple[int, int]]
    eta: float
    qoe: float
    window_hours: int = 0
    threshold: float = 0.0


def detect_volatile_windows(rho, window: int, threshold: float) -> list[tuple[int, int]]:
    """Maximal merged [start, end) intervals covered by any length-`window`
    span whose population standard deviation reaches `threshold`."""
    rho = np.asarray(rho, dtype=np.float64)
    if window < 2:
        raise ValidationError("window length must be >= 2")
    if threshold < 0:
        raise ValidationError("threshold must be >= 0")
    n = rho.size
    if window > n:
        raise ValidationError("window longer than the trace")
    spans = np.lib.stride_tricks.sliding_window_view(rho, window)
    stds = spans.std(axis=1)
    covered = np.zeros(n, dtype=bool)
    for start in np.nonzero(stds >= threshold)[0]:
        covered[start:start + window] = True
    intervals: list[tuple[int, int]] = []
    start = None
    for i in range(n):
        if covered[i] and start is None:
            start = i
        elif not covered[i] and start is not None:
            intervals.append((start, i))
            start = None
    if start is not None:
        intervals.append((start, n))
    return intervals


def _validate_windows(windows, horizon: int) -> None:
    prev_end = 0
    for idx, (s, e) in enumerate(windows):
        if not (0 <= s < e <= horizon):
            raise ValidationError(f"window {idx} [{s}, {e}) outside [0, {horizon})")
        if s < prev_end:
            raise ValidationError("windows must be sorted and disjoint")
        prev_end = e


def energy_saving(rho_obs, rho_ctrl) -> float:
    """eta = 1 - sum(ctrl) / sum(obs)."""
    obs = np.asarray(rho_obs, dtype=np.float64)
    ctrl = np.asarray(rho_ctrl, dtype=np.float64)
    if obs.shape != ctrl.shape:
        raise ValidationError("traces must have equal length")
    total = obs.sum()
    if total <= 0:
        raise ValidationError("undefined ratio: observed load sums to zero")
    return float(1.0 - ctrl.sum() / total)


def qoe(rho_obs, rho_ctrl) -> float:
    """Demand-weighted satisfaction: only under-provisioning is penalized."""
    obs = np.asarray(rho_obs, dtype=np.float64)
    ctrl = np.asarray(rho_ctrl, dtype=np.float64)
    if obs.shape != ctrl.shape:
        raise ValidationError("traces must have equal length")
    total = obs.sum()
    if total <= 0:
        raise ValidationError("undefined ratio: observed load sums to zero")
    deficit = np.maximum(obs - ctrl, 0.0).sum()
    return float(1.0 - deficit / total)


def build_control(trace: LoadTrace, target, windows) -> ControlPlan:
    """Generated targets inside the windows, observation preserved elsewhere."""
    target = np.clip(np.asarray(target, dtype=np.float64), 0.0, 1.0)
    if target.shape != trace.rho.shape:
        raise ValidationError("target length must match the observed trace")
    _validate_windows(windows, trace.rho.size)
    ctrl = trace.rho.copy()
    for s, e in windows:
        ctrl[s:e] = target[s:e]
    return ControlPlan(
        site_id=trace.site_id,
        rho_ctrl=ctrl,
        windows=[(int(s), int(e)) for s, e in windows],
        eta=energy_saving(trace.rho, ctrl),
        qoe=qoe(trace.rho, ctrl),
    )


def periodic_target(trace: LoadTrace, layout: SeriesLayout | None = None) -> np.ndarray:
    """Weekly-template tiling of the observed trace (default control target).

    Stands in for a model forecast: it is the volatility-free periodic
    backbone of the site's own load.
    """
    layout = layout or SeriesLayout()
    series = TrafficSeries(site_id=trace.site_id, values=trace.rho, layout=layout)
    return np.clip(decompose_targets(series).periodic, 0.0, 1.0)


def simulate_control(trace: LoadTrace, target, window: int, threshold_frac: float) -> ControlPlan:
    """Detect volatile windows at `threshold_frac` x global sigma and control them."""
    if threshold_frac < 0:
        raise ValidationError("threshold must be >= 0")
    threshold = threshold_frac * float(trace.rho.std())
    windows = detect_volatile_windows(trace.rho, window, threshold)
    plan = build_control(trace, target, windows)
    plan.window_hours = window
    plan.threshold = threshold_frac
    return plan


def balance_load(loads: dict[str, np.ndarray], capacities: dict[str, float],
                 neighbors: dict[str, list[str]]):
    """Shift per-hour overload to the least-utilized neighbor with headroom.

    Per hour, overloaded sites are processed in descending-overload order
    (ties by site id); each sheds into its least-utilized neighbor until no
    overload remains or no neighbor has headroom. Hourly totals are conserved
    exactly; unresolved overloads are reported, never dropped.
    """
    ids = sorted(loads)
    if set(capacities) != set(ids):
        raise ValidationError("capacities must cover exactly the load sites")
    for sid in ids:
        if capacities[sid] <= 0:
            raise ValidationError(f"capacity of {sid!r} must be positive")
        for nb in neighbors.get(sid, []):
            if sid not in neighbors.get(nb, []):
                raise ValidationError(f"neighbor graph not symmetric at {sid!r}/{nb!r}")
    horizon = {loads[s].shape for s in ids}
    if len(horizon) != 1:
        raise ValidationError("all sites must share the same horizon")

    adjusted = {s: np.asarray(loads[s], dtype=np.float64).copy() for s in ids}
    unresolved: list[tuple[str, int, float]] = []
    n_hours = adjusted[ids[0]].size
    for t in range(n_hours):
        while True:
            over = [(adjusted[s][t] - capacities[s], s) for s in ids
                    if adjusted[s][t] > capacities[s]]
            if not over:
                break
            over.sort(key=lambda item: (-item[0], item[1]))
            moved = False
            for excess, sid in over:
                options = [
                    (adjusted[nb][t] / capacities[nb], nb)
                    for nb in neighbors.get(sid, [])
                    if capacities[nb] - adjusted[nb][t] > 0
                ]
                if not options:
                    continue
                options.sort()
                _, nb = options[0]
                headroom = capacities[nb] - adjusted[nb][t]
                amount = min(excess, headroom)
                adjusted[sid][t] -= amount
                adjusted[nb][t] += amount
                moved = True
                break
            if not moved:
                for excess, sid in over:
                    unresolved.append((sid, t, float(excess)))
                break
    return adjusted, unresolved
