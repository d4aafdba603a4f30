"""Hourly-traffic decomposition: daily patterns, weekly template, periodic
component, residual, and the hierarchical training targets built from them.

Hour 0 is anchored to Monday 00:00 by default; the anchor day lives in the
series layout so other calendars can be expressed.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

HOURS_PER_DAY = 24
DAYS = 28
WEEKS = 4
WEEK_HOURS = 168
HORIZON = DAYS * HOURS_PER_DAY  # 672


@dataclass(frozen=True)
class SeriesLayout:
    hours_per_day: int = HOURS_PER_DAY
    days: int = DAYS
    first_day: int = 0  # day-of-week of day 0; 0 = Monday

    @property
    def horizon(self) -> int:
        return self.hours_per_day * self.days

    def is_weekday(self, day: int) -> bool:
        return (self.first_day + day) % 7 < 5


@dataclass
class TrafficSeries:
    """One site's nonnegative hourly load over the 4-week horizon."""

    site_id: str
    values: np.ndarray
    layout: SeriesLayout = field(default_factory=SeriesLayout)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.layout.horizon,):
            raise ValidationError(
                f"series {self.site_id!r}: expected {self.layout.horizon} hourly values, "
                f"got shape {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValidationError(f"series {self.site_id!r}: non-finite values")
        if np.any(self.values < 0):
            raise ValidationError(f"series {self.site_id!r}: negative load values")


@dataclass
class DailyPattern:
    weekday: np.ndarray  # 24 hourly values
    weekend: np.ndarray

    def __post_init__(self):
        self.weekday = np.asarray(self.weekday, dtype=np.float64)
        self.weekend = np.asarray(self.weekend, dtype=np.float64)
        for name, arr in (("weekday", self.weekday), ("weekend", self.weekend)):
            if arr.shape != (HOURS_PER_DAY,) or not np.all(np.isfinite(arr)):
                raise ValidationError(f"daily pattern {name} must be 24 finite values")


@dataclass
class DecompositionTargets:
    """Per-series targets for the three generator levels plus the residual."""

    daily: np.ndarray     # [weekday profile || weekend profile], 48
    weekly: np.ndarray    # 168, Monday-anchored
    periodic: np.ndarray  # 672, weekly tiled over the horizon
    residual: np.ndarray  # 672, series minus periodic


def weekly_from_daily(pattern: DailyPattern) -> np.ndarray:
    """168-hour template: five weekday days then two weekend days."""
    days = [pattern.weekday if d < 5 else pattern.weekend for d in range(7)]
    return np.concatenate(days)


def periodic_from_weekly(weekly: np.ndarray, horizon: int = HORIZON) -> np.ndarray:
    """Tile the weekly template across the horizon."""
    weekly = np.asarray(weekly, dtype=np.float64)
    if weekly.shape != (WEEK_HOURS,):
        raise ValidationError(f"weekly template must have {WEEK_HOURS} values")
    if horizon % WEEK_HOURS != 0:
        raise ValidationError(f"horizon {horizon} is not a multiple of {WEEK_HOURS}")
    return np.tile(weekly, horizon // WEEK_HOURS)


def residual(series: TrafficSeries, periodic: np.ndarray) -> np.ndarray:
    periodic = np.asarray(periodic, dtype=np.float64)
    if periodic.shape != series.values.shape:
        raise ValidationError("periodic component length does not match series")
    return series.values - periodic


def decompose_targets(series: TrafficSeries) -> DecompositionTargets:
    """Average daily/weekly profiles plus the exact periodic/residual split.

    The periodic target tiles the weekly average, so series = periodic +
    residual holds to the last bit.
    """
    layout = series.layout
    by_day = series.values.reshape(layout.days, layout.hours_per_day)

    weekday_rows = [d for d in range(layout.days) if layout.is_weekday(d)]
    weekend_rows = [d for d in range(layout.days) if not layout.is_weekday(d)]
    d_w = by_day[weekday_rows].mean(axis=0)
    d_e = by_day[weekend_rows].mean(axis=0)
    daily = np.concatenate([d_w, d_e])

    # average profile per day-of-week (Monday-anchored template)
    weekly = np.empty(WEEK_HOURS)
    for dow in range(7):
        rows = [d for d in range(layout.days) if (layout.first_day + d) % 7 == dow]
        weekly[dow * layout.hours_per_day:(dow + 1) * layout.hours_per_day] = (
            by_day[rows].mean(axis=0)
        )

    # re-anchor the template onto the actual calendar of the series
    per_day = np.empty_like(by_day)
    for d in range(layout.days):
        dow = (layout.first_day + d) % 7
        per_day[d] = weekly[dow * layout.hours_per_day:(dow + 1) * layout.hours_per_day]
    periodic = per_day.reshape(-1)
    return DecompositionTargets(
        daily=daily,
        weekly=weekly,
        periodic=periodic,
        residual=series.values - periodic,
    )


def true_peak_hour(daily: np.ndarray) -> int:
    """Hour of day with the largest value in the 48-entry daily target.

    Ties break to the lowest index; a weekend-dominant profile resolves to
    its weekend peak via the modulo.
    """
    daily = np.asarray(daily)
    if daily.shape != (2 * HOURS_PER_DAY,):
        raise ValidationError("daily target must have 48 values")
    return int(np.argmax(daily)) % HOURS_PER_DAY
