"""Daily feature extraction, quality gating, imputation, and windowing.

Three features per day: total asleep minutes (light + deep + REM), total
steps, and resting heart rate (mean heart rate over all runs of at least
12 consecutive zero-step minutes). Days with more than 20% of step or
heart-rate minutes missing are dropped entirely; remaining gaps are
filled by linear interpolation with edge-hold, then each feature is
z-scored per participant. Model inputs are 7-day windows with a 1-day
stride.

Feature axis order everywhere in this package is
``(sleep_minutes, total_steps, resting_hr)``.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .cohort import (ASLEEP_CODES, MINUTES_PER_DAY, STAGE_NONE, Participant,
                     _MISSING_STEPS)
from .labeling import LABEL_AMBIGUOUS, LABEL_ANOMALOUS, LABEL_NORMAL, DayLabels

FEATURE_NAMES = ("sleep_minutes", "total_steps", "resting_hr")
F_SLEEP, F_STEPS, F_RHR = 0, 1, 2

QUALITY_MIN_COVERAGE = 0.8
RESTING_RUN_MINUTES = 12
WINDOW_DAYS = 7
TRAIN_MAX_MISSING_FRACTION = 0.2


@dataclass(frozen=True)
class DayMinutes:
    """Dense per-minute columns for a single calendar date.

    ``heart_rate`` uses NaN for missing minutes, ``steps`` uses -1, and
    ``sleep_stage`` uses the stage code 0 ("none").
    """

    date: dt.date
    heart_rate: np.ndarray  # (1440,) float64
    steps: np.ndarray       # (1440,) int32
    sleep_stage: np.ndarray  # (1440,) int8


@dataclass(frozen=True)
class DailyFeatures:
    date: dt.date
    sleep_minutes: float | None
    total_steps: float | None
    resting_hr: float | None
    quality_ok: bool


@dataclass(frozen=True)
class NormalizationConstants:
    """Per-feature mean and population std over quality-passing days."""

    mean: np.ndarray  # (3,)
    std: np.ndarray   # (3,)

    def to_dict(self) -> dict:
        return {name: {"mean": float(self.mean[i]), "std": float(self.std[i])}
                for i, name in enumerate(FEATURE_NAMES)}

    @classmethod
    def from_dict(cls, d: dict) -> "NormalizationConstants":
        mean = np.array([d[name]["mean"] for name in FEATURE_NAMES])
        std = np.array([d[name]["std"] for name in FEATURE_NAMES])
        return cls(mean, std)


@dataclass(frozen=True)
class Window:
    """A 7-day x 3-feature normalized model input."""

    participant_id: str
    end_date: dt.date
    values: np.ndarray  # (7, 3) float64, no NaN
    label: str
    episode_ids: tuple[str, ...]
    imputed_cells: int
    train_eligible: bool


def sleep_duration(day: DayMinutes) -> float | None:
    """Minutes asleep (light/deep/REM); None if the day has no stage data."""
    stage = day.sleep_stage
    if not np.any(stage != STAGE_NONE):
        return None
    return float(np.isin(stage, ASLEEP_CODES).sum())


def total_steps(day: DayMinutes) -> float | None:
    """Sum of present step values; None only if every minute is missing."""
    present = day.steps != _MISSING_STEPS
    if not present.any():
        return None
    return float(day.steps[present].sum())


def _resting_mask(steps: np.ndarray, run_minutes: int) -> np.ndarray:
    """Union of maximal zero-step runs of at least ``run_minutes``.

    Missing step minutes break a run (unknown is not zero).
    """
    zero = (steps == 0).astype(np.int8)
    edges = np.flatnonzero(np.diff(np.concatenate(([0], zero, [0]))))
    starts, ends = edges[::2], edges[1::2]
    mask = np.zeros(steps.shape[0], dtype=bool)
    for s, e in zip(starts, ends):
        if e - s >= run_minutes:
            mask[s:e] = True
    return mask


def resting_heart_rate(day: DayMinutes, *, run_minutes: int = RESTING_RUN_MINUTES) -> float | None:
    """Mean heart rate over the union of qualifying zero-step runs.

    Each present heart-rate minute inside the union weighs equally; None
    if no run qualifies or no heart-rate value falls inside one.
    """
    mask = _resting_mask(day.steps, run_minutes)
    if not mask.any():
        return None
    vals = day.heart_rate[mask]
    vals = vals[~np.isnan(vals)]
    if vals.size == 0:
        return None
    return float(np.mean(vals))


def day_quality(day: DayMinutes, *, min_coverage: float = QUALITY_MIN_COVERAGE) -> bool:
    """True iff step and heart-rate coverage are both at least 80% of 1440."""
    need = min_coverage * MINUTES_PER_DAY
    steps_cov = int((day.steps != _MISSING_STEPS).sum())
    hr_cov = int((~np.isnan(day.heart_rate)).sum())
    return steps_cov >= need and hr_cov >= need


@dataclass
class ParticipantDaily:
    """Per-day feature matrix for one participant over a contiguous range."""

    participant_id: str
    start_date: dt.date
    raw: np.ndarray        # (n_days, 3) float64, NaN where missing
    quality: np.ndarray    # (n_days,) bool

    @property
    def n_days(self) -> int:
        return self.raw.shape[0]

    def date(self, i: int) -> dt.date:
        return self.start_date + dt.timedelta(days=i)


def _day_grids(participant: Participant):
    """Scatter the minute columns onto dense (n_days, 1440) grids."""
    m = participant.minutes
    if len(m) == 0:
        return None
    d0 = int(m.dates[0])
    n_days = int(m.dates[-1]) - d0 + 1
    flat = (m.dates - d0).astype(np.int64) * MINUTES_PER_DAY + m.minutes
    hr = np.full(n_days * MINUTES_PER_DAY, np.nan)
    steps = np.full(n_days * MINUTES_PER_DAY, _MISSING_STEPS, dtype=np.int32)
    stage = np.zeros(n_days * MINUTES_PER_DAY, dtype=np.int8)
    hr[flat] = m.heart_rate
    steps[flat] = m.steps
    stage[flat] = m.sleep_stage
    shape = (n_days, MINUTES_PER_DAY)
    return d0, hr.reshape(shape), steps.reshape(shape), stage.reshape(shape)


def daily_features(participant: Participant, *,
                   quality_min_coverage: float = QUALITY_MIN_COVERAGE,
                   resting_run_minutes: int = RESTING_RUN_MINUTES) -> ParticipantDaily | None:
    """Per-day features over the participant's recorded date range.

    Quality-failing days have all three features set missing. Returns
    None for participants without minute data.
    """
    grids = _day_grids(participant)
    if grids is None:
        return None
    d0, hr, steps, stage = grids
    n_days = hr.shape[0]
    need = quality_min_coverage * MINUTES_PER_DAY

    steps_present = steps != _MISSING_STEPS
    hr_present = ~np.isnan(hr)
    quality = (steps_present.sum(axis=1) >= need) & (hr_present.sum(axis=1) >= need)

    asleep = np.isin(stage, ASLEEP_CODES)
    has_stage = (stage != STAGE_NONE).any(axis=1)
    sleep = np.where(has_stage, asleep.sum(axis=1).astype(np.float64), np.nan)

    steps_sum = np.where(steps_present, steps, 0).sum(axis=1).astype(np.float64)
    steps_daily = np.where(steps_present.any(axis=1), steps_sum, np.nan)

    raw = np.full((n_days, 3), np.nan)
    raw[:, F_SLEEP] = sleep
    raw[:, F_STEPS] = steps_daily
    for d in range(n_days):
        mask = _resting_mask(steps[d], resting_run_minutes)
        if mask.any():
            vals = hr[d][mask]
            vals = vals[~np.isnan(vals)]
            if vals.size:
                raw[d, F_RHR] = np.mean(vals)
    raw[~quality] = np.nan
    return ParticipantDaily(participant.id, dt.date.fromordinal(d0), raw, quality)


def day_minutes(participant: Participant, date: dt.date) -> DayMinutes:
    """Dense minute view for one date (for inspection and tests)."""
    grids = _day_grids(participant)
    if grids is None:
        raise ValueError(f"participant {participant.id!r} has no minute data")
    d0, hr, steps, stage = grids
    i = date.toordinal() - d0
    if not 0 <= i < hr.shape[0]:
        return DayMinutes(date,
                          np.full(MINUTES_PER_DAY, np.nan),
                          np.full(MINUTES_PER_DAY, _MISSING_STEPS, dtype=np.int32),
                          np.zeros(MINUTES_PER_DAY, dtype=np.int8))
    return DayMinutes(date, hr[i], steps[i], stage[i])


def impute_linear(series: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Fill missing entries by linear interpolation with edge-hold.

    Returns ``(filled, was_missing)``. Present values are preserved
    exactly; an all-missing series raises ValueError.
    """
    series = np.asarray(series, dtype=np.float64)
    missing = np.isnan(series)
    if missing.all():
        raise ValueError("cannot impute an all-missing series")
    if not missing.any():
        return series.copy(), missing
    idx = np.arange(series.shape[0])
    filled = series.copy()
    filled[missing] = np.interp(idx[missing], idx[~missing], series[~missing])
    return filled, missing


def impute_daily(daily: ParticipantDaily) -> tuple[np.ndarray, np.ndarray]:
    """Impute each feature column; returns (values, imputed_mask)."""
    values = np.empty_like(daily.raw)
    mask = np.empty(daily.raw.shape, dtype=bool)
    for f in range(daily.raw.shape[1]):
        values[:, f], mask[:, f] = impute_linear(daily.raw[:, f])
    return values, mask


def normalization_constants(values: np.ndarray, quality: np.ndarray) -> NormalizationConstants:
    """Per-feature mean and population std over quality-passing days."""
    if not quality.any():
        raise ValueError("participant has no quality-passing days")
    sub = values[quality]
    return NormalizationConstants(mean=sub.mean(axis=0), std=sub.std(axis=0))


def normalize_participant(values: np.ndarray, constants: NormalizationConstants) -> np.ndarray:
    """(x - mean) / std per feature; zero-variance features map to zero."""
    std = np.where(constants.std > 0, constants.std, 1.0)
    z = (values - constants.mean) / std
    z[:, constants.std == 0] = 0.0
    return z


def make_windows(daily: ParticipantDaily, normalized: np.ndarray,
                 imputed_mask: np.ndarray, labels: DayLabels, *,
                 window_days: int = WINDOW_DAYS,
                 train_max_missing: float = TRAIN_MAX_MISSING_FRACTION) -> list[Window]:
    """One window per date with ``window_days`` available preceding days.

    A window is anomalous if any covered day is, normal_eligible only if
    all covered days are, ambiguous otherwise. Training eligibility
    additionally requires the window's pre-imputation missingness to be
    below ``train_max_missing`` of its cells.
    """
    n = daily.n_days
    if np.isnan(normalized).any():
        raise ValueError("normalized values contain missing cells; impute first")
    # align labels to the daily range; uncovered days are ambiguous
    offset = (daily.start_date - labels.start_date).days
    day_lab = np.full(n, LABEL_AMBIGUOUS, dtype="<U15")
    day_ids: list[list[str]] = [[]] * n
    for i in range(n):
        j = offset + i
        if 0 <= j < len(labels):
            day_lab[i] = labels.labels[j]
            day_ids[i] = labels.episode_ids[j]
    windows = []
    cells = window_days * normalized.shape[1]
    for end in range(window_days - 1, n):
        lo = end - window_days + 1
        lab = day_lab[lo:end + 1]
        if (lab == LABEL_ANOMALOUS).any():
            label = LABEL_ANOMALOUS
        elif (lab == LABEL_NORMAL).all():
            label = LABEL_NORMAL
        else:
            label = LABEL_AMBIGUOUS
        ids: set[str] = set()
        for i in range(lo, end + 1):
            ids.update(day_ids[i])
        imputed = int(imputed_mask[lo:end + 1].sum())
        windows.append(Window(
            participant_id=daily.participant_id,
            end_date=daily.date(end),
            values=normalized[lo:end + 1],
            label=label,
            episode_ids=tuple(sorted(ids)),
            imputed_cells=imputed,
            train_eligible=(label == LABEL_NORMAL and imputed / cells < train_max_missing),
        ))
    return windows
