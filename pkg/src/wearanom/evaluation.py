"""Event-adjusted evaluation of window-level detections.

Point adjustment at window granularity: an episode counts as detected
when at least one of its windows is flagged, and detection credits all
of that episode's anomalous windows as true positives. Flagged
normal-eligible windows are false positives; ambiguous windows are
excluded from every count. Windows shared by several episodes count
once toward the global tallies (as a true positive if any covering
episode was detected) but contribute to each episode's own outcome.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .detector import Detection
from .labeling import (CATEGORIES, LABEL_ANOMALOUS, LABEL_NORMAL,
                       MAGNITUDE_10_PLUS, MAGNITUDE_5_9, Episode)

# False positives for a single episode's score are that participant's
# flagged normal windows within this many days of the assessment.
PER_EPISODE_FP_DAYS = 35

ALIGN_OFFSET_MIN = -35
ALIGN_OFFSET_MAX = 21


@dataclass(frozen=True)
class AdjustedPRF:
    precision: float
    recall: float
    f_score: float
    tp: int
    fp: int
    fn: int


@dataclass(frozen=True)
class EpisodeOutcome:
    episode: Episode
    detected: bool
    f_score: float
    flagged_windows: int


def _prf(tp: int, fp: int, fn: int) -> AdjustedPRF:
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    f = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return AdjustedPRF(precision, recall, f, tp, fp, fn)


def detected_episode_ids(detections: list[Detection]) -> set[str]:
    """Episodes with at least one flagged window."""
    detected: set[str] = set()
    for d in detections:
        if d.flagged and d.label == LABEL_ANOMALOUS:
            detected.update(d.episode_ids)
    return detected


def adjusted_prf(detections: list[Detection],
                 episode_filter: set[str] | None = None) -> AdjustedPRF:
    """Point-adjusted precision/recall/F over a detection list.

    ``episode_filter`` restricts the anomalous-window universe to windows
    of the given episodes (for per-stratum scores); false positives are
    unaffected by the filter.
    """
    detected = detected_episode_ids(detections)
    tp = fp = fn = 0
    for d in detections:
        if d.label == LABEL_ANOMALOUS:
            ids = d.episode_ids
            if episode_filter is not None:
                if not any(e in episode_filter for e in ids):
                    continue
            if any(e in detected for e in ids):
                tp += 1
            else:
                fn += 1
        elif d.label == LABEL_NORMAL and d.flagged:
            fp += 1
    return _prf(tp, fp, fn)


def episode_outcomes(detections: list[Detection], episodes: list[Episode], *,
                     fp_days: int = PER_EPISODE_FP_DAYS
                     ) -> tuple[list[EpisodeOutcome], float | None]:
    """Per-episode detection status and localized adjusted F.

    Each episode's false-positive count is the number of flagged normal
    windows of the same participant within ``fp_days`` of the assessment
    date. The second return value is the detection rate (None when there
    are no episodes).
    """
    by_episode: dict[str, list[Detection]] = {}
    normal_flagged: dict[str, list[Detection]] = {}
    for d in detections:
        if d.label == LABEL_ANOMALOUS:
            for eid in d.episode_ids:
                by_episode.setdefault(eid, []).append(d)
        elif d.label == LABEL_NORMAL and d.flagged:
            normal_flagged.setdefault(d.participant_id, []).append(d)

    outcomes = []
    for ep in episodes:
        windows = by_episode.get(ep.episode_id, [])
        flagged = sum(1 for d in windows if d.flagged)
        detected = flagged > 0
        tp = len(windows) if detected else 0
        fn = 0 if detected else len(windows)
        span = dt.timedelta(days=fp_days)
        fp = sum(1 for d in normal_flagged.get(ep.participant_id, [])
                 if abs(d.end_date - ep.assessment_date) <= span)
        outcomes.append(EpisodeOutcome(ep, detected, _prf(tp, fp, fn).f_score, flagged))
    rate = None
    if outcomes:
        rate = sum(1 for o in outcomes if o.detected) / len(outcomes)
    return outcomes, rate


def breakdown(detections: list[Detection], episodes: list[Episode]) -> dict:
    """Adjusted PRF per category and per magnitude bucket.

    Strata restrict the anomalous-window universe to their episodes'
    windows; the (category-free) false positives are shared across all
    strata unchanged.
    """
    by_category = {
        cat: {e.episode_id for e in episodes if e.category == cat}
        for cat in CATEGORIES
    }
    by_magnitude = {}
    for scale, attr in (("phq8", "magnitude_phq"), ("gad7", "magnitude_gad")):
        for mag in (MAGNITUDE_5_9, MAGNITUDE_10_PLUS):
            key = f"{scale}_{mag}"
            by_magnitude[key] = {e.episode_id for e in episodes if getattr(e, attr) == mag}
    return {
        "per_category": {cat: adjusted_prf(detections, ids)
                         for cat, ids in by_category.items()},
        "per_magnitude": {key: adjusted_prf(detections, ids)
                          for key, ids in by_magnitude.items()},
    }


@dataclass(frozen=True)
class AlignedPoint:
    offset_day: int
    feature: str
    mean: float
    sem: float
    n: int


def aligned_averages(daily_by_participant: dict[str, tuple[dt.date, np.ndarray]],
                     episodes: list[Episode],
                     feature_names: tuple[str, ...], *,
                     offset_min: int = ALIGN_OFFSET_MIN,
                     offset_max: int = ALIGN_OFFSET_MAX) -> list[AlignedPoint]:
    """Cross-episode mean of normalized features vs days from assessment.

    ``daily_by_participant`` maps participant id to ``(start_date,
    z_values)`` with ``z_values`` of shape (n_days, n_features). Offsets
    without data for an episode are simply skipped.
    """
    offsets = range(offset_min, offset_max + 1)
    n_feat = len(feature_names)
    sums = np.zeros((len(offsets), n_feat))
    sq_sums = np.zeros((len(offsets), n_feat))
    counts = np.zeros((len(offsets), n_feat), dtype=np.int64)
    for ep in episodes:
        entry = daily_by_participant.get(ep.participant_id)
        if entry is None:
            continue
        start, z = entry
        base = (ep.assessment_date - start).days
        for j, off in enumerate(offsets):
            i = base + off
            if 0 <= i < z.shape[0]:
                row = z[i]
                sums[j] += row
                sq_sums[j] += row ** 2
                counts[j] += 1
    points = []
    for j, off in enumerate(offsets):
        for f, name in enumerate(feature_names):
            n = int(counts[j, f])
            if n == 0:
                continue
            mean = sums[j, f] / n
            var = max(sq_sums[j, f] / n - mean ** 2, 0.0)
            sem = float(np.sqrt(var / n)) if n > 1 else 0.0
            points.append(AlignedPoint(off, name, float(mean), sem, n))
    return points
