"""Rule-based labeling of normal periods and symptom-worsening episodes.

A normal period is a maximal run of consecutive assessments (neighbors at
most ``max_gap_days`` apart) where every PHQ-8 and GAD-7 score is below
the threshold, the run spans at least ``min_span_days``, contains at
least ``min_assessments`` assessments, and does not overlap any COVID
exclusion interval. An episode is an assessment outside the normal
period whose score exceeds the period mean by at least the threshold;
its anomalous window runs from 21 days before to 14 days after the
assessment date.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .cohort import Assessment, CovidEvent, Participant

CATEGORY_BOTH = "BOTH"
CATEGORY_PHQ = "PHQ_only"
CATEGORY_GAD = "GAD_only"
CATEGORIES = (CATEGORY_BOTH, CATEGORY_PHQ, CATEGORY_GAD)

MAGNITUDE_NONE = "none"
MAGNITUDE_5_9 = "d5_9"
MAGNITUDE_10_PLUS = "d10_plus"
MAGNITUDES = (MAGNITUDE_5_9, MAGNITUDE_10_PLUS)

LABEL_NORMAL = "normal_eligible"
LABEL_ANOMALOUS = "anomalous"
LABEL_AMBIGUOUS = "ambiguous"

# Anomalous window extent around an episode's assessment date.
EPISODE_DAYS_BEFORE = 21
EPISODE_DAYS_AFTER = 14

# COVID exclusion extent around a reported infection date.
COVID_DAYS_BEFORE = 7
COVID_DAYS_AFTER = 21

SCORE_THRESHOLD = 5.0
MIN_SPAN_DAYS = 56
MIN_ASSESSMENTS = 4
MAX_GAP_DAYS = 21


@dataclass(frozen=True)
class CovidExclusion:
    start: dt.date
    end: dt.date


@dataclass(frozen=True)
class NormalPeriod:
    participant_id: str
    start_date: dt.date
    end_date: dt.date
    assessment_count: int
    mean_phq8: float
    mean_gad7: float

    @property
    def span_days(self) -> int:
        return (self.end_date - self.start_date).days


@dataclass(frozen=True)
class Episode:
    participant_id: str
    assessment_date: dt.date
    category: str
    phq_delta: float
    gad_delta: float
    magnitude_phq: str
    magnitude_gad: str
    period_start: dt.date
    period_end: dt.date

    @property
    def episode_id(self) -> str:
        return f"{self.participant_id}:{self.assessment_date.isoformat()}"


def covid_exclusions(events: list[CovidEvent], *,
                     days_before: int = COVID_DAYS_BEFORE,
                     days_after: int = COVID_DAYS_AFTER) -> list[CovidExclusion]:
    """One exclusion interval per event; overlapping intervals merged."""
    intervals = sorted(
        (ev.report_date - dt.timedelta(days=days_before),
         ev.report_date + dt.timedelta(days=days_after))
        for ev in events
    )
    merged: list[CovidExclusion] = []
    for start, end in intervals:
        if merged and start <= merged[-1].end:
            if end > merged[-1].end:
                merged[-1] = CovidExclusion(merged[-1].start, end)
        else:
            merged.append(CovidExclusion(start, end))
    return merged


def find_normal_periods(participant_id: str, assessments: list[Assessment],
                        exclusions: list[CovidExclusion], *,
                        score_threshold: float = SCORE_THRESHOLD,
                        min_span_days: int = MIN_SPAN_DAYS,
                        min_assessments: int = MIN_ASSESSMENTS,
                        max_gap_days: int = MAX_GAP_DAYS) -> list[NormalPeriod]:
    """All qualifying normal periods, in date order.

    Assessments must be date-ordered. A run breaks on any score at or
    above the threshold or on a gap above ``max_gap_days``; runs
    overlapping an exclusion are dropped entirely.
    """
    periods: list[NormalPeriod] = []
    run: list[Assessment] = []

    def flush():
        if len(run) < min_assessments:
            return
        start, end = run[0].date, run[-1].date
        if (end - start).days < min_span_days:
            return
        for excl in exclusions:
            if start <= excl.end and end >= excl.start:
                return
        periods.append(NormalPeriod(
            participant_id=participant_id,
            start_date=start,
            end_date=end,
            assessment_count=len(run),
            mean_phq8=sum(a.phq8 for a in run) / len(run),
            mean_gad7=sum(a.gad7 for a in run) / len(run),
        ))

    for a in assessments:
        low = a.phq8 < score_threshold and a.gad7 < score_threshold
        if run and (not low or (a.date - run[-1].date).days > max_gap_days):
            flush()
            run = []
        if low:
            run.append(a)
    flush()
    return periods


def _magnitude(delta: float, threshold: float) -> str:
    if delta >= threshold + 5.0:
        return MAGNITUDE_10_PLUS
    if delta >= threshold:
        return MAGNITUDE_5_9
    return MAGNITUDE_NONE


def find_episodes(assessments: list[Assessment], baseline: NormalPeriod, *,
                  score_threshold: float = SCORE_THRESHOLD) -> list[Episode]:
    """Episodes relative to one baseline period.

    One episode per assessment outside ``[baseline.start_date,
    baseline.end_date]`` whose PHQ-8 or GAD-7 exceeds the corresponding
    baseline mean by at least the threshold. Boundary dates count as
    inside the period.
    """
    episodes = []
    for a in assessments:
        if baseline.start_date <= a.date <= baseline.end_date:
            continue
        phq_delta = a.phq8 - baseline.mean_phq8
        gad_delta = a.gad7 - baseline.mean_gad7
        phq_hit = phq_delta >= score_threshold
        gad_hit = gad_delta >= score_threshold
        if not (phq_hit or gad_hit):
            continue
        category = CATEGORY_BOTH if (phq_hit and gad_hit) else (
            CATEGORY_PHQ if phq_hit else CATEGORY_GAD)
        episodes.append(Episode(
            participant_id=baseline.participant_id,
            assessment_date=a.date,
            category=category,
            phq_delta=phq_delta,
            gad_delta=gad_delta,
            magnitude_phq=_magnitude(phq_delta, score_threshold) if phq_hit else MAGNITUDE_NONE,
            magnitude_gad=_magnitude(gad_delta, score_threshold) if gad_hit else MAGNITUDE_NONE,
            period_start=a.date - dt.timedelta(days=EPISODE_DAYS_BEFORE),
            period_end=a.date + dt.timedelta(days=EPISODE_DAYS_AFTER),
        ))
    return episodes


def participant_episodes(assessments: list[Assessment],
                         periods: list[NormalPeriod], *,
                         score_threshold: float = SCORE_THRESHOLD) -> list[Episode]:
    """Episodes for a participant with one or more normal periods.

    Each assessment is scored against the nearest preceding normal
    period; assessments earlier than every period fall back to the
    earliest one. Participants without a normal period have no episodes.
    """
    if not periods:
        return []
    episodes = []
    for a in assessments:
        if any(p.start_date <= a.date <= p.end_date for p in periods):
            continue
        preceding = [p for p in periods if p.end_date < a.date]
        baseline = preceding[-1] if preceding else periods[0]
        episodes.extend(find_episodes([a], baseline, score_threshold=score_threshold))
    return episodes


@dataclass
class DayLabels:
    """Per-day labels over a contiguous calendar range."""

    participant_id: str
    start_date: dt.date
    labels: np.ndarray              # dtype '<U15', one per day
    episode_ids: list[list[str]]    # covering episode ids per day

    def __len__(self) -> int:
        return len(self.labels)

    def date(self, i: int) -> dt.date:
        return self.start_date + dt.timedelta(days=i)

    def label_at(self, date: dt.date) -> str:
        i = (date - self.start_date).days
        if not 0 <= i < len(self.labels):
            return LABEL_AMBIGUOUS
        return str(self.labels[i])


def day_labels(participant_id: str, episodes: list[Episode],
               periods: list[NormalPeriod], start: dt.date, end: dt.date) -> DayLabels:
    """Partition [start, end] into anomalous / normal_eligible / ambiguous.

    Anomalous wins over normal_eligible wherever an episode window
    overlaps a normal period. Days covered by several episodes are
    attributed to each of them.
    """
    n = (end - start).days + 1
    if n <= 0:
        raise ValueError("end date precedes start date")
    labels = np.full(n, LABEL_AMBIGUOUS, dtype="<U15")
    ids: list[list[str]] = [[] for _ in range(n)]
    for p in periods:
        lo = max(0, (p.start_date - start).days)
        hi = min(n - 1, (p.end_date - start).days)
        if lo <= hi:
            labels[lo:hi + 1] = LABEL_NORMAL
    for e in episodes:
        lo = max(0, (e.period_start - start).days)
        hi = min(n - 1, (e.period_end - start).days)
        if lo <= hi:
            labels[lo:hi + 1] = LABEL_ANOMALOUS
            eid = e.episode_id
            for i in range(lo, hi + 1):
                ids[i].append(eid)
    return DayLabels(participant_id, start, labels, ids)


def label_participant(participant: Participant, *,
                      score_threshold: float = SCORE_THRESHOLD,
                      min_span_days: int = MIN_SPAN_DAYS,
                      min_assessments: int = MIN_ASSESSMENTS,
                      max_gap_days: int = MAX_GAP_DAYS,
                      covid_days_before: int = COVID_DAYS_BEFORE,
                      covid_days_after: int = COVID_DAYS_AFTER):
    """Full labeling for one participant.

    Returns ``(normal_periods, episodes)``; day labels are derived
    separately once the calendar range of interest is known.
    """
    exclusions = covid_exclusions(
        participant.covid_events, days_before=covid_days_before, days_after=covid_days_after)
    periods = find_normal_periods(
        participant.id, participant.assessments, exclusions,
        score_threshold=score_threshold, min_span_days=min_span_days,
        min_assessments=min_assessments, max_gap_days=max_gap_days)
    episodes = participant_episodes(
        participant.assessments, periods, score_threshold=score_threshold)
    return periods, episodes
