"""Seeded synthetic cohorts with known normal periods and episodes.

Each participant gets a biweekly assessment schedule: a block of
low-score assessments forming exactly one normal period, optionally one
symptom-worsening episode afterwards (scores generated backward from a
target delta against the realized block mean), and a short low-score
tail that is too small to form a second period. During an episode's
anomalous window the daily feature targets are shifted by the category's
effect profile with a linear onset/offset ramp. Minute streams (diurnal
heart rate, daytime step bouts, an overnight sleep block) realize the
daily targets, with configurable missingness and occasional bad days to
exercise the quality gate.

Generation is per-participant deterministic: participant ``i`` uses a
generator seeded by ``(seed, i)``, so cohort files are bitwise
reproducible for a fixed config.
"""

from __future__ import annotations

import datetime as dt
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .cohort import GAD7_MAX, PHQ8_MAX, Cohort, parse_cohort
from .labeling import (CATEGORY_BOTH, CATEGORY_GAD, CATEGORY_PHQ,
                       EPISODE_DAYS_AFTER, EPISODE_DAYS_BEFORE,
                       MAGNITUDE_10_PLUS, MAGNITUDE_5_9, MAGNITUDE_NONE,
                       Episode, NormalPeriod)

_SCALE_MAX = {"phq8": PHQ8_MAX, "gad7": GAD7_MAX}

# Fixed weekly shape (Mon..Sun), scaled by ScenarioConfig.weekly_amplitude.
_WEEK_STEPS_FRAC = (0.05, 0.02, 0.00, 0.02, 0.05, -0.10, -0.12)
_WEEK_SLEEP_MIN = (-8.0, -8.0, -8.0, -6.0, -4.0, 22.0, 18.0)
_WEEK_RHR_BPM = (0.3, 0.3, 0.2, 0.2, 0.3, -0.5, -0.7)

_SLEEP_STAGE_CYCLE = ("light",) * 25 + ("deep",) * 20 + ("light",) * 10 + ("rem",) * 15


@dataclass
class EffectProfile:
    """Daily feature changes applied inside an anomalous window.

    Level shifts come with irregularity: the ``*_jitter`` terms multiply
    the day-to-day residual noise of each feature (disturbed, erratic
    sleep and unstable resting heart rate), which is what makes the
    windows hard to reconstruct for a model trained on stable periods.
    """

    rhr_bpm: float
    steps_frac: float
    sleep_minutes: float
    sleep_jitter: float = 4.0
    steps_jitter: float = 2.0
    rhr_jitter: float = 3.0
    onset_ramp_days: int = 5
    offset_ramp_days: int = 5

    def to_dict(self) -> dict:
        return {"rhr_bpm": self.rhr_bpm, "steps_frac": self.steps_frac,
                "sleep_minutes": self.sleep_minutes,
                "sleep_jitter": self.sleep_jitter,
                "steps_jitter": self.steps_jitter,
                "rhr_jitter": self.rhr_jitter,
                "onset_ramp_days": self.onset_ramp_days,
                "offset_ramp_days": self.offset_ramp_days}


def _default_effects() -> dict:
    return {
        CATEGORY_BOTH: EffectProfile(rhr_bpm=8.0, steps_frac=-0.45, sleep_minutes=-60.0,
                                     sleep_jitter=5.0, steps_jitter=2.5, rhr_jitter=3.5),
        CATEGORY_PHQ: EffectProfile(rhr_bpm=6.0, steps_frac=-0.35, sleep_minutes=-45.0),
        CATEGORY_GAD: EffectProfile(rhr_bpm=6.0, steps_frac=-0.35, sleep_minutes=-45.0),
    }


def _default_baselines() -> dict:
    return {
        "sleep_minutes": {"mean": 430.0, "sd": 40.0},
        "total_steps": {"mean": 8500.0, "sd": 2000.0},
        "resting_hr": {"mean": 62.0, "sd": 6.0},
    }


def _default_daily_noise() -> dict:
    return {"sleep_minutes": 12.0, "total_steps": 450.0, "resting_hr": 0.7}


def _default_day_factor() -> dict:
    # smooth "good day / bad day" factor: more activity and sleep, slightly
    # lower resting heart rate on good days
    return {"phi": 0.7,
            "loadings": {"sleep_minutes": 18.0, "total_steps": 900.0, "resting_hr": -0.9}}


@dataclass
class ScenarioConfig:
    participants: int = 200
    days: int = 180
    assessment_cadence_days: int = 14
    start_date: str = "2021-01-04"
    seed: int = 42
    episode_rate: float = 0.3
    covid_rate: float = 0.04
    category_mix: dict = field(default_factory=lambda: {
        CATEGORY_BOTH: 0.34, CATEGORY_PHQ: 0.33, CATEGORY_GAD: 0.33})
    magnitude_mix: dict = field(default_factory=lambda: {
        MAGNITUDE_5_9: 0.4, MAGNITUDE_10_PLUS: 0.6})
    effects: dict = field(default_factory=_default_effects)
    d10_effect_scale: float = 1.25
    baselines: dict = field(default_factory=_default_baselines)
    daily_noise: dict = field(default_factory=_default_daily_noise)
    day_factor: dict = field(default_factory=_default_day_factor)
    weekly_amplitude: float = 1.0
    missing_minute_rate: float = 0.04
    bad_day_rate: float = 0.02

    def validate(self) -> None:
        if self.participants < 1 or self.days < 1:
            raise ValueError("participants and days must be positive")
        if not 1 <= self.assessment_cadence_days <= 21:
            raise ValueError(
                "assessment cadence must be in [1, 21] days so consecutive "
                "assessments satisfy the labeling gap rule")
        for name, rate in (("episode_rate", self.episode_rate),
                           ("covid_rate", self.covid_rate),
                           ("missing_minute_rate", self.missing_minute_rate),
                           ("bad_day_rate", self.bad_day_rate)):
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")

    def to_dict(self) -> dict:
        d = {
            "participants": self.participants,
            "days": self.days,
            "assessment_cadence_days": self.assessment_cadence_days,
            "start_date": self.start_date,
            "seed": self.seed,
            "episode_rate": self.episode_rate,
            "covid_rate": self.covid_rate,
            "category_mix": dict(self.category_mix),
            "magnitude_mix": dict(self.magnitude_mix),
            "effects": {k: v.to_dict() for k, v in self.effects.items()},
            "d10_effect_scale": self.d10_effect_scale,
            "baselines": {k: dict(v) for k, v in self.baselines.items()},
            "daily_noise": dict(self.daily_noise),
            "day_factor": {"phi": self.day_factor["phi"],
                           "loadings": dict(self.day_factor["loadings"])},
            "weekly_amplitude": self.weekly_amplitude,
            "missing_minute_rate": self.missing_minute_rate,
            "bad_day_rate": self.bad_day_rate,
        }
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ScenarioConfig":
        kwargs = dict(d)
        if "effects" in kwargs:
            kwargs["effects"] = {k: EffectProfile(**v) for k, v in kwargs["effects"].items()}
        return cls(**kwargs)


@dataclass
class GroundTruth:
    """Injected structure, expressed in the labeling module's own types."""

    normal_periods: dict[str, list[NormalPeriod]] = field(default_factory=dict)
    episodes: dict[str, list[Episode]] = field(default_factory=dict)

    def all_episodes(self) -> list[Episode]:
        return [e for eps in self.episodes.values() for e in eps]

    def to_dict(self) -> dict:
        return {
            "normal_periods": {
                pid: [{
                    "start_date": p.start_date.isoformat(),
                    "end_date": p.end_date.isoformat(),
                    "assessment_count": p.assessment_count,
                    "mean_phq8": p.mean_phq8,
                    "mean_gad7": p.mean_gad7,
                } for p in periods]
                for pid, periods in self.normal_periods.items()
            },
            "episodes": {
                pid: [{
                    "assessment_date": e.assessment_date.isoformat(),
                    "category": e.category,
                    "phq_delta": e.phq_delta,
                    "gad_delta": e.gad_delta,
                    "magnitude_phq": e.magnitude_phq,
                    "magnitude_gad": e.magnitude_gad,
                    "period_start": e.period_start.isoformat(),
                    "period_end": e.period_end.isoformat(),
                } for e in eps]
                for pid, eps in self.episodes.items()
            },
        }


def _weighted_choice(rng: np.random.Generator, mix: dict) -> str:
    keys = sorted(mix)
    weights = np.array([mix[k] for k in keys], dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise ValueError("choice weights must sum to a positive value")
    return keys[int(rng.choice(len(keys), p=weights / total))]


def _episode_score(rng: np.random.Generator, mean: float, magnitude: str, scale: str) -> int:
    """Integer score realizing the requested delta bucket against ``mean``."""
    if magnitude == MAGNITUDE_5_9:
        lo = math.ceil(mean + 5.0)
        hi = math.ceil(mean + 10.0) - 1
    else:
        lo = math.ceil(mean + 10.0)
        hi = min(_SCALE_MAX[scale], lo + 4)
    if hi < lo or hi > _SCALE_MAX[scale]:
        raise ValueError(f"cannot realize {magnitude} delta on {scale} with mean {mean}")
    return int(rng.integers(lo, hi + 1))


def _calm_score(rng: np.random.Generator, mean: float) -> int:
    """Score that stays below the episode threshold against ``mean``."""
    hi = min(math.ceil(mean + 5.0) - 1, 9)
    return int(rng.integers(0, max(hi, 0) + 1))


@dataclass
class _EpisodePlan:
    day: int
    category: str
    magnitude_phq: str
    magnitude_gad: str
    effect: EffectProfile
    effect_scale: float

    @property
    def window(self) -> tuple[int, int]:
        return self.day - EPISODE_DAYS_BEFORE, self.day + EPISODE_DAYS_AFTER


def _plan_participant(cfg: ScenarioConfig, rng: np.random.Generator,
                      has_episode: bool, has_covid: bool):
    """Assessment days, scores, episode plan, covid day, recorded range."""
    cadence = cfg.assessment_cadence_days
    # smallest block spanning >= 56 days, occasionally one assessment longer
    k_min = math.ceil(56 / cadence) + 1
    k = k_min if cfg.days < 150 else k_min + int(rng.integers(0, 2))
    if has_episode:
        a0_max = cfg.days - 1 - (cadence * k + EPISODE_DAYS_AFTER + 7)
        if a0_max < 0:
            raise ValueError(
                f"config demands episodes but {cfg.days} days cannot schedule one "
                f"(need at least {cadence * k + EPISODE_DAYS_AFTER + 8})")
    else:
        a0_max = cfg.days - 1 - (cadence * (k - 1) + 2)
        if a0_max < 0:
            raise ValueError(
                f"{cfg.days} days cannot fit a normal period "
                f"(need at least {cadence * (k - 1) + 3})")
    a0 = int(rng.integers(0, min(13, a0_max) + 1))

    phq = list(rng.integers(0, 5, size=k))
    gad = list(rng.integers(0, 5, size=k))
    mean_phq = sum(phq) / k
    mean_gad = sum(gad) / k
    days = [a0 + cadence * i for i in range(k)]

    plan = None
    if has_episode:
        episode_day = a0 + cadence * k
        category = _weighted_choice(rng, cfg.category_mix)
        mag_phq = _weighted_choice(rng, cfg.magnitude_mix) if category != CATEGORY_GAD else MAGNITUDE_NONE
        mag_gad = _weighted_choice(rng, cfg.magnitude_mix) if category != CATEGORY_PHQ else MAGNITUDE_NONE
        s_phq = (_episode_score(rng, mean_phq, mag_phq, "phq8")
                 if mag_phq != MAGNITUDE_NONE else _calm_score(rng, mean_phq))
        s_gad = (_episode_score(rng, mean_gad, mag_gad, "gad7")
                 if mag_gad != MAGNITUDE_NONE else _calm_score(rng, mean_gad))
        days.append(episode_day)
        phq.append(s_phq)
        gad.append(s_gad)
        # short low-score tail: breaks nothing, too small to form a period
        tail_day = episode_day + cadence
        days.append(tail_day)
        phq.append(int(rng.integers(0, 5)))
        gad.append(int(rng.integers(0, 5)))
        effect = cfg.effects[category]
        scale = cfg.d10_effect_scale if MAGNITUDE_10_PLUS in (mag_phq, mag_gad) else 1.0
        plan = _EpisodePlan(episode_day, category, mag_phq, mag_gad, effect, scale)
        record_end = min(cfg.days - 1, episode_day + EPISODE_DAYS_AFTER + 7)
    else:
        record_end = min(cfg.days - 1, days[-1] + 2)

    covid_day = None
    if has_covid:
        if has_episode:
            covid_day = plan.day + int(rng.integers(0, 8))
        else:
            # mid-period report: the exclusion window kills the normal period
            covid_day = a0 + 28 + int(rng.integers(-4, 5))

    normal = {
        "start": a0, "end": a0 + cadence * (k - 1), "count": k,
        "mean_phq8": float(mean_phq), "mean_gad7": float(mean_gad),
        "killed_by_covid": has_covid and not has_episode,
    }
    return days, phq, gad, plan, covid_day, (a0, record_end), normal


def _daily_targets(cfg: ScenarioConfig, rng: np.random.Generator, base: dict,
                   day_range: range, dows: np.ndarray,
                   plan: _EpisodePlan | None) -> np.ndarray:
    """Target (sleep, steps, resting-hr) per recorded day.

    Normal variation is a smooth AR(1) day factor plus a weekly shape and
    a small iid residue; episode windows add the category's effect
    profile with linear onset/offset ramps.
    """
    n = len(day_range)
    amp = cfg.weekly_amplitude
    noise = cfg.daily_noise
    phi = float(cfg.day_factor["phi"])
    loadings = cfg.day_factor["loadings"]

    w = np.empty(n)
    innov = rng.normal(0.0, 1.0, size=n)
    w[0] = innov[0]
    scale = math.sqrt(max(1.0 - phi * phi, 0.0))
    for i in range(1, n):
        w[i] = phi * w[i - 1] + scale * innov[i]

    resid = rng.normal(0.0, 1.0, size=(n, 3))
    ramp = np.zeros(n)
    if plan is not None:
        lo, hi = plan.window
        for i, day in enumerate(day_range):
            if lo <= day <= hi:
                pos = day - lo
                r = min(1.0, (pos + 1) / max(plan.effect.onset_ramp_days, 1),
                        (hi - day + 1) / max(plan.effect.offset_ramp_days, 1))
                ramp[i] = r * plan.effect_scale
    eff = plan.effect if plan is not None else None

    def jitter(mult: float) -> np.ndarray:
        return 1.0 + (mult - 1.0) * ramp

    sleep = (base["sleep_minutes"] + amp * np.asarray(_WEEK_SLEEP_MIN)[dows]
             + loadings["sleep_minutes"] * w
             + noise["sleep_minutes"] * resid[:, 0] * (jitter(eff.sleep_jitter) if eff else 1.0))
    steps = (base["total_steps"] * (1 + amp * np.asarray(_WEEK_STEPS_FRAC)[dows])
             + loadings["total_steps"] * w
             + noise["total_steps"] * resid[:, 1] * (jitter(eff.steps_jitter) if eff else 1.0))
    rhr = (base["resting_hr"] + amp * np.asarray(_WEEK_RHR_BPM)[dows]
           + loadings["resting_hr"] * w
           + noise["resting_hr"] * resid[:, 2] * (jitter(eff.rhr_jitter) if eff else 1.0))
    if eff is not None:
        sleep += ramp * eff.sleep_minutes
        steps *= 1.0 + ramp * eff.steps_frac
        rhr += ramp * eff.rhr_bpm

    out = np.empty((n, 3))
    out[:, 0] = np.clip(sleep, 120.0, 720.0)
    out[:, 1] = np.clip(steps, 200.0, 40000.0)
    out[:, 2] = np.clip(rhr, 35.0, 180.0)
    return out


def _day_lines(pid_json: str, date_str: str, rng: np.random.Generator,
               sleep_target: float, steps_target: float, rhr_target: float,
               missing_rate: float) -> list[str]:
    """Minute records for one day realizing the daily targets."""
    mins = 1440
    steps = np.zeros(mins, dtype=np.int64)
    stage = np.zeros(mins, dtype=np.int64)  # 0 none; 1 awake; 2 light; 3 deep; 4 rem

    dur = int(round(sleep_target))
    onset = int(rng.integers(0, 40))
    n_awake = max(1, int(0.06 * dur))
    span = min(dur + n_awake, 900 - onset)
    n_awake = span - dur
    if n_awake < 0:
        dur = span
        n_awake = 0
    cycle = _SLEEP_STAGE_CYCLE
    codes = {"awake": 1, "light": 2, "deep": 3, "rem": 4}
    stage[onset:onset + span] = [codes[cycle[i % len(cycle)]] for i in range(span)]
    if n_awake > 0:
        awake_pos = rng.choice(span, size=n_awake, replace=False)
        stage[onset + awake_pos] = 1

    wake_idx = np.arange(onset + span, mins)
    n_active = min(max(1, int(round(steps_target / 65.0))), wake_idx.size)
    active = rng.choice(wake_idx, size=n_active, replace=False)
    vals = rng.integers(40, 95, size=n_active).astype(np.float64)
    vals = np.maximum(np.round(vals * steps_target / vals.sum()), 0)
    steps[active] = vals.astype(np.int64)

    hr = np.full(mins, rhr_target)
    hr[onset:onset + span] -= 4.0
    hr[wake_idx] += 3.0
    hr[active] += rng.integers(18, 40, size=n_active)
    hr = np.round(hr + rng.normal(0, 2.5, size=mins))
    hr = np.clip(hr, 30, 200).astype(np.int64)

    hr_missing = rng.random(mins) < missing_rate
    steps_missing = rng.random(mins) < missing_rate

    stage_strs = ("null", '"awake"', '"light"', '"deep"', '"rem"')
    hr_l = hr.tolist()
    steps_l = steps.tolist()
    stage_l = stage.tolist()
    hm_l = hr_missing.tolist()
    sm_l = steps_missing.tolist()
    lines = []
    append = lines.append
    prefix = f'{{"kind": "minute", "participant_id": {pid_json}, "date": "{date_str}", "minute": '
    for m in range(mins):
        st = stage_l[m]
        sm = sm_l[m]
        if hm_l[m]:
            if sm and st == 0:
                continue
            hr_s = "null"
        else:
            hr_s = f"{hr_l[m]}.0"
        append(f'{prefix}{m}, "heart_rate": {hr_s}, "steps": {"null" if sm else steps_l[m]}, '
               f'"sleep_stage": {stage_strs[st]}}}')
    return lines


def _participant_records(cfg: ScenarioConfig, idx: int, has_episode: bool,
                         has_covid: bool, truth: GroundTruth):
    """Yield this participant's JSONL lines, appending their ground truth."""
    pid = f"p{idx:04d}"
    pid_json = f'"{pid}"'
    rng = np.random.default_rng([cfg.seed, 7, idx])
    start = dt.date.fromisoformat(cfg.start_date)

    days, phq, gad, plan, covid_day, (rec_start, rec_end), normal = _plan_participant(
        cfg, rng, has_episode, has_covid)

    lines = [f'{{"kind": "participant_meta", "participant_id": {pid_json}}}']
    if covid_day is not None:
        date = (start + dt.timedelta(days=covid_day)).isoformat()
        lines.append(f'{{"kind": "covid", "participant_id": {pid_json}, "date": "{date}"}}')
    for day, p, g in zip(days, phq, gad):
        date = (start + dt.timedelta(days=day)).isoformat()
        lines.append(f'{{"kind": "assessment", "participant_id": {pid_json}, '
                     f'"date": "{date}", "phq8": {int(p)}, "gad7": {int(g)}}}')

    base = {name: float(np.clip(
        rng.normal(cfg.baselines[name]["mean"], cfg.baselines[name]["sd"]),
        *{"sleep_minutes": (240, 600), "total_steps": (2500, 20000), "resting_hr": (45, 90)}[name]))
        for name in ("sleep_minutes", "total_steps", "resting_hr")}

    day_range = range(rec_start, rec_end + 1)
    start_dow = (start + dt.timedelta(days=rec_start)).weekday()
    dows = (start_dow + np.arange(len(day_range))) % 7
    targets = _daily_targets(cfg, rng, base, day_range, dows, plan)
    for i, day in enumerate(day_range):
        date = start + dt.timedelta(days=day)
        bad = rng.random() < cfg.bad_day_rate
        rate = 0.35 if bad else cfg.missing_minute_rate
        lines.extend(_day_lines(pid_json, date.isoformat(), rng,
                                targets[i, 0], targets[i, 1], targets[i, 2], rate))

    if normal["killed_by_covid"]:
        truth.normal_periods[pid] = []
        truth.episodes[pid] = []
    else:
        truth.normal_periods[pid] = [NormalPeriod(
            participant_id=pid,
            start_date=start + dt.timedelta(days=normal["start"]),
            end_date=start + dt.timedelta(days=normal["end"]),
            assessment_count=normal["count"],
            mean_phq8=normal["mean_phq8"],
            mean_gad7=normal["mean_gad7"],
        )]
        episodes = []
        if plan is not None:
            a_date = start + dt.timedelta(days=plan.day)
            phq_delta = float(phq[normal["count"]] - normal["mean_phq8"])
            gad_delta = float(gad[normal["count"]] - normal["mean_gad7"])
            episodes.append(Episode(
                participant_id=pid,
                assessment_date=a_date,
                category=plan.category,
                phq_delta=phq_delta,
                gad_delta=gad_delta,
                magnitude_phq=plan.magnitude_phq,
                magnitude_gad=plan.magnitude_gad,
                period_start=a_date - dt.timedelta(days=EPISODE_DAYS_BEFORE),
                period_end=a_date + dt.timedelta(days=EPISODE_DAYS_AFTER),
            ))
        truth.episodes[pid] = episodes
    return lines


def _participant_flags(cfg: ScenarioConfig) -> tuple[np.ndarray, np.ndarray]:
    rng = np.random.default_rng([cfg.seed, 3])
    episode_flags = rng.random(cfg.participants) < cfg.episode_rate
    covid_flags = rng.random(cfg.participants) < cfg.covid_rate
    return episode_flags, covid_flags


def iter_cohort_lines(cfg: ScenarioConfig, truth: GroundTruth):
    """Generate all cohort lines in canonical participant order."""
    cfg.validate()
    episode_flags, covid_flags = _participant_flags(cfg)
    for idx in range(cfg.participants):
        yield from _participant_records(
            cfg, idx, bool(episode_flags[idx]), bool(covid_flags[idx]), truth)


def write_cohort_jsonl(cfg: ScenarioConfig, path) -> GroundTruth:
    """Stream a scenario to disk; returns its ground truth."""
    cfg.validate()
    truth = GroundTruth()
    episode_flags, covid_flags = _participant_flags(cfg)
    with open(path, "w", encoding="utf-8") as fh:
        for idx in range(cfg.participants):
            lines = _participant_records(
                cfg, idx, bool(episode_flags[idx]), bool(covid_flags[idx]), truth)
            lines.append("")
            fh.write("\n".join(lines))
    return truth


def generate_cohort(cfg: ScenarioConfig) -> tuple[Cohort, GroundTruth]:
    """In-memory scenario: the generated lines are fed through the parser."""
    truth = GroundTruth()
    cohort = parse_cohort(iter_cohort_lines(cfg, truth))
    return cohort, truth


def save_ground_truth(truth: GroundTruth, cfg: ScenarioConfig, path, *,
                      provenance: dict | None = None) -> None:
    doc = {"scenario": cfg.to_dict(), **truth.to_dict()}
    if provenance:
        doc.update(provenance)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
