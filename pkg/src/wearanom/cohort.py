"""Cohort domain model, JSONL ingestion, validation, and persistence.

A cohort file is UTF-8 JSONL, one record per line, discriminated by a
``kind`` field:

    minute            one per-minute sensor sample
    assessment        biweekly PHQ-8 / GAD-7 scores
    covid             a reported COVID-19 infection date
    participant_meta  declares a participant id

Fields are drawn from: kind, participant_id, date (ISO-8601), minute
(minute records only), heart_rate, steps, sleep_stage, phq8, gad7.
Missing sensor values are explicit nulls (steps=0 is real data, not a
sentinel). Minute streams are held column-wise per participant so that
multi-million-record cohorts stay cheap to load and share; a loaded
Cohort is immutable by convention and safe to read from many threads.
"""

from __future__ import annotations

import datetime as dt
import json
import math
import re
from array import array
from dataclasses import dataclass, field

import numpy as np

# Sleep stage codes used in the columnar minute store. "none" means the
# device reported no stage for that minute (distinct from "awake").
STAGE_NONE = 0
STAGE_AWAKE = 1
STAGE_LIGHT = 2
STAGE_DEEP = 3
STAGE_REM = 4

STAGE_NAMES = ("none", "awake", "light", "deep", "rem")
STAGE_CODES = {name: code for code, name in enumerate(STAGE_NAMES)}
ASLEEP_CODES = (STAGE_LIGHT, STAGE_DEEP, STAGE_REM)

# Plausibility bounds for heart rate (exclusive). Breaches are warnings
# unless the parser runs in strict mode.
HR_MIN = 20.0
HR_MAX = 250.0

PHQ8_MAX = 24
GAD7_MAX = 21

MINUTES_PER_DAY = 1440

_MISSING_STEPS = -1  # internal sentinel in the int32 steps column


class CohortFormatError(ValueError):
    """Raised for a malformed cohort stream; names line and field."""

    def __init__(self, line: int | None, fld: str, message: str):
        self.line = line
        self.field = fld
        where = f"line {line}, " if line is not None else ""
        super().__init__(f"{where}field '{fld}': {message}")


@dataclass(frozen=True)
class ParseWarning:
    line: int
    field: str
    message: str


@dataclass(frozen=True)
class MinuteRecord:
    """One per-minute sensor sample (row view of a MinuteSeries)."""

    date: dt.date
    minute: int
    heart_rate: float | None
    steps: int | None
    sleep_stage: str


@dataclass(frozen=True)
class Assessment:
    date: dt.date
    phq8: int
    gad7: int


@dataclass(frozen=True)
class CovidEvent:
    report_date: dt.date


class MinuteSeries:
    """Time-ordered minute records for one participant, stored as columns.

    ``heart_rate`` uses NaN for missing, ``steps`` uses -1; the row view
    (:meth:`record`) translates back to ``None``.
    """

    __slots__ = ("dates", "minutes", "heart_rate", "steps", "sleep_stage")

    def __init__(self, dates, minutes, heart_rate, steps, sleep_stage):
        self.dates = np.asarray(dates, dtype=np.int64)  # proleptic ordinals
        self.minutes = np.asarray(minutes, dtype=np.int16)
        self.heart_rate = np.asarray(heart_rate, dtype=np.float64)
        self.steps = np.asarray(steps, dtype=np.int32)
        self.sleep_stage = np.asarray(sleep_stage, dtype=np.int8)

    @classmethod
    def empty(cls) -> "MinuteSeries":
        return cls([], [], [], [], [])

    def __len__(self) -> int:
        return len(self.dates)

    def record(self, i: int) -> MinuteRecord:
        hr = float(self.heart_rate[i])
        steps = int(self.steps[i])
        return MinuteRecord(
            date=dt.date.fromordinal(int(self.dates[i])),
            minute=int(self.minutes[i]),
            heart_rate=None if np.isnan(hr) else hr,
            steps=None if steps == _MISSING_STEPS else steps,
            sleep_stage=STAGE_NAMES[int(self.sleep_stage[i])],
        )

    def __iter__(self):
        return (self.record(i) for i in range(len(self)))

    def __eq__(self, other) -> bool:
        if not isinstance(other, MinuteSeries):
            return NotImplemented
        return (
            np.array_equal(self.dates, other.dates)
            and np.array_equal(self.minutes, other.minutes)
            and np.array_equal(self.heart_rate, other.heart_rate, equal_nan=True)
            and np.array_equal(self.steps, other.steps)
            and np.array_equal(self.sleep_stage, other.sleep_stage)
        )


@dataclass
class Participant:
    id: str
    minutes: MinuteSeries = field(default_factory=MinuteSeries.empty)
    assessments: list[Assessment] = field(default_factory=list)
    covid_events: list[CovidEvent] = field(default_factory=list)


@dataclass
class Cohort:
    participants: list[Participant] = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def participant(self, pid: str) -> Participant:
        for p in self.participants:
            if p.id == pid:
                return p
        raise KeyError(pid)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        return self.participants == other.participants and self.metadata == other.metadata


@dataclass(frozen=True)
class Violation:
    participant_id: str
    location: str
    message: str


@dataclass
class ValidationReport:
    participants: int = 0
    assessments: int = 0
    minute_records: int = 0
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


class _ParticipantBuffer:
    """Append-only column buffers filled during parsing."""

    __slots__ = ("dates", "minutes", "heart_rate", "steps", "sleep_stage",
                 "assessments", "covid_events", "declared")

    def __init__(self):
        self.dates = array("q")
        self.minutes = array("h")
        self.heart_rate = array("d")
        self.steps = array("i")
        self.sleep_stage = array("b")
        self.assessments: list[Assessment] = []
        self.covid_events: list[CovidEvent] = []
        self.declared = False


def _parse_date(value, line: int, cache: dict) -> int:
    ordinal = cache.get(value)
    if ordinal is None:
        if not isinstance(value, str):
            raise CohortFormatError(line, "date", "expected ISO-8601 date string")
        try:
            ordinal = dt.date.fromisoformat(value).toordinal()
        except ValueError:
            raise CohortFormatError(line, "date", f"invalid ISO-8601 date {value!r}") from None
        cache[value] = ordinal
    return ordinal


_MINUTE_PREFIX = '{"kind": "minute", "participant_id": "'

_ALLOWED_KEYS = {
    "minute": {"kind", "participant_id", "date", "minute", "heart_rate", "steps", "sleep_stage"},
    "assessment": {"kind", "participant_id", "date", "phq8", "gad7"},
    "covid": {"kind", "participant_id", "date"},
    "participant_meta": {"kind", "participant_id"},
}

# Canonical minute line as emitted by this package's serializers. Anything
# off-template (different spacing, escapes, extra fields, negative or
# non-finite numbers) falls back to the general JSON path, so both paths
# agree on every accepted line.
_MINUTE_RE = re.compile(
    r'\{"kind": "minute", "participant_id": "([^"\\]+)", "date": "(\d{4}-\d{2}-\d{2})", '
    r'"minute": (\d+), "heart_rate": (null|[0-9][0-9.eE+-]*), "steps": (null|\d+), '
    r'"sleep_stage": (null|"awake"|"light"|"deep"|"rem")\}\Z')


def _fast_minute(line: str):
    """Template parse for canonical minute lines; None means fall back to JSON."""
    m = _MINUTE_RE.match(line)
    if m is None:
        return None
    pid, date_s, minute_s, hr_s, st_s, stage_s = m.groups()
    try:
        minute = int(minute_s)
        if hr_s == "null":
            hr = np.nan
        else:
            hr = float(hr_s)
            if not math.isfinite(hr):
                return None
        steps = _MISSING_STEPS if st_s == "null" else int(st_s)
    except ValueError:
        return None
    stage = None if stage_s == "null" else stage_s[1:-1]
    return pid, date_s, minute, hr, steps, stage


def parse_cohort(stream, *, strict: bool = False,
                 warnings: list[ParseWarning] | None = None,
                 kinds: frozenset[str] | None = None) -> Cohort:
    """Parse a JSONL cohort stream into a :class:`Cohort`.

    ``stream`` may be an open text/binary file or any iterable of lines.
    Records are stably sorted by timestamp within each participant; input
    ordering is otherwise preserved. Malformed lines raise
    :class:`CohortFormatError` naming line number and field. Heart-rate
    plausibility breaches (outside 20-250 bpm) warn by default and are
    hard errors only when ``strict`` is set.

    ``kinds`` optionally restricts parsing to a subset of record kinds;
    lines of other kinds are skipped without being decoded (useful when a
    caller needs only assessments out of a large file).
    """
    buffers: dict[str, _ParticipantBuffer] = {}
    order: list[str] = []
    date_cache: dict[str, int] = {}
    loads = json.loads
    want_minutes = kinds is None or "minute" in kinds
    minute_prefix = _MINUTE_PREFIX
    last_pid = None
    appenders = None

    for line_no, raw in enumerate(stream, 1):
        if isinstance(raw, bytes):
            raw = raw.decode("utf-8")
        line = raw.strip()
        if not line:
            continue
        if line.startswith(minute_prefix):
            if not want_minutes:
                continue
            fast = _fast_minute(line)
            if fast is not None:
                pid, date_s, minute, hr_val, steps_val, stage = fast
                if not 0 <= minute < MINUTES_PER_DAY:
                    raise CohortFormatError(line_no, "minute", "expected integer in [0, 1439]")
                if hr_val == hr_val and not HR_MIN < hr_val < HR_MAX:
                    msg = f"heart_rate {hr_val} outside plausible range ({HR_MIN}, {HR_MAX})"
                    if strict:
                        raise CohortFormatError(line_no, "heart_rate", msg)
                    if warnings is not None:
                        warnings.append(ParseWarning(line_no, "heart_rate", msg))
                if stage is None:
                    stage_val = STAGE_NONE
                else:
                    stage_val = STAGE_CODES.get(stage)
                    if stage_val is None:
                        raise CohortFormatError(
                            line_no, "sleep_stage",
                            f"unknown stage {stage!r} (expected one of {STAGE_NAMES})")
                ordinal = date_cache.get(date_s)
                if ordinal is None:
                    ordinal = _parse_date(date_s, line_no, date_cache)
                if pid != last_pid:
                    buf = buffers.get(pid)
                    if buf is None:
                        buf = buffers[pid] = _ParticipantBuffer()
                        order.append(pid)
                    appenders = (buf.dates.append, buf.minutes.append,
                                 buf.heart_rate.append, buf.steps.append,
                                 buf.sleep_stage.append)
                    last_pid = pid
                ap_date, ap_min, ap_hr, ap_steps, ap_stage = appenders
                ap_date(ordinal)
                ap_min(minute)
                ap_hr(hr_val)
                ap_steps(steps_val)
                ap_stage(stage_val)
                continue
        try:
            rec = loads(line)
        except ValueError as exc:
            raise CohortFormatError(line_no, "json", f"invalid JSON ({exc})") from None
        if not isinstance(rec, dict):
            raise CohortFormatError(line_no, "json", "record is not an object")

        kind = rec.get("kind")
        if kind not in _ALLOWED_KEYS:
            raise CohortFormatError(line_no, "kind", f"unknown kind {kind!r}")
        extra = set(rec) - _ALLOWED_KEYS[kind]
        if extra:
            raise CohortFormatError(
                line_no, sorted(extra)[0], f"unexpected field for kind {kind!r}")
        if kinds is not None and kind not in kinds:
            continue
        pid = rec.get("participant_id")
        if not isinstance(pid, str) or not pid:
            raise CohortFormatError(line_no, "participant_id", "missing or not a string")
        buf = buffers.get(pid)
        if buf is None:
            buf = buffers[pid] = _ParticipantBuffer()
            order.append(pid)

        if kind == "minute":
            ordinal = _parse_date(rec.get("date"), line_no, date_cache)
            minute = rec.get("minute")
            if not isinstance(minute, int) or isinstance(minute, bool) or not 0 <= minute < MINUTES_PER_DAY:
                raise CohortFormatError(line_no, "minute", "expected integer in [0, 1439]")
            hr = rec.get("heart_rate")
            if hr is None:
                hr_val = np.nan
            elif isinstance(hr, (int, float)) and not isinstance(hr, bool):
                hr_val = float(hr)
                if not math.isfinite(hr_val):
                    raise CohortFormatError(line_no, "heart_rate", "expected finite number or null")
                if not HR_MIN < hr_val < HR_MAX:
                    msg = f"heart_rate {hr_val} outside plausible range ({HR_MIN}, {HR_MAX})"
                    if strict:
                        raise CohortFormatError(line_no, "heart_rate", msg)
                    if warnings is not None:
                        warnings.append(ParseWarning(line_no, "heart_rate", msg))
            else:
                raise CohortFormatError(line_no, "heart_rate", "expected number or null")
            steps = rec.get("steps")
            if steps is None:
                steps_val = _MISSING_STEPS
            elif isinstance(steps, int) and not isinstance(steps, bool) and steps >= 0:
                steps_val = steps
            else:
                raise CohortFormatError(line_no, "steps", "expected non-negative integer or null")
            stage = rec.get("sleep_stage")
            if stage is None:
                stage_val = STAGE_NONE
            else:
                stage_val = STAGE_CODES.get(stage)
                if stage_val is None:
                    raise CohortFormatError(
                        line_no, "sleep_stage", f"unknown stage {stage!r} (expected one of {STAGE_NAMES})")
            buf.dates.append(ordinal)
            buf.minutes.append(minute)
            buf.heart_rate.append(hr_val)
            buf.steps.append(steps_val)
            buf.sleep_stage.append(stage_val)
        elif kind == "assessment":
            ordinal = _parse_date(rec.get("date"), line_no, date_cache)
            phq8 = rec.get("phq8")
            if not isinstance(phq8, int) or isinstance(phq8, bool) or not 0 <= phq8 <= PHQ8_MAX:
                raise CohortFormatError(line_no, "phq8", f"expected integer in [0, {PHQ8_MAX}]")
            gad7 = rec.get("gad7")
            if not isinstance(gad7, int) or isinstance(gad7, bool) or not 0 <= gad7 <= GAD7_MAX:
                raise CohortFormatError(line_no, "gad7", f"expected integer in [0, {GAD7_MAX}]")
            buf.assessments.append(Assessment(dt.date.fromordinal(ordinal), phq8, gad7))
        elif kind == "covid":
            ordinal = _parse_date(rec.get("date"), line_no, date_cache)
            buf.covid_events.append(CovidEvent(dt.date.fromordinal(ordinal)))
        else:  # participant_meta
            if buf.declared:
                raise CohortFormatError(line_no, "participant_id", f"duplicate participant id {pid!r}")
            buf.declared = True

    participants = []
    for pid in order:
        buf = buffers[pid]
        series = _finalize_minutes(pid, buf)
        assessments = sorted(buf.assessments, key=lambda a: a.date)
        for a, b in zip(assessments, assessments[1:]):
            if a.date == b.date:
                raise CohortFormatError(
                    None, "date", f"participant {pid!r}: duplicate assessment date {a.date.isoformat()}")
        covid = sorted(buf.covid_events, key=lambda e: e.report_date)
        participants.append(Participant(pid, series, assessments, covid))
    return Cohort(participants)


def _finalize_minutes(pid: str, buf: _ParticipantBuffer) -> MinuteSeries:
    series = MinuteSeries(buf.dates, buf.minutes, buf.heart_rate, buf.steps, buf.sleep_stage)
    if len(series) == 0:
        return series
    key = series.dates * MINUTES_PER_DAY + series.minutes
    idx = np.argsort(key, kind="stable")
    key = key[idx]
    dup = np.nonzero(key[1:] == key[:-1])[0]
    if dup.size:
        i = int(idx[dup[0] + 1])
        date = dt.date.fromordinal(int(series.dates[i]))
        raise CohortFormatError(
            None, "minute",
            f"participant {pid!r}: duplicate minute record at {date.isoformat()} minute {int(series.minutes[i])}")
    return MinuteSeries(series.dates[idx], series.minutes[idx], series.heart_rate[idx],
                        series.steps[idx], series.sleep_stage[idx])


def _json_num(value) -> str:
    # json.dumps float formatting (repr) round-trips 64-bit floats exactly
    if value is None:
        return "null"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def serialize_cohort(cohort: Cohort):
    """Yield JSONL lines (without newlines) in canonical order.

    Participants keep cohort order; within a participant: meta, covid
    events, assessments, then minutes, each in time order. ``parse ∘
    serialize ∘ parse`` is the identity on cohorts.
    """
    for p in cohort.participants:
        yield f'{{"kind": "participant_meta", "participant_id": {json.dumps(p.id)}}}'
        for ev in p.covid_events:
            yield (f'{{"kind": "covid", "participant_id": {json.dumps(p.id)}, '
                   f'"date": "{ev.report_date.isoformat()}"}}')
        for a in p.assessments:
            yield (f'{{"kind": "assessment", "participant_id": {json.dumps(p.id)}, '
                   f'"date": "{a.date.isoformat()}", "phq8": {a.phq8}, "gad7": {a.gad7}}}')
        pid_json = json.dumps(p.id)
        m = p.minutes
        last_ordinal = None
        date_str = ""
        for i in range(len(m)):
            ordinal = int(m.dates[i])
            if ordinal != last_ordinal:
                date_str = dt.date.fromordinal(ordinal).isoformat()
                last_ordinal = ordinal
            hr = float(m.heart_rate[i])
            hr_s = "null" if np.isnan(hr) else repr(hr)
            steps = int(m.steps[i])
            steps_s = "null" if steps == _MISSING_STEPS else str(steps)
            stage = int(m.sleep_stage[i])
            stage_s = "null" if stage == STAGE_NONE else f'"{STAGE_NAMES[stage]}"'
            yield (f'{{"kind": "minute", "participant_id": {pid_json}, "date": "{date_str}", '
                   f'"minute": {int(m.minutes[i])}, "heart_rate": {hr_s}, '
                   f'"steps": {steps_s}, "sleep_stage": {stage_s}}}')


def write_cohort(cohort: Cohort, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for line in serialize_cohort(cohort):
            fh.write(line)
            fh.write("\n")


def load_cohort(path, *, strict: bool = False,
                warnings: list[ParseWarning] | None = None,
                kinds: frozenset[str] | None = None) -> Cohort:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_cohort(fh, strict=strict, warnings=warnings, kinds=kinds)


def validate_cohort(cohort: Cohort) -> ValidationReport:
    """Check every invariant and report violations without failing.

    The cohort is not modified. Parser-enforced invariants (duplicates,
    ordering, score ranges) re-checked here will be clean on any
    ``parse_cohort`` output; plausibility breaches the parser only warned
    about do show up as range violations.
    """
    report = ValidationReport()
    seen_ids = set()
    for p in cohort.participants:
        if p.id in seen_ids:
            report.violations.append(Violation(p.id, "cohort", f"duplicate participant id {p.id!r}"))
        seen_ids.add(p.id)
        report.participants += 1
        report.assessments += len(p.assessments)
        report.minute_records += len(p.minutes)

        for a, b in zip(p.assessments, p.assessments[1:]):
            if a.date >= b.date:
                report.violations.append(Violation(
                    p.id, f"assessment {b.date.isoformat()}", "assessment dates not strictly increasing"))
        for a in p.assessments:
            if not 0 <= a.phq8 <= PHQ8_MAX:
                report.violations.append(Violation(
                    p.id, f"assessment {a.date.isoformat()}", f"phq8 {a.phq8} outside [0, {PHQ8_MAX}]"))
            if not 0 <= a.gad7 <= GAD7_MAX:
                report.violations.append(Violation(
                    p.id, f"assessment {a.date.isoformat()}", f"gad7 {a.gad7} outside [0, {GAD7_MAX}]"))

        m = p.minutes
        if len(m) == 0:
            continue
        if m.minutes.min() < 0 or m.minutes.max() >= MINUTES_PER_DAY:
            report.violations.append(Violation(p.id, "minutes", "minute-of-day outside [0, 1439]"))
        key = m.dates.astype(np.int64) * MINUTES_PER_DAY + m.minutes
        if np.any(key[1:] < key[:-1]):
            report.violations.append(Violation(p.id, "minutes", "minute records not time-ordered"))
        dup = np.nonzero(key[1:] == key[:-1])[0]
        for j in dup:
            date = dt.date.fromordinal(int(m.dates[j]))
            report.violations.append(Violation(
                p.id, f"{date.isoformat()} minute {int(m.minutes[j])}", "duplicate (date, minute) record"))
        hr = m.heart_rate
        bad_hr = np.nonzero(~np.isnan(hr) & ((hr <= HR_MIN) | (hr >= HR_MAX)))[0]
        for j in bad_hr:
            date = dt.date.fromordinal(int(m.dates[j]))
            report.violations.append(Violation(
                p.id, f"{date.isoformat()} minute {int(m.minutes[j])}",
                f"heart_rate {float(hr[j])} outside plausible range ({HR_MIN}, {HR_MAX})"))
        bad_steps = np.nonzero(m.steps < _MISSING_STEPS)[0]
        for j in bad_steps:
            date = dt.date.fromordinal(int(m.dates[j]))
            report.violations.append(Violation(
                p.id, f"{date.isoformat()} minute {int(m.minutes[j])}", "negative step count"))
    return report
