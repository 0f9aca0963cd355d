"""File-based pipeline stages behind the CLI.

Stages communicate only through files under a working directory; every
artifact embeds the config hash and seed, no artifact embeds wall-clock
time, and floats are written with full repr precision, so re-running any
stage with unchanged inputs and seed reproduces its outputs byte for
byte.

Artifacts: cohort.jsonl, ground_truth.json, labels.csv, episodes.csv,
normal_periods.csv, cohort_summary.json, daily.csv, normalization.json,
windows.csv, model.json, train_report.json, detections.csv,
metrics.json, aligned_averages.csv, attributions.csv, ranks.csv,
rank_tests.json, report/.
"""

from __future__ import annotations

import csv
import datetime as dt
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from . import cohort as cohort_mod
from . import detector, evaluation, explain, features, labeling, lstm_ae, synth
from .labeling import DayLabels, Episode, LABEL_ANOMALOUS, LABEL_NORMAL

SWEEP_PERCENTILES = tuple(range(90, 101))


@dataclass
class LabelingConfig:
    score_threshold: float = 5.0
    min_span_days: int = 56
    min_assessments: int = 4
    max_gap_days: int = 21
    covid_days_before: int = 7
    covid_days_after: int = 21


@dataclass
class FeatureConfig:
    quality_min_coverage: float = 0.8
    resting_run_minutes: int = 12
    train_max_missing: float = 0.2


@dataclass
class ExplainConfig:
    background_size: int = 50
    permutations: int = 200
    max_windows_per_episode: int = 6  # 0 = attribute every window
    max_false_positives: int = 20


@dataclass
class PipelineConfig:
    workdir: str = "workdir"
    cohort_path: str | None = None  # defaults to <workdir>/cohort.jsonl
    seed: int = 42
    percentile: float = 95.0
    strict: bool = False
    scenario: synth.ScenarioConfig = field(default_factory=synth.ScenarioConfig)
    labeling: LabelingConfig = field(default_factory=LabelingConfig)
    features: FeatureConfig = field(default_factory=FeatureConfig)
    train: lstm_ae.TrainConfig = field(default_factory=lstm_ae.TrainConfig)
    explain: ExplainConfig = field(default_factory=ExplainConfig)

    def to_dict(self) -> dict:
        return {
            "workdir": self.workdir,
            "cohort_path": self.cohort_path,
            "seed": self.seed,
            "percentile": self.percentile,
            "strict": self.strict,
            "scenario": self.scenario.to_dict(),
            "labeling": asdict(self.labeling),
            "features": asdict(self.features),
            "train": asdict(self.train),
            "explain": asdict(self.explain),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        d = dict(d)
        seed = d.get("seed", 42)
        scenario = dict(d.get("scenario", {}))
        scenario.setdefault("seed", seed)
        train = dict(d.get("train", {}))
        train.setdefault("seed", seed)
        return cls(
            workdir=d.get("workdir", "workdir"),
            cohort_path=d.get("cohort_path"),
            seed=seed,
            percentile=d.get("percentile", 95.0),
            strict=d.get("strict", False),
            scenario=synth.ScenarioConfig.from_dict(scenario),
            labeling=LabelingConfig(**d.get("labeling", {})),
            features=FeatureConfig(**d.get("features", {})),
            train=lstm_ae.TrainConfig(**train),
            explain=ExplainConfig(**d.get("explain", {})),
        )

    def config_hash(self) -> str:
        text = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(text.encode("utf-8")).hexdigest()[:16]


class MissingArtifactError(FileNotFoundError):
    def __init__(self, path: str, stage: str):
        self.stage = stage
        super().__init__(f"missing input {path!r}; run the '{stage}' stage first")


def _path(cfg: PipelineConfig, name: str) -> str:
    return os.path.join(cfg.workdir, name)


def _require(cfg: PipelineConfig, name: str, producer: str) -> str:
    path = _path(cfg, name)
    if not os.path.exists(path):
        raise MissingArtifactError(path, producer)
    return path


def _cohort_file(cfg: PipelineConfig) -> str:
    if cfg.cohort_path:
        if not os.path.exists(cfg.cohort_path):
            raise MissingArtifactError(cfg.cohort_path, "simulate")
        return cfg.cohort_path
    return _require(cfg, "cohort.jsonl", "simulate")


def _provenance(cfg: PipelineConfig) -> dict:
    return {"config_hash": cfg.config_hash(), "seed": cfg.seed}


def _write_csv(cfg: PipelineConfig, name: str, header: list[str], rows) -> str:
    path = _path(cfg, name)
    prov = _provenance(cfg)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(f"# config_hash={prov['config_hash']} seed={prov['seed']}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)
    return path


def read_csv(path: str) -> tuple[list[str], list[list[str]]]:
    """Read a pipeline CSV, skipping provenance comment lines."""
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        rows = list(reader)
    if not rows:
        raise ValueError(f"{path} is empty")
    return rows[0], rows[1:]


def _write_json(cfg: PipelineConfig, name: str, doc: dict) -> str:
    path = _path(cfg, name)
    doc = {**doc, **_provenance(cfg)}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return path


def _read_json(path: str) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


# ---------------------------------------------------------------- stages

def stage_simulate(cfg: PipelineConfig) -> dict:
    os.makedirs(cfg.workdir, exist_ok=True)
    out = cfg.cohort_path or _path(cfg, "cohort.jsonl")
    truth = synth.write_cohort_jsonl(cfg.scenario, out)
    synth.save_ground_truth(truth, cfg.scenario, _path(cfg, "ground_truth.json"),
                            provenance=_provenance(cfg))
    n_episodes = sum(len(v) for v in truth.episodes.values())
    return {"cohort": out, "participants": cfg.scenario.participants,
            "episodes": n_episodes}


def _label_cohort(cfg: PipelineConfig):
    """Per-participant normal periods, episodes, and day labels."""
    path = _cohort_file(cfg)
    cohort = cohort_mod.load_cohort(
        path, strict=cfg.strict,
        kinds=frozenset({"assessment", "covid", "participant_meta"}))
    lc = cfg.labeling
    results = {}
    for p in cohort.participants:
        periods, episodes = labeling.label_participant(
            p,
            score_threshold=lc.score_threshold,
            min_span_days=lc.min_span_days,
            min_assessments=lc.min_assessments,
            max_gap_days=lc.max_gap_days,
            covid_days_before=lc.covid_days_before,
            covid_days_after=lc.covid_days_after,
        )
        if not p.assessments:
            continue
        start = min([p.assessments[0].date]
                    + [e.period_start for e in episodes]
                    + [pr.start_date for pr in periods])
        end = max([p.assessments[-1].date + dt.timedelta(days=lc.covid_days_after)]
                  + [e.period_end for e in episodes]
                  + [pr.end_date for pr in periods])
        labels = labeling.day_labels(p.id, episodes, periods, start, end)
        results[p.id] = (periods, episodes, labels)
    return results


def stage_label(cfg: PipelineConfig) -> dict:
    os.makedirs(cfg.workdir, exist_ok=True)
    results = _label_cohort(cfg)

    label_rows = []
    episode_rows = []
    period_rows = []
    counts = {"participants": len(results), "with_normal_period": 0, "with_episodes": 0}
    by_category: dict[str, int] = {}
    by_magnitude: dict[str, int] = {}
    for pid, (periods, episodes, labels) in results.items():
        if periods:
            counts["with_normal_period"] += 1
        if episodes:
            counts["with_episodes"] += 1
        for pr in periods:
            period_rows.append([pid, pr.start_date.isoformat(), pr.end_date.isoformat(),
                                pr.assessment_count, pr.mean_phq8, pr.mean_gad7])
        for e in episodes:
            by_category[e.category] = by_category.get(e.category, 0) + 1
            for scale, mag in (("phq8", e.magnitude_phq), ("gad7", e.magnitude_gad)):
                if mag != labeling.MAGNITUDE_NONE:
                    key = f"{scale}_{mag}"
                    by_magnitude[key] = by_magnitude.get(key, 0) + 1
            episode_rows.append([pid, e.assessment_date.isoformat(), e.category,
                                 e.phq_delta, e.gad_delta, e.magnitude_phq, e.magnitude_gad,
                                 e.period_start.isoformat(), e.period_end.isoformat()])
        for i in range(len(labels)):
            label_rows.append([pid, labels.date(i).isoformat(), str(labels.labels[i]),
                               ";".join(labels.episode_ids[i])])

    _write_csv(cfg, "labels.csv", ["participant_id", "date", "label", "episode_id"], label_rows)
    _write_csv(cfg, "episodes.csv",
               ["participant_id", "assessment_date", "category", "phq_delta", "gad_delta",
                "magnitude_phq", "magnitude_gad", "period_start", "period_end"],
               episode_rows)
    _write_csv(cfg, "normal_periods.csv",
               ["participant_id", "start_date", "end_date", "assessment_count",
                "mean_phq8", "mean_gad7"],
               period_rows)
    summary = {
        "participants": counts["participants"],
        "participants_with_normal_period": counts["with_normal_period"],
        "participants_with_episodes": counts["with_episodes"],
        "normal_period_days": int(sum(
            pr.span_days + 1 for periods, _, _ in results.values() for pr in periods)),
        "episodes_total": sum(by_category.values()),
        "episodes_by_category": dict(sorted(by_category.items())),
        "episodes_by_magnitude": dict(sorted(by_magnitude.items())),
    }
    _write_json(cfg, "cohort_summary.json", summary)
    return summary


def _read_day_labels(cfg: PipelineConfig) -> dict[str, DayLabels]:
    path = _require(cfg, "labels.csv", "label")
    _, rows = read_csv(path)
    per_pid: dict[str, list[tuple[str, str, str]]] = {}
    for pid, date_s, label, eids in rows:
        per_pid.setdefault(pid, []).append((date_s, label, eids))
    out = {}
    for pid, entries in per_pid.items():
        entries.sort(key=lambda r: r[0])
        start = dt.date.fromisoformat(entries[0][0])
        n = (dt.date.fromisoformat(entries[-1][0]) - start).days + 1
        labels = np.full(n, labeling.LABEL_AMBIGUOUS, dtype="<U15")
        ids: list[list[str]] = [[] for _ in range(n)]
        for date_s, label, eids in entries:
            i = (dt.date.fromisoformat(date_s) - start).days
            labels[i] = label
            ids[i] = eids.split(";") if eids else []
        out[pid] = DayLabels(pid, start, labels, ids)
    return out


def read_episodes(path: str) -> list[Episode]:
    _, rows = read_csv(path)
    return [
        Episode(
            participant_id=r[0],
            assessment_date=dt.date.fromisoformat(r[1]),
            category=r[2],
            phq_delta=float(r[3]),
            gad_delta=float(r[4]),
            magnitude_phq=r[5],
            magnitude_gad=r[6],
            period_start=dt.date.fromisoformat(r[7]),
            period_end=dt.date.fromisoformat(r[8]),
        )
        for r in rows
    ]


def stage_features(cfg: PipelineConfig) -> dict:
    labels_map = _read_day_labels(cfg)
    path = _cohort_file(cfg)
    cohort = cohort_mod.load_cohort(path, strict=cfg.strict)
    fc = cfg.features

    daily_rows = []
    window_rows = []
    normalization: dict[str, dict] = {}
    skipped: list[str] = []
    n_train = 0
    for p in cohort.participants:
        daily = features.daily_features(
            p, quality_min_coverage=fc.quality_min_coverage,
            resting_run_minutes=fc.resting_run_minutes)
        if daily is None or not daily.quality.any() or np.isnan(daily.raw).all(axis=0).any():
            skipped.append(p.id)
            continue
        values, imputed_mask = features.impute_daily(daily)
        constants = features.normalization_constants(values, daily.quality)
        z = features.normalize_participant(values, constants)
        normalization[p.id] = constants.to_dict()

        for i in range(daily.n_days):
            flags = int(imputed_mask[i, 0]) | int(imputed_mask[i, 1]) << 1 | int(imputed_mask[i, 2]) << 2
            daily_rows.append([p.id, daily.date(i).isoformat(),
                               values[i, 0], values[i, 1], values[i, 2],
                               int(daily.quality[i]), flags])
        labels = labels_map.get(p.id)
        if labels is None:
            labels = DayLabels(p.id, daily.start_date,
                               np.full(daily.n_days, labeling.LABEL_AMBIGUOUS, dtype="<U15"),
                               [[] for _ in range(daily.n_days)])
        wins = features.make_windows(daily, z, imputed_mask, labels,
                                     train_max_missing=fc.train_max_missing)
        for w in wins:
            n_train += int(w.train_eligible)
            window_rows.append([w.participant_id, w.end_date.isoformat(), w.label,
                                ";".join(w.episode_ids), w.imputed_cells,
                                int(w.train_eligible)]
                               + [float(v) for v in w.values.reshape(-1)])

    _write_csv(cfg, "daily.csv",
               ["participant_id", "date", "sleep_minutes", "total_steps", "resting_hr",
                "quality_ok", "imputed_flags"],
               daily_rows)
    cell_cols = [f"v{i}" for i in range(features.WINDOW_DAYS * len(features.FEATURE_NAMES))]
    _write_csv(cfg, "windows.csv",
               ["participant_id", "end_date", "label", "episode_ids", "imputed_cells",
                "train_eligible"] + cell_cols,
               window_rows)
    _write_json(cfg, "normalization.json",
                {"feature_order": list(features.FEATURE_NAMES),
                 "std_kind": "population",
                 "participants": normalization,
                 "skipped_participants": skipped})
    return {"participants": len(normalization), "skipped": len(skipped),
            "windows": len(window_rows), "train_windows": n_train}


def read_windows(path: str) -> list[features.Window]:
    _, rows = read_csv(path)
    out = []
    n_cells = features.WINDOW_DAYS * len(features.FEATURE_NAMES)
    for r in rows:
        values = np.array([float(v) for v in r[6:6 + n_cells]]).reshape(
            features.WINDOW_DAYS, len(features.FEATURE_NAMES))
        out.append(features.Window(
            participant_id=r[0],
            end_date=dt.date.fromisoformat(r[1]),
            label=r[2],
            episode_ids=tuple(r[3].split(";")) if r[3] else (),
            imputed_cells=int(r[4]),
            train_eligible=bool(int(r[5])),
            values=values,
        ))
    return out


def stage_train(cfg: PipelineConfig) -> dict:
    windows_path = _require(cfg, "windows.csv", "features")
    norm_path = _require(cfg, "normalization.json", "features")
    windows = read_windows(windows_path)
    train_windows = [w for w in windows if w.train_eligible]
    model, report = lstm_ae.train(train_windows, cfg.train)
    model.threshold = detector.select_threshold(report.validation_errors, cfg.percentile)
    model.normalization = _read_json(norm_path)["participants"]
    lstm_ae.save_model(model, _path(cfg, "model.json"), extra=_provenance(cfg))
    _write_json(cfg, "train_report.json", {
        "epochs_run": report.epochs_run,
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "train_losses": report.train_losses,
        "val_losses": report.val_losses,
        "n_train_windows": len(train_windows),
        "threshold_percentile": cfg.percentile,
        "threshold": model.threshold,
    })
    return {"train_windows": len(train_windows), "epochs": report.epochs_run,
            "best_val_loss": report.best_val_loss, "threshold": model.threshold}


def stage_detect(cfg: PipelineConfig) -> dict:
    model = lstm_ae.load_model(_require(cfg, "model.json", "train"))
    windows = read_windows(_require(cfg, "windows.csv", "features"))
    threshold = detector.select_threshold(model.validation_errors, cfg.percentile)
    detections = detector.detect(model, windows, threshold)
    rows = [[d.participant_id, d.end_date.isoformat(), d.error, d.threshold,
             int(d.flagged), d.label, ";".join(d.episode_ids)] for d in detections]
    _write_csv(cfg, "detections.csv",
               ["participant_id", "end_date", "error", "threshold", "flagged",
                "label", "episode_ids"], rows)
    flagged = sum(1 for d in detections if d.flagged)
    return {"windows": len(detections), "flagged": flagged, "threshold": threshold}


def read_detections(path: str) -> list[detector.Detection]:
    _, rows = read_csv(path)
    return [
        detector.Detection(
            participant_id=r[0],
            end_date=dt.date.fromisoformat(r[1]),
            error=float(r[2]),
            threshold=float(r[3]),
            flagged=bool(int(r[4])),
            label=r[5],
            episode_ids=tuple(r[6].split(";")) if r[6] else (),
        )
        for r in rows
    ]


def _prf_dict(prf: evaluation.AdjustedPRF) -> dict:
    return {"precision": prf.precision, "recall": prf.recall, "f_score": prf.f_score,
            "tp": prf.tp, "fp": prf.fp, "fn": prf.fn}


def stage_evaluate(cfg: PipelineConfig) -> dict:
    detections = read_detections(_require(cfg, "detections.csv", "detect"))
    episodes = read_episodes(_require(cfg, "episodes.csv", "label"))
    model_doc = _read_json(_require(cfg, "model.json", "train"))
    val_errors = model_doc["validation_errors"]

    overall = evaluation.adjusted_prf(detections)
    strata = evaluation.breakdown(detections, episodes)
    outcomes, rate = evaluation.episode_outcomes(detections, episodes)

    sweep = []
    for pct in SWEEP_PERCENTILES:
        thr = detector.select_threshold(val_errors, pct)
        redet = detector.reflag(detections, thr)
        prf = evaluation.adjusted_prf(redet)
        sweep.append({"percentile": pct, "threshold": thr,
                      "flagged_windows": sum(1 for d in redet if d.flagged),
                      **_prf_dict(prf)})

    label_counts: dict[str, int] = {}
    for d in detections:
        label_counts[d.label] = label_counts.get(d.label, 0) + 1

    metrics = {
        "threshold": {"percentile": cfg.percentile,
                      "value": detections[0].threshold if detections else None},
        "overall": _prf_dict(overall),
        "per_category": {k: _prf_dict(v) for k, v in strata["per_category"].items()},
        "per_magnitude": {k: _prf_dict(v) for k, v in strata["per_magnitude"].items()},
        "detection_rate": rate,
        "episodes_total": len(outcomes),
        "episodes_detected": sum(1 for o in outcomes if o.detected),
        "per_episode": [{"episode_id": o.episode.episode_id, "category": o.episode.category,
                         "detected": o.detected, "f_score": o.f_score,
                         "flagged_windows": o.flagged_windows} for o in outcomes],
        "window_counts": dict(sorted(label_counts.items())),
        "threshold_sweep": sweep,
    }
    _write_json(cfg, "metrics.json", metrics)

    # episode-aligned feature averages from the normalized daily series
    daily_map = _read_daily_normalized(cfg)
    points = evaluation.aligned_averages(daily_map, episodes, features.FEATURE_NAMES)
    _write_csv(cfg, "aligned_averages.csv", ["offset_day", "feature", "mean", "n"],
               [[p.offset_day, p.feature, p.mean, p.n] for p in points])
    return {"f_score": overall.f_score, "precision": overall.precision,
            "recall": overall.recall, "detection_rate": rate}


def _read_daily_normalized(cfg: PipelineConfig) -> dict[str, tuple[dt.date, np.ndarray]]:
    daily_path = _require(cfg, "daily.csv", "features")
    norm = _read_json(_require(cfg, "normalization.json", "features"))["participants"]
    _, rows = read_csv(daily_path)
    per_pid: dict[str, list[tuple[str, float, float, float]]] = {}
    for r in rows:
        per_pid.setdefault(r[0], []).append((r[1], float(r[2]), float(r[3]), float(r[4])))
    out = {}
    for pid, entries in per_pid.items():
        if pid not in norm:
            continue
        constants = features.NormalizationConstants.from_dict(norm[pid])
        entries.sort(key=lambda e: e[0])
        start = dt.date.fromisoformat(entries[0][0])
        values = np.array([[e[1], e[2], e[3]] for e in entries])
        out[pid] = (start, features.normalize_participant(values, constants))
    return out


def stage_explain(cfg: PipelineConfig) -> dict:
    model = lstm_ae.load_model(_require(cfg, "model.json", "train"))
    windows = read_windows(_require(cfg, "windows.csv", "features"))
    detections = read_detections(_require(cfg, "detections.csv", "detect"))
    episodes = read_episodes(_require(cfg, "episodes.csv", "label"))
    ec = cfg.explain

    by_key = {(w.participant_id, w.end_date): w for w in windows}
    errors = {(d.participant_id, d.end_date): d for d in detections}

    train_pool = [w for w in windows if w.train_eligible]
    if not train_pool:
        raise ValueError("no training-eligible windows to draw the background from")
    rng = np.random.default_rng([cfg.seed, 11])
    size = min(ec.background_size, len(train_pool))
    bg_idx = rng.choice(len(train_pool), size=size, replace=False)
    background = np.stack([train_pool[i].values for i in sorted(bg_idx)])

    # windows to attribute: per episode, flagged first then highest error
    targets: dict[tuple[str, dt.date], features.Window] = {}
    episode_windows: dict[str, list[features.Window]] = {}
    for w in windows:
        if w.label == LABEL_ANOMALOUS:
            for eid in w.episode_ids:
                episode_windows.setdefault(eid, []).append(w)
    for eid, wins in episode_windows.items():
        def sort_key(w):
            d = errors[(w.participant_id, w.end_date)]
            return (-int(d.flagged), -d.error)
        ranked = sorted(wins, key=sort_key)
        cap = ec.max_windows_per_episode or len(ranked)
        for w in ranked[:cap]:
            targets[(w.participant_id, w.end_date)] = w
    false_pos = sorted(
        (d for d in detections if d.flagged and d.label == LABEL_NORMAL),
        key=lambda d: -d.error)[:ec.max_false_positives]
    for d in false_pos:
        w = by_key.get((d.participant_id, d.end_date))
        if w is not None:
            targets[(w.participant_id, w.end_date)] = w

    attributions: dict[tuple[str, dt.date], explain.AttributionMatrix] = {}
    attr_rows = []
    for key in sorted(targets, key=lambda k: (k[0], k[1])):
        w = targets[key]
        seed = explain.derive_seed(cfg.seed, w.participant_id, w.end_date.isoformat())
        attr = explain.shapley_attributions(
            model, w.values, background,
            participant_id=w.participant_id, end_date=w.end_date,
            mode="sampled", permutations=ec.permutations, seed=seed)
        attributions[key] = attr
        for day in range(features.WINDOW_DAYS):
            date = w.end_date - dt.timedelta(days=features.WINDOW_DAYS - 1 - day)
            for f, name in enumerate(features.FEATURE_NAMES):
                attr_rows.append([w.participant_id, date.isoformat(), name,
                                  float(attr.phi[day, f]), float(w.values[day, f]),
                                  w.end_date.isoformat()])
    _write_csv(cfg, "attributions.csv",
               ["participant_id", "date", "feature", "phi", "value_normalized",
                "window_end_date"], attr_rows)

    # per-episode feature ranks over that episode's attributed windows
    rank_entries = []
    for ep in episodes:
        eps_attrs = [attributions[(w.participant_id, w.end_date)]
                     for w in episode_windows.get(ep.episode_id, [])
                     if (w.participant_id, w.end_date) in attributions]
        if not eps_attrs:
            continue
        ranks = explain.episode_feature_ranks(eps_attrs)
        rank_entries.append((ep.category, ranks["rank"]))
    table = explain.build_rank_table(rank_entries)
    rank_rows = []
    for category in sorted(table):
        for feature in features.FEATURE_NAMES:
            for rank in (1, 2, 3):
                rank_rows.append([category, feature, rank, table[category][feature][rank]])
    _write_csv(cfg, "ranks.csv", ["category", "feature", "rank", "count"], rank_rows)

    tests = {}
    for rank in (1, 2, 3):
        try:
            chi2, df, p = explain.rank_distribution_test(explain.rank_slice(table, rank))
            tests[f"rank_{rank}"] = {"chi2": chi2, "df": df, "p": p}
        except ValueError as exc:
            tests[f"rank_{rank}"] = {"error": str(exc)}
    _write_json(cfg, "rank_tests.json", {"tests": tests,
                                         "episodes_ranked": len(rank_entries),
                                         "windows_attributed": len(attributions)})
    return {"windows_attributed": len(attributions),
            "episodes_ranked": len(rank_entries)}


def stage_report(cfg: PipelineConfig) -> dict:
    from . import plots  # deferred: pulls in matplotlib

    metrics = _read_json(_require(cfg, "metrics.json", "evaluate"))
    summary = _read_json(_require(cfg, "cohort_summary.json", "label"))
    aligned_path = _require(cfg, "aligned_averages.csv", "evaluate")
    report_dir = _path(cfg, "report")
    os.makedirs(report_dir, exist_ok=True)

    figures = {}
    figures["aligned_averages"] = plots.plot_aligned_averages(
        aligned_path, os.path.join(report_dir, "aligned_averages.png"))
    figures["threshold_sweep"] = plots.plot_threshold_sweep(
        metrics["threshold_sweep"], os.path.join(report_dir, "threshold_sweep.png"))
    figures["episode_f_distribution"] = plots.plot_episode_f_distribution(
        metrics["per_episode"], metrics.get("detection_rate"),
        os.path.join(report_dir, "episode_f_distribution.png"))

    ranks_path = _path(cfg, "ranks.csv")
    if os.path.exists(ranks_path):
        figures["rank_distribution"] = plots.plot_rank_distribution(
            ranks_path, os.path.join(report_dir, "rank_distribution.png"))
    attr_path = _path(cfg, "attributions.csv")
    if os.path.exists(attr_path):
        fig = plots.plot_attribution_timeline(
            attr_path, _path(cfg, "detections.csv"),
            os.path.join(report_dir, "attribution_timeline.png"))
        if fig:
            figures["attribution_timeline"] = fig

    doc = {
        "cohort_summary": {k: v for k, v in summary.items()
                           if k not in ("config_hash", "seed")},
        "headline": {
            "threshold": metrics["threshold"],
            "overall": metrics["overall"],
            "detection_rate": metrics["detection_rate"],
            "per_category": metrics["per_category"],
            "per_magnitude": metrics["per_magnitude"],
        },
        "figures": {k: os.path.basename(v) for k, v in figures.items()},
    }
    path = os.path.join(report_dir, "summary.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump({**doc, **_provenance(cfg)}, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return {"report_dir": report_dir, "figures": sorted(figures)}


STAGES = {
    "simulate": stage_simulate,
    "label": stage_label,
    "features": stage_features,
    "train": stage_train,
    "detect": stage_detect,
    "evaluate": stage_evaluate,
    "explain": stage_explain,
    "report": stage_report,
}


def run_stage(command: str, cfg: PipelineConfig) -> dict:
    if command not in STAGES:
        raise ValueError(f"unknown command {command!r}; expected one of {sorted(STAGES)}")
    os.makedirs(cfg.workdir, exist_ok=True)
    return STAGES[command](cfg)
