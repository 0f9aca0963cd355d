"""Report figures rendered to PNG files alongside the CSV/JSON bundle."""

from __future__ import annotations

import datetime as dt

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .features import FEATURE_NAMES
from .pipeline import read_csv

_FEATURE_LABELS = {
    "sleep_minutes": "Sleep duration",
    "total_steps": "Total steps",
    "resting_hr": "Resting heart rate",
}
_FEATURE_COLORS = {
    "sleep_minutes": "tab:purple",
    "total_steps": "tab:green",
    "resting_hr": "tab:red",
}


def plot_aligned_averages(aligned_csv: str, out_path: str) -> str:
    """Normalized feature trajectories around the anomalous assessment."""
    _, rows = read_csv(aligned_csv)
    series: dict[str, list[tuple[int, float, int]]] = {}
    for off, feature, mean, n in rows:
        series.setdefault(feature, []).append((int(off), float(mean), int(n)))
    fig, axes = plt.subplots(len(FEATURE_NAMES), 1, figsize=(7, 7), sharex=True)
    for ax, feature in zip(axes, FEATURE_NAMES):
        pts = sorted(series.get(feature, []))
        if pts:
            offs = [p[0] for p in pts]
            means = [p[1] for p in pts]
            ax.plot(offs, means, color=_FEATURE_COLORS[feature], lw=1.5)
        ax.axvline(0, color="deeppink", ls="--", lw=1)
        ax.axhline(0, color="0.8", lw=0.8)
        ax.set_ylabel(f"{_FEATURE_LABELS[feature]}\n(z-score)")
    axes[-1].set_xlabel("Days from anomalous assessment")
    axes[0].set_title("Feature changes around anomalous assessments")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_threshold_sweep(sweep: list[dict], out_path: str) -> str:
    """Adjusted precision/recall/F across detection percentiles."""
    pcts = [s["percentile"] for s in sweep]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, style in (("precision", "o-"), ("recall", "s-"), ("f_score", "d-")):
        ax.plot(pcts, [s[key] for s in sweep], style, label=key, ms=4)
    ax.set_xlabel("Threshold percentile of validation errors")
    ax.set_ylabel("Adjusted score")
    ax.set_ylim(0, 1.05)
    ax.legend()
    ax.set_title("Threshold sweep")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_episode_f_distribution(per_episode: list[dict], detection_rate, out_path: str) -> str:
    """Histogram of per-episode adjusted F-scores."""
    scores = [e["f_score"] for e in per_episode]
    fig, ax = plt.subplots(figsize=(6, 4))
    ax.hist(scores, bins=np.linspace(0, 1, 21), color="tab:blue", edgecolor="white")
    title = "Per-episode adjusted F-scores"
    if detection_rate is not None:
        title += f" (detection rate {detection_rate:.1%})"
    ax.set_title(title)
    ax.set_xlabel("Adjusted F-score")
    ax.set_ylabel("Episodes")
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_rank_distribution(ranks_csv: str, out_path: str) -> str:
    """Per-category share of each feature at each contribution rank."""
    _, rows = read_csv(ranks_csv)
    categories = sorted({r[0] for r in rows})
    counts = {(r[0], r[1], int(r[2])): int(r[3]) for r in rows}
    fig, axes = plt.subplots(1, len(FEATURE_NAMES), figsize=(10, 3.5), sharey=True)
    x = np.arange(len(categories))
    width = 0.25
    for ax, feature in zip(axes, FEATURE_NAMES):
        for j, rank in enumerate((1, 2, 3)):
            totals = [sum(counts.get((c, f, rank), 0) for f in FEATURE_NAMES)
                      for c in categories]
            vals = [counts.get((c, feature, rank), 0) for c in categories]
            share = [v / t if t else 0.0 for v, t in zip(vals, totals)]
            ax.bar(x + (j - 1) * width, share, width, label=f"rank {rank}")
        ax.set_xticks(x, categories, rotation=20)
        ax.set_title(_FEATURE_LABELS[feature])
    axes[0].set_ylabel("Share of episodes")
    axes[-1].legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path


def plot_attribution_timeline(attr_csv: str, detections_csv: str, out_path: str) -> str | None:
    """Per-day attributions plus the error/threshold series for one participant.

    Picks the participant with the most attributed windows; returns None
    when there is nothing to plot.
    """
    _, rows = read_csv(attr_csv)
    if not rows:
        return None
    by_pid: dict[str, int] = {}
    for r in rows:
        by_pid[r[0]] = by_pid.get(r[0], 0) + 1
    pid = max(sorted(by_pid), key=lambda p: by_pid[p])

    per_day: dict[tuple[dt.date, str], list[float]] = {}
    for r in rows:
        if r[0] != pid:
            continue
        per_day.setdefault((dt.date.fromisoformat(r[1]), r[2]), []).append(float(r[3]))
    dates = sorted({d for d, _ in per_day})

    _, det_rows = read_csv(detections_csv)
    err_dates, errs, thr = [], [], None
    for r in det_rows:
        if r[0] == pid:
            err_dates.append(dt.date.fromisoformat(r[1]))
            errs.append(float(r[2]))
            thr = float(r[3])

    fig, (ax0, ax1) = plt.subplots(2, 1, figsize=(8, 6), sharex=True)
    for feature in FEATURE_NAMES:
        ys = [float(np.mean(per_day[(d, feature)])) if (d, feature) in per_day else np.nan
              for d in dates]
        ax0.plot(dates, ys, "o-", ms=3, lw=1,
                 color=_FEATURE_COLORS[feature], label=_FEATURE_LABELS[feature])
    ax0.axhline(0, color="0.8", lw=0.8)
    ax0.set_ylabel("Mean attribution")
    ax0.legend(fontsize=8)
    ax0.set_title(f"Attributions over time ({pid})")
    if err_dates:
        ax1.plot(err_dates, errs, "-", color="tab:blue", lw=1, label="reconstruction error")
        if thr is not None:
            ax1.axhline(thr, color="tab:red", ls="--", lw=1, label="threshold")
        ax1.legend(fontsize=8)
    ax1.set_ylabel("Error")
    ax1.set_xlabel("Date")
    fig.autofmt_xdate()
    fig.tight_layout()
    fig.savefig(out_path, dpi=120)
    plt.close(fig)
    return out_path
