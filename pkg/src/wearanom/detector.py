"""Percentile threshold selection and window-level anomaly flagging.

The threshold is a percentile of the empirical validation-error
distribution with inclusive linear interpolation between order
statistics; the 100th percentile is exactly the maximum, and flagging
uses a strict ``error > threshold`` comparison so the validation maximum
itself is never flagged at the 100th percentile.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass

import numpy as np

from .features import Window
from .lstm_ae import LstmAutoencoder, reconstruction_errors

DEFAULT_PERCENTILE = 95.0


@dataclass(frozen=True)
class Detection:
    participant_id: str
    end_date: dt.date
    error: float
    threshold: float
    flagged: bool
    label: str
    episode_ids: tuple[str, ...]


def select_threshold(validation_errors, percentile: float) -> float:
    """Inclusive linear-interpolation percentile of the error list."""
    errors = np.asarray(validation_errors, dtype=np.float64)
    if errors.size == 0:
        raise ValueError("validation error list is empty")
    if not 0.0 <= percentile <= 100.0:
        raise ValueError("percentile must be in [0, 100]")
    return float(np.percentile(errors, percentile))


def detect(model: LstmAutoencoder, windows: list[Window], threshold: float) -> list[Detection]:
    """One Detection per window; flagged iff error exceeds the threshold."""
    if not windows:
        return []
    values = np.stack([w.values for w in windows])
    errors = reconstruction_errors(model, values)
    return [
        Detection(
            participant_id=w.participant_id,
            end_date=w.end_date,
            error=float(e),
            threshold=float(threshold),
            flagged=bool(e > threshold),
            label=w.label,
            episode_ids=w.episode_ids,
        )
        for w, e in zip(windows, errors)
    ]


def reflag(detections: list[Detection], threshold: float) -> list[Detection]:
    """Re-apply the flag rule at a different threshold (for sweeps)."""
    return [
        Detection(d.participant_id, d.end_date, d.error, float(threshold),
                  d.error > threshold, d.label, d.episode_ids)
        for d in detections
    ]
