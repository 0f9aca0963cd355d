"""Shapley-value attribution of reconstruction error to window cells.

The players are the window's cells (all 21 by default; tests may restrict
to a subset, in which case non-player cells always keep the window's own
values). The value of a coalition S is the mean, over a background set
of normal windows, of the reconstruction error of the window with player
cells outside S replaced by the background window's cells. Exact
enumeration is available up to 16 players; otherwise a seeded
permutation-sampling estimator is used. Both estimators telescope, so
the attributions plus the base value always sum to the window's own
reconstruction error.
"""

from __future__ import annotations

import datetime as dt
import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .features import FEATURE_NAMES, F_RHR, F_SLEEP, F_STEPS
from .lstm_ae import N_FEATURES, SEQ_LEN, LstmAutoencoder, reconstruction_errors
from .stats import chi_square_independence

EXACT_MAX_PLAYERS = 16
DEFAULT_PERMUTATIONS = 200
DEFAULT_BACKGROUND_SIZE = 50

# Rank ties break in this feature order (first wins).
RANK_TIE_ORDER = (F_RHR, F_STEPS, F_SLEEP)

N_CELLS = SEQ_LEN * N_FEATURES


@dataclass
class AttributionMatrix:
    participant_id: str
    end_date: dt.date
    phi: np.ndarray          # (7, 3) signed attributions
    base_value: float        # expected error over the background
    error: float             # the window's own reconstruction error
    feature_importance: np.ndarray  # (3,) sum over days of |phi|
    mode: str                # "exact" | "sampled"
    permutations: int
    background_size: int
    seed: int


def derive_seed(global_seed: int, *parts) -> int:
    """Stable per-window seed from the global seed and identifying parts."""
    text = ":".join([str(global_seed)] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def _coalition_values(model: LstmAutoencoder, window_flat: np.ndarray,
                      background_flat: np.ndarray, players: np.ndarray,
                      masks: np.ndarray) -> np.ndarray:
    """Mean background-replacement error for each coalition mask.

    ``masks`` is (C, k) boolean, True where the player keeps the window's
    value. Returns (C,) values.
    """
    c = masks.shape[0]
    b = background_flat.shape[0]
    use_bg = np.zeros((c, N_CELLS), dtype=bool)
    use_bg[:, players] = ~masks
    mixed = np.where(use_bg[:, None, :], background_flat[None, :, :], window_flat[None, None, :])
    errors = reconstruction_errors(model, mixed.reshape(c * b, SEQ_LEN, N_FEATURES))
    return errors.reshape(c, b).mean(axis=1)


def _exact_shapley(model, window_flat, background_flat, players):
    k = players.size
    n_subsets = 1 << k
    masks = np.zeros((n_subsets, k), dtype=bool)
    codes = np.arange(n_subsets, dtype=np.uint32)
    for j in range(k):
        masks[:, j] = (codes >> j) & 1
    values = _coalition_values(model, window_flat, background_flat, players, masks)
    popcount = masks.sum(axis=1)
    # weight of a subset S (not containing the player): |S|! (k-|S|-1)! / k!
    fact = [math.factorial(s) for s in range(k + 1)]
    weights = np.array([fact[s] * fact[k - s - 1] / fact[k] for s in range(k)])
    phi = np.zeros(k)
    for j in range(k):
        without = (codes >> j) & 1 == 0
        v_without = values[without]
        v_with = values[codes[without] | (1 << j)]
        phi[j] = np.sum(weights[popcount[without]] * (v_with - v_without))
    base = float(values[0])
    return phi, base


def _sampled_shapley(model, window_flat, background_flat, players, permutations, rng):
    k = players.size
    full_error = float(reconstruction_errors(
        model, window_flat.reshape(1, SEQ_LEN, N_FEATURES))[0])
    empty_mask = np.zeros((1, k), dtype=bool)
    base = float(_coalition_values(model, window_flat, background_flat, players, empty_mask)[0])

    perms = np.stack([rng.permutation(k) for _ in range(permutations)])
    # Deduplicate prefix coalitions across permutations before evaluating.
    mask_index: dict[bytes, int] = {}
    mask_rows: list[np.ndarray] = []
    prefix_ids = np.empty((permutations, k - 1), dtype=np.int64)
    for p in range(permutations):
        mask = np.zeros(k, dtype=bool)
        for t in range(k - 1):
            mask[perms[p, t]] = True
            key = mask.tobytes()
            idx = mask_index.get(key)
            if idx is None:
                idx = len(mask_rows)
                mask_index[key] = idx
                mask_rows.append(mask.copy())
            prefix_ids[p, t] = idx
    if mask_rows:
        values = _coalition_values(model, window_flat, background_flat, players,
                                   np.stack(mask_rows))
    else:
        values = np.empty(0)

    phi = np.zeros(k)
    for p in range(permutations):
        prev = base
        for t in range(k):
            cur = full_error if t == k - 1 else float(values[prefix_ids[p, t]])
            phi[perms[p, t]] += cur - prev
            prev = cur
    phi /= permutations
    return phi, base, full_error


def shapley_attributions(model: LstmAutoencoder, window, background, *,
                         participant_id: str = "", end_date: dt.date | None = None,
                         mode: str = "sampled",
                         permutations: int = DEFAULT_PERMUTATIONS,
                         seed: int = 0,
                         players: np.ndarray | None = None) -> AttributionMatrix:
    """Per-cell Shapley values of the window's reconstruction error.

    ``background`` is (B, 7, 3) normal windows; ``players`` optionally
    restricts the game to a subset of flat cell indices (day-major order,
    ``day * 3 + feature``). Exact mode enumerates all coalitions and
    requires at most 16 players.
    """
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (SEQ_LEN, N_FEATURES):
        raise ValueError(f"window must have shape ({SEQ_LEN}, {N_FEATURES})")
    background = np.asarray(background, dtype=np.float64)
    if background.ndim != 3 or background.shape[0] == 0:
        raise ValueError("background must be a non-empty (B, 7, 3) array")
    if players is None:
        players = np.arange(N_CELLS)
    else:
        players = np.asarray(players, dtype=np.int64)
        if players.size == 0 or np.unique(players).size != players.size:
            raise ValueError("players must be a non-empty set of distinct cell indices")
        if players.min() < 0 or players.max() >= N_CELLS:
            raise ValueError(f"player indices must be in [0, {N_CELLS})")

    window_flat = window.reshape(N_CELLS)
    background_flat = background.reshape(background.shape[0], N_CELLS)

    if mode == "exact":
        if players.size > EXACT_MAX_PLAYERS:
            raise ValueError(
                f"exact mode supports at most {EXACT_MAX_PLAYERS} players, got {players.size}")
        phi_players, base = _exact_shapley(model, window_flat, background_flat, players)
        n_perms = 0
    elif mode == "sampled":
        if permutations < 1:
            raise ValueError("permutations must be positive")
        rng = np.random.default_rng(seed)
        phi_players, base, _ = _sampled_shapley(
            model, window_flat, background_flat, players, permutations, rng)
        n_perms = permutations
    else:
        raise ValueError(f"unknown mode {mode!r} (expected 'exact' or 'sampled')")

    phi_flat = np.zeros(N_CELLS)
    phi_flat[players] = phi_players
    phi = phi_flat.reshape(SEQ_LEN, N_FEATURES)
    error = float(reconstruction_errors(model, window[None])[0])
    return AttributionMatrix(
        participant_id=participant_id,
        end_date=end_date if end_date is not None else dt.date(1970, 1, 1),
        phi=phi,
        base_value=base,
        error=error,
        feature_importance=np.abs(phi).sum(axis=0),
        mode=mode,
        permutations=n_perms,
        background_size=background.shape[0],
        seed=seed,
    )


def episode_feature_ranks(attributions: list[AttributionMatrix]) -> dict:
    """Rank features by mean per-window importance for one episode.

    Ties break in the declared order resting_hr, total_steps,
    sleep_minutes. Returns ``{"importance": {feature: value}, "rank":
    {feature: 1..3}}``.
    """
    if not attributions:
        raise ValueError("need at least one attributed window")
    importance = np.mean([a.feature_importance for a in attributions], axis=0)
    tie_pos = {f: i for i, f in enumerate(RANK_TIE_ORDER)}
    order = sorted(range(len(FEATURE_NAMES)), key=lambda f: (-importance[f], tie_pos[f]))
    ranks = {FEATURE_NAMES[f]: order.index(f) + 1 for f in range(len(FEATURE_NAMES))}
    return {
        "importance": {FEATURE_NAMES[f]: float(importance[f]) for f in range(len(FEATURE_NAMES))},
        "rank": ranks,
    }


def build_rank_table(entries: list[tuple[str, dict]]) -> dict:
    """Counts of each feature at each rank, per category.

    ``entries`` holds (category, rank-dict) pairs, one per episode, where
    rank-dict maps feature name to its rank.
    """
    table: dict = {}
    for category, ranks in entries:
        cat = table.setdefault(
            category, {f: {r: 0 for r in (1, 2, 3)} for f in FEATURE_NAMES})
        for feature, rank in ranks.items():
            cat[feature][rank] += 1
    return table


def rank_slice(table: dict, rank: int, categories: list[str] | None = None) -> np.ndarray:
    """Contingency matrix (categories x features) for one rank."""
    cats = categories if categories is not None else sorted(table)
    return np.array([[table[c][f][rank] for f in FEATURE_NAMES] for c in cats], dtype=np.float64)


def rank_distribution_test(table: np.ndarray) -> tuple[float, int, float]:
    """Pearson chi-square independence test on a rank-slice table."""
    return chi_square_independence(table)


def time_dynamic_attribution(attributions: list[AttributionMatrix]):
    """Per-day, per-feature attribution series from overlapping windows.

    Each calendar day's value is the mean of phi over all windows
    covering that day at the matching position. Returns ``(start_date,
    series)`` with series of shape (n_days, 3); days covered by no window
    are NaN.
    """
    if not attributions:
        raise ValueError("need at least one attribution")
    starts = [a.end_date - dt.timedelta(days=SEQ_LEN - 1) for a in attributions]
    start = min(starts)
    end = max(a.end_date for a in attributions)
    n_days = (end - start).days + 1
    sums = np.zeros((n_days, N_FEATURES))
    counts = np.zeros((n_days, N_FEATURES), dtype=np.int64)
    for a, w_start in zip(attributions, starts):
        base = (w_start - start).days
        sums[base:base + SEQ_LEN] += a.phi
        counts[base:base + SEQ_LEN] += 1
    with np.errstate(invalid="ignore"):
        series = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)
    return start, series
