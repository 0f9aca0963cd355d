"""From-scratch LSTM autoencoder for 7-day, 3-feature windows.

Single-layer LSTM encoder and decoder (EncDec-AD convention): the
encoder's final hidden and cell state form the latent; the decoder is
initialized with the latent, fed zero inputs, and its hidden states are
projected to feature space in reverse time order, then re-reversed so
the reconstruction aligns day-for-day with the input. All arithmetic is
64-bit, training is sequential and bitwise deterministic for a fixed
seed, and loss is plain MSE over all 21 cells.

Gate weights are stored stacked as (4H, D) / (4H, H) blocks in the order
input, forget, cell, output; per-gate views are exposed as attributes.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict

import numpy as np

N_FEATURES = 3
SEQ_LEN = 7

_GATES = ("i", "f", "c", "o")
PARAM_KEYS = ("encoder.w", "encoder.u", "encoder.b",
              "decoder.w", "decoder.u", "decoder.b", "w_out", "b_out")

MODEL_FORMAT = "wearanom-model-v1"


@dataclass
class TrainConfig:
    hidden_size: int = 64
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 200
    patience: int = 10
    validation_fraction: float = 0.2
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def validate(self) -> None:
        if self.hidden_size <= 0:
            raise ValueError("hidden_size must be positive")
        if self.patience < 1:
            raise ValueError("patience must be at least 1")
        if not 0.0 < self.validation_fraction < 1.0:
            raise ValueError("validation_fraction must be in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ValueError("batch_size and max_epochs must be positive")


class LstmCell:
    """Parameter block for one LSTM layer (no state)."""

    __slots__ = ("w", "u", "b", "hidden_size")

    def __init__(self, w: np.ndarray, u: np.ndarray, b: np.ndarray):
        self.w = w  # (4H, D)
        self.u = u  # (4H, H)
        self.b = b  # (4H,)
        self.hidden_size = u.shape[1]

    def _gate(self, tensor: np.ndarray, gate: str) -> np.ndarray:
        g = _GATES.index(gate)
        h = self.hidden_size
        return tensor[g * h:(g + 1) * h]

    def __getattr__(self, name: str):
        # w_i, u_f, b_c, ... -> per-gate views of the stacked tensors
        if len(name) == 3 and name[1] == "_" and name[0] in "wub" and name[2] in _GATES:
            return self._gate(getattr(self, name[0]), name[2])
        raise AttributeError(name)


class LstmAutoencoder:
    """Trainable parameters plus training metadata."""

    def __init__(self, encoder: LstmCell, decoder: LstmCell,
                 w_out: np.ndarray, b_out: np.ndarray, *, seed: int):
        self.encoder = encoder
        self.decoder = decoder
        self.w_out = w_out  # (H, 3)
        self.b_out = b_out  # (3,)
        self.seed = seed
        self.threshold: float | None = None
        self.validation_errors: list[float] | None = None
        self.normalization: dict | None = None  # per-participant constants
        self.train_config: TrainConfig | None = None

    @property
    def hidden_size(self) -> int:
        return self.encoder.hidden_size

    def params(self) -> dict[str, np.ndarray]:
        return {
            "encoder.w": self.encoder.w, "encoder.u": self.encoder.u, "encoder.b": self.encoder.b,
            "decoder.w": self.decoder.w, "decoder.u": self.decoder.u, "decoder.b": self.decoder.b,
            "w_out": self.w_out, "b_out": self.b_out,
        }

    def set_params(self, params: dict[str, np.ndarray]) -> None:
        self.encoder.w[...] = params["encoder.w"]
        self.encoder.u[...] = params["encoder.u"]
        self.encoder.b[...] = params["encoder.b"]
        self.decoder.w[...] = params["decoder.w"]
        self.decoder.u[...] = params["decoder.u"]
        self.decoder.b[...] = params["decoder.b"]
        self.w_out[...] = params["w_out"]
        self.b_out[...] = params["b_out"]

    def copy_params(self) -> dict[str, np.ndarray]:
        return {k: v.copy() for k, v in self.params().items()}


@dataclass
class TrainReport:
    epochs_run: int
    best_epoch: int
    best_val_loss: float
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)
    validation_errors: list[float] = field(default_factory=list)


def init_model(config: TrainConfig) -> LstmAutoencoder:
    """Parameters uniform in [-1/sqrt(H), 1/sqrt(H)], seeded and deterministic."""
    config.validate()
    h = config.hidden_size
    rng = np.random.default_rng(config.seed)
    bound = 1.0 / np.sqrt(h)

    def uniform(*shape):
        return rng.uniform(-bound, bound, size=shape)

    encoder = LstmCell(uniform(4 * h, N_FEATURES), uniform(4 * h, h), uniform(4 * h))
    decoder = LstmCell(uniform(4 * h, N_FEATURES), uniform(4 * h, h), uniform(4 * h))
    model = LstmAutoencoder(encoder, decoder, uniform(h, N_FEATURES), uniform(N_FEATURES),
                            seed=config.seed)
    model.train_config = config
    return model


def _sigmoid(x: np.ndarray) -> np.ndarray:
    # tanh formulation is overflow-safe for large |x|
    return 0.5 * (np.tanh(0.5 * x) + 1.0)


def _cell_step(cell: LstmCell, x: np.ndarray | None, h: np.ndarray, c: np.ndarray):
    hs = cell.hidden_size
    a = h @ cell.u.T + cell.b
    if x is not None:
        a = a + x @ cell.w.T
    i = _sigmoid(a[:, :hs])
    f = _sigmoid(a[:, hs:2 * hs])
    g = np.tanh(a[:, 2 * hs:3 * hs])
    o = _sigmoid(a[:, 3 * hs:])
    c_new = f * c + i * g
    tanh_c = np.tanh(c_new)
    h_new = o * tanh_c
    cache = (x, h, c, i, f, g, o, tanh_c)
    return h_new, c_new, cache


def _forward(model: LstmAutoencoder, xb: np.ndarray, *, need_cache: bool = False):
    """Batched forward pass. xb: (N, 7, 3). Returns (recon, caches)."""
    n = xb.shape[0]
    hs = model.hidden_size
    h = np.zeros((n, hs))
    c = np.zeros((n, hs))
    enc_caches = []
    for t in range(xb.shape[1]):
        h, c, cache = _cell_step(model.encoder, xb[:, t, :], h, c)
        if need_cache:
            enc_caches.append(cache)
    dec_caches = []
    dec_h = []
    for _ in range(xb.shape[1]):
        h, c, cache = _cell_step(model.decoder, None, h, c)
        dec_h.append(h)
        if need_cache:
            dec_caches.append(cache)
    y = np.stack(dec_h, axis=1) @ model.w_out + model.b_out
    recon = y[:, ::-1, :]
    return recon, (enc_caches, dec_caches, dec_h)


def _check_window(window: np.ndarray) -> np.ndarray:
    window = np.asarray(window, dtype=np.float64)
    if window.shape != (SEQ_LEN, N_FEATURES):
        raise ValueError(f"window must have shape ({SEQ_LEN}, {N_FEATURES})")
    if not np.isfinite(window).all():
        raise ValueError("window contains non-finite values")
    return window


def forward_reconstruct(model: LstmAutoencoder, window: np.ndarray) -> np.ndarray:
    """Reconstruct one 7x3 window, aligned day-for-day with the input."""
    window = _check_window(window)
    recon, _ = _forward(model, window[None])
    return recon[0]


def reconstruction_error(model: LstmAutoencoder, window: np.ndarray) -> float:
    """Mean squared error over all 21 cells."""
    window = _check_window(window)
    recon, _ = _forward(model, window[None])
    return float(np.mean((recon[0] - window) ** 2))


def reconstruction_errors(model: LstmAutoencoder, xb: np.ndarray, *,
                          batch_size: int = 4096) -> np.ndarray:
    """Per-window MSE for a batch (N, 7, 3); chunked to bound memory."""
    xb = np.asarray(xb, dtype=np.float64)
    if not np.isfinite(xb).all():
        raise ValueError("windows contain non-finite values")
    out = np.empty(xb.shape[0])
    for lo in range(0, xb.shape[0], batch_size):
        chunk = xb[lo:lo + batch_size]
        recon, _ = _forward(model, chunk)
        out[lo:lo + chunk.shape[0]] = np.mean((recon - chunk) ** 2, axis=(1, 2))
    return out


def _cell_backward(cell: LstmCell, cache, dh: np.ndarray, dc: np.ndarray,
                   grads_w, grads_u, grads_b):
    x, h_prev, c_prev, i, f, g, o, tanh_c = cache
    do = dh * tanh_c
    dc = dc + dh * o * (1.0 - tanh_c ** 2)
    di = dc * g
    df = dc * c_prev
    dg = dc * i
    dc_prev = dc * f
    da = np.concatenate([
        di * i * (1.0 - i),
        df * f * (1.0 - f),
        dg * (1.0 - g ** 2),
        do * o * (1.0 - o),
    ], axis=1)
    if x is not None:
        grads_w += da.T @ x
    grads_u += da.T @ h_prev
    grads_b += da.sum(axis=0)
    dh_prev = da @ cell.u
    return dh_prev, dc_prev


def backprop_grads(model: LstmAutoencoder, xb: np.ndarray):
    """Exact gradients of the mean batch reconstruction error.

    Returns ``(loss, grads)`` with one gradient array per parameter
    tensor, keyed like :meth:`LstmAutoencoder.params`.
    """
    xb = np.asarray(xb, dtype=np.float64)
    if xb.ndim != 3 or xb.shape[0] == 0:
        raise ValueError("batch must be a non-empty (N, 7, 3) array")
    n = xb.shape[0]
    recon, (enc_caches, dec_caches, dec_h) = _forward(model, xb, need_cache=True)
    diff = recon - xb
    loss = float(np.mean(diff ** 2))

    grads = {k: np.zeros_like(v) for k, v in model.params().items()}
    # d loss / d recon, re-reversed to decoder step order
    drecon = (2.0 / diff.size) * diff
    dy = drecon[:, ::-1, :]

    hs = model.hidden_size
    dh = np.zeros((n, hs))
    dc = np.zeros((n, hs))
    for t in range(len(dec_caches) - 1, -1, -1):
        dy_t = dy[:, t, :]
        grads["w_out"] += dec_h[t].T @ dy_t
        grads["b_out"] += dy_t.sum(axis=0)
        dh = dh + dy_t @ model.w_out.T
        dh, dc = _cell_backward(model.decoder, dec_caches[t], dh, dc,
                                grads["decoder.w"], grads["decoder.u"], grads["decoder.b"])
    for t in range(len(enc_caches) - 1, -1, -1):
        dh, dc = _cell_backward(model.encoder, enc_caches[t], dh, dc,
                                grads["encoder.w"], grads["encoder.u"], grads["encoder.b"])
    return loss, grads


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], config: TrainConfig):
        self.config = config
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]) -> None:
        cfg = self.config
        self.t += 1
        bc1 = 1.0 - cfg.beta1 ** self.t
        bc2 = 1.0 - cfg.beta2 ** self.t
        for key in PARAM_KEYS:
            g = grads[key]
            m = self.m[key]
            v = self.v[key]
            m *= cfg.beta1
            m += (1.0 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1.0 - cfg.beta2) * g * g
            params[key] -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.eps)


def as_window_array(windows) -> np.ndarray:
    """Coerce a list of Window objects or an array to (N, 7, 3) float64."""
    if isinstance(windows, np.ndarray):
        arr = windows.astype(np.float64, copy=False)
    else:
        arr = np.stack([np.asarray(getattr(w, "values", w), dtype=np.float64) for w in windows])
    if arr.ndim != 3 or arr.shape[1] != SEQ_LEN or arr.shape[2] != N_FEATURES:
        raise ValueError(f"expected (N, {SEQ_LEN}, {N_FEATURES}) windows, got {arr.shape}")
    return arr


def train(windows, config: TrainConfig) -> tuple[LstmAutoencoder, TrainReport]:
    """Train on normal windows with an 80/20 seeded split and early stopping.

    Stops once validation loss has not improved for ``config.patience``
    consecutive epochs (or at ``max_epochs``); the returned parameters
    are the snapshot from the best-validation epoch, and the report
    carries the per-window validation errors used for thresholding.
    """
    config.validate()
    x = as_window_array(windows)
    n = x.shape[0]
    if n < 10:
        raise ValueError(f"need at least 10 training windows, got {n}")

    model = init_model(config)
    data_rng = np.random.default_rng([config.seed, 1])
    perm = data_rng.permutation(n)
    n_val = min(max(1, int(round(config.validation_fraction * n))), n - 1)
    val_idx, train_idx = perm[:n_val], perm[n_val:]
    x_train, x_val = x[train_idx], x[val_idx]

    params = model.params()
    adam = _Adam(params, config)
    best_val = np.inf
    best_epoch = 0
    best_params = model.copy_params()
    bad_epochs = 0
    train_losses: list[float] = []
    val_losses: list[float] = []

    epoch = 0
    for epoch in range(1, config.max_epochs + 1):
        order = data_rng.permutation(x_train.shape[0])
        batch_losses = []
        for lo in range(0, order.size, config.batch_size):
            batch = x_train[order[lo:lo + config.batch_size]]
            loss, grads = backprop_grads(model, batch)
            adam.step(params, grads)
            batch_losses.append(loss)
        train_losses.append(float(np.mean(batch_losses)))
        val_loss = float(np.mean(reconstruction_errors(model, x_val)))
        val_losses.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_epoch = epoch
            best_params = model.copy_params()
            bad_epochs = 0
        else:
            bad_epochs += 1
            if bad_epochs >= config.patience:
                break

    model.set_params(best_params)
    val_errors = reconstruction_errors(model, x_val)
    model.validation_errors = [float(e) for e in val_errors]
    report = TrainReport(
        epochs_run=epoch,
        best_epoch=best_epoch,
        best_val_loss=best_val,
        train_losses=train_losses,
        val_losses=val_losses,
        validation_errors=model.validation_errors,
    )
    return model, report


def gradient_check(model: LstmAutoencoder, window: np.ndarray, h: float = 1e-5, *,
                   max_coords: int = 200, seed: int = 0) -> float:
    """Max relative error of BPTT gradients vs central finite differences.

    Samples up to ``max_coords`` parameter coordinates (all of them on
    small models). The relative-error denominator is floored at 1e-6 so
    provably-dead coordinates (zero both ways) compare as zero.
    """
    if h <= 0:
        raise ValueError("finite-difference step h must be positive")
    xb = _check_window(window)[None]
    _, grads = backprop_grads(model, xb)
    params = model.params()
    rng = np.random.default_rng(seed)

    sizes = [(k, params[k].size) for k in PARAM_KEYS]
    total = sum(s for _, s in sizes)
    picks = rng.choice(total, size=min(max_coords, total), replace=False)

    def loss_now() -> float:
        recon, _ = _forward(model, xb)
        return float(np.mean((recon - xb) ** 2))

    max_rel = 0.0
    for flat in np.sort(picks):
        offset = int(flat)
        for key, size in sizes:
            if offset < size:
                break
            offset -= size
        tensor = params[key].reshape(-1)
        orig = tensor[offset]
        tensor[offset] = orig + h
        lp = loss_now()
        tensor[offset] = orig - h
        lm = loss_now()
        tensor[offset] = orig
        numeric = (lp - lm) / (2.0 * h)
        analytic = grads[key].reshape(-1)[offset]
        rel = abs(numeric - analytic) / max(abs(numeric), abs(analytic), 1e-6)
        max_rel = max(max_rel, rel)
    return max_rel


def _tensor_to_list(a: np.ndarray):
    return a.tolist()


def model_to_dict(model: LstmAutoencoder) -> dict:
    h = model.hidden_size

    def cell_dict(cell: LstmCell) -> dict:
        out = {}
        for g in _GATES:
            out[f"w_{g}"] = _tensor_to_list(cell._gate(cell.w, g))
            out[f"u_{g}"] = _tensor_to_list(cell._gate(cell.u, g))
            out[f"b_{g}"] = _tensor_to_list(cell._gate(cell.b, g))
        return out

    return {
        "format": MODEL_FORMAT,
        "hidden_size": h,
        "seed": model.seed,
        "train_config": asdict(model.train_config) if model.train_config else None,
        "threshold": model.threshold,
        "validation_errors": model.validation_errors,
        "normalization": model.normalization,
        "params": {
            "encoder": cell_dict(model.encoder),
            "decoder": cell_dict(model.decoder),
            "w_out": _tensor_to_list(model.w_out),
            "b_out": _tensor_to_list(model.b_out),
        },
    }


def model_from_dict(doc: dict) -> LstmAutoencoder:
    if doc.get("format") != MODEL_FORMAT:
        raise ValueError(f"unsupported model format {doc.get('format')!r}")
    h = int(doc["hidden_size"])

    def cell_from(d: dict) -> LstmCell:
        w = np.concatenate([np.asarray(d[f"w_{g}"], dtype=np.float64) for g in _GATES])
        u = np.concatenate([np.asarray(d[f"u_{g}"], dtype=np.float64) for g in _GATES])
        b = np.concatenate([np.asarray(d[f"b_{g}"], dtype=np.float64) for g in _GATES])
        if w.shape != (4 * h, N_FEATURES) or u.shape != (4 * h, h) or b.shape != (4 * h,):
            raise ValueError("parameter tensor shapes inconsistent with hidden size")
        return LstmCell(w, u, b)

    p = doc["params"]
    model = LstmAutoencoder(
        cell_from(p["encoder"]), cell_from(p["decoder"]),
        np.asarray(p["w_out"], dtype=np.float64),
        np.asarray(p["b_out"], dtype=np.float64),
        seed=int(doc["seed"]),
    )
    if model.w_out.shape != (h, N_FEATURES) or model.b_out.shape != (N_FEATURES,):
        raise ValueError("projection tensor shapes inconsistent with hidden size")
    model.threshold = doc.get("threshold")
    model.validation_errors = doc.get("validation_errors")
    model.normalization = doc.get("normalization")
    if doc.get("train_config"):
        model.train_config = TrainConfig(**doc["train_config"])
    return model


def save_model(model: LstmAutoencoder, path, *, extra: dict | None = None) -> None:
    doc = model_to_dict(model)
    if extra:
        doc.update(extra)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")


def load_model(path) -> LstmAutoencoder:
    with open(path, "r", encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
