"""Per-slice utilization forecaster: a single LSTM cell with a linear read-out.

Utilization percentages are scaled to [0, 1] on the way in and back to
percent on the way out. The model reads a window of recent samples and
predicts the next one; predictions are clamped to [0, 100].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from ..domain import SliceKind
from ..errors import CompatibilityError, ConfigError, InsufficientDataError, NumericError, ShapeError
from .predictor import glorot

CHECKPOINT_FORMAT = "sliceforge-forecaster"
CHECKPOINT_VERSION = 1


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


class ForecasterModel:
    """LSTM cell; gate blocks are stacked in (input, forget, output, candidate) order."""

    def __init__(self, hidden: int = 16, window: int = 12, seed: int = 0, init: bool = True) -> None:
        if hidden < 1 or window < 1:
            raise ConfigError("hidden size and window must be positive")
        self.hidden = int(hidden)
        self.window = int(window)
        self.seed = int(seed)
        H = self.hidden
        # Wx (4H, 1), Wh (4H, H), b (4H,), Wy (1, H), by (1,)
        self.params: list[np.ndarray] = [np.zeros((4 * H, 1)), np.zeros((4 * H, H)), np.zeros(4 * H), np.zeros((1, H)), np.zeros(1)]
        if init:
            rng = np.random.default_rng(self.seed)
            self.params[0] = glorot(rng, 1, 4 * H, (4 * H, 1))
            self.params[1] = glorot(rng, H, 4 * H, (4 * H, H))
            self.params[2][H : 2 * H] = 1.0  # forget-gate bias
            self.params[3] = glorot(rng, H, 1, (1, H))

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list]:
        """X: (n, T) scaled inputs. Returns scaled outputs (n,) and the step cache."""
        Wx, Wh, b, Wy, by = self.params
        H = self.hidden
        n, T = X.shape
        h = np.zeros((n, H))
        c = np.zeros((n, H))
        cache = []
        for t in range(T):
            x = X[:, t : t + 1]
            z = x @ Wx.T + h @ Wh.T + b
            i = _sigmoid(z[:, :H])
            f = _sigmoid(z[:, H : 2 * H])
            o = _sigmoid(z[:, 2 * H : 3 * H])
            g = np.tanh(z[:, 3 * H :])
            c_new = f * c + i * g
            tc = np.tanh(c_new)
            h_new = o * tc
            cache.append((x, h, c, i, f, o, g, tc))
            h, c = h_new, c_new
        y = (h @ Wy.T + by)[:, 0]
        cache.append(h)
        return y, cache

    def loss(self, X: np.ndarray, target: np.ndarray) -> float:
        y, _ = self.forward(X)
        return _mse(y, target)

    def loss_and_grads(self, X: np.ndarray, target: np.ndarray) -> tuple[float, list[np.ndarray]]:
        Wx, Wh, b, Wy, by = self.params
        y, cache = self.forward(X)
        n = len(y)
        loss = _mse(y, target)
        dy = (2.0 / n) * (y - target)[:, None]  # (n, 1)
        h_last = cache[-1]
        dWy = dy.T @ h_last
        dby = dy.sum(axis=0)
        dh = dy @ Wy
        dc = np.zeros_like(dh)
        dWx = np.zeros_like(Wx)
        dWh = np.zeros_like(Wh)
        db = np.zeros_like(b)
        for t in range(len(cache) - 2, -1, -1):
            x, h_prev, c_prev, i, f, o, g, tc = cache[t]
            do = dh * tc
            dc = dc + dh * o * (1.0 - tc**2)
            di = dc * g
            dg = dc * i
            df = dc * c_prev
            dz = np.concatenate(
                [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g**2)],
                axis=1,
            )
            dWx += dz.T @ x
            dWh += dz.T @ h_prev
            db += dz.sum(axis=0)
            dh = dz @ Wh
            dc = dc * f
        return loss, [dWx, dWh, db, dWy, dby]

    def predict(self, window: Sequence[float]) -> float:
        w = np.asarray(window, dtype=np.float64)
        if w.ndim != 1 or len(w) != self.window:
            raise ShapeError(f"expected a window of {self.window} samples, got shape {w.shape}")
        y, _ = self.forward(w[None, :] / 100.0)
        return float(np.clip(100.0 * y[0], 0.0, 100.0))

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "hidden": self.hidden,
            "window": self.window,
            "seed": self.seed,
            "params": [{"shape": list(p.shape), "data": [float(v) for v in p.ravel()]} for p in self.params],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def from_dict(cls, doc: dict) -> "ForecasterModel":
        if doc.get("format") != CHECKPOINT_FORMAT or doc.get("version") != CHECKPOINT_VERSION:
            raise CompatibilityError(f"not a forecaster checkpoint: {doc.get('format')!r} v{doc.get('version')!r}")
        model = cls(doc["hidden"], doc["window"], doc.get("seed", 0), init=False)
        for j, entry in enumerate(doc["params"]):
            shape = model.params[j].shape
            if tuple(entry["shape"]) != shape or len(entry["data"]) != math.prod(shape):
                raise ShapeError(f"forecaster parameter {j}: shape {entry['shape']} != {list(shape)}")
            model.params[j] = np.array(entry["data"], dtype=np.float64).reshape(shape)
        return model

    @classmethod
    def load(cls, path: str | Path) -> "ForecasterModel":
        return cls.from_dict(json.loads(Path(path).read_text()))


def _mse(y: np.ndarray, target: np.ndarray) -> float:
    loss = float(np.mean((y - target) ** 2))
    if not math.isfinite(loss):
        raise NumericError("forecaster loss is not finite")
    return loss


@dataclass(frozen=True)
class ForecasterConfig:
    window: int = 12  # 2 hours of 10-minute samples
    hidden: int = 16
    epochs: int = 60
    learning_rate: float = 0.5
    batch_size: int = 16
    seed: int = 0

    def __post_init__(self) -> None:
        if self.window < 1 or self.hidden < 1 or self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("window, hidden, epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate must be positive")


def sliding_windows(trace: Sequence[float], window: int) -> tuple[np.ndarray, np.ndarray]:
    """Scaled (inputs, next-sample targets) for every full window in ``trace``."""
    series = np.asarray(trace, dtype=np.float64) / 100.0
    n = len(series) - window
    idx = np.arange(n)[:, None] + np.arange(window)[None, :]
    return series[idx], series[window:]


def train_forecaster(
    trace: Sequence[float], config: ForecasterConfig = ForecasterConfig()
) -> tuple[ForecasterModel, list[float]]:
    """Fit one forecaster by truncated BPTT over sliding windows.

    Returns the model and the loss history: entry 0 is the loss before
    training, then one entry per epoch (mean squared error on the scaled
    series, over all windows).
    """
    if len(trace) < 2 * config.window:
        raise InsufficientDataError(
            f"trace has {len(trace)} samples; need at least {2 * config.window} for window {config.window}"
        )
    X, target = sliding_windows(trace, config.window)
    model = ForecasterModel(config.hidden, config.window, config.seed)
    rng = np.random.default_rng(config.seed)
    history = [model.loss(X, target)]
    for _ in range(config.epochs):
        order = rng.permutation(len(X))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            _, grads = model.loss_and_grads(X[batch], target[batch])
            for p, g in zip(model.params, grads):
                p -= config.learning_rate * g
        history.append(model.loss(X, target))
    return model, history


def forecast_load(
    models: Mapping[SliceKind, ForecasterModel], windows: Mapping[SliceKind, Sequence[float]]
) -> dict[SliceKind, float]:
    """Next-sample utilization prediction for every slice that has a model."""
    out = {}
    for kind, model in models.items():
        if kind not in windows:
            raise ShapeError(f"no utilization window supplied for {kind.value}")
        out[kind] = model.predict(windows[kind])
    return out
