"""Seven-layer ReLU classifier from request features to slice class.

Input layer, five hidden layers and a softmax output over
(eMBB, mMTC, URLLC). The first hidden layer can optionally be a 1-D
convolution across the feature vector; the layer count stays the same.
Training is plain minibatch SGD with hand-written backpropagation.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ..domain import PREDICTED_KINDS, RequestRecord, SliceKind
from ..errors import CompatibilityError, ConfigError, NumericError, ShapeError, StratificationError
from ..traffic import DEFAULT_BOUNDS, FEATURE_DIM, FeatureBounds, encode_batch
from .oracle import oracle_label

CHECKPOINT_FORMAT = "sliceforge-predictor"
CHECKPOINT_VERSION = 1
N_CLASSES = len(PREDICTED_KINDS)
N_HIDDEN = 5


@dataclass(frozen=True)
class LayerSpec:
    kind: str  # "input" | "dense" | "conv1d" | "output"
    width: int
    activation: str | None


@dataclass(frozen=True)
class ConvSpec:
    channels: int = 2
    kernel: int = 3

    def out_len(self, input_dim: int) -> int:
        return input_dim - self.kernel + 1


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int, shape: tuple[int, ...]) -> np.ndarray:
    r = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-r, r, size=shape)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


class SlicePredictorModel:
    def __init__(
        self,
        input_dim: int = FEATURE_DIM,
        hidden: Sequence[int] = (64, 64, 32, 32, 16),
        conv: ConvSpec | None = None,
        bounds: FeatureBounds = DEFAULT_BOUNDS,
        seed: int = 0,
        init: bool = True,
    ) -> None:
        hidden = tuple(int(h) for h in hidden)
        if len(hidden) != N_HIDDEN:
            raise ConfigError(f"the predictor has exactly {N_HIDDEN} hidden layers, got {len(hidden)} widths")
        if conv is not None:
            if not 1 <= conv.kernel <= input_dim or conv.channels < 1:
                raise ConfigError(f"bad conv layer {conv} for input width {input_dim}")
            # the conv layer's width is fixed by its geometry
            hidden = (conv.channels * conv.out_len(input_dim),) + hidden[1:]
        if min(hidden) < 1:
            raise ConfigError(f"hidden widths must be positive, got {hidden}")
        self.input_dim = int(input_dim)
        self.hidden = hidden
        self.conv = conv
        self.bounds = bounds
        self.seed = int(seed)
        self.params: list[np.ndarray] = self._zeros()
        if init:
            self.initialize(np.random.default_rng(self.seed))

    # parameter layout: per layer (weights, bias), conv first when enabled
    def param_shapes(self) -> list[tuple[int, ...]]:
        shapes: list[tuple[int, ...]] = []
        widths = [self.input_dim, *self.hidden, N_CLASSES]
        for i in range(len(widths) - 1):
            if i == 0 and self.conv is not None:
                shapes += [(self.conv.channels, self.conv.kernel), (self.conv.channels,)]
            else:
                shapes += [(widths[i + 1], widths[i]), (widths[i + 1],)]
        return shapes

    def _zeros(self) -> list[np.ndarray]:
        return [np.zeros(s) for s in self.param_shapes()]

    def initialize(self, rng: np.random.Generator) -> None:
        for j, shape in enumerate(self.param_shapes()):
            if j % 2 == 1:
                self.params[j] = np.zeros(shape)
            elif j == 0 and self.conv is not None:
                self.params[j] = glorot(rng, self.conv.kernel, self.conv.channels, shape)
            else:
                self.params[j] = glorot(rng, shape[1], shape[0], shape)

    @property
    def layers(self) -> list[LayerSpec]:
        specs = [LayerSpec("input", self.input_dim, None)]
        for i, width in enumerate(self.hidden):
            kind = "conv1d" if i == 0 and self.conv is not None else "dense"
            specs.append(LayerSpec(kind, width, "relu"))
        specs.append(LayerSpec("output", N_CLASSES, "softmax"))
        return specs

    def _patch_index(self) -> np.ndarray:
        k = self.conv.kernel
        return np.arange(self.conv.out_len(self.input_dim))[:, None] + np.arange(k)[None, :]

    def _check_input(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.input_dim:
            raise ShapeError(f"expected features of width {self.input_dim}, got shape {X.shape}")
        return X

    def forward(self, X: np.ndarray) -> tuple[np.ndarray, list]:
        X = self._check_input(X)
        cache: list = []
        a = X
        p = self.params
        for i in range(N_HIDDEN):
            W, b = p[2 * i], p[2 * i + 1]
            if i == 0 and self.conv is not None:
                patches = X[:, self._patch_index()]  # (n, L', k)
                z = np.einsum("nlk,ck->ncl", patches, W) + b[None, :, None]
                z = z.reshape(len(X), -1)
                cache.append((patches, z))
            else:
                z = a @ W.T + b
                cache.append((a, z))
            a = np.maximum(z, 0.0)
        W, b = p[-2], p[-1]
        logits = a @ W.T + b
        cache.append((a, logits))
        return logits, cache

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        logits, _ = self.forward(X)
        return softmax(logits)

    def loss(self, X: np.ndarray, y: np.ndarray) -> float:
        logits, _ = self.forward(X)
        return _cross_entropy(logits, np.asarray(y))

    def loss_and_grads(self, X: np.ndarray, y: np.ndarray) -> tuple[float, list[np.ndarray]]:
        y = np.asarray(y)
        logits, cache = self.forward(X)
        n = logits.shape[0]
        loss = _cross_entropy(logits, y)
        probs = softmax(logits)
        d = probs
        d[np.arange(n), y] -= 1.0
        d /= n

        grads: list[np.ndarray] = [None] * len(self.params)  # type: ignore[list-item]
        a_prev, _ = cache[-1]
        grads[-2] = d.T @ a_prev
        grads[-1] = d.sum(axis=0)
        da = d @ self.params[-2]
        for i in range(N_HIDDEN - 1, -1, -1):
            inp, z = cache[i]
            dz = da * (z > 0)
            if i == 0 and self.conv is not None:
                dz3 = dz.reshape(n, self.conv.channels, -1)
                grads[0] = np.einsum("ncl,nlk->ck", dz3, inp)
                grads[1] = dz3.sum(axis=(0, 2))
            else:
                grads[2 * i] = dz.T @ inp
                grads[2 * i + 1] = dz.sum(axis=0)
                if i > 0:
                    da = dz @ self.params[2 * i]
        return loss, grads

    def copy(self) -> "SlicePredictorModel":
        clone = SlicePredictorModel(self.input_dim, self.hidden, self.conv, self.bounds, self.seed, init=False)
        clone.params = [p.copy() for p in self.params]
        return clone

    # checkpoints

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "conv": None if self.conv is None else {"channels": self.conv.channels, "kernel": self.conv.kernel},
            "classes": [k.value for k in PREDICTED_KINDS],
            "bounds": self.bounds.as_dict(),
            "seed": self.seed,
            "params": [{"shape": list(p.shape), "data": [float(v) for v in p.ravel()]} for p in self.params],
        }

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), separators=(",", ":")) + "\n")

    @classmethod
    def from_dict(cls, doc: dict) -> "SlicePredictorModel":
        if doc.get("format") != CHECKPOINT_FORMAT:
            raise CompatibilityError(f"not a predictor checkpoint (format={doc.get('format')!r})")
        if doc.get("version") != CHECKPOINT_VERSION:
            raise CompatibilityError(f"unsupported checkpoint version {doc.get('version')!r}")
        if doc.get("classes") != [k.value for k in PREDICTED_KINDS]:
            raise CompatibilityError(f"checkpoint class order {doc.get('classes')} does not match")
        conv = None if doc["conv"] is None else ConvSpec(**doc["conv"])
        bounds = FeatureBounds(**{k: tuple(v) for k, v in doc["bounds"].items()})
        model = cls(doc["input_dim"], doc["hidden"], conv, bounds, doc.get("seed", 0), init=False)
        expected = model.param_shapes()
        stored = doc["params"]
        if len(stored) != len(expected):
            raise ShapeError(f"checkpoint holds {len(stored)} arrays, model needs {len(expected)}")
        for j, (entry, shape) in enumerate(zip(stored, expected)):
            if tuple(entry["shape"]) != shape or len(entry["data"]) != math.prod(shape):
                raise ShapeError(f"parameter {j}: checkpoint shape {entry['shape']} != expected {list(shape)}")
            model.params[j] = np.array(entry["data"], dtype=np.float64).reshape(shape)
        return model

    @classmethod
    def load(cls, path: str | Path) -> "SlicePredictorModel":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise CompatibilityError(f"{path}: not a JSON checkpoint ({exc})") from exc
        return cls.from_dict(doc)


def _cross_entropy(logits: np.ndarray, y: np.ndarray) -> float:
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1))
    loss = float(np.mean(log_z - shifted[np.arange(len(y)), y]))
    if not math.isfinite(loss):
        raise NumericError("cross-entropy is not finite")
    return loss


def predict(model: SlicePredictorModel, features: np.ndarray) -> tuple[np.ndarray, SliceKind]:
    """Class probabilities and the argmax slice for one feature vector.

    Ties resolve to the earliest class in (eMBB, mMTC, URLLC) order.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 1 or features.shape[0] != model.input_dim:
        raise ShapeError(f"expected a feature vector of length {model.input_dim}, got shape {features.shape}")
    probs = model.predict_proba(features)[0]
    return probs, PREDICTED_KINDS[int(np.argmax(probs))]


def predict_batch(model: SlicePredictorModel, X: np.ndarray) -> np.ndarray:
    """Argmax class indices for a feature matrix (np.argmax keeps the first maximum)."""
    return np.argmax(model.predict_proba(X), axis=1)


@dataclass(frozen=True)
class TrainConfig:
    train_fraction: float = 0.65
    epochs: int = 30
    learning_rate: float = 0.05
    batch_size: int = 32
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64, 32, 32, 16)
    conv: ConvSpec | None = None

    def __post_init__(self) -> None:
        if not 0 < self.train_fraction < 1:
            raise ConfigError(f"train_fraction must lie in (0, 1), got {self.train_fraction}")
        if self.epochs < 1 or self.batch_size < 1:
            raise ConfigError("epochs and batch_size must be positive")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be positive, got {self.learning_rate}")


@dataclass
class TrainResult:
    model: SlicePredictorModel
    loss_history: list[float]
    train_indices: np.ndarray
    test_indices: np.ndarray
    labels: np.ndarray = field(repr=False)
    features: np.ndarray = field(repr=False)

    def test_accuracy(self) -> float:
        if len(self.test_indices) == 0:
            return float("nan")
        pred = predict_batch(self.model, self.features[self.test_indices])
        return float(np.mean(pred == self.labels[self.test_indices]))

    def test_pairs(self) -> list[tuple[SliceKind, SliceKind]]:
        """(true, predicted) pairs over the held-out split."""
        pred = predict_batch(self.model, self.features[self.test_indices])
        truth = self.labels[self.test_indices]
        return [(PREDICTED_KINDS[t], PREDICTED_KINDS[p]) for t, p in zip(truth.tolist(), pred.tolist())]


def stratified_split(labels: np.ndarray, fraction: float, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    train, test = [], []
    for c in range(N_CLASSES):
        idx = np.flatnonzero(labels == c)
        if len(idx) == 0:
            raise StratificationError(f"class {PREDICTED_KINDS[c].value} has no examples")
        idx = rng.permutation(idx)
        k = int(round(fraction * len(idx)))
        if k == 0:
            raise StratificationError(f"class {PREDICTED_KINDS[c].value} is absent from the training split")
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def labels_for(records: Sequence[RequestRecord]) -> np.ndarray:
    index = {k: i for i, k in enumerate(PREDICTED_KINDS)}
    return np.array([index[r.label if r.label is not None else oracle_label(r)] for r in records], dtype=np.int64)


def train_predictor(
    records: Sequence[RequestRecord],
    config: TrainConfig = TrainConfig(),
    labels: Sequence[SliceKind] | np.ndarray | None = None,
    bounds: FeatureBounds = DEFAULT_BOUNDS,
) -> TrainResult:
    """Train on a stratified ``train_fraction`` split and keep the rest held out.

    Labels default to each record's own label, falling back to the rule
    oracle. ``loss_history[0]`` is the training loss before the first
    update; each further entry is the full training-split loss after an
    epoch.
    """
    if len(records) == 0:
        raise StratificationError("cannot train on an empty dataset")
    if labels is None:
        y = labels_for(records)
    else:
        index = {k: i for i, k in enumerate(PREDICTED_KINDS)}
        y = np.array([index[k] if isinstance(k, SliceKind) else int(k) for k in labels], dtype=np.int64)
        if len(y) != len(records):
            raise ShapeError(f"{len(y)} labels for {len(records)} records")
    X = encode_batch(records, bounds)
    return train_arrays(X, y, config, bounds)


def train_arrays(X: np.ndarray, y: np.ndarray, config: TrainConfig, bounds: FeatureBounds = DEFAULT_BOUNDS) -> TrainResult:
    rng = np.random.default_rng(config.seed)
    train_idx, test_idx = stratified_split(y, config.train_fraction, rng)
    model = SlicePredictorModel(X.shape[1], config.hidden, config.conv, bounds, seed=config.seed)
    Xtr, ytr = X[train_idx], y[train_idx]
    history = [model.loss(Xtr, ytr)]
    lr = config.learning_rate
    for _ in range(config.epochs):
        order = rng.permutation(len(train_idx))
        for start in range(0, len(order), config.batch_size):
            batch = order[start : start + config.batch_size]
            _, grads = model.loss_and_grads(Xtr[batch], ytr[batch])
            for p, g in zip(model.params, grads):
                p -= lr * g
        history.append(model.loss(Xtr, ytr))
    return TrainResult(model, history, train_idx, test_idx, y, X)
