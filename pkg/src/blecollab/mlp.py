"""Small feed-forward regressor for pairwise device distance.

Six inputs (RSS, transmitter estimate x/y, receiver estimate x/y, receiver
1 m calibration) pass through tanh or logistic hidden layers into a single
linear output. Inputs and targets are scaled to [-1, 1] with ranges stored
in the model. Training is full-batch scaled conjugate gradient (Moller,
1993) on mean squared error in the normalized target space.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ModelFormatError, ModelIntegrityError, TrainingDataError

N_FEATURES = 6
FEATURE_NAMES = ("rss_rx_tx", "tx_x", "tx_y", "rx_x", "rx_y", "rss_1m_rx")
INPUT_CLAMP = 1.5
FORMAT_NAME = "blecollab-mlp"
FORMAT_VERSION = 1

SCG_SIGMA = 5e-5
SCG_LAMBDA = 5e-7


def _tansig(z):
    return np.tanh(z)


def _tansig_deriv(a):
    return 1.0 - a * a


def _logsig(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _logsig_deriv(a):
    return a * (1.0 - a)


_ACTIVATIONS = {"tansig": (_tansig, _tansig_deriv), "logsig": (_logsig, _logsig_deriv)}


@dataclass(frozen=True)
class MlpFeatureVector:
    rss_rx_tx: float
    tx_x: float
    tx_y: float
    rx_x: float
    rx_y: float
    rss_1m_rx: float

    def as_array(self) -> np.ndarray:
        v = np.array(
            [self.rss_rx_tx, self.tx_x, self.tx_y, self.rx_x, self.rx_y, self.rss_1m_rx], dtype=float
        )
        if not np.all(np.isfinite(v)):
            raise ValueError("feature vector has non-finite components")
        return v


@dataclass(frozen=True)
class MlpArchitecture:
    hidden_layer_sizes: tuple[int, ...] = (3,)
    hidden_activation: str = "tansig"
    output_activation: str = "linear"
    epochs: int = 50

    def __post_init__(self) -> None:
        object.__setattr__(self, "hidden_layer_sizes", tuple(int(h) for h in self.hidden_layer_sizes))
        if not self.hidden_layer_sizes or any(h < 1 for h in self.hidden_layer_sizes):
            raise ValueError("hidden layer sizes must be positive")
        if self.hidden_activation not in _ACTIVATIONS:
            raise ValueError(f"unknown activation {self.hidden_activation!r}; use tansig or logsig")
        if self.output_activation != "linear":
            raise ValueError("only a linear output activation is supported")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @property
    def layer_sizes(self) -> tuple[int, ...]:
        return (N_FEATURES, *self.hidden_layer_sizes, 1)

    def to_dict(self) -> dict:
        return {
            "hidden_layer_sizes": list(self.hidden_layer_sizes),
            "hidden_activation": self.hidden_activation,
            "output_activation": self.output_activation,
            "epochs": self.epochs,
        }


ARCHITECTURES: dict[str, MlpArchitecture] = {
    "MLP1": MlpArchitecture((3,), "tansig"),
    "MLP2": MlpArchitecture((3,), "logsig"),
    "MLP3": MlpArchitecture((6, 3), "tansig"),
    "MLP4": MlpArchitecture((12, 6), "tansig"),
}


def architecture(arch_id: str, epochs: int | None = None) -> MlpArchitecture:
    try:
        base = ARCHITECTURES[arch_id.upper()]
    except KeyError:
        raise ValueError(f"unknown architecture {arch_id!r}; valid ids: {', '.join(ARCHITECTURES)}") from None
    if epochs is None:
        return base
    return MlpArchitecture(base.hidden_layer_sizes, base.hidden_activation, base.output_activation, epochs)


@dataclass
class MlpModel:
    architecture: MlpArchitecture
    weights: list[np.ndarray]
    biases: list[np.ndarray]
    input_ranges: np.ndarray
    output_range: np.ndarray

    def __post_init__(self) -> None:
        self.weights = [np.asarray(w, dtype=float) for w in self.weights]
        self.biases = [np.asarray(b, dtype=float) for b in self.biases]
        self.input_ranges = np.asarray(self.input_ranges, dtype=float)
        self.output_range = np.asarray(self.output_range, dtype=float)
        self.validate()

    def validate(self) -> None:
        sizes = self.architecture.layer_sizes
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ModelIntegrityError(f"expected {len(sizes) - 1} layers, got {len(self.weights)}")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.shape != (sizes[i + 1], sizes[i]):
                raise ModelIntegrityError(f"layer {i}: weight shape {w.shape}, expected {(sizes[i + 1], sizes[i])}")
            if b.shape != (sizes[i + 1],):
                raise ModelIntegrityError(f"layer {i}: bias shape {b.shape}, expected {(sizes[i + 1],)}")
        if self.input_ranges.shape != (N_FEATURES, 2):
            raise ModelIntegrityError(f"input_ranges shape {self.input_ranges.shape}, expected (6, 2)")
        if np.any(self.input_ranges[:, 0] >= self.input_ranges[:, 1]):
            raise ModelIntegrityError("every input range needs min < max")
        if self.output_range.shape != (2,) or not self.output_range[0] < self.output_range[1]:
            raise ModelIntegrityError("output_range must be (min, max) with min < max")

    @property
    def params(self) -> np.ndarray:
        return _pack(self.weights, self.biases)

    def normalize(self, features) -> np.ndarray:
        return normalize_inputs(self.input_ranges, features)

    def predict(self, features) -> np.ndarray:
        """Distances in meters for an (n, 6) feature array."""
        X = np.atleast_2d(np.asarray(features, dtype=float))
        if X.shape[1] != N_FEATURES:
            raise ModelIntegrityError(f"expected {N_FEATURES} features, got {X.shape[1]}")
        y = _forward(self.weights, self.biases, self.architecture.hidden_activation, self.normalize(X))[-1][:, 0]
        return denormalize(self.output_range, y)

    def __call__(self, features) -> np.ndarray:
        return self.predict(features)


def normalize_inputs(ranges: np.ndarray, values) -> np.ndarray:
    """Affine map of each feature's [min, max] onto [-1, 1], clamped to +-1.5."""
    v = np.asarray(values, dtype=float)
    lo, hi = ranges[:, 0], ranges[:, 1]
    return np.clip(2.0 * (v - lo) / (hi - lo) - 1.0, -INPUT_CLAMP, INPUT_CLAMP)


def normalize_targets(output_range: np.ndarray, y) -> np.ndarray:
    lo, hi = output_range
    return 2.0 * (np.asarray(y, dtype=float) - lo) / (hi - lo) - 1.0


def denormalize(output_range: np.ndarray, y_norm):
    lo, hi = output_range
    return (np.asarray(y_norm, dtype=float) + 1.0) * 0.5 * (hi - lo) + lo


def denormalize_inputs(ranges: np.ndarray, values_norm) -> np.ndarray:
    """Inverse of normalize_inputs for values inside the clamp band."""
    v = np.asarray(values_norm, dtype=float)
    lo, hi = ranges[:, 0], ranges[:, 1]
    return (v + 1.0) * 0.5 * (hi - lo) + lo


def normalize(model: MlpModel, f: MlpFeatureVector | Sequence[float]) -> np.ndarray:
    """Model-space 6-vector for one feature vector."""
    v = f.as_array() if isinstance(f, MlpFeatureVector) else np.asarray(f, dtype=float)
    if v.shape != (N_FEATURES,):
        raise ModelIntegrityError(f"expected {N_FEATURES} features, got shape {v.shape}")
    return normalize_inputs(model.input_ranges, v)


def forward(model: MlpModel, f: MlpFeatureVector | Sequence[float]) -> float:
    """Predicted distance (m) for one feature vector."""
    v = f.as_array() if isinstance(f, MlpFeatureVector) else np.asarray(f, dtype=float)
    if v.shape != (N_FEATURES,):
        raise ModelIntegrityError(f"expected {N_FEATURES} features, got shape {v.shape}")
    return float(model.predict(v[None, :])[0])


def _forward(weights, biases, activation: str, Xn: np.ndarray) -> list[np.ndarray]:
    act = _ACTIVATIONS[activation][0]
    a = Xn
    outs = [a]
    last = len(weights) - 1
    for i, (W, b) in enumerate(zip(weights, biases)):
        z = a @ W.T + b
        a = z if i == last else act(z)
        outs.append(a)
    return outs


def _pack(weights, biases) -> np.ndarray:
    return np.concatenate([np.concatenate([W.ravel(), b]) for W, b in zip(weights, biases)])


def _unpack(theta: np.ndarray, sizes: Sequence[int]) -> tuple[list[np.ndarray], list[np.ndarray]]:
    weights, biases = [], []
    k = 0
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        weights.append(theta[k : k + n_in * n_out].reshape(n_out, n_in))
        k += n_in * n_out
        biases.append(theta[k : k + n_out])
        k += n_out
    return weights, biases


def n_params(sizes: Sequence[int]) -> int:
    return sum((a + 1) * b for a, b in zip(sizes[:-1], sizes[1:]))


def mse_loss(theta: np.ndarray, sizes: Sequence[int], activation: str, Xn: np.ndarray, Tn: np.ndarray) -> float:
    weights, biases = _unpack(theta, sizes)
    y = _forward(weights, biases, activation, Xn)[-1][:, 0]
    e = y - Tn
    return float(np.mean(e * e))


def mse_and_grad(
    theta: np.ndarray, sizes: Sequence[int], activation: str, Xn: np.ndarray, Tn: np.ndarray
) -> tuple[float, np.ndarray]:
    """Full-batch MSE in normalized space and its gradient by backpropagation."""
    weights, biases = _unpack(theta, sizes)
    outs = _forward(weights, biases, activation, Xn)
    n = Xn.shape[0]
    e = outs[-1][:, 0] - Tn
    loss = float(np.mean(e * e))
    deriv = _ACTIVATIONS[activation][1]
    delta = (2.0 / n) * e[:, None]
    grads_w: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    grads_b: list[np.ndarray] = [None] * len(weights)  # type: ignore[list-item]
    for i in range(len(weights) - 1, -1, -1):
        grads_w[i] = delta.T @ outs[i]
        grads_b[i] = delta.sum(axis=0)
        if i > 0:
            delta = (delta @ weights[i]) * deriv(outs[i])
    return loss, _pack(grads_w, grads_b)


@dataclass
class TrainingSet:
    """Feature rows (n, 6) paired with true distances in meters."""

    features: np.ndarray
    targets: np.ndarray

    def __post_init__(self) -> None:
        self.features = np.atleast_2d(np.asarray(self.features, dtype=float)).reshape(-1, N_FEATURES)
        self.targets = np.asarray(self.targets, dtype=float).ravel()
        if self.features.shape[0] != self.targets.shape[0]:
            raise TrainingDataError(
                f"{self.features.shape[0]} feature rows but {self.targets.shape[0]} targets"
            )
        if np.any(self.targets < 0):
            raise TrainingDataError("targets must be nonnegative distances")

    def __len__(self) -> int:
        return int(self.targets.shape[0])

    @classmethod
    def from_vectors(cls, vectors: Sequence[MlpFeatureVector], targets: Sequence[float]) -> TrainingSet:
        feats = np.array([v.as_array() for v in vectors]) if vectors else np.zeros((0, N_FEATURES))
        return cls(feats, np.asarray(targets, dtype=float))

    def concat(self, other: TrainingSet) -> TrainingSet:
        return TrainingSet(np.vstack([self.features, other.features]), np.concatenate([self.targets, other.targets]))

    def split(self, train_fraction: float = 0.7, seed: int = 0) -> tuple[TrainingSet, TrainingSet]:
        """Random split into training and validation parts."""
        rng = np.random.default_rng(seed)
        idx = rng.permutation(len(self))
        cut = int(round(train_fraction * len(self)))
        a, b = idx[:cut], idx[cut:]
        return TrainingSet(self.features[a], self.targets[a]), TrainingSet(self.features[b], self.targets[b])


@dataclass
class TrainingHistory:
    """Per-epoch MSE in normalized target space; index 0 is after the first epoch."""

    initial_train_mse: float
    initial_val_mse: float | None
    train_mse: list[float] = field(default_factory=list)
    val_mse: list[float] = field(default_factory=list)
    best_epoch: int = 0

    def rows(self) -> list[tuple[int, float, float | None]]:
        vals = self.val_mse or [None] * len(self.train_mse)
        return [(i + 1, t, v) for i, (t, v) in enumerate(zip(self.train_mse, vals))]


def data_ranges(data: TrainingSet) -> tuple[np.ndarray, np.ndarray]:
    """Per-feature (min, max) and target (min, max) used for normalization."""
    if len(data) == 0:
        raise TrainingDataError("training set is empty")
    lo = data.features.min(axis=0)
    hi = data.features.max(axis=0)
    flat = np.flatnonzero(lo >= hi)
    if flat.size:
        names = ", ".join(FEATURE_NAMES[i] for i in flat)
        raise TrainingDataError(f"degenerate (constant) feature range: {names}")
    t_lo, t_hi = float(data.targets.min()), float(data.targets.max())
    if t_lo >= t_hi:
        # constant targets: any non-empty range represents them exactly
        t_lo, t_hi = t_lo - 1.0, t_hi + 1.0
    return np.stack([lo, hi], axis=1), np.array([t_lo, t_hi])


def init_params(sizes: Sequence[int], seed: int) -> np.ndarray:
    """Uniform(-0.5, 0.5) / sqrt(fan_in) for weights and biases."""
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for n_in, n_out in zip(sizes[:-1], sizes[1:]):
        scale = 1.0 / math.sqrt(n_in)
        weights.append(rng.uniform(-0.5, 0.5, size=(n_out, n_in)) * scale)
        biases.append(rng.uniform(-0.5, 0.5, size=n_out) * scale)
    return _pack(weights, biases)


def scg_minimize(fun_grad, fun, theta0: np.ndarray, iterations: int, callback=None,
                 sigma: float = SCG_SIGMA, lambda0: float = SCG_LAMBDA) -> np.ndarray:
    """Moller's scaled conjugate gradient.

    ``fun_grad(theta) -> (E, dE)``, ``fun(theta) -> E``. ``callback(k, theta, E)``
    is called after every iteration, successful or not.
    """
    w = theta0.copy()
    n = w.size
    E, g = fun_grad(w)
    r = -g
    p = r.copy()
    lam, lam_bar = lambda0, 0.0
    success = True
    n_success = 0
    delta = 0.0
    for k in range(1, iterations + 1):
        p2 = float(p @ p)
        if p2 == 0.0:
            if callback is not None:
                callback(k, w, E)
            continue
        if success:
            sig = sigma / math.sqrt(p2)
            _, g_sig = fun_grad(w + sig * p)
            s = (g_sig + r) / sig
            delta = float(p @ s)
        delta += (lam - lam_bar) * p2
        if delta <= 0:
            lam_bar = 2.0 * (lam - delta / p2)
            delta = -delta + lam * p2
            lam = lam_bar
        mu = float(p @ r)
        if mu <= 0:
            # lost descent: restart along steepest descent
            p = r.copy()
            success, lam_bar = True, 0.0
            if callback is not None:
                callback(k, w, E)
            continue
        alpha = mu / delta
        E_new = fun(w + alpha * p)
        Delta = 2.0 * delta * (E - E_new) / (mu * mu)
        if Delta >= 0 and math.isfinite(E_new):
            w = w + alpha * p
            E, g = fun_grad(w)
            r_new = -g
            lam_bar = 0.0
            success = True
            n_success += 1
            if n_success % n == 0:
                p = r_new.copy()
            else:
                beta = (float(r_new @ r_new) - float(r_new @ r)) / mu
                p = r_new + beta * p
            r = r_new
            if Delta >= 0.75:
                lam *= 0.25
        else:
            lam_bar = lam
            success = False
        if Delta < 0.25:
            lam += delta * (1.0 - Delta) / p2
        if callback is not None:
            callback(k, w, E)
    return w


def train_scg(
    arch: MlpArchitecture,
    data: TrainingSet,
    validation: TrainingSet | None = None,
    seed: int = 0,
    epochs: int | None = None,
) -> tuple[MlpModel, TrainingHistory]:
    """Train a fresh network; returns the iterate with the lowest validation MSE.

    Without a validation set the training MSE selects the iterate, which for
    SCG is always the last one.
    """
    epochs = arch.epochs if epochs is None else epochs
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    in_ranges, out_range = data_ranges(data)
    sizes = arch.layer_sizes
    act = arch.hidden_activation
    Xn = normalize_inputs(in_ranges, data.features)
    Tn = normalize_targets(out_range, data.targets)
    has_val = validation is not None and len(validation) > 0
    if has_val:
        Xv = normalize_inputs(in_ranges, validation.features)
        Tv = normalize_targets(out_range, validation.targets)

    theta0 = init_params(sizes, seed)
    init_train = mse_loss(theta0, sizes, act, Xn, Tn)
    init_val = mse_loss(theta0, sizes, act, Xv, Tv) if has_val else None
    history = TrainingHistory(init_train, init_val)
    best = {"score": init_val if has_val else init_train, "theta": theta0.copy(), "epoch": 0}

    def callback(k, theta, E):
        history.train_mse.append(E)
        score = E
        if has_val:
            score = mse_loss(theta, sizes, act, Xv, Tv)
            history.val_mse.append(score)
        if score < best["score"]:
            best.update(score=score, theta=theta.copy(), epoch=k)

    scg_minimize(
        lambda th: mse_and_grad(th, sizes, act, Xn, Tn),
        lambda th: mse_loss(th, sizes, act, Xn, Tn),
        theta0,
        epochs,
        callback,
    )
    history.best_epoch = best["epoch"]
    weights, biases = _unpack(best["theta"], sizes)
    model = MlpModel(arch, [w.copy() for w in weights], [b.copy() for b in biases], in_ranges, out_range)
    return model, history


@dataclass(frozen=True)
class EvalResult:
    rmse: float
    r: float | None
    count: int


def pearson_r(a, b) -> float | None:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    if denom == 0.0:
        return None
    return float(da @ db) / denom


def evaluate(model: MlpModel, data: TrainingSet) -> EvalResult:
    """RMSE (m) and Pearson correlation of predictions against targets."""
    if len(data) == 0:
        raise TrainingDataError("evaluation set is empty")
    pred = model.predict(data.features)
    err = pred - data.targets
    return EvalResult(math.sqrt(float(np.mean(err * err))), pearson_r(pred, data.targets), len(data))


def model_to_dict(model: MlpModel) -> dict:
    return {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "architecture": model.architecture.to_dict(),
        "feature_names": list(FEATURE_NAMES),
        "input_ranges": model.input_ranges.tolist(),
        "output_range": model.output_range.tolist(),
        "layers": [{"weights": w.tolist(), "biases": b.tolist()} for w, b in zip(model.weights, model.biases)],
    }


def model_from_dict(doc: dict) -> MlpModel:
    if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
        raise ModelFormatError("not an MLP model document")
    if doc.get("version") != FORMAT_VERSION:
        raise ModelFormatError(f"unsupported model version {doc.get('version')!r}, expected {FORMAT_VERSION}")
    try:
        a = doc["architecture"]
        arch = MlpArchitecture(
            tuple(a["hidden_layer_sizes"]), a["hidden_activation"], a["output_activation"], int(a["epochs"])
        )
        layers = doc["layers"]
        weights = [np.array(layer["weights"], dtype=float) for layer in layers]
        biases = [np.array(layer["biases"], dtype=float) for layer in layers]
        in_ranges = np.array(doc["input_ranges"], dtype=float)
        out_range = np.array(doc["output_range"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelFormatError(f"malformed model document: {exc}") from None
    return MlpModel(arch, weights, biases, in_ranges, out_range)


def dumps_model(model: MlpModel) -> str:
    return json.dumps(model_to_dict(model), indent=1, sort_keys=True) + "\n"


def save_model(model: MlpModel, path: str | Path) -> None:
    atomic_write_text(path, dumps_model(model))


def load_model(path: str | Path) -> MlpModel:
    text = Path(path).read_text(encoding="utf-8")
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ModelFormatError(f"{path}: truncated or malformed model file ({exc})") from None
    return model_from_dict(doc)


def atomic_write_text(path: str | Path, text: str) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
