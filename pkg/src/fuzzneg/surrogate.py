"""Feed-forward surrogate that maps an original requirement to the final offer.

The network is plain numpy: linear layers, optional ReLU after chosen
layers, mean squared error, mini-batch gradient descent with momentum.
:class:`SurrogateRegressor` wraps it in the scikit-learn estimator API with
min-max scaling of features and labels.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.preprocessing import MinMaxScaler
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .exceptions import BadSpecError, DivergenceError, ModelFileError, VersionMismatchError
from .tariff import Bundle

FORMAT_NAME = "fuzzneg-surrogate"
FORMAT_VERSION = 1


@dataclass(frozen=True)
class NetworkSpec:
    """Layer widths from input to output, and the linear layers followed by ReLU.

    ``relu_after`` holds 0-based indices of linear layers; the last layer
    never carries an activation.
    """

    widths: tuple
    relu_after: tuple = ()

    def __post_init__(self):
        widths = tuple(int(w) for w in self.widths)
        relu = tuple(sorted({int(i) for i in self.relu_after}))
        if len(widths) < 2 or min(widths) < 1:
            raise BadSpecError(f"need at least two positive widths, got {widths}")
        if widths[0] != 3 or widths[-1] != 3:
            raise BadSpecError(f"input and output width must be 3, got {widths[0]} and {widths[-1]}")
        n_layers = len(widths) - 1
        if any(i < 0 or i >= n_layers for i in relu):
            raise BadSpecError(f"activation index out of range for {n_layers} layers: {relu}")
        if n_layers - 1 in relu:
            raise BadSpecError("no activation is allowed after the output layer")
        object.__setattr__(self, "widths", widths)
        object.__setattr__(self, "relu_after", relu)

    @property
    def n_layers(self) -> int:
        return len(self.widths) - 1

    @property
    def shapes(self):
        return list(zip(self.widths[:-1], self.widths[1:]))

    def to_dict(self):
        return {"widths": list(self.widths), "relu_after": list(self.relu_after)}


PRESETS = {
    # four linear layers, 3 -> 128 -> 64 -> 27 -> 3
    "model1": NetworkSpec((3, 128, 64, 27, 3)),
    "model2": NetworkSpec((3, 128, 64, 64, 27, 27, 3)),
    "model3": NetworkSpec((3, 128, 64, 64, 27, 27, 27, 3)),
    # six linear layers with a ReLU after the third
    "model4": NetworkSpec((3, 128, 64, 27, 27, 16, 3), relu_after=(2,)),
}


class MLP:
    """Weights and biases of a fully connected network."""

    def __init__(self, spec: NetworkSpec, weights, biases):
        self.spec = spec
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        if len(self.weights) != spec.n_layers or len(self.biases) != spec.n_layers:
            raise BadSpecError(f"expected {spec.n_layers} layers, got {len(self.weights)} weights and {len(self.biases)} biases")
        for (fi, fo), w, b in zip(spec.shapes, self.weights, self.biases):
            if w.shape != (fi, fo) or b.shape != (fo,):
                raise BadSpecError(f"parameter shapes {w.shape}/{b.shape} do not match layer {fi}->{fo}")

    def forward(self, X, cache=False):
        a = np.asarray(X, dtype=float)
        acts = [a]
        last = self.spec.n_layers - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = a @ w + b
            if i in self.spec.relu_after:
                a = np.maximum(a, 0.0)
            if cache and i < last:
                acts.append(a)
        return (a, acts) if cache else a

    def loss(self, X, Y) -> float:
        diff = self.forward(X) - Y
        return float(np.mean(diff**2))

    def loss_and_grads(self, X, Y):
        """MSE over all samples and outputs, and its gradients per layer."""
        out, acts = self.forward(X, cache=True)
        diff = out - Y
        loss = float(np.mean(diff**2))
        delta = 2.0 * diff / diff.size
        gw = [None] * self.spec.n_layers
        gb = [None] * self.spec.n_layers
        for i in reversed(range(self.spec.n_layers)):
            if i in self.spec.relu_after:
                # acts[i + 1] is the post-ReLU output of layer i
                delta = delta * (acts[i + 1] > 0.0) if i < self.spec.n_layers - 1 else delta
            gw[i] = acts[i].T @ delta
            gb[i] = delta.sum(axis=0)
            if i > 0:
                delta = delta @ self.weights[i].T
        return loss, gw, gb

    def as_affine(self):
        """Collapse an activation-free network into a single ``(W, b)``."""
        if self.spec.relu_after:
            raise ValueError("only activation-free networks collapse to an affine map")
        W = np.eye(self.spec.widths[0])
        b = np.zeros(self.spec.widths[0])
        for w, bias in zip(self.weights, self.biases):
            W = W @ w
            b = b @ w + bias
        return W, b

    def copy(self) -> "MLP":
        return MLP(self.spec, [w.copy() for w in self.weights], [b.copy() for b in self.biases])


def build(spec, seed=0) -> MLP:
    """Fresh network with Glorot-uniform weights and zero biases."""
    if isinstance(spec, str):
        try:
            spec = PRESETS[spec]
        except KeyError:
            raise BadSpecError(f"unknown preset {spec!r}; choose from {sorted(PRESETS)}") from None
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for fan_in, fan_out in spec.shapes:
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, (fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return MLP(spec, weights, biases)


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 0.01
    momentum: float = 0.9
    shuffle: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


def train(model: MLP, X, Y, config: TrainConfig = TrainConfig()) -> list:
    """Fit ``model`` in place; returns the full-data loss after each epoch."""
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) < 1 or len(X) != len(Y):
        raise ValueError("need at least one (feature, label) pair")
    if not (np.isfinite(X).all() and np.isfinite(Y).all()):
        raise ValueError("features and labels must be finite")
    rng = np.random.default_rng(config.seed)
    vel_w = [np.zeros_like(w) for w in model.weights]
    vel_b = [np.zeros_like(b) for b in model.biases]
    history = []
    n = len(X)
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n) if config.shuffle else np.arange(n)
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                _, gw, gb = model.loss_and_grads(X[idx], Y[idx])
            for i in range(model.spec.n_layers):
                vel_w[i] = config.momentum * vel_w[i] - config.learning_rate * gw[i]
                vel_b[i] = config.momentum * vel_b[i] - config.learning_rate * gb[i]
                model.weights[i] += vel_w[i]
                model.biases[i] += vel_b[i]
        with np.errstate(over="ignore", invalid="ignore"):
            loss = model.loss(X, Y)
        if not math.isfinite(loss):
            raise DivergenceError(epoch, loss)
        history.append(loss)
    return history


def gradient_check(model: MLP, X, Y, epsilon=1e-6, n_weights=50, seed=0) -> float:
    """Largest relative gap between backprop and central-difference gradients.

    Checks ``n_weights`` randomly chosen entries across all weight matrices.
    """
    if not 1e-7 <= epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in [1e-7, 1e-3], got {epsilon}")
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    _, gw, _ = model.loss_and_grads(X, Y)
    probe = model.copy()
    rng = np.random.default_rng(seed)
    sizes = np.array([w.size for w in probe.weights])
    layers = rng.choice(len(sizes), size=n_weights, p=sizes / sizes.sum())
    worst = 0.0
    for layer in layers:
        flat = probe.weights[layer].reshape(-1)
        j = rng.integers(flat.size)
        orig = flat[j]
        flat[j] = orig + epsilon
        up = probe.loss(X, Y)
        flat[j] = orig - epsilon
        down = probe.loss(X, Y)
        flat[j] = orig
        numeric = (up - down) / (2 * epsilon)
        analytic = gw[layer].reshape(-1)[j]
        denom = max(abs(numeric) + abs(analytic), 1e-10)
        worst = max(worst, abs(numeric - analytic) / denom)
    return worst


def _fitted_scaler(X) -> MinMaxScaler:
    scaler = MinMaxScaler().fit(X)
    if np.any(scaler.data_range_ <= 0):
        raise ValueError("every feature and label needs max > min on the training data")
    return scaler


def _scaler_from_bounds(lo, hi) -> MinMaxScaler:
    return MinMaxScaler().fit(np.vstack([lo, hi]))


class SurrogateRegressor(RegressorMixin, BaseEstimator):
    """Neural replacement for the whole negotiation: requirement in, final offer out.

    Parameters
    ----------
    architecture : str or NetworkSpec, default="model4"
        A key of :data:`PRESETS` or an explicit spec.
    epochs : int, default=200
    batch_size : int, default=32
    learning_rate : float, default=0.01
    momentum : float, default=0.9
        Set to 0 for plain gradient descent.
    shuffle : bool, default=True
        Reshuffle the mini-batches every epoch.
    random_state : int, default=0
        Seeds weight initialisation and batch order.

    Attributes
    ----------
    network_ : MLP
    x_scaler_, y_scaler_ : MinMaxScaler
        Min-max normalisers fitted on the training features and labels.
    loss_history_ : list of float
        Normalised training MSE after every epoch.
    """

    def __init__(
        self,
        architecture="model4",
        epochs=200,
        batch_size=32,
        learning_rate=0.01,
        momentum=0.9,
        shuffle=True,
        random_state=0,
    ):
        self.architecture = architecture
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.shuffle = shuffle
        self.random_state = random_state

    def _spec(self) -> NetworkSpec:
        if isinstance(self.architecture, NetworkSpec):
            return self.architecture
        if isinstance(self.architecture, dict):
            return NetworkSpec(**self.architecture)
        if self.architecture not in PRESETS:
            raise BadSpecError(f"unknown preset {self.architecture!r}; choose from {sorted(PRESETS)}")
        return PRESETS[self.architecture]

    def _train_config(self) -> TrainConfig:
        return TrainConfig(self.epochs, self.batch_size, self.learning_rate, self.momentum, self.shuffle, self.random_state)

    def fit(self, X, y):
        X, y = check_X_y(X, y, multi_output=True, dtype=np.float64)
        y = y.reshape(len(y), -1)
        config = self._train_config()
        spec = self._spec()
        if X.shape[1] != spec.widths[0] or y.shape[1] != spec.widths[-1]:
            raise BadSpecError(f"data is {X.shape[1]}->{y.shape[1]} but the network is {spec.widths[0]}->{spec.widths[-1]}")
        self.x_scaler_ = _fitted_scaler(X)
        self.y_scaler_ = _fitted_scaler(y)
        self.network_ = build(spec, self.random_state)
        self.loss_history_ = train(self.network_, self.x_scaler_.transform(X), self.y_scaler_.transform(y), config)
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        out = self.network_.forward(self.x_scaler_.transform(X))
        return self.y_scaler_.inverse_transform(out)

    def predict_bundle(self, bundle) -> Bundle:
        """Prediction for one requirement, rounded to whole units."""
        pred = self.predict(np.asarray([bundle], dtype=float))[0]
        return Bundle(*(int(round(v)) for v in pred))

    def evaluate(self, X, y) -> dict:
        """Normalised-space MSE per output dimension and for the whole offer."""
        check_is_fitted(self, "network_")
        y = np.asarray(y, dtype=float).reshape(len(y), -1)
        pred = self.y_scaler_.transform(self.predict(X))
        err = (pred - self.y_scaler_.transform(y)) ** 2
        per_dim = err.mean(axis=0)
        return {"vcpu": float(per_dim[0]), "ram": float(per_dim[1]), "storage": float(per_dim[2]), "offer": float(per_dim.mean())}

    def gradient_check(self, X, y, epsilon=1e-6, n_weights=50, seed=0) -> float:
        check_is_fitted(self, "network_")
        return gradient_check(
            self.network_,
            self.x_scaler_.transform(np.asarray(X, dtype=float)),
            self.y_scaler_.transform(np.asarray(y, dtype=float)),
            epsilon,
            n_weights,
            seed,
        )

    # -- persistence ----------------------------------------------------------

    def save(self, path) -> None:
        check_is_fitted(self, "network_")
        doc = {
            "format": FORMAT_NAME,
            "version": FORMAT_VERSION,
            "spec": self.network_.spec.to_dict(),
            "params": {k: v for k, v in self.get_params().items() if k != "architecture"},
            "architecture": self.architecture if isinstance(self.architecture, str) else None,
            "weights": [w.tolist() for w in self.network_.weights],
            "biases": [b.tolist() for b in self.network_.biases],
            "x_bounds": [self.x_scaler_.data_min_.tolist(), self.x_scaler_.data_max_.tolist()],
            "y_bounds": [self.y_scaler_.data_min_.tolist(), self.y_scaler_.data_max_.tolist()],
            "loss_history": list(self.loss_history_),
        }
        Path(path).write_text(json.dumps(doc))

    @classmethod
    def load(cls, path) -> "SurrogateRegressor":
        try:
            doc = json.loads(Path(path).read_text())
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise ModelFileError(f"{path}: corrupt model file ({exc})") from None
        if not isinstance(doc, dict) or doc.get("format") != FORMAT_NAME:
            raise ModelFileError(f"{path}: not a {FORMAT_NAME} file")
        if doc.get("version") != FORMAT_VERSION:
            raise VersionMismatchError(f"{path}: format version {doc.get('version')!r}, expected {FORMAT_VERSION}")
        try:
            spec = NetworkSpec(**doc["spec"])
            network = MLP(spec, doc["weights"], doc["biases"])
            x_scaler = _scaler_from_bounds(*doc["x_bounds"])
            y_scaler = _scaler_from_bounds(*doc["y_bounds"])
            model = cls(architecture=doc.get("architecture") or spec, **doc["params"])
            history = [float(v) for v in doc["loss_history"]]
        except (KeyError, TypeError, ValueError) as exc:
            raise ModelFileError(f"{path}: malformed model file ({exc})") from None
        model.network_ = network
        model.x_scaler_ = x_scaler
        model.y_scaler_ = y_scaler
        model.loss_history_ = history
        model.n_features_in_ = spec.widths[0]
        return model


def engine_pairs(dataset, engine) -> tuple:
    """Features and labels for surrogate training from a negotiation engine's predictions."""
    X = np.asarray(list(dataset), dtype=np.int64).reshape(-1, 3)
    return X, engine.predict(X)
