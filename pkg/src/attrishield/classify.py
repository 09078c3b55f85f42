"""Softmax classifiers with exact input gradients, plus attacker variants.

Two differentiable model families are provided: multi-class logistic
regression (``LinearSoftmaxModel``) and a one-hidden-layer ReLU network
(``MlpModel``). Both expose ``logits``, ``logit_jacobian`` and
``predict``; module-level helpers implement decision scores, gradients
and training by plain mini-batch gradient descent.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np

from .core import Dataset, as_rng


def softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class LinearSoftmaxModel:
    W: np.ndarray
    b: np.ndarray
    kind: str = field(default="linear", init=False)

    def __post_init__(self):
        self.W = np.asarray(self.W, dtype=float)
        self.b = np.asarray(self.b, dtype=float)
        if self.W.ndim != 2 or self.b.shape != (self.W.shape[0],):
            raise ValueError("W must be (m, d) and b length m")
        if not (np.all(np.isfinite(self.W)) and np.all(np.isfinite(self.b))):
            raise ValueError("non-finite weights")

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @classmethod
    def zeros(cls, m: int, d: int) -> "LinearSoftmaxModel":
        return cls(np.zeros((m, d)), np.zeros(m))

    def logits(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.W.T + self.b

    def logit_jacobian(self, x) -> np.ndarray:
        """d logits / d x, shape (m, d)."""
        return self.W

    def predict(self, X) -> np.ndarray:
        return _argmax(self.logits(X))


@dataclass
class MlpModel:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    kind: str = field(default="mlp", init=False)

    def __post_init__(self):
        self.W1, self.b1, self.W2, self.b2 = (np.asarray(a, dtype=float)
                                              for a in (self.W1, self.b1, self.W2, self.b2))
        h, d = self.W1.shape
        if self.b1.shape != (h,) or self.W2.shape[1] != h or self.b2.shape != (self.W2.shape[0],):
            raise ValueError("inconsistent MLP weight shapes")
        if not all(np.all(np.isfinite(a)) for a in (self.W1, self.b1, self.W2, self.b2)):
            raise ValueError("non-finite weights")

    @property
    def m(self) -> int:
        return self.W2.shape[0]

    @property
    def d(self) -> int:
        return self.W1.shape[1]

    @property
    def h(self) -> int:
        return self.W1.shape[0]

    def _hidden(self, X):
        pre = np.asarray(X, dtype=float) @ self.W1.T + self.b1
        return pre, np.maximum(pre, 0.0)

    def logits(self, X) -> np.ndarray:
        return self._hidden(X)[1] @ self.W2.T + self.b2

    def logit_jacobian(self, x) -> np.ndarray:
        pre, _ = self._hidden(x)
        # ReLU subgradient at 0 is 0
        return (self.W2 * (pre > 0)) @ self.W1

    def predict(self, X) -> np.ndarray:
        return _argmax(self.logits(X))


Model = Union[LinearSoftmaxModel, MlpModel]


def _argmax(z: np.ndarray):
    # np.argmax returns the first maximum, i.e. ties go to the lowest label
    out = np.argmax(z, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def _check_dims(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.d:
        raise ValueError(f"input has dimension {x.shape[-1]}, model expects {model.d}")
    return x


def decision_scores(model: Model, x) -> np.ndarray:
    """Softmax confidences C_i(x); rows sum to one."""
    return softmax(model.logits(_check_dims(model, x)))


def predict(model: Model, x):
    return model.predict(_check_dims(model, x))


def input_gradient(model: Model, x, i: int) -> np.ndarray:
    """Exact gradient of the softmax score C_i with respect to x."""
    x = _check_dims(model, x)
    c = decision_scores(model, x)
    J = model.logit_jacobian(x)
    # dC_i/dz_j = C_i (delta_ij - C_j)
    dz = -c[i] * c
    dz[i] += c[i]
    return dz @ J


def margin(model: Model, x, i: int) -> float:
    """logit_i - max_{j != i} logit_j."""
    z = model.logits(x)
    others = np.delete(z, i)
    return float(z[i] - others.max())


def margin_gradient(model: Model, x, i: int) -> np.ndarray:
    z = model.logits(x)
    masked = z.copy()
    masked[i] = -np.inf
    j = int(np.argmax(masked))
    J = model.logit_jacobian(x)
    return J[i] - J[j]


# -- training ----------------------------------------------------------------

@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 100
    batch_size: int = 64
    learning_rate: float = 0.5
    l2_penalty: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")


def _training_arrays(ds: Dataset):
    ds.require_labels()
    if ds.m < 2:
        raise ValueError("need at least 2 labels")
    Y = np.zeros((ds.n, ds.m))
    Y[np.arange(ds.n), ds.labels] = 1.0
    return ds.X, Y


def cross_entropy(model: Model, X, labels, l2_penalty: float = 0.0) -> float:
    P = decision_scores(model, X)
    ce = -np.mean(np.log(np.maximum(P[np.arange(len(labels)), labels], 1e-300)))
    if isinstance(model, LinearSoftmaxModel):
        reg = np.sum(model.W ** 2)
    else:
        reg = np.sum(model.W1 ** 2) + np.sum(model.W2 ** 2)
    return float(ce + l2_penalty * reg)


def _batches(n, batch_size, rng):
    order = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield order[start:start + batch_size]


def train_linear(ds: Dataset, cfg: TrainConfig = TrainConfig(), history: Optional[list] = None) -> LinearSoftmaxModel:
    """Multi-class logistic regression from a zero start.

    Minimises mean cross-entropy + l2_penalty * ||W||^2. If ``history`` is
    given, the full-data loss is appended after every epoch.
    """
    X, Y = _training_arrays(ds)
    rng = np.random.default_rng(cfg.seed)
    W = np.zeros((ds.m, ds.d))
    b = np.zeros(ds.m)
    for _ in range(cfg.epochs):
        for idx in _batches(ds.n, cfg.batch_size, rng):
            xb, yb = X[idx], Y[idx]
            G = (softmax(xb @ W.T + b) - yb) / len(idx)
            W -= cfg.learning_rate * (G.T @ xb + 2 * cfg.l2_penalty * W)
            b -= cfg.learning_rate * G.sum(axis=0)
        if history is not None:
            history.append(cross_entropy(LinearSoftmaxModel(W, b), X, ds.labels, cfg.l2_penalty))
    return LinearSoftmaxModel(W.copy(), b.copy())


def init_mlp(d: int, m: int, hidden: int, seed) -> MlpModel:
    rng = as_rng(seed)
    a1, a2 = 1.0 / np.sqrt(d), 1.0 / np.sqrt(hidden)
    return MlpModel(rng.uniform(-a1, a1, (hidden, d)), rng.uniform(-a1, a1, hidden),
                    rng.uniform(-a2, a2, (m, hidden)), rng.uniform(-a2, a2, m))


def train_mlp(ds: Dataset, cfg: TrainConfig = TrainConfig(), hidden: int = 64,
              history: Optional[list] = None) -> MlpModel:
    X, Y = _training_arrays(ds)
    rng = np.random.default_rng(cfg.seed)
    model = init_mlp(ds.d, ds.m, hidden, rng)
    W1, b1, W2, b2 = model.W1, model.b1, model.W2, model.b2
    lr, lam = cfg.learning_rate, cfg.l2_penalty
    for _ in range(cfg.epochs):
        for idx in _batches(ds.n, cfg.batch_size, rng):
            xb, yb = X[idx], Y[idx]
            pre = xb @ W1.T + b1
            hid = np.maximum(pre, 0.0)
            G = (softmax(hid @ W2.T + b2) - yb) / len(idx)
            dhid = (G @ W2) * (pre > 0)
            gW2 = G.T @ hid + 2 * lam * W2
            gW1 = dhid.T @ xb + 2 * lam * W1
            W2 -= lr * gW2
            b2 -= lr * G.sum(axis=0)
            W1 -= lr * gW1
            b1 -= lr * dhid.sum(axis=0)
        if history is not None:
            history.append(cross_entropy(MlpModel(W1, b1, W2, b2), X, ds.labels, lam))
    return MlpModel(W1.copy(), b1.copy(), W2.copy(), b2.copy())


# -- attackers ---------------------------------------------------------------

@dataclass(frozen=True)
class MostPopular:
    """Constant predictor returning the modal training label."""

    label: int

    def predict(self, X):
        X = np.asarray(X)
        if X.ndim == 1:
            return self.label
        return np.full(X.shape[0], self.label, dtype=int)


def baseline_most_popular(labels) -> MostPopular:
    labels = np.asarray(labels, dtype=int)
    if labels.size == 0:
        raise ValueError("need at least one label")
    counts = np.bincount(labels)
    return MostPopular(int(np.argmax(counts)))


def region_based_predict(model: Model, x, radius: float = 0.05, n_samples: int = 100, seed=0) -> int:
    """Majority vote over points drawn from the hypercube around x, clipped to [0,1]^d."""
    if radius < 0 or n_samples < 1:
        raise ValueError("radius must be >= 0 and n_samples >= 1")
    x = _check_dims(model, x)
    rng = as_rng(seed)
    lo = np.maximum(x - radius, 0.0)
    hi = np.minimum(x + radius, 1.0)
    pts = lo + rng.random((n_samples, x.size)) * (hi - lo)
    votes = np.bincount(np.atleast_1d(model.predict(pts)), minlength=model.m)
    return int(np.argmax(votes))


@dataclass(frozen=True)
class RegionClassifier:
    """Wraps a model so ``predict`` uses region-based voting (per-row seeds)."""

    model: object
    radius: float = 0.05
    n_samples: int = 100
    seed: int = 0

    @property
    def m(self):
        return self.model.m

    def predict(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            return region_based_predict(self.model, X, self.radius, self.n_samples, self.seed)
        ss = np.random.SeedSequence(self.seed).spawn(X.shape[0])
        return np.array([region_based_predict(self.model, x, self.radius, self.n_samples,
                                              np.random.default_rng(s))
                         for x, s in zip(X, ss)], dtype=int)


def adversarial_training(ds: Dataset, cfg: TrainConfig, defense_fn: Callable, hidden: int = 64) -> MlpModel:
    """Train an MLP on ``defense_fn``-perturbed copies of the training rows.

    ``defense_fn(x, rng)`` returns the noisy vector; each row gets its own
    stream spawned from ``cfg.seed``.
    """
    ss = np.random.SeedSequence([cfg.seed, 0xA7]).spawn(ds.n)
    noisy = np.array([defense_fn(x, np.random.default_rng(s)) for x, s in zip(ds.X, ss)])
    return train_mlp(ds.with_X(noisy.reshape(ds.X.shape)), cfg, hidden)


def accuracy(predictor, ds: Dataset) -> float:
    """Fraction of rows whose label is predicted correctly.

    ``predictor`` may be a model (anything with ``predict``), a callable on
    the feature matrix, or an array of predictions.
    """
    ds.require_labels()
    if hasattr(predictor, "predict"):
        pred = predictor.predict(ds.X)
    elif callable(predictor):
        pred = predictor(ds.X)
    else:
        pred = predictor
    pred = np.asarray(pred, dtype=int).reshape(-1)
    if pred.shape != ds.labels.shape:
        raise ValueError("one prediction per row required")
    return float(np.mean(pred == ds.labels))


# -- serialisation -----------------------------------------------------------

def _fmt(a: np.ndarray) -> list:
    return [float(format(v, ".17g")) for v in np.asarray(a, dtype=float).ravel()]


def model_to_dict(model: Model) -> dict:
    if isinstance(model, LinearSoftmaxModel):
        return {"kind": "linear", "m": model.m, "d": model.d,
                "weights": {"W": _fmt(model.W), "b": _fmt(model.b)}}
    return {"kind": "mlp", "m": model.m, "d": model.d, "h": model.h,
            "weights": {"W1": _fmt(model.W1), "b1": _fmt(model.b1),
                        "W2": _fmt(model.W2), "b2": _fmt(model.b2)}}


def model_from_dict(obj: dict) -> Model:
    m, d, w = int(obj["m"]), int(obj["d"]), obj["weights"]
    if obj["kind"] == "linear":
        return LinearSoftmaxModel(np.reshape(w["W"], (m, d)), np.asarray(w["b"]))
    if obj["kind"] == "mlp":
        h = int(obj["h"])
        return MlpModel(np.reshape(w["W1"], (h, d)), np.asarray(w["b1"]),
                        np.reshape(w["W2"], (m, h)), np.asarray(w["b2"]))
    raise ValueError(f"unknown model kind {obj['kind']!r}")


def save_model(model: Model, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model_to_dict(model), fh)


def load_model(path) -> Model:
    with open(path, encoding="utf-8") as fh:
        return model_from_dict(json.load(fh))
