"""Single-hidden-layer LSTM forecaster written against numpy.

Forward pass, backpropagation through time and an Adam optimiser on
mean squared error.  Gate blocks in the stacked weight matrices are
ordered input, forget, output, candidate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionMismatch, NonFiniteLoss

PARAMS = ("W", "U", "b", "V", "c")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass
class LstmHyper:
    learning_rate: float = 0.001
    batch_size: int = 32
    epochs: int = 1000
    series_length: int = 36
    seed: int = 0


@dataclass
class LstmModel:
    """Weights of an S -> hidden -> S LSTM.

    W: (4H, S) input weights, U: (4H, H) recurrent weights, b: (4H,) gate
    biases, V: (S, H) output projection, c: (S,) output bias.  ``scale``
    divides inputs and multiplies outputs so training works on unit-sized
    values; it is fixed from the data on first training.
    """

    W: np.ndarray
    U: np.ndarray
    b: np.ndarray
    V: np.ndarray
    c: np.ndarray
    scale: float | None = None
    loss_history: list[float] = field(default_factory=list)

    @property
    def input_size(self) -> int:
        return self.W.shape[1]

    @property
    def hidden_size(self) -> int:
        return self.U.shape[1]

    @classmethod
    def init(cls, input_size: int, hidden_size: int = 64, seed: int = 0) -> "LstmModel":
        rng = np.random.default_rng(seed)
        k = 1.0 / math.sqrt(hidden_size)
        H, S = hidden_size, input_size
        return cls(
            W=rng.uniform(-k, k, (4 * H, S)),
            U=rng.uniform(-k, k, (4 * H, H)),
            b=rng.uniform(-k, k, 4 * H),
            V=rng.uniform(-k, k, (S, H)),
            c=rng.uniform(-k, k, S),
        )

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmModel":
        H, S = hidden_size, input_size
        return cls(np.zeros((4 * H, S)), np.zeros((4 * H, H)), np.zeros(4 * H), np.zeros((S, H)), np.zeros(S))

    def params(self) -> dict[str, np.ndarray]:
        return {k: getattr(self, k) for k in PARAMS}

    def copy(self) -> "LstmModel":
        return LstmModel(**{k: v.copy() for k, v in self.params().items()}, scale=self.scale,
                         loss_history=list(self.loss_history))

    def check(self) -> None:
        H, S = self.hidden_size, self.input_size
        shapes = {"W": (4 * H, S), "U": (4 * H, H), "b": (4 * H,), "V": (S, H), "c": (S,)}
        for k, shape in shapes.items():
            if getattr(self, k).shape != shape:
                raise DimensionMismatch(f"{k} has shape {getattr(self, k).shape}, expected {shape}")

    @property
    def norm(self) -> float:
        return self.scale or 1.0

    def forecast(self, series) -> np.ndarray:
        return lstm_forward(self, series)


def _as_batch(model: LstmModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[1] < 1:
        raise DimensionMismatch(f"expected (batch, steps, S) input, got shape {X.shape}")
    if X.shape[2] != model.input_size:
        raise DimensionMismatch(f"input dimension {X.shape[2]} != model input size {model.input_size}")
    return X


def _forward(model: LstmModel, X: np.ndarray):
    """Run the recurrence on normalised input X (B, T, S); keep the cache for backprop."""
    B, T, _ = X.shape
    H = model.hidden_size
    h = np.zeros((B, H))
    c = np.zeros((B, H))
    cache = []
    for t in range(T):
        x = X[:, t, :]
        a = x @ model.W.T + h @ model.U.T + model.b
        i = _sigmoid(a[:, :H])
        f = _sigmoid(a[:, H : 2 * H])
        o = _sigmoid(a[:, 2 * H : 3 * H])
        g = np.tanh(a[:, 3 * H :])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        cache.append((x, h, c, i, f, o, g, tc))
        h, c = h_new, c_new
    y = h @ model.V.T + model.c
    return y, h, cache


def lstm_forward(model: LstmModel, series) -> np.ndarray:
    """Forecast the next per-type vector from ``series`` of shape (T, S).

    A (B, T, S) batch returns (B, S).  Outputs are raw and unclamped.
    """
    model.check()
    single = np.asarray(series).ndim == 2
    X = _as_batch(model, series) / model.norm
    y, _, _ = _forward(model, X)
    y = y * model.norm
    return y[0] if single else y


def mse_loss(model: LstmModel, X, Y) -> float:
    """Mean squared error on normalised values."""
    X = _as_batch(model, X) / model.norm
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1) / model.norm
    y, _, _ = _forward(model, X)
    return float(np.mean((y - Y) ** 2))


def lstm_gradients(model: LstmModel, X, Y) -> tuple[float, dict[str, np.ndarray]]:
    """Loss and analytic gradients of :func:`mse_loss` by backpropagation through time."""
    X = _as_batch(model, X) / model.norm
    Y = np.asarray(Y, dtype=float).reshape(X.shape[0], -1) / model.norm
    if Y.shape[1] != model.input_size:
        raise DimensionMismatch(f"target dimension {Y.shape[1]} != {model.input_size}")
    H = model.hidden_size
    y, h_last, cache = _forward(model, X)
    diff = y - Y
    loss = float(np.mean(diff**2))

    dy = 2.0 * diff / diff.size
    grads = {k: np.zeros_like(v) for k, v in model.params().items()}
    grads["V"] = dy.T @ h_last
    grads["c"] = dy.sum(axis=0)
    dh = dy @ model.V
    dc = np.zeros_like(dh)
    for x, h_prev, c_prev, i, f, o, g, tc in reversed(cache):
        do = dh * tc
        dc = dc + dh * o * (1.0 - tc**2)
        di = dc * g
        dg = dc * i
        df = dc * c_prev
        da = np.concatenate(
            [di * i * (1 - i), df * f * (1 - f), do * o * (1 - o), dg * (1 - g**2)], axis=1
        )
        grads["W"] += da.T @ x
        grads["U"] += da.T @ h_prev
        grads["b"] += da.sum(axis=0)
        dh = da @ model.U
        dc = dc * f
    assert dh.shape[1] == H
    return loss, grads


def make_windows(series, length: int) -> tuple[np.ndarray, np.ndarray]:
    """Sliding (input, next value) pairs over a (T, S) series, left-padding
    early windows with zeros."""
    data = np.asarray(series, dtype=float)
    T, S = data.shape
    padded = np.vstack([np.zeros((length, S)), data])
    X = np.stack([padded[t : t + length] for t in range(1, T)]) if T > 1 else np.zeros((0, length, S))
    Y = data[1:]
    return X, Y


def lstm_train(model: LstmModel, X, Y, hyper: LstmHyper | None = None) -> LstmModel:
    """Fit ``model`` with Adam on MSE; returns a trained copy.

    Sets the normalisation scale from the data when the model has none
    yet.  ``loss_history`` records the epoch mean loss in raw units.
    """
    hyper = hyper or LstmHyper()
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    if len(X) == 0:
        raise ValueError("empty training set")
    X = _as_batch(model, X)
    Y = Y.reshape(len(X), -1)
    if Y.shape[1] != model.input_size:
        raise DimensionMismatch(f"target dimension {Y.shape[1]} != {model.input_size}")

    model = model.copy()
    model.check()
    if model.scale is None:
        model.scale = max(1.0, float(np.abs(X).max()), float(np.abs(Y).max()))

    rng = np.random.default_rng(hyper.seed)
    beta1, beta2, eps = 0.9, 0.999, 1e-8
    m = {k: np.zeros_like(v) for k, v in model.params().items()}
    v = {k: np.zeros_like(v) for k, v in model.params().items()}
    step = 0
    n = len(X)
    for _ in range(hyper.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, hyper.batch_size):
            idx = order[start : start + hyper.batch_size]
            loss, grads = lstm_gradients(model, X[idx], Y[idx])
            if not math.isfinite(loss):
                raise NonFiniteLoss(f"loss became {loss} at step {step}")
            total += loss * len(idx)
            step += 1
            for k, g in grads.items():
                m[k] = beta1 * m[k] + (1 - beta1) * g
                v[k] = beta2 * v[k] + (1 - beta2) * g * g
                m_hat = m[k] / (1 - beta1**step)
                v_hat = v[k] / (1 - beta2**step)
                param = getattr(model, k)
                param -= hyper.learning_rate * m_hat / (np.sqrt(v_hat) + eps)
        model.loss_history.append(total / n * model.norm**2)
    return model
