"""Single-hidden-layer feed-forward regressor written directly in numpy.

Architecture is input -> ReLU hidden -> sigmoid output, trained on mean
squared error with Adam (plain SGD is available as an option). Because the
sigmoid output lives in (0, 1), targets pass through an affine min-max
scaler fitted on the training targets.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
from scipy.special import expit

from .errors import DegenerateTargets, DimensionMismatch, NonFiniteLoss, ScalerUnset, TooFewRows

_OUT_LO = np.finfo(float).tiny
_OUT_HI = 1.0 - np.finfo(float).epsneg


@dataclass(frozen=True)
class TrainConfig:
    """Optimizer settings shared by the FNN and ANFIS trainers.

    ANFIS only reads ``learning_rate`` and ``epochs``.
    """

    learning_rate: float = 1e-3
    epochs: int = 500
    batch_size: int = 16
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    optimizer: str = "adam"
    target_margin: float = 0.1

    def __post_init__(self) -> None:
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.epochs < 0 or self.batch_size < 1:
            raise ValueError("epochs must be >= 0 and batch_size >= 1")
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1 and self.eps > 0):
            raise ValueError("need 0 < beta1, beta2 < 1 and eps > 0")
        if self.optimizer not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")


@dataclass(frozen=True, eq=False)
class FnnModel:
    W1: np.ndarray  # (hidden, input)
    b1: np.ndarray  # (hidden,)
    W2: np.ndarray  # (hidden,)
    b2: float
    scaler: tuple[float, float] | None = None
    seed: int = 0
    hyper: dict = field(default_factory=dict)
    loss_history: tuple[float, ...] = ()

    @property
    def n_in(self) -> int:
        return self.W1.shape[1]

    @property
    def n_hidden(self) -> int:
        return self.W1.shape[0]

    @property
    def n_params(self) -> int:
        return self.W1.size + self.b1.size + self.W2.size + 1

    @property
    def final_loss(self) -> float:
        return self.loss_history[-1] if self.loss_history else math.nan

    def params(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2, [self.b2]])

    def with_params(self, theta: np.ndarray) -> "FnnModel":
        h, i = self.W1.shape
        a, b, c = h * i, h * i + h, h * i + 2 * h
        return replace(self, W1=theta[:a].reshape(h, i).copy(), b1=theta[a:b].copy(),
                       W2=theta[b:c].copy(), b2=float(theta[c]))

    def same_params(self, other: "FnnModel") -> bool:
        return np.array_equal(self.params(), other.params()) and self.scaler == other.scaler


def init_fnn(n_in: int, n_hidden: int, seed: int) -> FnnModel:
    """Glorot-uniform weights, zero biases, deterministic in ``seed``."""
    if n_in < 1 or n_hidden < 1:
        raise ValueError("n_in and n_hidden must be >= 1")
    rng = np.random.default_rng(seed)
    lim1 = math.sqrt(6.0 / (n_in + n_hidden))
    lim2 = math.sqrt(6.0 / (n_hidden + 1))
    W1 = rng.uniform(-lim1, lim1, size=(n_hidden, n_in))
    W2 = rng.uniform(-lim2, lim2, size=n_hidden)
    return FnnModel(W1, np.zeros(n_hidden), W2, 0.0, seed=seed)


def _check_input(model: FnnModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.n_in:
        raise DimensionMismatch(f"expected {model.n_in} inputs, got {X.shape[-1]}")
    return X


def forward(model: FnnModel, x: np.ndarray):
    """Network output in (0, 1); a scalar for one sample, an array for a batch."""
    X = _check_input(model, x)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    hidden = np.maximum(X2 @ model.W1.T + model.b1, 0.0)
    out = np.clip(expit(hidden @ model.W2 + model.b2), _OUT_LO, _OUT_HI)
    return float(out[0]) if single else out


def _backprop(W1, b1, W2, b2, X, T):
    n = X.shape[0]
    z = X @ W1.T + b1
    a = np.maximum(z, 0.0)
    o = expit(a @ W2 + b2)
    r = o - T
    delta_out = (2.0 / n) * r * o * (1.0 - o)
    delta_hidden = np.outer(delta_out, W2) * (z > 0)
    return (float(np.mean(r * r)), delta_hidden.T @ X, delta_hidden.sum(axis=0),
            a.T @ delta_out, float(delta_out.sum()))


def loss_and_grads(model: FnnModel, X: np.ndarray, T: np.ndarray) -> tuple[float, np.ndarray]:
    """MSE against targets in output units and its gradient as a flat vector.

    Backpropagation follows the delta rule: each weight's gradient is the
    local error at its destination node times the activation feeding it.
    """
    X = _check_input(model, X)
    loss, gW1, gb1, gW2, gb2 = _backprop(model.W1, model.b1, model.W2, model.b2,
                                         X, np.asarray(T, dtype=float))
    return loss, np.concatenate([gW1.ravel(), gb1, gW2, [gb2]])


def mse(model: FnnModel, X: np.ndarray, T: np.ndarray) -> float:
    r = forward(model, np.atleast_2d(X)) - np.asarray(T, dtype=float)
    return float(np.mean(r * r))


def fit_target_scaler(targets, margin: float = 0.1) -> tuple[float, float]:
    t = np.asarray(targets, dtype=float)
    if t.size < 2:
        raise DegenerateTargets("need at least 2 targets to fit the scaler")
    lo, hi = float(t.min()), float(t.max())
    span = hi - lo
    if span == 0:
        raise DegenerateTargets(f"all {t.size} targets equal {lo}")
    return lo - margin * span, hi + margin * span


def scale_targets(t, scaler: tuple[float, float]) -> np.ndarray:
    lo, hi = scaler
    return (np.asarray(t, dtype=float) - lo) / (hi - lo)


def unscale_targets(s, scaler: tuple[float, float]):
    lo, hi = scaler
    return lo + (hi - lo) * s


def train_fnn(model: FnnModel, X: np.ndarray, T: np.ndarray, cfg: TrainConfig = TrainConfig()) -> FnnModel:
    """Fit the scaler on ``T`` then run ``cfg.epochs`` passes of mini-batch updates."""
    X = _check_input(model, X)
    T = np.asarray(T, dtype=float)
    n = X.shape[0]
    if n != T.shape[0]:
        raise DimensionMismatch(f"{n} rows but {T.shape[0]} targets")
    if n < cfg.batch_size:
        raise TooFewRows(f"{n} rows is fewer than batch_size={cfg.batch_size}")
    scaler = fit_target_scaler(T, cfg.target_margin)
    Ts = scale_targets(T, scaler)
    out = replace(model, scaler=scaler, hyper=asdict(cfg))
    if cfg.epochs == 0:
        return out

    # parameter views into one flat vector so the optimizer updates in place
    theta = out.params()
    h, i = model.W1.shape
    W1 = theta[:h * i].reshape(h, i)
    b1 = theta[h * i:h * i + h]
    W2 = theta[h * i + h:h * i + 2 * h]
    g = np.empty_like(theta)
    gW1 = g[:h * i].reshape(h, i)
    m = np.zeros_like(theta)
    v = np.zeros_like(theta)
    rng = np.random.default_rng(cfg.seed)
    step = 0
    history = [mse(out, X, Ts)]
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            _, gW1[...], g[h * i:h * i + h], g[h * i + h:h * i + 2 * h], g[-1] = _backprop(
                W1, b1, W2, theta[-1], X[idx], Ts[idx])
            step += 1
            if cfg.optimizer == "sgd":
                theta -= cfg.learning_rate * g
                continue
            m *= cfg.beta1
            m += (1 - cfg.beta1) * g
            v *= cfg.beta2
            v += (1 - cfg.beta2) * g * g
            m_hat = m / (1 - cfg.beta1 ** step)
            v_hat = v / (1 - cfg.beta2 ** step)
            theta -= cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps)
        loss = _backprop(W1, b1, W2, theta[-1], X, Ts)[0]
        if not (math.isfinite(loss) and np.all(np.isfinite(theta))):
            raise NonFiniteLoss(f"loss became {loss} at epoch {epoch + 1}")
        history.append(loss)
    return replace(out.with_params(theta), loss_history=tuple(history))


def predict_return(model: FnnModel, x: np.ndarray):
    """Network output mapped back to relative-return units."""
    if model.scaler is None:
        raise ScalerUnset("model has no target scaler; train it first")
    return unscale_targets(forward(model, x), model.scaler)


def _rel_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-7) -> np.ndarray:
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


GradFn = Callable[[FnnModel, np.ndarray, np.ndarray], "tuple[float, np.ndarray]"]


def numeric_grad(model: FnnModel, X: np.ndarray, T: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of the MSE for every parameter."""
    theta = model.params()
    g = np.empty_like(theta)
    for k in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[k] += h
        tm[k] -= h
        g[k] = (loss_and_grads(model.with_params(tp), X, T)[0]
                - loss_and_grads(model.with_params(tm), X, T)[0]) / (2 * h)
    return g


def gradient_check(model: FnnModel, X: np.ndarray, T: np.ndarray, h: float = 1e-5,
                   grad_fn: GradFn | None = None) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``T`` is in target units when the model has a scaler, otherwise in
    output units. Relative errors use a floor of 1e-7 in the denominator so
    that parameters with (near) zero gradient compare absolutely.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = np.asarray(T, dtype=float)
    if model.scaler is not None:
        T = scale_targets(T, model.scaler)
    analytic = (grad_fn or loss_and_grads)(model, X, T)[1]
    numeric = numeric_grad(model, X, T, h)
    return float(_rel_error(analytic, numeric).max())


def save_fnn(model: FnnModel, path: str | Path) -> None:
    lines = ["fnn 1", f"shape {model.n_in} {model.n_hidden}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in model.W1]
    lines.append(" ".join(repr(float(v)) for v in model.b1))
    lines.append(" ".join(repr(float(v)) for v in model.W2))
    lines.append(repr(float(model.b2)))
    lines.append("scaler none" if model.scaler is None
                 else f"scaler {model.scaler[0]!r} {model.scaler[1]!r}")
    lines.append(f"seed {model.seed}")
    lines.append("hyper " + json.dumps(model.hyper, sort_keys=True))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_fnn(path: str | Path) -> FnnModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if lines[0] != "fnn 1":
        raise ValueError(f"{path}: not an fnn model file")
    _, n_in, n_hidden = lines[1].split()
    n_in, n_hidden = int(n_in), int(n_hidden)
    vec = lambda s: np.array([float(t) for t in s.split()])  # noqa: E731
    W1 = np.stack([vec(lines[2 + r]) for r in range(n_hidden)])
    k = 2 + n_hidden
    b1, W2, b2 = vec(lines[k]), vec(lines[k + 1]), float(lines[k + 2])
    sc = lines[k + 3].split()
    scaler = None if sc[1] == "none" else (float(sc[1]), float(sc[2]))
    seed = int(lines[k + 4].split()[1])
    hyper = json.loads(lines[k + 5][len("hyper "):])
    return FnnModel(W1, b1, W2, b2, scaler=scaler, seed=seed, hyper=hyper)
