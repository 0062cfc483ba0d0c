"""First-order Takagi-Sugeno neuro-fuzzy regressor.

Rules come from subtractive clustering of the joint (input, target) space,
one Gaussian membership per input per rule. Consequents are linear in the
inputs and are solved by regularized least squares; premises (centers and
widths) are refined by gradient descent in the hybrid trainer.

Layer by layer, for input x:

1. membership      mu_ij = exp(-(x_j - c_ij)^2 / (2 sigma_ij^2))
2. firing strength w_i = prod_j mu_ij
3. normalization   wbar_i = w_i / sum_k w_k
4. consequent      o_i = wbar_i * (p_i . x + r_i)
5. output          y = sum_i o_i
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateRange, DimensionMismatch, EmptyInput, NonFiniteLoss, SingularSystem
from .fnn import TrainConfig

UNDERFLOW = 1e-300
SQRT8 = math.sqrt(8.0)


@dataclass(frozen=True)
class SubClustConfig:
    radius: float = 0.5
    squash: float = 1.25
    accept_ratio: float = 0.5
    reject_ratio: float = 0.15

    def __post_init__(self) -> None:
        if not self.radius > 0:
            raise ValueError("radius must be positive")
        if not self.squash >= 1:
            raise ValueError("squash must be >= 1")
        if not 0 < self.reject_ratio < self.accept_ratio <= 1:
            raise ValueError("need 0 < reject_ratio < accept_ratio <= 1")


def _potentials(X: np.ndarray, alpha: float) -> np.ndarray:
    diff = X[:, None, :] - X[None, :, :]
    return np.exp(-alpha * (diff * diff).sum(axis=2)).sum(axis=1)


def subtractive_cluster_indices(X: np.ndarray, cfg: SubClustConfig = SubClustConfig()) -> list[int]:
    """Row indices of the selected cluster centers, in selection order."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[0] == 0:
        raise EmptyInput("subtractive clustering needs at least one sample")
    ra = cfg.radius
    rb = cfg.squash * ra
    alpha, beta = 4.0 / ra ** 2, 4.0 / rb ** 2
    P = _potentials(X, alpha)
    first = int(np.argmax(P))
    p1 = P[first]
    centers = [first]
    P = P - p1 * np.exp(-beta * ((X - X[first]) ** 2).sum(axis=1))
    while True:
        k = int(np.argmax(P))
        pk = P[k]
        if pk <= 0 or pk < cfg.reject_ratio * p1:
            break
        if pk < cfg.accept_ratio * p1:
            dmin = math.sqrt(min(((X[k] - X[c]) ** 2).sum() for c in centers))
            if dmin / ra + pk / p1 < 1.0:
                # grey zone rejection: drop this candidate and try the next
                P[k] = 0.0
                continue
        centers.append(k)
        P = P - pk * np.exp(-beta * ((X - X[k]) ** 2).sum(axis=1))
    return centers


def subtractive_cluster(X: np.ndarray, cfg: SubClustConfig = SubClustConfig()) -> np.ndarray:
    """Cluster centers (actual data rows) from Chiu's subtractive clustering.

    ``X`` is expected in the unit hypercube; the radius is in those units.
    """
    X = np.asarray(X, dtype=float)
    return X[subtractive_cluster_indices(X, cfg)]


@dataclass(frozen=True, eq=False)
class AnfisModel:
    centers: np.ndarray  # (rules, inputs)
    sigmas: np.ndarray  # (rules, inputs)
    coef: np.ndarray  # (rules, inputs + 1): p_i then r_i
    input_ranges: np.ndarray  # (inputs, 2)
    loss_history: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        if self.centers.shape != self.sigmas.shape or self.centers.ndim != 2:
            raise ValueError("centers and sigmas must share a (rules, inputs) shape")
        if self.coef.shape != (self.centers.shape[0], self.centers.shape[1] + 1):
            raise ValueError("coef must have shape (rules, inputs + 1)")
        if self.centers.shape[0] < 1:
            raise ValueError("need at least one rule")
        if np.any(~(self.sigmas > 0)):
            raise ValueError("all widths must be positive")

    @property
    def n_in(self) -> int:
        return self.centers.shape[1]

    @property
    def n_rules(self) -> int:
        return self.centers.shape[0]

    @property
    def p(self) -> np.ndarray:
        return self.coef[:, :-1]

    @property
    def r(self) -> np.ndarray:
        return self.coef[:, -1]

    def same_params(self, other: "AnfisModel") -> bool:
        return all(np.array_equal(a, b) for a, b in [
            (self.centers, other.centers), (self.sigmas, other.sigmas),
            (self.coef, other.coef), (self.input_ranges, other.input_ranges)])


def build_anfis(centers: np.ndarray, x_ranges: np.ndarray, radius: float = 0.5) -> AnfisModel:
    """One rule per center.

    ``centers`` are in unit-hypercube coordinates; columns beyond the inputs
    (the target coordinate of joint-space clustering) are ignored. Widths
    follow sigma = radius * range / sqrt(8).
    """
    x_ranges = np.asarray(x_ranges, dtype=float).reshape(-1, 2)
    n_in = x_ranges.shape[0]
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    if centers.shape[0] < 1:
        raise EmptyInput("need at least one center")
    if centers.shape[1] < n_in:
        raise DimensionMismatch(f"centers have {centers.shape[1]} coordinates, need {n_in}")
    lo, hi = x_ranges[:, 0], x_ranges[:, 1]
    span = hi - lo
    if np.any(~(span > 0)):
        bad = np.flatnonzero(~(span > 0)).tolist()
        raise DegenerateRange(f"zero-width input range in dimension(s) {bad}")
    c = lo + centers[:, :n_in] * span
    sig = np.broadcast_to(radius * span / SQRT8, c.shape).copy()
    return AnfisModel(c, sig, np.zeros((c.shape[0], n_in + 1)), x_ranges.copy())


@dataclass
class Trace:
    membership: np.ndarray
    firing: np.ndarray
    normalized: np.ndarray
    rule_outputs: np.ndarray
    consequents: np.ndarray
    output: float
    underflow: bool


def _normalized_firing(model: AnfisModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Log firing strengths, normalized strengths and an underflow flag per row."""
    d = (X[:, None, :] - model.centers[None]) / model.sigmas[None]
    logw = -0.5 * (d * d).sum(axis=2)
    w = np.exp(logw)
    s = w.sum(axis=1)
    under = s < UNDERFLOW
    wbar = np.empty_like(w)
    ok = ~under
    wbar[ok] = w[ok] / s[ok, None]
    if under.any():
        # nothing fires measurably: hand the input to the closest rule
        wbar[under] = 0.0
        wbar[np.flatnonzero(under), np.argmax(logw[under], axis=1)] = 1.0
    return logw, wbar, under


def _check(model: AnfisModel, X) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.shape[-1] != model.n_in:
        raise DimensionMismatch(f"expected {model.n_in} inputs, got {X.shape[-1]}")
    return X


def anfis_forward(model: AnfisModel, x: np.ndarray) -> tuple[float, Trace]:
    x = _check(model, x)
    if x.ndim != 1:
        raise DimensionMismatch("anfis_forward takes a single input vector")
    d = (x[None, :] - model.centers) / model.sigmas
    mu = np.exp(-0.5 * d * d)
    logw, wbar, under = _normalized_firing(model, x[None, :])
    f = model.p @ x + model.r
    o = wbar[0] * f
    y = float(o.sum())
    return y, Trace(mu, np.exp(logw[0]), wbar[0], o, f, y, bool(under[0]))


def anfis_predict(model: AnfisModel, X: np.ndarray):
    """Model output in relative-return units; scalar for one vector."""
    X = _check(model, X)
    single = X.ndim == 1
    X2 = X[None, :] if single else X
    _, wbar, _ = _normalized_firing(model, X2)
    f = X2 @ model.p.T + model.r
    y = (wbar * f).sum(axis=1)
    return float(y[0]) if single else y


def design_matrix(model: AnfisModel, X: np.ndarray) -> np.ndarray:
    """Columns wbar_i * [x, 1] for every rule, rule-major."""
    X = _check(model, np.atleast_2d(X))
    _, wbar, _ = _normalized_firing(model, X)
    xe = np.hstack([X, np.ones((X.shape[0], 1))])
    return (wbar[:, :, None] * xe[:, None, :]).reshape(X.shape[0], -1)


def fit_consequents_lse(model: AnfisModel, X: np.ndarray, T: np.ndarray, ridge: float = 1e-6) -> AnfisModel:
    """Solve the (ridge) normal equations for all consequent coefficients."""
    if ridge < 0:
        raise ValueError("ridge must be >= 0")
    X = _check(model, np.atleast_2d(X))
    T = np.asarray(T, dtype=float)
    if X.shape[0] != T.shape[0]:
        raise DimensionMismatch(f"{X.shape[0]} rows but {T.shape[0]} targets")
    A = design_matrix(model, X)
    G = A.T @ A
    if ridge == 0 and np.linalg.matrix_rank(A) < A.shape[1]:
        raise SingularSystem(f"design matrix rank {np.linalg.matrix_rank(A)} < {A.shape[1]} "
                             "columns; use ridge > 0")
    G[np.diag_indices_from(G)] += ridge
    try:
        theta = np.linalg.solve(G, A.T @ T)
    except np.linalg.LinAlgError as exc:
        raise SingularSystem(str(exc)) from exc
    return replace(model, coef=theta.reshape(model.n_rules, model.n_in + 1))


def anfis_mse(model: AnfisModel, X: np.ndarray, T: np.ndarray) -> float:
    r = anfis_predict(model, np.atleast_2d(X)) - np.asarray(T, dtype=float)
    return float(np.mean(r * r))


def premise_grads(model: AnfisModel, X: np.ndarray, T: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """MSE and its gradient with respect to centers and widths.

    Uses d y / d log w_k = wbar_k (f_k - y). Rows in the underflow branch
    contribute no premise gradient.
    """
    X = _check(model, np.atleast_2d(X))
    T = np.asarray(T, dtype=float)
    n = X.shape[0]
    _, wbar, under = _normalized_firing(model, X)
    f = X @ model.p.T + model.r
    y = (wbar * f).sum(axis=1)
    e = y - T
    g_logw = (2.0 / n) * e[:, None] * wbar * (f - y[:, None])
    g_logw[under] = 0.0
    diff = X[:, None, :] - model.centers[None]
    s2 = model.sigmas ** 2
    g_c = np.einsum("nr,nrj->rj", g_logw, diff) / s2
    g_s = np.einsum("nr,nrj->rj", g_logw, diff * diff) / (s2 * model.sigmas)
    return float(np.mean(e * e)), g_c, g_s


def train_anfis(model: AnfisModel, X: np.ndarray, T: np.ndarray,
                cfg: TrainConfig = TrainConfig(learning_rate=0.01, epochs=10),
                ridge: float = 1e-6) -> AnfisModel:
    """Hybrid training: per epoch an LSE pass then one premise gradient step.

    A closing LSE pass refits consequents to the final premises, so
    ``epochs=0`` is plain least squares. ``loss_history`` holds the MSE after
    each LSE pass.
    """
    X = _check(model, np.atleast_2d(X))
    T = np.asarray(T, dtype=float)
    floor = 1e-6 * (model.input_ranges[:, 1] - model.input_ranges[:, 0])
    history = []
    for epoch in range(cfg.epochs):
        model = fit_consequents_lse(model, X, T, ridge)
        loss, g_c, g_s = premise_grads(model, X, T)
        if not (math.isfinite(loss) and np.all(np.isfinite(g_c)) and np.all(np.isfinite(g_s))):
            raise NonFiniteLoss(f"non-finite loss or gradient at epoch {epoch + 1}")
        history.append(loss)
        model = replace(model,
                        centers=model.centers - cfg.learning_rate * g_c,
                        sigmas=np.maximum(model.sigmas - cfg.learning_rate * g_s, floor))
    model = fit_consequents_lse(model, X, T, ridge)
    loss = anfis_mse(model, X, T)
    if not math.isfinite(loss):
        raise NonFiniteLoss("non-finite loss after final least-squares pass")
    history.append(loss)
    return replace(model, loss_history=tuple(history))


def fit_anfis(X: np.ndarray, T: np.ndarray, clust: SubClustConfig = SubClustConfig(),
              cfg: TrainConfig = TrainConfig(learning_rate=0.01, epochs=10),
              ridge: float = 1e-6) -> AnfisModel:
    """Cluster the scaled joint space, build the rule base and train it."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    T = np.asarray(T, dtype=float)
    Z = np.hstack([X, T[:, None]])
    lo, hi = Z.min(axis=0), Z.max(axis=0)
    span = hi - lo
    if np.any(~(span > 0)):
        raise DegenerateRange(f"zero-width range in joint dimension(s) {np.flatnonzero(~(span > 0)).tolist()}")
    centers = subtractive_cluster((Z - lo) / span, clust)
    model = build_anfis(centers, np.column_stack([lo[:-1], hi[:-1]]), clust.radius)
    return train_anfis(model, X, T, cfg, ridge)


def _row(v) -> str:
    return " ".join(repr(float(a)) for a in np.ravel(v))


def save_anfis(model: AnfisModel, path: str | Path) -> None:
    lines = ["anfis 1", f"{model.n_in} {model.n_rules}", "ranges " + _row(model.input_ranges)]
    for i in range(model.n_rules):
        lines += ["c " + _row(model.centers[i]), "s " + _row(model.sigmas[i]),
                  "p " + _row(model.p[i]), "r " + repr(float(model.r[i]))]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_anfis(path: str | Path) -> AnfisModel:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if lines[0] != "anfis 1":
        raise ValueError(f"{path}: not an anfis model file")
    n_in, n_rules = map(int, lines[1].split())
    vals = lambda s: np.array([float(t) for t in s.split()[1:]])  # noqa: E731
    ranges = vals(lines[2]).reshape(n_in, 2)
    c, s, coef = [], [], []
    for i in range(n_rules):
        block = lines[3 + 4 * i: 7 + 4 * i]
        c.append(vals(block[0]))
        s.append(vals(block[1]))
        coef.append(np.append(vals(block[2]), vals(block[3])))
    return AnfisModel(np.array(c), np.array(s), np.array(coef), ranges)
