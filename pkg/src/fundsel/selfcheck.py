"""Embedded verification suite behind ``fundsel selfcheck``.

Each check compares a fast code path against an independent reference from
:mod:`fundsel.oracles` on small randomized fixtures and returns the worst
discrepancy seen. The whole suite runs in a few seconds.
"""

from __future__ import annotations

import sys
import time
from typing import Callable

import numpy as np

from . import oracles
from .anfis import (
    AnfisModel,
    SubClustConfig,
    anfis_forward,
    anfis_mse,
    fit_consequents_lse,
    premise_grads,
    subtractive_cluster_indices,
)
from .backtest import CrossSection, construct_portfolios, portfolio_return
from .errors import NumericalError
from .fnn import gradient_check, init_fnn, loss_and_grads
from .panel import Quarter

TOL_GRAD = 1e-4


def _random_anfis(rng: np.random.Generator, n_in: int, n_rules: int) -> AnfisModel:
    return AnfisModel(rng.uniform(-1, 1, (n_rules, n_in)), rng.uniform(0.5, 1.5, (n_rules, n_in)),
                      rng.normal(size=(n_rules, n_in + 1)),
                      np.tile([-1.0, 1.0], (n_in, 1)))


def _broken_grads(model, X, T):
    loss, g = loss_and_grads(model, X, T)
    g = g.copy()
    g[0] += 1.0  # deliberately wrong
    return loss, g


def check_fnn_gradient(fault: bool = False) -> tuple[bool, str]:
    rng = np.random.default_rng(11)
    worst = 0.0
    for trial in range(3):
        m = init_fnn(21, 21, seed=trial)
        m = m.with_params(m.params() + rng.normal(0, 0.1, m.n_params))
        X = rng.normal(size=(4, 21))
        T = rng.uniform(0.1, 0.9, 4)
        worst = max(worst, gradient_check(m, X, T, grad_fn=_broken_grads if fault else None))
    return worst < TOL_GRAD, f"max relative error {worst:.2e}"


def check_anfis_gradient() -> tuple[bool, str]:
    rng = np.random.default_rng(12)
    worst = 0.0
    for _ in range(3):
        m = _random_anfis(rng, 3, 4)
        X = rng.uniform(-1, 1, (6, 3))
        T = rng.normal(size=6)
        _, g_c, g_s = premise_grads(m, X, T)
        nc = oracles.central_difference(
            lambda c: anfis_mse(AnfisModel(c.reshape(m.centers.shape), m.sigmas, m.coef, m.input_ranges), X, T),
            m.centers.ravel(), 1e-6)
        ns = oracles.central_difference(
            lambda s: anfis_mse(AnfisModel(m.centers, s.reshape(m.sigmas.shape), m.coef, m.input_ranges), X, T),
            m.sigmas.ravel(), 1e-6)
        for a, b in ((g_c.ravel(), nc), (g_s.ravel(), ns)):
            err = np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), 1e-7)
            worst = max(worst, float(err.max()))
    return worst < TOL_GRAD, f"max relative error {worst:.2e}"


def check_clustering() -> tuple[bool, str]:
    rng = np.random.default_rng(13)
    for i in range(10):
        X = rng.uniform(0, 1, (int(rng.integers(1, 60)), int(rng.integers(1, 4))))
        cfg = SubClustConfig(radius=float(rng.uniform(0.2, 0.8)))
        got = subtractive_cluster_indices(X, cfg)
        want = oracles.brute_force_subclust(X, cfg.radius, cfg.squash, cfg.accept_ratio, cfg.reject_ratio)
        if got != want:
            return False, f"fixture {i}: got {got}, oracle {want}"
    return True, "10 fixtures match the brute-force oracle"


def check_lse_recovery() -> tuple[bool, str]:
    centers = np.array([[-1.0, -1.0], [1.0, 1.0]])
    sigmas = np.full((2, 2), 0.6)
    true = np.array([[0.5, -0.3, 0.2], [-0.4, 0.8, -0.1]])
    ranges = np.tile([-2.0, 2.0], (2, 1))
    gen = AnfisModel(centers, sigmas, true, ranges)
    X = np.random.default_rng(14).uniform(-2, 2, (80, 2))
    T = np.array([anfis_forward(gen, x)[0] for x in X])
    fit = fit_consequents_lse(AnfisModel(centers, sigmas, np.zeros_like(true), ranges), X, T, ridge=0.0)
    err = float(np.abs(fit.coef - true).max())
    rmse = float(np.sqrt(anfis_mse(fit, X, T)))
    return err < 1e-6 and rmse < 1e-8, f"coef error {err:.1e}, rmse {rmse:.1e}"


def check_normalization() -> tuple[bool, str]:
    rng = np.random.default_rng(15)
    worst = 0.0
    for _ in range(5):
        m = _random_anfis(rng, 3, int(rng.integers(1, 6)))
        for x in rng.uniform(-1, 1, (50, 3)):
            worst = max(worst, abs(anfis_forward(m, x)[1].normalized.sum() - 1.0))
    return worst <= 1e-12, f"max |sum wbar - 1| {worst:.1e}"


def check_portfolios() -> tuple[bool, str]:
    rng = np.random.default_rng(16)
    q = Quarter(2000, 1)
    for i in range(200):
        n = int(rng.integers(2, 40))
        k = int(rng.integers(1, n // 2 + 1))
        names = [f"T{j:02d}" for j in range(n)]
        scores = dict(zip(names, rng.integers(0, 5, n).astype(float)))
        cs = CrossSection(q, q, scores, dict.fromkeys(names, 0.0))
        buy, sell = construct_portfolios(cs, k)
        want = oracles.brute_force_portfolios(scores, k)
        if (list(buy.members), list(sell.members)) != want or set(buy.members) & set(sell.members):
            return False, f"case {i}: mismatch with full-sort oracle"
    return True, "200 tied score vectors match the full-sort oracle"


def check_accounting() -> tuple[bool, str]:
    rng = np.random.default_rng(17)
    q = Quarter(2000, 1)
    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(2, 80))
        k = int(rng.integers(1, n // 2 + 1))
        names = [f"T{j:02d}" for j in range(n)]
        realized = dict(zip(names, rng.normal(0, 0.05, n)))
        cs = CrossSection(q, q, dict(zip(names, rng.normal(size=n))), realized)
        buy, sell = construct_portfolios(cs, k)
        rest = [realized[t] for t in names if t not in buy.members and t not in sell.members]
        middle = float(np.mean(rest)) if rest else 0.0
        lhs = k * portfolio_return(buy, cs) + k * portfolio_return(sell, cs) + (n - 2 * k) * middle
        worst = max(worst, abs(lhs - n * float(np.mean(list(realized.values())))))
    return worst <= 1e-12, f"max residual {worst:.1e}"


def run_selfcheck(fault: str | None = None, out=sys.stdout) -> int:
    checks: list[tuple[str, Callable[[], tuple[bool, str]]]] = [
        ("gradient_check", lambda: check_fnn_gradient(fault == "gradient_check")),
        ("anfis_gradient", check_anfis_gradient),
        ("subtractive_clustering", check_clustering),
        ("lse_recovery", check_lse_recovery),
        ("normalization", check_normalization),
        ("portfolio_oracle", check_portfolios),
        ("accounting_identity", check_accounting),
    ]
    failed = []
    for name, fn in checks:
        t0 = time.perf_counter()
        try:
            ok, detail = fn()
        except Exception as exc:  # a crash counts as a failed check
            ok, detail = False, f"{type(exc).__name__}: {exc}"
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail} ({time.perf_counter() - t0:.2f}s)", file=out)
        if not ok:
            failed.append(name)
    if failed:
        print(f"selfcheck failed: {', '.join(failed)}", file=sys.stderr)
        return NumericalError.exit_code
    return 0
