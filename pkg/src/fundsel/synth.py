"""Synthetic panels with a planted fundamentals -> return relationship.

Each stock draws a standard-normal "change" vector x_t per quarter. Feature
levels are built so that their fractional change into quarter t is exactly
``feature_change_scale * x_t``; standardization in the pipeline removes the
scale again. The relative return realized over quarter t+1 is
``signal_scale * tanh(w . x_t) + noise``, and prices are rebuilt from those
relative returns and a random benchmark path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .panel import (
    BenchmarkSeries,
    PanelLayout,
    Quarter,
    QuarterlyPanel,
    prev_quarter,
    quarter_range,
    write_benchmark,
    write_panel,
)


@dataclass(frozen=True)
class SynthSpec:
    n_stocks: int = 70
    n_quarters: int = 88
    n_features: int = 21
    signal_weights: tuple[float, ...] | None = None
    signal_scale: float = 0.04
    noise_sigma: float = 0.03
    seed: int = 0
    blank_fraction: float = 0.0
    start: Quarter = Quarter(1996, 1)
    signal_norm: float = 0.5
    feature_change_scale: float = 0.1
    bench_drift: float = 0.015
    bench_vol: float = 0.07

    def __post_init__(self) -> None:
        if self.n_quarters < 12:
            raise ValueError("n_quarters must be >= 12")
        if self.noise_sigma < 0 or not self.signal_scale > 0:
            raise ValueError("need noise_sigma >= 0 and signal_scale > 0")
        if self.signal_weights is not None and len(self.signal_weights) != self.n_features:
            raise ValueError("signal_weights length must equal n_features")
        if not 0 <= self.blank_fraction < 1:
            raise ValueError("blank_fraction must be in [0, 1)")

    @property
    def quarters(self) -> tuple[Quarter, ...]:
        return quarter_range(self.start, Quarter.from_ordinal(self.start.ordinal + self.n_quarters - 1))


@dataclass(frozen=True, eq=False)
class SynthData:
    panel: QuarterlyPanel
    bench: BenchmarkSeries
    truth: dict[Quarter, dict[str, float]]
    relative: np.ndarray  # (stocks, quarters) planted relative returns, NaN at quarter 0
    weights: np.ndarray

    def __iter__(self):
        return iter((self.panel, self.bench, self.truth))


def default_weights(n_features: int, norm: float, rng: np.random.Generator) -> np.ndarray:
    w = rng.standard_normal(n_features)
    return norm * w / np.linalg.norm(w)


def generate_panel(spec: SynthSpec) -> SynthData:
    """Build (panel, benchmark, truth); unpacks as a 3-tuple.

    ``truth[q][ticker]`` is the noiseless expected relative return realized
    over quarter ``q``.
    """
    rng = np.random.default_rng(spec.seed)
    ns, nq, nf = spec.n_stocks, spec.n_quarters, spec.n_features
    quarters = spec.quarters
    tickers = tuple(f"S{i:03d}" for i in range(ns))
    w = (np.asarray(spec.signal_weights, dtype=float) if spec.signal_weights is not None
         else default_weights(nf, spec.signal_norm, rng))

    x = rng.standard_normal((ns, nq, nf))
    growth = 1.0 + spec.feature_change_scale * x[:, 1:, :]
    levels = np.empty((ns, nq, nf))
    levels[:, 0, :] = rng.uniform(50.0, 150.0, size=(ns, nf))
    levels[:, 1:, :] = levels[:, :1, :] * np.cumprod(growth, axis=1)

    # truth[:, t] is the expected relative return over quarter t, driven by x_{t-1}
    expected = np.full((ns, nq), np.nan)
    expected[:, 1:] = spec.signal_scale * np.tanh(x[:, :-1, :] @ w)
    noise = spec.noise_sigma * rng.standard_normal((ns, nq))
    rel = expected + noise

    bench_ret = spec.bench_drift + spec.bench_vol * rng.standard_normal(nq)
    bench_q = (prev_quarter(quarters[0]), *quarters)
    blev = 1000.0 * np.cumprod(np.concatenate([[1.0], 1.0 + bench_ret]))
    bench = BenchmarkSeries(bench_q, blev)

    prices = np.empty((ns, nq))
    prices[:, 0] = 100.0
    gross = 1.0 + (blev[2:] / blev[1:-1] - 1.0)[None, :] + rel[:, 1:]
    if np.any(gross <= 0):
        raise ValueError("generated a non-positive price; lower noise or signal scale")
    for t in range(1, nq):
        prices[:, t] = prices[:, t - 1] * gross[:, t - 1]

    if spec.blank_fraction > 0:
        mask = rng.random(levels.shape) < spec.blank_fraction
        levels = np.where(mask, np.nan, levels)

    panel = QuarterlyPanel(tickers, quarters, tuple(f"f{j:02d}" for j in range(nf)), levels, prices)
    truth = {q: {t: float(expected[i, k]) for i, t in enumerate(tickers)}
             for k, q in enumerate(quarters) if k > 0}
    return SynthData(panel, bench, truth, rel, w)


def write_synth_tree(data: SynthData, root: str | Path, layout: PanelLayout = PanelLayout()) -> Path:
    """Write the synthetic panel in the ingestion layout under ``root``."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    write_panel(data.panel, root, layout)
    write_benchmark(data.bench, root / layout.benchmark_file)
    return root


def _top_bottom_spread(values: Sequence[float], k: int) -> float:
    v = np.sort(np.asarray(values, dtype=float))
    k = min(k, v.size)
    return float(v[-k:].mean() - v[:k].mean())


def oracle_spread(truth: Mapping[Quarter, Mapping[str, float]], k: int,
                  test_quarters: Sequence[Quarter]) -> float:
    """Mean over quarters of (top-k mean - bottom-k mean) of the true expectations."""
    if not test_quarters:
        return math.nan
    return float(np.mean([_top_bottom_spread(list(truth[q].values()), k) for q in test_quarters]))
