"""Run configuration: one flat key-value file plus command-line overrides.

File format is ``key = value`` per line, ``#`` comments allowed. A
``config.json`` echo written by a previous run is accepted too, which is
how a run is replayed exactly. Recognized keys are the field names of
:class:`RunConfig`.
"""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Any, Mapping

from .anfis import SubClustConfig
from .backtest import BacktestConfig
from .fnn import TrainConfig
from .panel import PanelLayout, Quarter
from .preprocess import PreprocessConfig
from .synth import SynthSpec


@dataclass(frozen=True)
class RunConfig:
    # data
    data_dir: str = "data"
    fundamentals_dir: str = "fundamentals"
    prices_file: str = "prices.csv"
    benchmark_file: str = "benchmark.csv"
    window_start: str = "1996-Q1"
    window_end: str = "2017-Q4"
    # preprocessing
    train_frac: float = 0.6
    val_frac: float = 0.2
    test_frac: float = 0.2
    max_missing_frac: float = 0.2
    impute: bool = True
    # models
    algo: str = "both"
    fnn_hidden: int = 21
    fnn_learning_rate: float = 1e-3
    fnn_epochs: int = 500
    fnn_batch_size: int = 16
    fnn_beta1: float = 0.9
    fnn_beta2: float = 0.999
    fnn_eps: float = 1e-8
    fnn_optimizer: str = "adam"
    fnn_target_margin: float = 0.1
    anfis_radius: float = 0.5
    anfis_squash: float = 1.25
    anfis_accept_ratio: float = 0.5
    anfis_reject_ratio: float = 0.15
    anfis_learning_rate: float = 0.01
    anfis_epochs: int = 10
    anfis_ridge: float = 1e-6
    # backtest
    k: int = 30
    base_seed: int = 0
    model_selection: bool = True
    # comma-separated candidates compared on the validation range
    fnn_epochs_grid: str = ""
    anfis_ridge_grid: str = "1e-6,1e-3,1e-2,0.1,1,10"
    # output
    out_dir: str = "report"
    run_id: str = "run"
    # synthetic data
    synth_stocks: int = 70
    synth_quarters: int = 88
    synth_features: int = 21
    synth_signal_scale: float = 0.04
    synth_noise_sigma: float = 0.03
    synth_blank_fraction: float = 0.0
    synth_seed: int = 0

    def __post_init__(self) -> None:
        fr = (self.train_frac, self.val_frac, self.test_frac)
        if not all(0 < f < 1 for f in fr) or not math.isclose(sum(fr), 1.0, abs_tol=1e-9):
            raise ValueError("split fractions must lie in (0, 1) and sum to 1")
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.algo not in ("fnn", "anfis", "both"):
            raise ValueError(f"algo must be fnn, anfis or both, got {self.algo!r}")
        Quarter.parse(self.window_start)
        Quarter.parse(self.window_end)

    @property
    def algos(self) -> tuple[str, ...]:
        return ("fnn", "anfis") if self.algo == "both" else (self.algo,)

    @property
    def window(self) -> tuple[Quarter, Quarter]:
        return Quarter.parse(self.window_start), Quarter.parse(self.window_end)

    def layout(self) -> PanelLayout:
        return PanelLayout(self.fundamentals_dir, self.prices_file, self.benchmark_file)

    def preprocess(self) -> PreprocessConfig:
        return PreprocessConfig(max_missing_frac=self.max_missing_frac, impute=self.impute,
                                train_frac=self.train_frac, val_frac=self.val_frac)

    def backtest(self, threads: int = 1) -> BacktestConfig:
        return BacktestConfig(
            k=self.k,
            fnn_hidden=self.fnn_hidden,
            fnn_train=TrainConfig(learning_rate=self.fnn_learning_rate, epochs=self.fnn_epochs,
                                  batch_size=self.fnn_batch_size, beta1=self.fnn_beta1,
                                  beta2=self.fnn_beta2, eps=self.fnn_eps,
                                  optimizer=self.fnn_optimizer,
                                  target_margin=self.fnn_target_margin),
            anfis_clust=SubClustConfig(self.anfis_radius, self.anfis_squash,
                                       self.anfis_accept_ratio, self.anfis_reject_ratio),
            anfis_train=TrainConfig(learning_rate=self.anfis_learning_rate, epochs=self.anfis_epochs),
            anfis_ridge=self.anfis_ridge,
            base_seed=self.base_seed,
            threads=threads,
            model_selection=self.model_selection,
            fnn_epochs_grid=tuple(int(v) for v in _split_list(self.fnn_epochs_grid)),
            anfis_ridge_grid=tuple(float(v) for v in _split_list(self.anfis_ridge_grid)),
        )

    def synth(self) -> SynthSpec:
        return SynthSpec(n_stocks=self.synth_stocks, n_quarters=self.synth_quarters,
                         n_features=self.synth_features, signal_scale=self.synth_signal_scale,
                         noise_sigma=self.synth_noise_sigma, seed=self.synth_seed,
                         blank_fraction=self.synth_blank_fraction,
                         start=Quarter.parse(self.window_start))

    def echo(self) -> dict[str, Any]:
        return asdict(self)


def _split_list(text: str) -> list[str]:
    return [v.strip() for v in text.split(",") if v.strip()]


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _coerce(name: str, raw: Any) -> Any:
    if name not in _FIELDS:
        raise KeyError(f"unknown config key {name!r}")
    kind = type(getattr(RunConfig(), name))
    if isinstance(raw, kind) and not (kind is int and isinstance(raw, bool)):
        return raw
    text = str(raw).strip()
    if kind is bool:
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: not a boolean: {raw!r}")
    if kind is int:
        return int(text)
    if kind is float:
        return float(text)
    return text


def from_mapping(values: Mapping[str, Any], base: RunConfig | None = None) -> RunConfig:
    updates = {k: _coerce(k, v) for k, v in values.items()}
    return replace(base or RunConfig(), **updates)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    if path.suffix == ".json":
        data = json.loads(text)
        return from_mapping(data.get("run_config", data))
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#",))
    parser.optionxform = str  # keys are case-sensitive field names
    parser.read_string("[run]\n" + text)
    return from_mapping(dict(parser["run"]))
