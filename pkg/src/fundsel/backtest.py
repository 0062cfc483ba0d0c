"""Per-stock model training, cross-sectional ranking and portfolio evaluation."""

from __future__ import annotations

import csv
import json
import logging
import math
import zlib
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .anfis import AnfisModel, SubClustConfig, anfis_predict, fit_anfis
from .errors import (
    FundselError,
    MissingRealized,
    MissingSample,
    SchemaError,
    SeriesTooShort,
    UniverseTooSmall,
)
from .fnn import FnnModel, TrainConfig, init_fnn, predict_return, train_fnn
from .panel import Quarter
from .preprocess import Dataset

log = logging.getLogger(__name__)

ALGOS = ("fnn", "anfis")
SERIES = ("buy", "sell", "full_sample")


@dataclass(frozen=True)
class BacktestConfig:
    k: int = 30
    fnn_hidden: int = 21
    fnn_train: TrainConfig = TrainConfig()
    anfis_clust: SubClustConfig = SubClustConfig()
    anfis_train: TrainConfig = TrainConfig(learning_rate=0.01, epochs=10)
    anfis_ridge: float = 1e-6
    base_seed: int = 0
    threads: int = 1
    model_selection: bool = False
    # candidate values tried on the validation range when model_selection is on
    fnn_epochs_grid: tuple[int, ...] = ()
    anfis_ridge_grid: tuple[float, ...] = ()

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError("k must be >= 1")

    def candidates(self, algo: str) -> list[tuple[str, object, "BacktestConfig"]]:
        """(parameter, value, config) triples to compare during model selection."""
        if algo == "fnn" and self.fnn_epochs_grid:
            return [("fnn_epochs", e, replace(self, fnn_train=replace(self.fnn_train, epochs=e)))
                    for e in self.fnn_epochs_grid]
        if algo == "anfis" and self.anfis_ridge_grid:
            return [("anfis_ridge", r, replace(self, anfis_ridge=r)) for r in self.anfis_ridge_grid]
        return []


def ticker_seed(base_seed: int, ticker: str) -> int:
    """Per-ticker seed: base seed xor a stable 32-bit hash of the ticker."""
    return (base_seed ^ zlib.crc32(ticker.encode("utf-8"))) & 0xFFFFFFFF


@dataclass(frozen=True, eq=False)
class ModelTable:
    algo: str
    models: Mapping[str, FnnModel | AnfisModel]
    excluded: Mapping[str, str]
    fit_range: str

    @property
    def tickers(self) -> tuple[str, ...]:
        return tuple(self.models)


def predict_one(model, X: np.ndarray):
    if isinstance(model, FnnModel):
        return predict_return(model, X)
    if isinstance(model, AnfisModel):
        return anfis_predict(model, X)
    # any object with predict(X) works, e.g. constant or oracle predictors
    return model.predict(X)


def _train_one(algo: str, X: np.ndarray, y: np.ndarray, cfg: BacktestConfig, seed: int):
    if algo == "fnn":
        model = init_fnn(X.shape[1], cfg.fnn_hidden, seed)
        return train_fnn(model, X, y, replace(cfg.fnn_train, seed=seed))
    if algo == "anfis":
        return fit_anfis(X, y, cfg.anfis_clust, cfg.anfis_train, cfg.anfis_ridge)
    raise ValueError(f"unknown algorithm {algo!r}")


def train_universe(dataset: Dataset, algo: str, cfg: BacktestConfig = BacktestConfig(),
                   base_seed: int | None = None, stage: str = "final") -> ModelTable:
    """One model per ticker.

    ``stage="final"`` fits on train+validation, ``"validation"`` on train only.
    Tickers whose training raises a package error are excluded and recorded.
    """
    if stage not in ("final", "validation"):
        raise ValueError(f"unknown stage {stage!r}")
    ds = dataset.merged() if stage == "final" else dataset
    seed0 = cfg.base_seed if base_seed is None else base_seed

    def work(t: str):
        X, y = ds.rows("train", t)
        try:
            return t, _train_one(algo, X, y, cfg, ticker_seed(seed0, t)), None
        except FundselError as exc:
            return t, None, f"{exc.name}: {exc}"

    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(work, ds.tickers))
    else:
        results = [work(t) for t in ds.tickers]
    models, excluded = {}, {}
    for t, m, err in results:
        if m is None:
            log.warning("%s: %s training failed for %s", algo, stage, t)
            excluded[t] = err
        else:
            models[t] = m
    if len(models) < 2 * cfg.k:
        msg = f"{len(models)} trained {algo} models ({stage} stage), need at least 2k = {2 * cfg.k}"
        if excluded:
            reason, count = Counter(excluded.values()).most_common(1)[0]
            msg += f"; {len(excluded)} excluded, most often for {reason} ({count})"
        raise UniverseTooSmall(msg)
    return ModelTable(algo, models, excluded, ds.fit_range)


@dataclass(frozen=True)
class CrossSection:
    quarter: Quarter
    realized_quarter: Quarter
    scores: Mapping[str, float]
    realized: Mapping[str, float]

    def __post_init__(self) -> None:
        if set(self.scores) != set(self.realized):
            raise ValueError("scores and realized must cover the same tickers")
        vals = [*self.scores.values(), *self.realized.values()]
        if not all(math.isfinite(v) for v in vals):
            raise ValueError("cross-section values must be finite")


def predict_cross_section(models: ModelTable, dataset: Dataset, quarter: Quarter,
                          range_name: str = "test") -> CrossSection:
    """Score every modelled ticker on its own features at ``quarter``."""
    if models.fit_range != dataset.fit_range:
        dataset = dataset.merged()
    rng = dataset.split[range_name]
    try:
        s = dataset.quarters.index(quarter)
    except ValueError:
        raise MissingSample(f"no samples at {quarter}") from None
    if s not in rng:
        raise MissingSample(f"{quarter} is outside the {range_name} range")
    scores, realized = {}, {}
    for t in sorted(models.models):
        if t not in dataset.tickers:
            raise MissingSample(f"{t} has no sample at {quarter}")
        i = dataset.tickers.index(t)
        scores[t] = float(predict_one(models.models[t], dataset.X[i, s]))
        realized[t] = float(dataset.y[i, s])
    return CrossSection(quarter, dataset.realized_quarters[s], scores, realized)


@dataclass(frozen=True)
class Portfolio:
    quarter: Quarter
    side: str
    members: tuple[str, ...]


def construct_portfolios(cs: CrossSection, k: int) -> tuple[Portfolio, Portfolio]:
    """Top-k and bottom-k by score; ties go to the alphabetically first ticker.

    Buy is filled first, and Sell skips anything already in Buy.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(cs.scores)
    if n < 2 * k:
        raise UniverseTooSmall(f"universe of {n} cannot hold disjoint portfolios of {k}")
    items = list(cs.scores.items())
    buy = [t for t, _ in sorted(items, key=lambda it: (-it[1], it[0]))[:k]]
    taken = set(buy)
    sell = [t for t, _ in sorted(items, key=lambda it: (it[1], it[0])) if t not in taken][:k]
    return Portfolio(cs.quarter, "buy", tuple(buy)), Portfolio(cs.quarter, "sell", tuple(sell))


def portfolio_return(p: Portfolio, cs: CrossSection) -> float:
    """Equal-weight mean of the members' realized relative returns."""
    missing = [t for t in p.members if t not in cs.realized]
    if missing:
        raise MissingRealized(f"no realized return for {', '.join(missing)}")
    return float(np.mean([cs.realized[t] for t in p.members]))


@dataclass(frozen=True)
class Summary:
    mean: float
    std: float
    compound: float


def compound_curve(series: Sequence[float]) -> np.ndarray:
    return np.cumprod(1.0 + np.asarray(series, dtype=float)) - 1.0


def evaluate(series: Sequence[float]) -> Summary:
    """Arithmetic mean, sample std (n-1) and compounded return prod(1+r)-1."""
    r = np.asarray(series, dtype=float)
    if r.size < 2:
        raise SeriesTooShort(f"need at least 2 quarters, got {r.size}")
    return Summary(float(r.mean()), float(r.std(ddof=1)), float(np.prod(1.0 + r) - 1.0))


@dataclass(frozen=True, eq=False)
class BacktestReport:
    algo: str
    stage: str
    quarters: tuple[Quarter, ...]  # holding quarters, i.e. when returns are realized
    buy: np.ndarray
    sell: np.ndarray
    full_sample: np.ndarray
    k: int
    universe: tuple[str, ...]
    portfolios: tuple[tuple[Portfolio, Portfolio], ...]
    config: dict = field(default_factory=dict)
    validation: "BacktestReport | None" = None

    @property
    def n(self) -> int:
        return len(self.universe)

    def series(self, name: str) -> np.ndarray:
        return {"buy": self.buy, "sell": self.sell, "full_sample": self.full_sample}[name]

    @property
    def summary(self) -> dict[str, Summary]:
        return {s: evaluate(self.series(s)) for s in SERIES}


def run_range(models: ModelTable, dataset: Dataset, range_name: str, k: int):
    quarters, buy, sell, full, ports = [], [], [], [], []
    if models.fit_range != dataset.fit_range:
        dataset = dataset.merged()
    for s in dataset.split[range_name]:
        cs = predict_cross_section(models, dataset, dataset.quarters[s], range_name)
        b, sl = construct_portfolios(cs, k)
        quarters.append(cs.realized_quarter)
        buy.append(portfolio_return(b, cs))
        sell.append(portfolio_return(sl, cs))
        full.append(float(np.mean(list(cs.realized.values()))))
        ports.append((b, sl))
    return tuple(quarters), np.array(buy), np.array(sell), np.array(full), tuple(ports)


def config_echo(dataset: Dataset, algo: str, cfg: BacktestConfig, models: ModelTable) -> dict:
    def bounds(name: str) -> list[str] | None:
        r = dataset.split[name]
        return [str(dataset.quarters[r.start]), str(dataset.quarters[r.stop - 1])] if len(r) else None

    return {
        "algo": algo,
        "backtest": {
            "k": cfg.k,
            "base_seed": cfg.base_seed,
            "model_selection": cfg.model_selection,
            "std_ddof": 1,
            "compound": "prod(1+r)-1",
        },
        "fnn": {"hidden": cfg.fnn_hidden, **asdict(cfg.fnn_train)},
        "anfis": {**asdict(cfg.anfis_clust), **asdict(cfg.anfis_train), "ridge": cfg.anfis_ridge},
        "split": {name: bounds(name) for name in ("train", "validation", "test")},
        "features": list(dataset.feature_names),
        "universe_size": len(models.models),
        "excluded": dict(sorted({**dataset.excluded, **models.excluded}.items())),
    }


def _validation_pass(dataset: Dataset, algo: str, cfg: BacktestConfig) -> BacktestReport:
    vmodels = train_universe(dataset, algo, cfg, stage="validation")
    vq, vb, vs, vf, vp = run_range(vmodels, dataset, "validation", cfg.k)
    return BacktestReport(algo, "validation", vq, vb, vs, vf, cfg.k, vmodels.tickers, vp)


def select_config(dataset: Dataset, algo: str, cfg: BacktestConfig) -> tuple[BacktestConfig, BacktestReport, dict]:
    """Pick the candidate with the largest mean validation Buy-Sell spread.

    Ties keep the earlier candidate. Without a grid this is a single
    validation pass with ``cfg`` itself.
    """
    cands = cfg.candidates(algo)
    if not cands:
        return cfg, _validation_pass(dataset, algo, cfg), {}
    best = None
    spreads = []
    for param, value, c in cands:
        rep = _validation_pass(dataset, algo, c)
        spread = float(np.mean(rep.buy - rep.sell))
        spreads.append(spread)
        if best is None or spread > best[0]:
            best = (spread, value, c, rep)
    _, value, chosen, rep = best
    log.info("%s model selection: %s=%r (validation spreads %s)", algo, cands[0][0], value, spreads)
    info = {"param": cands[0][0], "candidates": [v for _, v, _ in cands],
            "validation_spread": spreads, "chosen": value}
    return chosen, rep, info


def run_backtest(dataset: Dataset, algo: str, cfg: BacktestConfig = BacktestConfig()) -> BacktestReport:
    """Train the universe on train+validation, then rank and hold every test quarter.

    With ``cfg.model_selection`` a train-only validation stage runs first and
    may choose among the configured candidate hyperparameters.
    """
    validation = None
    selection: dict = {}
    if cfg.model_selection and len(dataset.split.validation):
        cfg, validation, selection = select_config(dataset, algo, cfg)
    models = train_universe(dataset, algo, cfg, stage="final")
    q, b, s, f, p = run_range(models, dataset, "test", cfg.k)
    echo = config_echo(dataset, algo, cfg, models)
    if selection:
        echo["selection"] = selection
    return BacktestReport(algo, "test", q, b, s, f, cfg.k, models.tickers, p, echo, validation)


def _fmt(v: float) -> str:
    return f"{v:.10g}"


def _write_csv(path: Path, header: Sequence[str], rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_returns(quarters, buy, sell, full, out: Path, name: str = "portfolio_returns.csv") -> None:
    _write_csv(out / name, ["quarter", *SERIES],
               [[str(q), _fmt(b), _fmt(s), _fmt(f)] for q, b, s, f in zip(quarters, buy, sell, full)])


def _as_stored(v) -> np.ndarray:
    # summaries are computed from the returns exactly as written to disk, so
    # re-rendering from portfolio_returns.csv reproduces them byte for byte
    return np.array([float(_fmt(x)) for x in v])


def write_summary_files(quarters, buy, sell, full, out: Path) -> None:
    """summary.csv and compound_curve.csv from per-quarter returns."""
    series = {"buy": _as_stored(buy), "sell": _as_stored(sell), "full_sample": _as_stored(full)}
    rows = []
    for name in SERIES:
        sm = evaluate(series[name])
        rows.append([name, _fmt(sm.mean), _fmt(sm.std), _fmt(sm.compound)])
    _write_csv(out / "summary.csv", ["series", "mean", "std", "compound"], rows)
    curves = {name: compound_curve(series[name]) for name in SERIES}
    _write_csv(out / "compound_curve.csv", ["quarter", *SERIES],
               [[str(q), *(_fmt(curves[n][i]) for n in SERIES)] for i, q in enumerate(quarters)])


def write_report(report: BacktestReport, out_dir: str | Path, echo: Mapping | None = None) -> Path:
    """Write the per-quarter returns, summary, compound curve and config echo."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_returns(report.quarters, report.buy, report.sell, report.full_sample, out)
    write_summary_files(report.quarters, report.buy, report.sell, report.full_sample, out)
    if report.validation is not None:
        v = report.validation
        write_returns(v.quarters, v.buy, v.sell, v.full_sample, out, "validation_returns.csv")
    if echo is not None:
        (out / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n",
                                         encoding="utf-8")
    return out


def write_combined_summary(reports: Mapping[str, BacktestReport], path: str | Path) -> None:
    """One row per (algorithm, side) with the matching full-sample statistics."""
    rows = []
    for side in ("buy", "sell"):
        for algo, rep in reports.items():
            sm = evaluate(_as_stored(rep.series(side)))
            fs = evaluate(_as_stored(rep.full_sample))
            rows.append([f"{algo}_{side}", _fmt(sm.mean), _fmt(sm.std), _fmt(sm.compound),
                         _fmt(fs.mean), _fmt(fs.std), _fmt(fs.compound)])
    _write_csv(Path(path), ["series", "mean", "std", "compound", "full_sample_mean",
                            "full_sample_std", "full_sample_compound"], rows)


def read_returns(path: str | Path):
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["quarter", *SERIES]:
        raise SchemaError(f"{path}: header must be 'quarter,{','.join(SERIES)}'")
    quarters = [Quarter.parse(r[0]) for r in rows[1:]]
    cols = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    return quarters, cols[:, 0], cols[:, 1], cols[:, 2]


def rerender(report_dir: str | Path) -> None:
    """Regenerate summary.csv and compound_curve.csv from portfolio_returns.csv."""
    out = Path(report_dir)
    q, b, s, f = read_returns(out / "portfolio_returns.csv")
    write_summary_files(q, b, s, f, out)
