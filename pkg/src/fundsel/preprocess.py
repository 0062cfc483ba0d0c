"""Turn a quarterly panel into a supervised, standardized dataset.

Pipeline order: sparse-feature dropping, percentage-change stationarization,
neighbor-mean imputation (applied causally, see :func:`causal_fill`),
momentum feature, target alignment, 60/20/20 split on the quarter axis and
train-only standardization.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    AllFeaturesDropped,
    AllMissing,
    DataError,
    NoOverlap,
    SchemaError,
    SeriesTooShort,
    TooFewRows,
    WindowTooShort,
)
from .panel import BenchmarkSeries, Quarter, QuarterlyPanel, format_float, next_quarter, prev_quarter

log = logging.getLogger(__name__)

MOMENTUM_FEATURE = "rel_return_lag1"
SPLIT_NAMES = ("train", "validation", "test")


def _as_series(series) -> np.ndarray:
    return np.array([math.nan if v is None else v for v in series], dtype=float)


def missing_fractions(panel: QuarterlyPanel) -> dict[str, float]:
    """Panel-wide missing fraction per feature."""
    if panel.values.size == 0:
        return {f: 0.0 for f in panel.features}
    frac = np.isnan(panel.values).mean(axis=(0, 1))
    return {f: float(v) for f, v in zip(panel.features, frac)}


def drop_sparse_features(panel: QuarterlyPanel, max_missing_frac: float = 0.2) -> tuple[QuarterlyPanel, list[str]]:
    if not 0.0 <= max_missing_frac <= 1.0:
        raise ValueError("max_missing_frac must be in [0, 1]")
    fracs = missing_fractions(panel)
    for f, v in fracs.items():
        log.debug("feature %s: %.4f missing", f, v)
    keep = [f for f in panel.features if fracs[f] <= max_missing_frac]
    dropped = [f for f in panel.features if fracs[f] > max_missing_frac]
    if not keep:
        raise AllFeaturesDropped(f"every feature exceeds missing fraction {max_missing_frac}")
    if dropped:
        log.info("dropped %d sparse feature(s): %s", len(dropped), ", ".join(dropped))
    return panel.select(features=keep), dropped


def stationarize(series: Sequence[float | None]) -> np.ndarray:
    """Fractional change between consecutive observations.

    Output has length n-1. An entry is NaN when either endpoint is missing
    or the earlier value is zero.
    """
    y = _as_series(series)
    if y.size < 2:
        raise SeriesTooShort(f"need at least 2 observations, got {y.size}")
    prev, cur = y[:-1], y[1:]
    out = np.full(prev.shape, np.nan)
    ok = ~np.isnan(prev) & ~np.isnan(cur) & (prev != 0)
    out[ok] = (cur[ok] - prev[ok]) / prev[ok]
    return out


def impute_neighbor_mean(series: Sequence[float | None]) -> np.ndarray:
    """Replace each gap with the mean of the nearest observed value on each side.

    At the edges, where only one side exists, that side is copied.
    """
    y = _as_series(series)
    obs = ~np.isnan(y)
    if not obs.any():
        raise AllMissing("series has no observed entries")
    if obs.all():
        return y
    idx = np.arange(y.size)
    # nearest observed position at or before / at or after each index
    before = np.maximum.accumulate(np.where(obs, idx, -1))
    after = np.minimum.accumulate(np.where(obs, idx, y.size)[::-1])[::-1]
    out = y.copy()
    for i in np.flatnonzero(~obs):
        b, a = before[i], after[i]
        if b < 0:
            out[i] = y[a]
        elif a >= y.size:
            out[i] = y[b]
        else:
            out[i] = (y[b] + y[a]) / 2.0
    return out


def causal_fill(series: Sequence[float | None]) -> np.ndarray:
    """Neighbor-mean imputation evaluated on history only.

    Entry t equals ``impute_neighbor_mean(series[:t+1])[t]``: a gap takes the
    last observed value, and a gap before the first observation is 0 (no
    change). This keeps every value free of information from later quarters.
    """
    y = _as_series(series)
    obs = ~np.isnan(y)
    last = np.maximum.accumulate(np.where(obs, np.arange(y.size), -1))
    out = np.where(last >= 0, y[np.maximum(last, 0)], 0.0)
    return out


@dataclass(frozen=True, eq=False)
class StandardizationStats:
    feature_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    @property
    def zero_variance(self) -> np.ndarray:
        return self.std == 0

    def apply(self, rows: np.ndarray) -> np.ndarray:
        return (np.asarray(rows, dtype=float) - self.mean) / self.std

    def select(self, keep: Sequence[int]) -> "StandardizationStats":
        keep = list(keep)
        return StandardizationStats(tuple(self.feature_names[j] for j in keep),
                                    self.mean[keep].copy(), self.std[keep].copy())


def fit_standardization(train_rows: np.ndarray, feature_names: Sequence[str] | None = None) -> StandardizationStats:
    """Per-column mean and sample standard deviation (n-1)."""
    X = np.asarray(train_rows, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise TooFewRows(f"need at least 2 training rows, got {X.shape[0]}")
    names = tuple(feature_names) if feature_names is not None else tuple(f"f{j}" for j in range(X.shape[1]))
    mean = X.mean(axis=0)
    std = X.std(axis=0, ddof=1)
    # exact constants can leave round-off residue in std
    std[np.all(X == X[0], axis=0)] = 0.0
    return StandardizationStats(names, mean, std)


@dataclass(frozen=True, eq=False)
class RelativeReturnSeries:
    ticker: str
    quarters: tuple[Quarter, ...]
    values: np.ndarray

    def as_dict(self) -> dict[Quarter, float]:
        return {q: float(v) for q, v in zip(self.quarters, self.values)}


def _rel(p_prev, p_cur, b_prev, b_cur):
    return (p_cur / p_prev - 1.0) - (b_cur / b_prev - 1.0)


def relative_returns(prices: Mapping[Quarter, float], bench: BenchmarkSeries | Mapping[Quarter, float],
                     ticker: str = "") -> RelativeReturnSeries:
    """Stock return minus benchmark return, per quarter, as fractions."""
    blev = bench.as_dict() if isinstance(bench, BenchmarkSeries) else dict(bench)
    have = {q: float(p) for q, p in prices.items()
            if p is not None and not math.isnan(p) and q in blev}
    if len(have) < 2:
        raise NoOverlap(f"{ticker or 'series'}: fewer than two quarters with both price and benchmark")
    qs, vals = [], []
    for q in sorted(have):
        pq = prev_quarter(q)
        if pq in have:
            qs.append(q)
            vals.append(_rel(have[pq], have[q], blev[pq], blev[q]))
    if not qs:
        raise NoOverlap(f"{ticker or 'series'}: no consecutive quarters with both price and benchmark")
    return RelativeReturnSeries(ticker, tuple(qs), np.array(vals))


def relative_return_matrix(panel: QuarterlyPanel, bench: BenchmarkSeries) -> np.ndarray:
    """(tickers, quarters) relative returns; column 0 and gaps are NaN."""
    b = np.full(len(panel.quarters) + 1, np.nan)
    blev = bench.as_dict()
    for k, q in enumerate((prev_quarter(panel.quarters[0]), *panel.quarters)):
        b[k] = blev.get(q, np.nan)
    p = panel.prices
    out = np.full(p.shape, np.nan)
    out[:, 1:] = _rel(p[:, :-1], p[:, 1:], b[1:-1], b[2:])
    return out


@dataclass(frozen=True)
class PreprocessConfig:
    max_missing_frac: float = 0.2
    impute: bool = True
    train_frac: float = 0.6
    val_frac: float = 0.2
    min_samples: int = 10
    expected_test_count: int | None = None


@dataclass(frozen=True)
class Split:
    train: range
    validation: range
    test: range

    @classmethod
    def from_counts(cls, n_train: int, n_val: int, n_test: int) -> "Split":
        a, b = n_train, n_train + n_val
        return cls(range(0, a), range(a, b), range(b, b + n_test))

    def __getitem__(self, name: str) -> range:
        if name not in SPLIT_NAMES:
            raise KeyError(name)
        return getattr(self, name)

    def label(self, i: int) -> str:
        for name in SPLIT_NAMES:
            if i in self[name]:
                return name
        raise IndexError(i)


def split_counts(n: int, train_frac: float, val_frac: float) -> tuple[int, int, int]:
    """floor(train_frac*n), floor(val_frac*n), remainder."""
    # tolerance keeps products like 0.6*85 = 50.999... from losing a row
    n_tr = int(math.floor(train_frac * n + 1e-9))
    n_va = int(math.floor(val_frac * n + 1e-9))
    return n_tr, n_va, n - n_tr - n_va


@dataclass(frozen=True, eq=False)
class Dataset:
    """Aligned samples for every ticker on a common quarter axis.

    ``X`` has shape (tickers, samples, features) and is standardized with
    ``stats``; ``y[i, s]`` is the relative return realized over the quarter
    after ``quarters[s]``. ``raw`` holds the unstandardized features and is
    absent for datasets reloaded from disk.
    """

    tickers: tuple[str, ...]
    feature_names: tuple[str, ...]
    quarters: tuple[Quarter, ...]
    X: np.ndarray
    y: np.ndarray
    split: Split
    stats: StandardizationStats
    raw: np.ndarray | None = None
    excluded: Mapping[str, str] = field(default_factory=dict)
    dropped_features: tuple[str, ...] = ()
    fit_range: str = "train"

    @property
    def n_samples(self) -> int:
        return len(self.quarters)

    @property
    def realized_quarters(self) -> tuple[Quarter, ...]:
        return tuple(next_quarter(q) for q in self.quarters)

    def rows(self, name: str, ticker: str | None = None) -> tuple[np.ndarray, np.ndarray]:
        r = self.split[name]
        if ticker is None:
            return self.X[:, r.start:r.stop], self.y[:, r.start:r.stop]
        i = self.tickers.index(ticker)
        return self.X[i, r.start:r.stop], self.y[i, r.start:r.stop]

    def merged(self) -> "Dataset":
        """Train+validation as the training range, standardization refit on it."""
        if self.fit_range == "train+validation":
            return self
        if self.raw is None:
            raise DataError("merged view needs raw features; reloaded datasets have none")
        n_tr = len(self.split.train) + len(self.split.validation)
        split = Split(range(0, n_tr), range(n_tr, n_tr), self.split.test)
        stats = fit_standardization(self.raw[:, :n_tr].reshape(-1, self.raw.shape[2]), self.feature_names)
        return replace(self, X=_frozen(stats.apply(self.raw)), split=split, stats=stats,
                       fit_range="train+validation")


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


def ticker_features(values: np.ndarray, rel: np.ndarray, impute: bool = True) -> np.ndarray:
    """Unstandardized feature rows for one ticker.

    ``values`` is (quarters, features) raw levels and ``rel`` the relative
    return per quarter. Row k corresponds to quarter k+1 of the input: the
    change of every feature into that quarter plus the return realized over
    it. Raises AllMissing for a feature with no observation at all.
    """
    nq, nf = values.shape
    out = np.empty((nq - 1, nf + 1))
    for j in range(nf):
        s = stationarize(values[:, j])
        if np.isnan(s).all():
            raise AllMissing(f"feature column {j} has no computable change")
        out[:, j] = causal_fill(s) if impute else s
    m = rel[1:]
    if np.isnan(m).all():
        raise AllMissing("no computable relative return")
    out[:, nf] = causal_fill(m) if impute else m
    return out


def build_dataset(panel: QuarterlyPanel, bench: BenchmarkSeries,
                  config: PreprocessConfig = PreprocessConfig()) -> Dataset:
    panel, dropped = drop_sparse_features(panel, config.max_missing_frac)
    nq = len(panel.quarters)
    n = nq - 2
    if n < config.min_samples:
        raise WindowTooShort(f"{n} usable samples per ticker, need {config.min_samples}")
    rel = relative_return_matrix(panel, bench)
    names = (*panel.features, MOMENTUM_FEATURE)

    kept, feats, targets = [], [], []
    excluded: dict[str, str] = {}
    for i, t in enumerate(panel.tickers):
        try:
            f = ticker_features(panel.values[i], rel[i], config.impute)
        except AllMissing as exc:
            excluded[t] = f"AllMissing: {exc}"
            log.warning("excluding %s: %s", t, exc)
            continue
        x = f[:n]
        y = rel[i, 2:]
        if np.isnan(y).any():
            excluded[t] = "missing target return"
            log.warning("excluding %s: target relative return missing in window", t)
            continue
        if np.isnan(x).any():
            raise DataError(f"{t}: missing feature values with imputation disabled")
        kept.append(t)
        feats.append(x)
        targets.append(y)
    if not kept:
        raise DataError("no ticker survived preprocessing")

    raw = np.stack(feats)
    y = np.stack(targets)
    n_tr, n_va, n_te = split_counts(n, config.train_frac, config.val_frac)
    if min(n_tr, n_te) < 1 or n_tr < 2:
        raise WindowTooShort(f"split {n_tr}/{n_va}/{n_te} leaves an empty range")
    if config.expected_test_count is not None and n_te != config.expected_test_count:
        raise WindowTooShort(f"test range has {n_te} quarters, expected {config.expected_test_count}")
    split = Split.from_counts(n_tr, n_va, n_te)

    stats = fit_standardization(raw[:, :n_tr].reshape(-1, raw.shape[2]), names)
    zv = stats.zero_variance
    if zv.any():
        gone = [names[j] for j in np.flatnonzero(zv)]
        log.warning("dropping zero-variance feature(s): %s", ", ".join(gone))
        keep = np.flatnonzero(~zv)
        if keep.size == 0:
            raise AllFeaturesDropped("every feature has zero variance on the train range")
        raw = raw[:, :, keep]
        stats = stats.select(keep)
        names = stats.feature_names
        dropped = [*dropped, *gone]

    return Dataset(
        tickers=tuple(kept),
        feature_names=tuple(names),
        quarters=panel.quarters[1:nq - 1],
        X=_frozen(stats.apply(raw)),
        y=_frozen(y),
        split=split,
        stats=stats,
        raw=_frozen(raw),
        excluded=excluded,
        dropped_features=tuple(dropped),
    )


def audit_lookahead(panel: QuarterlyPanel, bench: BenchmarkSeries, dataset: Dataset,
                    samples: Sequence[int] | None = None) -> list[tuple[str, Quarter]]:
    """Recompute feature vectors from data truncated at each sample quarter.

    Uses only raw data up to the sample's quarter and the dataset's own
    standardization stats. Imputation is redone with
    :func:`impute_neighbor_mean` on the truncated history rather than the
    pipeline's fill routine. Returns the (ticker, quarter) pairs that differ
    bit-for-bit; an empty list means the audit passed.
    """
    base = [n for n in dataset.feature_names if n != MOMENTUM_FEATURE]
    fidx = [panel.features.index(n) for n in base]
    has_mom = MOMENTUM_FEATURE in dataset.feature_names
    rel = relative_return_matrix(panel, bench)
    q0 = panel.quarters[0].ordinal
    samples = range(dataset.n_samples) if samples is None else samples

    def last_filled(hist: np.ndarray) -> float:
        if not np.isnan(hist[-1]):
            return float(hist[-1])
        try:
            return float(impute_neighbor_mean(hist)[-1])
        except AllMissing:
            return 0.0

    failures = []
    for ti, t in enumerate(dataset.tickers):
        pi = panel.tickers.index(t)
        for s in samples:
            q = dataset.quarters[s]
            k = q.ordinal - q0
            vals = panel.values[pi, :k + 1][:, fidx]
            row = [last_filled(stationarize(vals[:, j])) for j in range(len(fidx))]
            if has_mom:
                row.append(last_filled(rel[pi, 1:k + 1]))
            x = dataset.stats.apply(np.array(row))
            if not np.array_equal(x, dataset.X[ti, s]):
                failures.append((t, q))
    return failures


def write_dataset(ds: Dataset, out_dir: str | Path) -> None:
    """Write ``dataset.csv`` and ``stats.csv``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "dataset.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "quarter", "split", "y", *ds.feature_names])
        for i, t in enumerate(ds.tickers):
            for s, q in enumerate(ds.quarters):
                w.writerow([t, str(q), ds.split.label(s), format_float(ds.y[i, s]),
                            *(format_float(v) for v in ds.X[i, s])])
    with open(out / "stats.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["feature", "mean", "std"])
        for name, m, sd in zip(ds.stats.feature_names, ds.stats.mean, ds.stats.std):
            w.writerow([name, format_float(m), format_float(sd)])


def load_dataset(in_dir: str | Path) -> Dataset:
    src = Path(in_dir)
    with open(src / "stats.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if rows[0] != ["feature", "mean", "std"]:
        raise SchemaError("stats.csv header must be 'feature,mean,std'")
    stats = StandardizationStats(tuple(r[0] for r in rows[1:]),
                                 np.array([float(r[1]) for r in rows[1:]]),
                                 np.array([float(r[2]) for r in rows[1:]]))
    with open(src / "dataset.csv", newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0]
    if header[:4] != ["ticker", "quarter", "split", "y"] or tuple(header[4:]) != stats.feature_names:
        raise SchemaError("dataset.csv header does not match stats.csv")
    tickers: list[str] = []
    quarters: list[Quarter] = []
    labels: dict[Quarter, str] = {}
    cells: dict[tuple[str, Quarter], list[str]] = {}
    for r in rows[1:]:
        t, q = r[0], Quarter.parse(r[1])
        if t not in tickers:
            tickers.append(t)
        if q not in labels:
            quarters.append(q)
            labels[q] = r[2]
        cells[(t, q)] = r[3:]
    nf = len(stats.feature_names)
    X = np.empty((len(tickers), len(quarters), nf))
    y = np.empty((len(tickers), len(quarters)))
    for i, t in enumerate(tickers):
        for s, q in enumerate(quarters):
            c = cells[(t, q)]
            y[i, s] = float(c[0])
            X[i, s] = [float(v) for v in c[1:]]
    counts = [sum(1 for q in quarters if labels[q] == name) for name in SPLIT_NAMES]
    split = Split.from_counts(*counts)
    if [labels[q] for q in quarters] != [split.label(s) for s in range(len(quarters))]:
        raise SchemaError("dataset.csv split labels are not contiguous train<validation<test")
    return Dataset(tuple(tickers), stats.feature_names, tuple(quarters), _frozen(X), _frozen(y),
                   split, stats)
