"""Quarterly fundamentals, prices and benchmark levels.

Missing values are represented as NaN inside the numeric arrays. On disk a
missing cell is either empty or the literal token ``NA``.
"""

from __future__ import annotations

import csv
import logging
import math
import re
from dataclasses import dataclass, field
from functools import total_ordering
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import (
    DuplicateQuarter,
    EmptyUniverse,
    GapInSeries,
    MissingFile,
    NonPositiveLevel,
    SchemaError,
)

log = logging.getLogger(__name__)

MISSING_TOKENS = frozenset({"", "NA"})
_QUARTER_RE = re.compile(r"^(\d{4})-Q([1-4])$")


@total_ordering
@dataclass(frozen=True)
class Quarter:
    year: int
    q: int

    def __post_init__(self) -> None:
        if self.q not in (1, 2, 3, 4):
            raise ValueError(f"quarter must be in 1..4, got {self.q}")

    def __lt__(self, other: "Quarter") -> bool:
        if not isinstance(other, Quarter):
            return NotImplemented
        return (self.year, self.q) < (other.year, other.q)

    def __str__(self) -> str:
        return f"{self.year}-Q{self.q}"

    @classmethod
    def parse(cls, text: str) -> "Quarter":
        m = _QUARTER_RE.match(text.strip())
        if m is None:
            raise SchemaError(f"bad quarter label {text!r}, expected YYYY-Q[1-4]")
        return cls(int(m.group(1)), int(m.group(2)))

    @property
    def ordinal(self) -> int:
        return self.year * 4 + (self.q - 1)

    @classmethod
    def from_ordinal(cls, n: int) -> "Quarter":
        return cls(n // 4, n % 4 + 1)


def next_quarter(q: Quarter) -> Quarter:
    return Quarter.from_ordinal(q.ordinal + 1)


def prev_quarter(q: Quarter) -> Quarter:
    return Quarter.from_ordinal(q.ordinal - 1)


def quarter_range(start: Quarter, end: Quarter) -> tuple[Quarter, ...]:
    """Inclusive, consecutive quarters from ``start`` to ``end``."""
    return tuple(Quarter.from_ordinal(n) for n in range(start.ordinal, end.ordinal + 1))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class QuarterlyPanel:
    """Per-stock, per-quarter feature matrix plus quarter-end prices.

    ``values`` has shape (tickers, quarters, features) and ``prices`` shape
    (tickers, quarters). ``first_observed`` keeps the earliest quarter with
    any data as seen at load time; clipping the panel does not change it.
    """

    tickers: tuple[str, ...]
    quarters: tuple[Quarter, ...]
    features: tuple[str, ...]
    values: np.ndarray
    prices: np.ndarray
    first_observed: Mapping[str, Quarter | None] = field(default_factory=dict)

    def __post_init__(self) -> None:
        object.__setattr__(self, "tickers", tuple(self.tickers))
        object.__setattr__(self, "quarters", tuple(self.quarters))
        object.__setattr__(self, "features", tuple(self.features))
        object.__setattr__(self, "values", _frozen(self.values))
        object.__setattr__(self, "prices", _frozen(self.prices))
        nt, nq, nf = len(self.tickers), len(self.quarters), len(self.features)
        if self.values.shape != (nt, nq, nf):
            raise SchemaError(f"values shape {self.values.shape} != {(nt, nq, nf)}")
        if self.prices.shape != (nt, nq):
            raise SchemaError(f"prices shape {self.prices.shape} != {(nt, nq)}")
        if len(set(self.features)) != nf:
            raise SchemaError("feature names must be unique")
        if len(set(self.tickers)) != nt:
            raise SchemaError("tickers must be unique")
        for a, b in zip(self.quarters, self.quarters[1:]):
            if b.ordinal != a.ordinal + 1:
                raise GapInSeries(f"panel quarters not consecutive at {a} -> {b}")
        p = self.prices[~np.isnan(self.prices)]
        if np.any(p <= 0):
            raise NonPositiveLevel("every price present must be > 0")
        if not self.first_observed:
            object.__setattr__(self, "first_observed", _first_observed(self))

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    @property
    def n_missing(self) -> int:
        return int(self.missing_mask.sum())

    def ticker_index(self, ticker: str) -> int:
        return self.tickers.index(ticker)

    def quarter_index(self, q: Quarter) -> int:
        i = q.ordinal - self.quarters[0].ordinal
        if not 0 <= i < len(self.quarters) or self.quarters[i] != q:
            raise KeyError(q)
        return i

    def select(self, *, tickers: Sequence[str] | None = None,
               features: Sequence[str] | None = None) -> "QuarterlyPanel":
        ti = [self.tickers.index(t) for t in tickers] if tickers is not None else list(range(len(self.tickers)))
        fi = [self.features.index(f) for f in features] if features is not None else list(range(len(self.features)))
        return QuarterlyPanel(
            tickers=tuple(self.tickers[i] for i in ti),
            quarters=self.quarters,
            features=tuple(self.features[j] for j in fi),
            values=self.values[np.ix_(ti, range(len(self.quarters)), fi)],
            prices=self.prices[ti],
            first_observed={self.tickers[i]: self.first_observed.get(self.tickers[i]) for i in ti},
        )

    def equals(self, other: "QuarterlyPanel") -> bool:
        """Structural equality, NaN-aware and bit-exact on present values."""
        return (
            self.tickers == other.tickers
            and self.quarters == other.quarters
            and self.features == other.features
            and np.array_equal(self.values, other.values, equal_nan=True)
            and np.array_equal(self.prices, other.prices, equal_nan=True)
            and dict(self.first_observed) == dict(other.first_observed)
        )


def _first_observed(panel: QuarterlyPanel) -> dict[str, Quarter | None]:
    out: dict[str, Quarter | None] = {}
    for i, t in enumerate(panel.tickers):
        has = (~np.isnan(panel.values[i])).any(axis=1) | ~np.isnan(panel.prices[i])
        idx = np.flatnonzero(has)
        out[t] = panel.quarters[idx[0]] if idx.size else None
    return out


@dataclass(frozen=True, eq=False)
class BenchmarkSeries:
    quarters: tuple[Quarter, ...]
    levels: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "quarters", tuple(self.quarters))
        object.__setattr__(self, "levels", _frozen(self.levels))
        if len(self.quarters) != len(self.levels):
            raise SchemaError("quarters and levels differ in length")
        if np.any(~(self.levels > 0)):
            raise NonPositiveLevel("benchmark levels must be > 0")
        for a, b in zip(self.quarters, self.quarters[1:]):
            if b.ordinal != a.ordinal + 1:
                raise GapInSeries(f"benchmark gap between {a} and {b}")

    def level(self, q: Quarter) -> float:
        i = q.ordinal - self.quarters[0].ordinal
        if not 0 <= i < len(self.quarters):
            raise KeyError(q)
        return float(self.levels[i])

    def covers(self, start: Quarter, end: Quarter) -> bool:
        """True if the series spans ``[start - 1, end]``."""
        return bool(self.quarters) and self.quarters[0] <= prev_quarter(start) and self.quarters[-1] >= end

    def as_dict(self) -> dict[Quarter, float]:
        return {q: float(v) for q, v in zip(self.quarters, self.levels)}


@dataclass(frozen=True)
class PanelLayout:
    """Relative locations of the on-disk files under a data root."""

    fundamentals_dir: str = "fundamentals"
    prices_file: str = "prices.csv"
    benchmark_file: str = "benchmark.csv"
    tickers: tuple[str, ...] | None = None


def _parse_cell(text: str) -> tuple[float, bool]:
    """Return (value, unparseable). Missing tokens map to NaN, not unparseable."""
    s = text.strip()
    if s in MISSING_TOKENS:
        return math.nan, False
    try:
        v = float(s)
    except ValueError:
        return math.nan, True
    if not math.isfinite(v):
        return math.nan, True
    return v, False


def _read_rows(path: Path) -> list[list[str]]:
    # newline="" lets csv handle both \n and \r\n
    with open(path, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh) if row]


def _read_fundamentals(path: Path, ticker: str):
    rows = _read_rows(path)
    if not rows or rows[0][0].strip() != "quarter":
        raise SchemaError(f"{path}: first header column must be 'quarter'")
    header = [h.strip() for h in rows[0]]
    features = header[1:]
    if len(set(features)) != len(features):
        raise SchemaError(f"{path}: duplicate feature names in header")
    data: dict[Quarter, list[float]] = {}
    bad = np.zeros(len(features), dtype=int)
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise SchemaError(f"{path}:{lineno}: expected {len(header)} cells, got {len(row)}")
        q = Quarter.parse(row[0])
        if q in data:
            raise DuplicateQuarter(f"{ticker}: two rows for quarter {q}")
        vals = []
        for j, cell in enumerate(row[1:]):
            v, unparseable = _parse_cell(cell)
            bad[j] += unparseable
            vals.append(v)
        data[q] = vals
    for j, n in enumerate(bad):
        if n:
            log.warning("%s: %d unparseable cell(s) in feature %r treated as missing",
                        ticker, n, features[j])
    return features, data, int(bad.sum())


def load_panel(root_path: str | Path, layout: PanelLayout = PanelLayout()) -> QuarterlyPanel:
    """Load one fundamentals file per ticker plus the shared prices file."""
    root = Path(root_path)
    fdir = root / layout.fundamentals_dir
    if not fdir.is_dir():
        raise MissingFile(f"fundamentals directory not found: {fdir}")
    if layout.tickers is not None:
        tickers = list(layout.tickers)
    else:
        tickers = sorted(p.stem for p in fdir.glob("*.csv"))
    if not tickers:
        raise EmptyUniverse(f"no fundamentals files under {fdir}")

    features: list[str] | None = None
    per_ticker: dict[str, dict[Quarter, list[float]]] = {}
    n_bad = 0
    for t in tickers:
        path = fdir / f"{t}.csv"
        if not path.is_file():
            raise MissingFile(f"no fundamentals file for ticker {t}: {path}")
        feats, data, bad = _read_fundamentals(path, t)
        if features is None:
            features = feats
        elif feats != features:
            raise SchemaError(f"{path}: header differs from the first fundamentals file")
        per_ticker[t] = data
        n_bad += bad

    ppath = root / layout.prices_file
    if not ppath.is_file():
        raise MissingFile(f"prices file not found: {ppath}")
    rows = _read_rows(ppath)
    if not rows or [h.strip() for h in rows[0]] != ["ticker", "quarter", "close"]:
        raise SchemaError(f"{ppath}: header must be 'ticker,quarter,close'")
    prices: dict[str, dict[Quarter, float]] = {t: {} for t in tickers}
    skipped = 0
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 3:
            raise SchemaError(f"{ppath}:{lineno}: expected 3 cells")
        t = row[0].strip()
        if t not in prices:
            skipped += 1
            continue
        q = Quarter.parse(row[1])
        if q in prices[t]:
            raise DuplicateQuarter(f"{t}: two price rows for quarter {q}")
        v, unparseable = _parse_cell(row[2])
        if unparseable:
            log.warning("%s %s: unparseable close %r treated as missing", t, q, row[2])
            n_bad += 1
        if not math.isnan(v) and v <= 0:
            raise NonPositiveLevel(f"{ppath}:{lineno}: non-positive close {v}")
        prices[t][q] = v
    if skipped:
        log.info("%s: skipped %d rows for tickers outside the universe", ppath, skipped)

    all_q = [q for d in per_ticker.values() for q in d] + [q for d in prices.values() for q in d]
    if not all_q:
        raise EmptyUniverse("no quarter rows in any file")
    quarters = quarter_range(min(all_q), max(all_q))
    q0 = quarters[0].ordinal
    assert features is not None
    values = np.full((len(tickers), len(quarters), len(features)), np.nan)
    parr = np.full((len(tickers), len(quarters)), np.nan)
    for i, t in enumerate(tickers):
        for q, vals in per_ticker[t].items():
            values[i, q.ordinal - q0] = vals
        for q, v in prices[t].items():
            parr[i, q.ordinal - q0] = v
    panel = QuarterlyPanel(tuple(tickers), quarters, tuple(features), values, parr)
    log.info("loaded panel: %d tickers, %d quarters, %d features, %d missing (%d unparseable)",
             len(tickers), len(quarters), len(features), panel.n_missing, n_bad)
    return panel


def load_benchmark(path: str | Path) -> BenchmarkSeries:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"benchmark file not found: {path}")
    rows = _read_rows(path)
    if not rows or [h.strip() for h in rows[0]] != ["quarter", "level"]:
        raise SchemaError(f"{path}: header must be 'quarter,level'")
    data: dict[Quarter, float] = {}
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != 2:
            raise SchemaError(f"{path}:{lineno}: expected 2 cells")
        q = Quarter.parse(row[0])
        if q in data:
            raise DuplicateQuarter(f"benchmark: two rows for quarter {q}")
        v, unparseable = _parse_cell(row[1])
        if math.isnan(v):
            raise SchemaError(f"{path}:{lineno}: benchmark level missing or unparseable")
        if v <= 0:
            raise NonPositiveLevel(f"{path}:{lineno}: non-positive level {v}")
        data[q] = v
    if not data:
        raise SchemaError(f"{path}: no rows")
    qs = sorted(data)
    full = quarter_range(qs[0], qs[-1])
    if len(full) != len(qs):
        missing = [str(q) for q in full if q not in data]
        raise GapInSeries(f"benchmark missing quarters: {', '.join(missing[:5])}")
    return BenchmarkSeries(tuple(qs), np.array([data[q] for q in qs]))


def restrict_window(panel: QuarterlyPanel, start: Quarter, end: Quarter) -> tuple[QuarterlyPanel, list[str]]:
    """Clip to ``[start, end]`` and drop tickers first observed after ``start``."""
    if end < start:
        raise ValueError(f"window start {start} is after end {end}")
    keep_q = [i for i, q in enumerate(panel.quarters) if start <= q <= end]
    kept, dropped = [], []
    for t in panel.tickers:
        fo = panel.first_observed.get(t)
        (kept if fo is not None and fo <= start else dropped).append(t)
    if not kept or not keep_q:
        raise EmptyUniverse(f"no ticker observed by {start}")
    if dropped:
        log.info("restrict_window: dropped %d ticker(s) first observed after %s", len(dropped), start)
    ti = [panel.tickers.index(t) for t in kept]
    clipped = QuarterlyPanel(
        tickers=tuple(kept),
        quarters=tuple(panel.quarters[i] for i in keep_q),
        features=panel.features,
        values=panel.values[np.ix_(ti, keep_q)],
        prices=panel.prices[np.ix_(ti, keep_q)],
        first_observed={t: panel.first_observed[t] for t in kept},
    )
    return clipped, dropped


def format_float(v: float) -> str:
    """Shortest representation that round-trips exactly."""
    return "NA" if math.isnan(v) else repr(float(v))


def write_panel(panel: QuarterlyPanel, root_path: str | Path, layout: PanelLayout = PanelLayout()) -> None:
    """Write the panel in the on-disk layout read by :func:`load_panel`.

    Rows where a ticker has neither features nor a price are omitted.
    """
    root = Path(root_path)
    fdir = root / layout.fundamentals_dir
    fdir.mkdir(parents=True, exist_ok=True)
    for i, t in enumerate(panel.tickers):
        with open(fdir / f"{t}.csv", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["quarter", *panel.features])
            for k, q in enumerate(panel.quarters):
                row = panel.values[i, k]
                if np.isnan(row).all() and np.isnan(panel.prices[i, k]):
                    continue
                w.writerow([str(q), *(format_float(v) for v in row)])
    with open(root / layout.prices_file, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticker", "quarter", "close"])
        for i, t in enumerate(panel.tickers):
            for k, q in enumerate(panel.quarters):
                p = panel.prices[i, k]
                if not np.isnan(p):
                    w.writerow([t, str(q), format_float(p)])


def write_benchmark(bench: BenchmarkSeries, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["quarter", "level"])
        for q, v in zip(bench.quarters, bench.levels):
            w.writerow([str(q), format_float(v)])


def coverage_summary(panel: QuarterlyPanel) -> list[dict]:
    """Per-ticker coverage used by the ``ingest`` command."""
    out = []
    for i, t in enumerate(panel.tickers):
        fo = panel.first_observed.get(t)
        out.append({
            "ticker": t,
            "first_observed": str(fo) if fo else "-",
            "quarters_with_price": int((~np.isnan(panel.prices[i])).sum()),
            "missing_cells": int(np.isnan(panel.values[i]).sum()),
            "cells": int(panel.values[i].size),
        })
    return out

