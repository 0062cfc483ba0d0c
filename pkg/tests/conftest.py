from __future__ import annotations

import numpy as np
import pytest

from fundsel.panel import BenchmarkSeries, Quarter, QuarterlyPanel, quarter_range

# filled by tests/test_acceptance.py: criterion number -> (passed, detail)
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


def make_panel(values, prices, start=Quarter(1996, 1), tickers=None, features=None):
    values = np.asarray(values, dtype=float)
    nt, nq, nf = values.shape
    tickers = tickers or [f"T{i}" for i in range(nt)]
    features = features or [f"f{j}" for j in range(nf)]
    qs = quarter_range(start, Quarter.from_ordinal(start.ordinal + nq - 1))
    return QuarterlyPanel(tuple(tickers), qs, tuple(features), values, np.asarray(prices, dtype=float))


def flat_bench(start=Quarter(1995, 4), n=100, level=1000.0):
    qs = quarter_range(start, Quarter.from_ordinal(start.ordinal + n - 1))
    return BenchmarkSeries(qs, np.full(n, level))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
