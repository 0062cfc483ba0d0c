import json

import pytest

from fundsel.config import RunConfig, from_mapping, load_config
from fundsel.panel import Quarter


def test_defaults():
    c = RunConfig()
    assert c.k == 30 and c.algos == ("fnn", "anfis") and c.window == (Quarter(1996, 1), Quarter(2017, 4))
    b = c.backtest(threads=3)
    assert b.fnn_hidden == 21 and b.fnn_train.epochs == 500 and b.anfis_clust.radius == 0.5
    assert b.threads == 3 and b.anfis_ridge_grid == (1e-6, 1e-3, 1e-2, 0.1, 1.0, 10.0)


def test_key_value_file(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("# comment\nk = 10\nalgo=fnn  # trailing comment\nimpute = false\nfnn_epochs_grid = 50, 100\n")
    c = load_config(p)
    assert c.k == 10 and c.algo == "fnn" and c.impute is False
    assert c.backtest().fnn_epochs_grid == (50, 100)


def test_json_echo_round_trip(tmp_path):
    c = from_mapping({"k": 12, "base_seed": 5, "anfis_ridge": 0.5})
    p = tmp_path / "config.json"
    p.write_text(json.dumps({"run_config": c.echo(), "runs": {}}))
    assert load_config(p) == c


@pytest.mark.parametrize("bad", [
    {"k": 0},
    {"train_frac": 0.7},
    {"algo": "svm"},
    {"window_start": "1996Q1"},
])
def test_invalid_values(bad):
    with pytest.raises(Exception):
        from_mapping(bad)


def test_unknown_key():
    with pytest.raises(KeyError):
        from_mapping({"nope": 1})


def test_overrides_keep_base():
    base = from_mapping({"k": 7})
    c = from_mapping({"base_seed": "3"}, base)
    assert c.k == 7 and c.base_seed == 3
