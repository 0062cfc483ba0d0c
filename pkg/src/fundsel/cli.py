"""Command-line front end.

Subcommands: ingest, preprocess, train, backtest, report, synth, selfcheck.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
On failure the error class name (e.g. ``MissingFile``) is printed to stderr.

Every backtest writes ``<out>/<run_id>/config.json`` with two keys:
``run_config`` (every :class:`~fundsel.config.RunConfig` field, flags
applied) and ``runs`` (per algorithm: hyperparameters, seeds, split
boundaries, universe and exclusions). Passing that file back through
``--config`` replays the run.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

from . import __version__
from .backtest import rerender, run_backtest, train_universe, write_combined_summary, write_report
from .config import RunConfig, from_mapping, load_config
from .errors import FundselError, GapInSeries, MissingFile
from .fnn import save_fnn
from .anfis import save_anfis
from .panel import coverage_summary, load_benchmark, load_panel, restrict_window
from .preprocess import build_dataset, missing_fractions, write_dataset
from .synth import generate_panel, write_synth_tree

log = logging.getLogger("fundsel")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key=value config file or a config.json echo")
    p.add_argument("--out", help="output directory (report root; data root for synth)")
    p.add_argument("--seed", type=int, help="base seed")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1, help="worker threads")
    p.add_argument("--algo", choices=("fnn", "anfis", "both"))
    p.add_argument("--k", type=int, help="portfolio size per side")
    p.add_argument("--data", help="data root directory")
    p.add_argument("--run-id", help="report subdirectory name")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key; repeatable")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fundsel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, text in [
        ("ingest", "load and validate the panel and benchmark"),
        ("preprocess", "write dataset.csv and stats.csv"),
        ("train", "train final per-stock models and save them"),
        ("backtest", "run the full pipeline and write reports"),
        ("report", "re-render summaries from stored portfolio returns"),
        ("synth", "write a synthetic data tree"),
        ("selfcheck", "run the embedded verification suite"),
    ]:
        p = sub.add_parser(name, help=text)
        _common(p)
        if name == "report":
            p.add_argument("report_dir", nargs="?", help="directory holding portfolio_returns.csv")
        if name == "selfcheck":
            p.add_argument("--inject-fault", choices=("gradient_check",), help=argparse.SUPPRESS)
    return parser


def resolve_config(args) -> RunConfig:
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
    except (KeyError, ValueError, OSError, FundselError) as exc:
        raise UsageError(f"cannot use config {args.config}: {exc}") from exc
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise UsageError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    flag_map = {"seed": "base_seed", "algo": "algo", "k": "k", "data": "data_dir", "run_id": "run_id"}
    for attr, key in flag_map.items():
        v = getattr(args, attr, None)
        if v is not None:
            overrides[key] = v
    if args.out is not None and args.command != "synth":
        overrides["out_dir"] = args.out
    try:
        return from_mapping(overrides, cfg)
    except (KeyError, ValueError, FundselError) as exc:
        raise UsageError(str(exc)) from exc


def _load(cfg: RunConfig):
    panel = load_panel(cfg.data_dir, cfg.layout())
    bench = load_benchmark(Path(cfg.data_dir) / cfg.benchmark_file)
    return panel, bench


def _dataset(cfg: RunConfig):
    panel, bench = _load(cfg)
    start, end = cfg.window
    if not bench.covers(start, end):
        raise GapInSeries(f"benchmark must cover {start} minus one quarter through {end}")
    panel, dropped = restrict_window(panel, start, end)
    if dropped:
        log.info("dropped tickers first observed after %s: %s", start, ", ".join(dropped))
    return build_dataset(panel, bench, cfg.preprocess())


def cmd_ingest(cfg: RunConfig) -> int:
    panel, bench = _load(cfg)
    print(f"tickers: {len(panel.tickers)}")
    print(f"quarters: {panel.quarters[0]} .. {panel.quarters[-1]} ({len(panel.quarters)})")
    print(f"features: {len(panel.features)}")
    print(f"missing cells: {panel.n_missing} of {panel.values.size}")
    print(f"benchmark: {bench.quarters[0]} .. {bench.quarters[-1]} ({len(bench.quarters)})")
    print("ticker,first_observed,quarters_with_price,missing_cells,cells")
    for row in coverage_summary(panel):
        print(",".join(str(row[k]) for k in
                       ("ticker", "first_observed", "quarters_with_price", "missing_cells", "cells")))
    print("feature,missing_fraction")
    for f, v in missing_fractions(panel).items():
        print(f"{f},{v:.6f}")
    return 0


def cmd_preprocess(cfg: RunConfig) -> int:
    ds = _dataset(cfg)
    out = Path(cfg.out_dir) / cfg.run_id
    write_dataset(ds, out)
    print(f"wrote {out / 'dataset.csv'} ({len(ds.tickers)} tickers x {ds.n_samples} quarters, "
          f"{len(ds.feature_names)} features)")
    return 0


def cmd_train(cfg: RunConfig, threads: int) -> int:
    ds = _dataset(cfg)
    bcfg = cfg.backtest(threads)
    for algo in cfg.algos:
        table = train_universe(ds, algo, bcfg)
        mdir = Path(cfg.out_dir) / cfg.run_id / "models" / algo
        mdir.mkdir(parents=True, exist_ok=True)
        for t, m in table.models.items():
            (save_fnn if algo == "fnn" else save_anfis)(m, mdir / f"{t}.txt")
        print(f"{algo}: {len(table.models)} models in {mdir}, {len(table.excluded)} excluded")
    return 0


def cmd_backtest(cfg: RunConfig, threads: int) -> int:
    ds = _dataset(cfg)
    bcfg = cfg.backtest(threads)
    root = Path(cfg.out_dir) / cfg.run_id
    reports = {algo: run_backtest(ds, algo, bcfg) for algo in cfg.algos}
    echo = {"run_config": cfg.echo(), "runs": {a: r.config for a, r in reports.items()}}
    if len(reports) == 1:
        write_report(next(iter(reports.values())), root, echo)
    else:
        for algo, rep in reports.items():
            write_report(rep, root / algo)
        write_combined_summary(reports, root / "summary.csv")
        (root / "config.json").write_text(json.dumps(echo, indent=2, sort_keys=True) + "\n",
                                          encoding="utf-8")
    for algo, rep in reports.items():
        for name, sm in rep.summary.items():
            print(f"{algo:5s} {name:11s} mean {sm.mean:+.4%}  std {sm.std:.4%}  compound {sm.compound:+.4%}")
    print(f"report written to {root}")
    return 0


def cmd_report(cfg: RunConfig, report_dir: str | None) -> int:
    root = Path(report_dir) if report_dir else Path(cfg.out_dir) / cfg.run_id
    dirs = [root] if (root / "portfolio_returns.csv").is_file() else \
        sorted(p.parent for p in root.glob("*/portfolio_returns.csv"))
    if not dirs:
        raise MissingFile(f"no portfolio_returns.csv under {root}")
    for d in dirs:
        rerender(d)
        print(f"re-rendered {d}")
    return 0


def cmd_synth(cfg: RunConfig, spec, out: str | None) -> int:
    data = generate_panel(spec)
    root = write_synth_tree(data, out or cfg.data_dir, cfg.layout())
    print(f"wrote synthetic data for {len(data.panel.tickers)} tickers to {root}")
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "selfcheck":
            from .selfcheck import run_selfcheck
            return run_selfcheck(fault=args.inject_fault)
        cfg = resolve_config(args)
        threads = max(1, args.threads)
        if args.command == "ingest":
            return cmd_ingest(cfg)
        if args.command == "preprocess":
            return cmd_preprocess(cfg)
        if args.command == "train":
            return cmd_train(cfg, threads)
        if args.command == "backtest":
            return cmd_backtest(cfg, threads)
        if args.command == "report":
            return cmd_report(cfg, args.report_dir)
        if args.command == "synth":
            try:
                spec = cfg.synth()
            except ValueError as exc:  # invalid synth_* settings
                raise UsageError(str(exc)) from exc
            return cmd_synth(cfg, spec, args.out)
    except UsageError as exc:
        print(f"UsageError: {exc}", file=sys.stderr)
        return 1
    except FundselError as exc:
        print(f"{exc.name}: {exc}", file=sys.stderr)
        return exc.exit_code
    parser.error(f"unknown command {args.command}")
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
