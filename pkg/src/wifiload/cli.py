"""Command line entry point: ``wifiload {simulate,run,bench,sweep,plot}``.

Exit status is 0 on success, 2 for a bad command line or config, and 3 when
the run itself fails (estimator divergence, I/O errors).
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import harness
from .dcf import LoadSchedule
from .harness import ConfigError, ExperimentConfig
from .kalman import EstimatorError
from .plot import PLOT_KINDS, emit_plot

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

log = logging.getLogger("wifiload")


def _common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON experiment config")
    parser.add_argument("--seed", type=int, help="simulation seed (also seeds the NN unless nn_seed is set)")
    parser.add_argument("--preset", choices=sorted(harness.PRESETS), help="named load schedule")
    parser.add_argument("--out", type=Path, help="output directory")
    parser.add_argument("--estimators", help="comma-separated subset of kf,nn,raw")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="wifiload", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write the measurement stream only")
    _common(p)

    p = sub.add_parser("run", help="simulate and run the estimators")
    _common(p)
    p.add_argument("--no-plot", action="store_true", help="skip the SVG charts")

    p = sub.add_parser("bench", help="time one KF and one NN update")
    _common(p)
    p.add_argument("--iters", type=int, default=2000)
    p.add_argument("--n", type=int, default=25, help="number of stations during timing")

    p = sub.add_parser("sweep", help="grid over config values and seeds")
    _common(p)
    p.add_argument(
        "--grid", action="append", default=[], metavar="PATH=V1,V2",
        help="dotted config path and candidate values, e.g. kf.q_minus=0,0.01 (repeatable)",
    )
    p.add_argument("--seeds", default="0", help="seed list '0,1,2' or range '0-9'")
    p.add_argument("--workers", type=int, default=None)

    p = sub.add_parser("plot", help="render a trace CSV as SVG")
    p.add_argument("--csv", type=Path, required=True, help="trace CSV written by 'run'")
    p.add_argument("--kind", choices=PLOT_KINDS, default="tracking")
    p.add_argument("--threshold", type=float, help="CUSUM threshold line for --kind loss")
    p.add_argument("--out", type=Path, help="output directory")
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def _parse_seeds(text: str) -> List[int]:
    try:
        if "-" in text.strip("-"):
            lo, hi = text.split("-", 1)
            return list(range(int(lo), int(hi) + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise ConfigError("--seeds", f"cannot parse {text!r}") from exc


def resolve_config(args) -> ExperimentConfig:
    cfg = harness.load_config(args.config) if args.config else ExperimentConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.preset:
        changes["schedule"] = LoadSchedule(harness.PRESETS[args.preset])
    if args.estimators:
        changes["estimators"] = tuple(e.strip() for e in args.estimators.split(",") if e.strip())
    if args.out:
        changes["out_dir"] = str(args.out)
    return dataclasses.replace(cfg, **changes) if changes else cfg


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_simulate(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    stream = harness.simulate(cfg)
    path = out / "measurements.csv"
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "n_true", "k_busy", "k_coll", "k_all", "p_hat", "n_hat", "elapsed_us"])
        for t, m in enumerate(stream):
            writer.writerow([t, m.n_true, m.k_busy, m.k_coll, m.k_all, repr(m.p_hat), repr(m.n_hat), repr(m.elapsed_us)])
    print(f"wrote {len(stream)} measurements to {path}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = resolve_config(args)
    out = _out_dir(cfg)
    trace, metrics = harness.run_experiment(cfg)
    harness.emit_csv(trace, out / "trace.csv")
    harness.write_rows([m.as_row() for m in metrics], out / "metrics.csv")
    (out / "config.json").write_text(json.dumps(harness.config_to_dict(cfg), indent=2) + "\n")
    if not args.no_plot:
        emit_plot(trace, out / "tracking.svg", "tracking")
        if cfg.enabled("nn"):
            emit_plot(trace, out / "loss.svg", "loss", threshold=cfg.nn.e_d)
        if cfg.enabled("kf") or cfg.enabled("nn"):
            emit_plot(metrics, out / "timing.svg", "timing")
    for m in metrics:
        rmse = " ".join(f"{k}={v:.3f}" for k, v in m.rmse.items())
        print(f"segment {m.index} n={m.n_true}: rmse {rmse}")
    print(f"outputs in {out}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = resolve_config(args)
    report = harness.bench_timing(cfg, args.iters, n=args.n)
    out = _out_dir(cfg)
    (out / "timing.json").write_text(json.dumps(report.as_dict(), indent=2) + "\n")
    print(f"n={report.n} iterations={report.iters}")
    print(f"  kf step  mean {report.kf_mean_us:9.1f} us  median {report.kf_median_us:9.1f} us")
    print(f"  nn step  mean {report.nn_mean_us:9.1f} us  median {report.nn_median_us:9.1f} us")
    print(f"  kf/nn ratio {report.ratio:.2f}")
    print(f"  observation window {report.observe_mean_us:9.1f} us")
    print(f"  slot total: kf {report.kf_slot_us:9.1f} us, nn {report.nn_slot_us:9.1f} us")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = resolve_config(args)
    grid = {}
    for item in args.grid:
        key, sep, values = item.partition("=")
        if not sep or not values:
            raise ConfigError("--grid", f"expected PATH=V1,V2, got {item!r}")
        grid[key.strip()] = [_parse_value(v) for v in values.split(",")]
    for key, values in grid.items():
        for value in values:
            harness.override(cfg, key, value)
    seeds = _parse_seeds(args.seeds)
    rows = harness.sweep(cfg, grid, seeds, workers=args.workers)
    path = harness.write_rows(rows, _out_dir(cfg) / "sweep.csv")
    print(f"wrote {len(rows)} rows to {path}")
    return EXIT_OK


def cmd_plot(args) -> int:
    trace = harness.read_csv(args.csv)
    out = args.out or args.csv.parent
    out.mkdir(parents=True, exist_ok=True)
    path = emit_plot(trace, out / f"{args.kind}.svg", args.kind, threshold=args.threshold)
    print(f"wrote {path}")
    return EXIT_OK


COMMANDS = {
    "simulate": cmd_simulate,
    "run": cmd_run,
    "bench": cmd_bench,
    "sweep": cmd_sweep,
    "plot": cmd_plot,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (EstimatorError, OSError, ValueError, RuntimeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
