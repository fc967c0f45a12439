"""Command-line entry point: ``kgsec {simulate,train,score,evaluate,demo}``.

Settings resolve as: explicit flag, then ``--config`` file, then the
``KGS_SEED`` environment variable (seed only), then built-in defaults.
Everything for one run lives under ``--out``: simulated logs in ``<out>/data``,
model, scores and reports directly in ``<out>``.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
import time
from pathlib import Path

from . import pipeline
from .embedding.model import DictMismatch
from .evaluation import Degenerate, render_report
from .graph_store import ParseError
from .pipeline import RunConfig

EXIT_OK, EXIT_THRESHOLD, EXIT_ERROR = 0, 1, 2
SEED_ENV = "KGS_SEED"

# flag dest -> RunConfig field
_FLAGS = {
    "seed": "seed", "trainer": "trainer", "rank": "rank", "lr": "lr", "epochs": "epochs",
    "conn_repr": "conn_repr", "scenarios": "scenarios", "out": "out", "n_baseline": "n_baseline",
    "threshold": "threshold",
}


def _scenario_list(text: str) -> tuple:
    return tuple(x.strip() for x in text.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help=f"rng seed (fallback: ${SEED_ENV}, then 0)")
    common.add_argument("--trainer", choices=("mse", "energy"))
    common.add_argument("--rank", type=int)
    common.add_argument("--lr", type=float)
    common.add_argument("--epochs", type=int)
    common.add_argument("--conn-repr", dest="conn_repr", choices=("node", "edge"))
    common.add_argument("--scenarios", type=_scenario_list,
                        help="comma-separated groups or group/row ids (default: all 23 rows)")
    common.add_argument("--out", help="run directory (default: run)")
    common.add_argument("--data", help="simulated data directory (default: <out>/data)")
    common.add_argument("--n-baseline", dest="n_baseline", type=int)
    common.add_argument("--threshold", type=float, help="evaluate passes iff ordering <= threshold")
    common.add_argument("--format", choices=("text", "csv", "json"), default="text",
                        help="report printed by evaluate")
    common.add_argument("--config", help="flat key=value config file")
    common.add_argument("--dump-config", dest="dump_config", action="store_true",
                        help="print the effective configuration and exit")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="kgsec", description="Knowledge-graph anomaly scoring for IT/OT event streams.")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write baseline and scenario logs")
    sub.add_parser("train", parents=[common], help="train a baseline model")
    sub.add_parser("score", parents=[common], help="score scenario statements")
    sub.add_parser("evaluate", parents=[common], help="report; exit 0 iff ordering passes")
    sub.add_parser("demo", parents=[common], help="simulate, train, score and evaluate")
    return parser


def resolve_config(args: argparse.Namespace, environ=None) -> RunConfig:
    environ = os.environ if environ is None else environ
    values = {}
    if environ.get(SEED_ENV, "").strip():
        try:
            values["seed"] = int(environ[SEED_ENV])
        except ValueError:
            raise ValueError(f"{SEED_ENV} must be an integer, got {environ[SEED_ENV]!r}") from None
    if args.config:
        try:
            text = Path(args.config).read_text()
        except OSError as exc:
            raise pipeline.IoError(f"cannot read {args.config}: {exc.strerror or exc}") from exc
        values.update(pipeline.parse_config_text(text))
    for dest, name in _FLAGS.items():
        v = getattr(args, dest, None)
        if v is not None:
            values[name] = v
    return RunConfig(**values)


def _data_dir(args, config: RunConfig) -> Path:
    return Path(args.data) if args.data else Path(config.out) / "data"


def run(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = resolve_config(args)
    except (ValueError, OSError) as exc:
        print(f"kgsec: {exc}", file=sys.stderr)
        return EXIT_ERROR
    if args.dump_config:
        stdout.write(config.dumps())
        return EXIT_OK
    data = _data_dir(args, config)
    try:
        if args.command == "simulate":
            manifest = pipeline.simulate(config, data)
            print(f"wrote {len(manifest['scenarios'])} scenario sets to {data}", file=stdout)
        elif args.command == "train":
            path = pipeline.train(config, data, config.out)
            print(f"wrote {path}", file=stdout)
        elif args.command == "score":
            path = pipeline.score(config, data, config.out, config.out)
            print(f"wrote {path}", file=stdout)
        elif args.command == "evaluate":
            result = pipeline.evaluate(config, data, out_dir=config.out)
            stdout.write(render_report(result.report, args.format))
            return EXIT_OK if result.passed else EXIT_THRESHOLD
        else:
            start = time.perf_counter()
            result = pipeline.demo(config)
            print(pipeline.severity_table(result.report), file=stdout)
            print(f"severity ordering (Spearman): {result.report.ordering:.4f}", file=stdout)
            print(f"strictly decreasing means:    {result.report.strictly_decreasing}", file=stdout)
            print(f"elapsed: {time.perf_counter() - start:.1f}s", file=stdout)
            return EXIT_OK if result.passed else EXIT_THRESHOLD
    except (pipeline.IoError, ParseError, DictMismatch, Degenerate, ValueError) as exc:
        print(f"kgsec: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


def main(argv=None):
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
