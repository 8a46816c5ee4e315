"""``dilearn`` command line entry point.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure
(partial results are kept on disk).
"""

from __future__ import annotations

import argparse
import logging
import sys
import warnings
from dataclasses import replace
from pathlib import Path

from ..datagen import (SPLIT_TYPES, SyntheticConfig, generate_synthetic_stream, plan_manifest_split, read_manifest,
                       sequence_to_manifest, write_feature_store, write_manifest, write_split_plan)
from ..exceptions import ConfigError, InputError
from .config import load_config, override_seed
from .runner import buffer_sweep, emit_plot_data, run_experiment

log = logging.getLogger("dilearn")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _capacities(text: str) -> list[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected integers, got {text!r}") from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="dilearn", description="Domain-incremental learning experiments on feature vectors.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", help="write a synthetic benchmark (manifest, features, split plan)")
    p.add_argument("--config", help="config whose [benchmark] section is synthetic; defaults otherwise")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="generator seed")

    p = sub.add_parser("split", help="turn a manifest into a split plan CSV")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split-type", choices=SPLIT_TYPES, default="scenes")
    p.add_argument("--test-ratio", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0, help="task-order and split seed")
    p.add_argument("--out", required=True, help="plan CSV path")

    p = sub.add_parser("run", help="run the method x seed x capacity grid of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="results directory (overrides output_dir)")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int, help="replace the config's seeds with this one")

    p = sub.add_parser("sweep", help="run the replay method across buffer capacities")
    p.add_argument("--config", required=True)
    p.add_argument("--capacities", type=_capacities, required=True, help='e.g. "32,64,128,256"')
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("report", help="write plot data and SVG charts for a results directory")
    p.add_argument("--out", required=True, help="results directory")
    return parser


def _synth(args) -> int:
    cfg = SyntheticConfig()
    if args.config:
        bench = load_config(args.config).benchmark
        if not isinstance(bench, SyntheticConfig):
            raise ConfigError("benchmark kind must be synthetic", field="kind")
        cfg = bench
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    sequence = generate_synthetic_stream(cfg)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    manifest, X = sequence_to_manifest(sequence)
    write_manifest(manifest, out / "manifest.csv")
    write_feature_store(X, out / "features.fvec")
    write_split_plan(sequence, out / "split_plan.csv")
    log.info("wrote %d samples over %d domains to %s", len(manifest), len(sequence), out)
    return EXIT_OK


def _split(args) -> int:
    manifest = read_manifest(args.manifest)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        rows = plan_manifest_split(manifest, args.split_type, args.seed, args.test_ratio)
    for w in caught:
        log.warning("%s", w.message)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_split_plan(rows, args.out)
    log.info("%d tasks", len({r[0] for r in rows}))
    return EXIT_OK


def _load(args):
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = override_seed(cfg, args.seed)
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("must be >= 1", field="workers")
        cfg = replace(cfg, workers=args.workers)
    if args.out:
        cfg = replace(cfg, output_dir=args.out)
    return cfg


def _run(args) -> int:
    return run_experiment(_load(args))


def _sweep(args) -> int:
    cfg = _load(args)
    buffer_sweep(cfg, args.capacities)
    return EXIT_RUNTIME if (Path(cfg.output_dir) / "failures.json").exists() else EXIT_OK


def _report(args) -> int:
    for path in emit_plot_data(args.out):
        log.info("wrote %s", path)
    return EXIT_OK


COMMANDS = {"synth": _synth, "split": _split, "run": _run, "sweep": _sweep, "report": _report}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, InputError, FileNotFoundError) as exc:
        print(f"dilearn {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # anything else is a runtime failure
        print(f"dilearn {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
