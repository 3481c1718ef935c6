"""Command-line entry point.

Subcommands: ``eval`` (full pipeline + rank metrics), ``train`` (fuser
training to a checkpoint), ``retrieve`` (warm the retrieval cache),
``stats`` (sense-count distribution of the dataset), ``trace`` (dump one
sample's per-stage record).

Exit codes: 0 success, 1 usage error, 2 data/format error, 3 provider error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys
from typing import Optional, Sequence

from .config import FUSER_KINDS, load_config
from .dataset import load_dataset
from .embedding import StoreError
from .metrics import polysemy_stats
from .pipeline import prepare_samples, run_pipeline, run_training, trace_samples
from .provider import ProviderError
from .senses import load_inventory

__all__ = ["main"]

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PROVIDER = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on bad flags; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _build_parser() -> _Parser:
    common = _Parser(add_help=False)
    common.add_argument("--config", required=True, help="key=value run configuration")
    common.add_argument("--fuser", choices=FUSER_KINDS, help="override the config's fuser")
    common.add_argument("--k", type=int, help="retrieval depth override")
    common.add_argument("--scale", type=float, help="softmax scale override")
    common.add_argument("--seed", type=int, help="seed override")

    parser = _Parser(prog="vwsd", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_eval = sub.add_parser("eval", parents=[common], help="run the pipeline and score it")
    p_eval.add_argument("--trace", action="store_true", help="also write per-stage traces")

    sub.add_parser("train", parents=[common], help="train the configured fuser")
    sub.add_parser("retrieve", parents=[common], help="populate the retrieval cache")
    sub.add_parser("stats", parents=[common], help="sense-count distribution table")

    p_trace = sub.add_parser("trace", parents=[common], help="dump one sample's stage trace")
    p_trace.add_argument("--sample", required=True, help="sample id, e.g. s00001")
    return parser


def _overrides(args) -> dict:
    return {
        "fuser": args.fuser,
        "k": args.k,
        "scale": args.scale,
        "seed": args.seed,
    }


def _cmd_eval(args) -> int:
    config = load_config(args.config, **_overrides(args))
    if args.trace and config.trace is None:
        print("eval: --trace requires a trace=<path> entry in the config", file=sys.stderr)
        return EXIT_USAGE
    if not args.trace:
        config = dataclasses.replace(config, trace=None)
    report, _ = run_pipeline(config)
    print(f"HIT@1 {report.hit_at_1:.6f}  MRR {report.mrr:.6f}  ({report.n} samples)")
    if config.report is not None:
        print(f"report written to {config.report}")
    return EXIT_OK


def _cmd_train(args) -> int:
    config = load_config(args.config, **_overrides(args))
    report = run_training(config)
    if report.epoch_losses:
        last = len(report.epoch_losses)
        val_hit = report.val_hit[-1]
        val = f"{val_hit:.4f}" if val_hit is not None else "n/a"
        print(
            f"epoch {last}: loss {report.epoch_losses[-1]:.6f}"
            f"  train HIT@1 {report.train_hit[-1]:.4f}  val HIT@1 {val}"
        )
    print(f"checkpoint written to {config.checkpoint}")
    return EXIT_OK


def _cmd_retrieve(args) -> int:
    config = load_config(args.config, **_overrides(args))
    if config.retrieval_cache is None:
        print("retrieve: config has no retrieval_cache=<path> entry", file=sys.stderr)
        return EXIT_USAGE
    prepared = prepare_samples(config)
    prompts = {p.prompt for p in prepared}
    print(f"cached top-{config.k} hits for {len(prompts)} prompts at {config.retrieval_cache}")
    return EXIT_OK


def _cmd_stats(args) -> int:
    config = load_config(args.config, **_overrides(args))
    load = load_dataset(config.dataset, config.gold)
    inventory = load_inventory(config.inventory)
    stats = polysemy_stats([s.target_word for s in load.samples], inventory)
    counts = {
        "1": stats.one_sense,
        "2": stats.two_senses,
        "3+": stats.three_plus,
        "missing": stats.not_in_inventory,
    }
    percent = stats.percentages()
    print(f"{'senses':<9}{'count':>7}  {'share':>6}")
    for key in ("1", "2", "3+", "missing"):
        print(f"{key:<9}{counts[key]:>7}  {percent[key]:>5.1f}%")
    print(f"{'total':<9}{stats.total:>7}")
    print(json.dumps({"counts": counts, "percent": percent}, sort_keys=True))
    return EXIT_OK


def _cmd_trace(args) -> int:
    config = load_config(args.config, **_overrides(args))
    _, traces = trace_samples(config)
    for trace in traces:
        if trace.sample_id == args.sample:
            print(trace.to_json())
            return EXIT_OK
    print(f"trace: no sample {args.sample!r} in the dataset", file=sys.stderr)
    return EXIT_DATA


_COMMANDS = {
    "eval": _cmd_eval,
    "train": _cmd_train,
    "retrieve": _cmd_retrieve,
    "stats": _cmd_stats,
    "trace": _cmd_trace,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    try:
        return _COMMANDS[args.command](args)
    except ProviderError as exc:
        print(f"provider error: {exc}", file=sys.stderr)
        return EXIT_PROVIDER
    except (ValueError, KeyError, FileNotFoundError, StoreError, UnicodeDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
