"""Argparse front end.

Exit codes: 0 success, 1 validation error (bad flags, bad config, missing
inputs), 2 runtime failure. Validation happens before any side effect, so
a failing invocation leaves no partial output behind.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataset as ds
from . import harness
from .harness import ConfigError, ExperimentConfig


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on bad usage; our contract reserves 2 for runtime
    failures, so usage problems exit 1 instead."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _bounds(text: str) -> tuple[int, int]:
    try:
        lo, hi = (int(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'min,max', got {text!r}")
    return lo, hi


def _ratios(text: str) -> tuple[float, float, float]:
    try:
        a, b, c = (float(p) for p in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected 'train,valid,test', got {text!r}")
    return a, b, c


def _build_parser() -> _Parser:
    parser = _Parser(prog="updategen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("build-dataset", help="mine (document, context, update) instances")
    p.add_argument("--wikitext", type=Path, required=True, help="directory of .wiki files")
    p.add_argument("--html-manifest", type=Path, required=True, help="url<TAB>path file")
    p.add_argument("--whitelist", type=Path, required=True, help="one domain per line")
    p.add_argument("--out", type=Path, required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--context-window", type=int, default=3, metavar="K")
    p.add_argument("--ratios", type=_ratios, default=(0.8, 0.1, 0.1))
    p.add_argument("--doc-len", type=_bounds, default=(50, 2000), metavar="MIN,MAX")
    p.add_argument("--context-len", type=_bounds, default=(20, 500), metavar="MIN,MAX")
    p.add_argument("--update-len", type=_bounds, default=(5, 200), metavar="MIN,MAX")

    for name, extra in (
        ("train-bpe", ()),
        ("train", ("variant",)),
        ("run-systems", ("limit", "systems")),
        ("evaluate", ("limit", "systems", "outputs", "out")),
    ):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        if "variant" in extra:
            p.add_argument("--variant", choices=("cag", "cog", "cig", "crg"), required=True)
        if "limit" in extra:
            p.add_argument("--limit", type=int, default=None, help="cap test instances")
        if "systems" in extra:
            p.add_argument("--systems", default=None, help="comma-separated system list")
        if "outputs" in extra:
            p.add_argument("--outputs", type=Path, default=None, help="outputs directory")
        if "out" in extra:
            p.add_argument("--out", type=Path, default=None, help="report path")

    p = sub.add_parser("stats", help="corpus statistics as JSON")
    p.add_argument("--corpus", type=Path, required=True)
    return parser


def _config_from_args(args) -> ExperimentConfig:
    overrides: dict[str, object] = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if getattr(args, "limit", None) is not None:
        overrides["limit"] = args.limit
    if getattr(args, "systems", None):
        overrides["systems"] = tuple(s.strip() for s in args.systems.split(",") if s.strip())
    return ExperimentConfig.from_file(args.config, overrides)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "build-dataset":
            corpus_path = harness.cmd_build_dataset(
                args.wikitext,
                args.html_manifest,
                args.whitelist,
                args.out,
                seed=args.seed,
                k=args.context_window,
                length_filter=ds.LengthFilter(
                    doc=args.doc_len, context=args.context_len, update=args.update_len
                ),
                ratios=args.ratios,
            )
            print(f"wrote {corpus_path}")
        elif args.command == "train-bpe":
            print(f"wrote {harness.cmd_train_bpe(_config_from_args(args))}")
        elif args.command == "train":
            print(f"wrote {harness.cmd_train(_config_from_args(args), args.variant)}")
        elif args.command == "run-systems":
            for path in harness.cmd_run_systems(_config_from_args(args)).values():
                print(f"wrote {path}")
        elif args.command == "evaluate":
            report = harness.cmd_evaluate(
                _config_from_args(args), outputs_dir=args.outputs, out=args.out
            )
            print(report.read_text("utf-8"), end="")
        elif args.command == "stats":
            print(json.dumps(harness.cmd_stats(args.corpus).to_dict(), indent=2, sort_keys=True))
        else:  # unreachable with required=True
            return 1
    except (ConfigError, ValueError) as exc:
        print(f"updategen: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures exit 2 by contract
        print(f"updategen: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
