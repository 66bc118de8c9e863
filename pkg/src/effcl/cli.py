"""Command-line interface.

Exit codes: 0 success, 2 config error, 3 corpus error, 4 numerical abort.
"""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError, CorpusError, NumericalError
from .trainer import TrainConfig, compare_curricula, run_pretraining

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CORPUS = 3
EXIT_NUMERICAL = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="effcl",
        description="Contrastive continual pretraining with curriculum-scheduled "
                    "hidden-state augmentation",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("pretrain", help="run one pretraining job")
    p_train.add_argument("--config", required=True, help="path to a JSON config file")
    p_train.add_argument(
        "--debug-dump",
        default=None,
        metavar="PATH",
        help="write per-step augmentation draws as JSON lines",
    )

    p_cmp = sub.add_parser("compare", help="compare curriculum modes over seeds")
    p_cmp.add_argument("--config", required=True, help="path to a JSON config file")
    p_cmp.add_argument(
        "--modes", required=True,
        help="comma-separated curriculum modes, e.g. discrete,continuous,none",
    )
    p_cmp.add_argument(
        "--seeds", required=True, help="comma-separated integer seeds, e.g. 1,2,3,4,5"
    )
    p_cmp.add_argument("--first-k", type=int, default=300,
                       help="steps in the headline mean-loss statistic")
    p_cmp.add_argument("--window", type=int, default=50,
                       help="step-window width for the per-window means")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = _build_parser().parse_args(argv)
    try:
        config = TrainConfig.from_json_file(args.config)
        if args.command == "pretrain":
            paths = run_pretraining(config, debug_dump_path=args.debug_dump)
            print(f"trace: {paths['trace']}")
            print(f"checkpoint: {paths['checkpoint']}")
        else:
            try:
                seeds = [int(s) for s in args.seeds.split(",") if s]
            except ValueError as exc:
                raise ConfigError(f"--seeds must be integers: {exc}") from exc
            modes = [m.strip() for m in args.modes.split(",") if m.strip()]
            result = compare_curricula(
                config, modes, seeds, first_k=args.first_k, window=args.window
            )
            print(f"summary: {result['summary_path']}")
            print(f"windows: {result['windows_path']}")
            if len(modes) == 2:
                a, b = modes
                by_seed = {}
                for row in result["summary"]:
                    by_seed.setdefault(row["seed"], {})[row["mode"]] = row[
                        "mean_total_loss_first_k"
                    ]
                wins = sum(1 for s in by_seed.values() if s[a] <= s[b])
                print(
                    f"{a} mean loss <= {b} mean loss (first {args.first_k} steps) "
                    f"in {wins}/{len(by_seed)} seeds"
                )
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CorpusError as exc:
        print(f"corpus error: {exc}", file=sys.stderr)
        return EXIT_CORPUS
    except NumericalError as exc:
        print(f"numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
