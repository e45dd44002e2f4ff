import argparse
import logging
import os
import sys
from typing import List, Optional

from mtpinn import __version__
from mtpinn.cli import commands
from mtpinn.utils.error_handlers import diagnostics, handle_command_exception
from mtpinn.utils.logging_config import setup_logging

logger = logging.getLogger('mtpinn.main')


def _add_common(parser: argparse.ArgumentParser, with_threads: bool = True):
    parser.add_argument("--config", default=None,
                        help="Run config: a TOML path or a shipped preset name")
    parser.add_argument("--seed", type=int, default=0, help="Root seed; every sub-seed derives from it")
    parser.add_argument("--out", required=True, help="Output directory")
    parser.add_argument("--scale", choices=["desk", "paper"], default="desk",
                        help="Shipped preset scale used when --config is omitted")
    if with_threads:
        parser.add_argument("--threads", type=int, default=1, help="Maximum worker threads")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mtpinn",
        description="Multi-trajectory PINN solver for optimal execution under GBM prices",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subcommands = parser.add_subparsers(dest="command", required=True)

    train = subcommands.add_parser("train", help="Train a preset through its lambda curriculum")
    _add_common(train)
    train.add_argument("--preset", choices=["vanilla", "pinn_curr", "mtpinn"], default=None,
                       help="Override curriculum.preset")
    train.add_argument("--lambda", dest="lambda_star", type=float, default=None,
                       help="Override curriculum.lambda_star")
    train.add_argument("--resume", action="store_true", help="Reuse stage checkpoints found under --out")

    evaluate = subcommands.add_parser("eval", help="Evaluate a checkpoint against the closed form")
    _add_common(evaluate)
    evaluate.add_argument("--checkpoint", required=True, help="Checkpoint JSON written by train")

    backtest = subcommands.add_parser("backtest", help="Backtest TWAP and MT-PINN policies on intraday windows")
    _add_common(backtest)
    backtest.add_argument("--checkpoint", action="append", default=[],
                          help="MT-PINN checkpoint; repeat once per lambda")
    backtest.add_argument("--data", default="synthetic",
                          help="timestamp_iso8601,mid_price CSV, or 'synthetic'")

    feed = subcommands.add_parser("simulate-feed", help="Write a synthetic intraday mid-price feed")
    _add_common(feed, with_threads=False)

    return parser


def run(args: argparse.Namespace):
    if args.command == "train":
        return commands.cmd_train(args.config, args.seed, args.out, preset=args.preset,
                                  lambda_star=args.lambda_star, scale=args.scale,
                                  threads=args.threads, resume=args.resume)
    if args.command == "eval":
        return commands.cmd_eval(args.checkpoint, args.config, args.seed, args.out,
                                 scale=args.scale, threads=args.threads)
    if args.command == "backtest":
        return commands.cmd_backtest(args.checkpoint, args.data, args.config, args.seed, args.out,
                                     scale=args.scale, threads=args.threads)
    return commands.cmd_simulate_feed(args.config, args.seed, args.out, scale=args.scale)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)

    # Configure logging
    log_level = os.getenv("LOG_LEVEL", "INFO")
    log_file = os.getenv("LOG_FILE", None)
    setup_logging(log_level=log_level, log_file=log_file)

    try:
        manifest = run(args)
    except Exception as exc:
        return handle_command_exception(exc, args.command)

    stats = diagnostics.get_stats()
    if stats["total"]:
        logger.warning(f"Diagnostics - Total: {stats['total']} - By code: {stats['counts_by_code']}")
    logger.info(f"Done - {args.command} - Outputs: {len(manifest.outputs)} - Directory: {manifest.output_dir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
