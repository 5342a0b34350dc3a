"""
crack-ensemble command line

    crack-ensemble train     --dataset cfd --root D --n 3 --seed 7 --out runs/cfd
    crack-ensemble predict   --out runs/cfd image.png ...
    crack-ensemble evaluate  --dataset cfd --root D --out runs/cfd
    crack-ensemble measure   --out runs/cfd mask.png ...
    crack-ensemble sweep     --dataset cfd --root D --out runs/cfd
    crack-ensemble gradcheck --seed 0
    crack-ensemble history   --out runs/cfd
"""

import argparse
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from dotenv import load_dotenv

from cli import commands
from database.db_manager import default_database_url
from services.run_registry import RunRegistry
from utils.config import RunConfig, resolve_config, write_resolved_config
from utils.errors import CrackPipelineError

logger = logging.getLogger("crack_cli")

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

# flag dest -> RunConfig field, for options whose dest differs from the field name
FLAG_FIELDS = {"split": "split_file", "tolerance": "tolerance_px", "refined": "evaluate_refined"}
COMMAND_ONLY = {
    "command",
    "config",
    "verbose",
    "inputs",
    "gt",
    "from_image",
    "predictions",
    "limit",
    "corrupt_gradient",
}


def _comma_list(value: str) -> List[str]:
    return [item.strip() for item in value.split(",") if item.strip()]


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file (flags override it)")
    common.add_argument("--out", help="output directory")
    common.add_argument("--dataset", choices=["cfd", "aiglern", "custom"], help="dataset kind")
    common.add_argument("--root", help="dataset root with images/ and masks/")
    common.add_argument("--split", help="split file (JSON); generated from --split-seed when omitted")
    common.add_argument("--split-seed", type=int)
    common.add_argument("--train-limit", type=int, help="use only the first N training images")
    common.add_argument("--test-limit", type=int, help="use only the first N test images")
    common.add_argument("--model", help="ensemble manifest (default <out>/models/ensemble.json)")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int, help="worker count (default: $CRACK_WORKERS or physical cores)")
    common.add_argument("--verbose", "-v", action="store_true", help="debug logging")

    inference = argparse.ArgumentParser(add_help=False)
    inference.add_argument("--n", dest="member_count", type=int, help="number of members to fuse")
    inference.add_argument("--threshold", type=float, help="binarization threshold t")
    inference.add_argument("--stride", type=int, choices=[1, 5])
    inference.add_argument("--min-area", type=int)
    inference.add_argument("--morphology-order", choices=["close_open", "open_close"])

    scoring = argparse.ArgumentParser(add_help=False)
    scoring.add_argument("--tolerance", type=float, help="match distance in pixels (default 2)")
    scoring.add_argument("--aggregation", choices=["macro", "micro"])

    parser = argparse.ArgumentParser(prog="crack-ensemble", description="Ensemble CNN pavement crack pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    train = sub.add_parser("train", parents=[common], help="train an ensemble")
    train.add_argument("--n", dest="members", type=int, help="ensemble size k")
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--learning-rate", type=float)
    train.add_argument("--momentum", type=float)
    train.add_argument("--l2-beta", type=float)
    train.add_argument("--dropout-rate", type=float)
    train.add_argument("--max-positive-per-image", type=int)
    train.add_argument("--negative-to-positive-ratio", type=float)

    predict = sub.add_parser("predict", parents=[common, inference], help="probability maps, masks and overlays")
    predict.add_argument("inputs", nargs="*", help="images (default: the test split)")

    evaluate = sub.add_parser("evaluate", parents=[common, inference, scoring], help="score the test split")
    evaluate.add_argument("--predictions", help="directory of <stem>.png masks to score instead of predicting")
    evaluate.add_argument("--refined", action="store_true", default=None, help="score post-morphology masks")

    measure = sub.add_parser("measure", parents=[common, inference], help="per-crack length and width")
    measure.add_argument("inputs", nargs="+", help="binary masks (or images with --from-image)")
    measure.add_argument("--from-image", action="store_true", help="predict masks from the inputs first")
    measure.add_argument("--gt", nargs="*", default=[], help="ground-truth masks to compare against, one per input")
    measure.add_argument("--calibration", type=float, help="length units per pixel")

    sweep = sub.add_parser("sweep", parents=[common, scoring], help="(member count, threshold) grid")
    sweep.add_argument("--n-grid", type=_comma_list)
    sweep.add_argument("--t-grid", type=_comma_list)
    sweep.add_argument("--stride", type=int, choices=[1, 5])

    gradcheck = sub.add_parser("gradcheck", parents=[common], help="finite-difference gradient audit")
    gradcheck.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)

    history = sub.add_parser("history", parents=[common], help="list recorded runs")
    history.add_argument("--limit", type=int, default=20)
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {}
    for dest, value in vars(args).items():
        if dest in COMMAND_ONLY or value is None:
            continue
        overrides[FLAG_FIELDS.get(dest, dest)] = value
    return overrides


def setup_logging(out_dir: Optional[Path], verbose: bool = False) -> None:
    handlers: List[logging.Handler] = [logging.StreamHandler()]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        handlers.insert(0, logging.FileHandler(out_dir / "run.log"))
    level = logging.DEBUG if verbose else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, handlers=handlers, force=True)


def _open_registry(config: RunConfig) -> Optional[RunRegistry]:
    try:
        return RunRegistry(default_database_url(config.out_dir))
    except (CrackPipelineError, OSError) as e:
        logger.warning(f"Run ledger unavailable, continuing without it: {e}")
        return None


def dispatch(args: argparse.Namespace, ctx: commands.RunContext) -> int:
    if args.command == "train":
        return commands.cmd_train(ctx)
    if args.command == "predict":
        return commands.cmd_predict(ctx, args.inputs)
    if args.command == "evaluate":
        return commands.cmd_evaluate(ctx, args.predictions)
    if args.command == "measure":
        return commands.cmd_measure(ctx, args.inputs, args.gt, from_image=args.from_image)
    if args.command == "sweep":
        return commands.cmd_sweep(ctx)
    if args.command == "gradcheck":
        return commands.cmd_gradcheck(ctx, corrupt=args.corrupt_gradient)
    if args.command == "history":
        return commands.cmd_history(ctx, args.limit)
    raise ValueError(f"Unknown command: {args.command}")


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)

    try:
        config = resolve_config(args.config, overrides_from_args(args))
    except CrackPipelineError as e:
        setup_logging(None, args.verbose)
        logger.error(str(e))
        return e.exit_code

    setup_logging(config.out_dir, args.verbose)
    commands.prepare_output_tree(config.out_dir)
    write_resolved_config(config)

    registry = _open_registry(config)
    ctx = commands.RunContext(config=config, registry=registry)
    if registry is not None and args.command != "history":
        ctx.run_id = registry.start_run(args.command, config.digest(), str(config.out_dir), config.dataset.value)

    exit_code = 0
    message = None
    try:
        exit_code = dispatch(args, ctx)
    except CrackPipelineError as e:
        logger.error(f"{type(e).__name__}: {e}")
        exit_code, message = e.exit_code, str(e)
    except Exception as e:
        logger.exception(f"Unexpected error: {e}")
        exit_code, message = 1, str(e)
    finally:
        if registry is not None and ctx.run_id is not None:
            try:
                registry.finish_run(ctx.run_id, exit_code, message)
            except CrackPipelineError as e:
                logger.warning(f"Could not close run {ctx.run_id} in the ledger: {e}")
    return exit_code


if __name__ == "__main__":
    sys.exit(main())
