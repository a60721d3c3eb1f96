import argparse
import json
import logging
import os
import sys
import time
from logging import Formatter, StreamHandler
from typing import List, Optional, Sequence

import pandas as pd
from dotenv import load_dotenv

from .errors import ConfigError, MemtrackError, UnknownArchetype
from .experiments import compare, density_sweep, pvs_gap
from .metrics import DEFAULT_RESOLUTION, evaluate
from .policy import PolicyKind
from .raster import MIN_RESOLUTION
from .records import parse_config, read_run, read_truth, with_schema_version, write_csv, write_run, write_truth
from .render import render_run
from .scenario import simulate
from .tracker import TrackingMode, run, save_rates

LOG_LEVELS = {
    "error": logging.ERROR,
    "warn": logging.WARNING,
    "info": logging.INFO,
    "debug": logging.DEBUG,
}

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


# --- JSON Logging Setup ---
class JsonFormatter(Formatter):
    """
    Formats log records as JSON strings (JSONL format - one JSON object per line).
    """
    def format(self, record):
        log_record = {
            "timestamp": self.formatTime(record, self.datefmt),
            "level": record.levelname,
            "name": record.name,
        }
        # If the log message is a dictionary, merge it
        if isinstance(record.msg, dict):
            log_record.update(record.msg)
        else:
            log_record["message"] = record.getMessage()

        if record.exc_info:
            log_record["exception"] = self.formatException(record.exc_info).replace("\n", "\\n")
        if record.stack_info:
            log_record["stack_info"] = self.formatStack(record.stack_info).replace("\n", "\\n")

        return json.dumps(log_record, default=str)


def setup_logging(debug=False):
    """Configures logging to output JSONL to stderr, verbosity from MEMTRACK_LOG."""
    load_dotenv()
    name = os.getenv("MEMTRACK_LOG", "warn").strip().lower()
    log_level = logging.DEBUG if debug else LOG_LEVELS.get(name, logging.WARNING)
    logger = logging.getLogger()  # root logger
    logger.setLevel(log_level)

    if logger.hasHandlers():
        logger.handlers.clear()

    handler = StreamHandler(sys.stderr)
    handler.setFormatter(JsonFormatter(datefmt="%Y-%m-%dT%H:%M:%S%z"))
    logger.addHandler(handler)
    logging.getLogger("memtrack").setLevel(log_level)
    if not debug and name not in LOG_LEVELS:
        logging.getLogger(__name__).warning({"event": "unknown_log_level", "value": name})


class ArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with status 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _densities(text: str) -> List[int]:
    try:
        levels = [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")
    if not levels or min(levels) < 1:
        raise argparse.ArgumentTypeError("densities must be positive integers")
    return levels


def _positive(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text!r}")
    return value


def build_parser() -> ArgumentParser:
    parser = ArgumentParser(
        prog="memtrack",
        description="Track synthetic multi-object scenes with coupled or decoupled memory selection.",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter,
    )
    parser.add_argument("--debug", "-d", action="store_true", help="Enable DEBUG level logging.")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    run_cmd = commands.add_parser("run", help="Execute one tracked run from a config file.")
    run_cmd.add_argument("--config", required=True, help="YAML scenario/tracker config.")
    run_cmd.add_argument("--policy", choices=[kind.value for kind in PolicyKind], help="Override the config policy.")
    run_cmd.add_argument("--seed", type=int, help="Override the scenario and encoder noise seed.")
    run_cmd.add_argument("--out", required=True, help="Run record (JSONL) to write.")
    run_cmd.add_argument("--gt-out", dest="gt_out", help="Also write the ground truth (JSONL) here.")

    for name, help_text in (
        ("compare", "Run both policies over seeds of one archetype."),
        ("pvs", "Compare one-by-one and simultaneous PVS tracking on one archetype."),
    ):
        cmd = commands.add_parser(name, help=help_text)
        cmd.add_argument("--archetype", required=True, help="Archetype name, e.g. reentry or density(8).")
        cmd.add_argument("--seeds", type=_positive, default=20, help="Number of seeds (0..n-1).")
        cmd.add_argument("--out", required=True, help="CSV report to write.")

    sweep = commands.add_parser("sweep", help="Density sweep with the decoupled-minus-coupled gap table.")
    sweep.add_argument("--densities", type=_densities, default=[3, 8, 10], help="Comma-separated target counts.")
    sweep.add_argument("--seeds", type=_positive, default=20, help="Number of seeds (0..n-1).")
    sweep.add_argument("--out", required=True, help="CSV gap table to write.")
    sweep.add_argument("--runs-out", dest="runs_out", help="Also write the per-run rows here.")

    for cmd in (commands.choices["compare"], commands.choices["pvs"], sweep):
        cmd.add_argument("--workers", type=_positive, default=1, help="Parallel worker processes.")
        cmd.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION, help="Boundary-F raster size.")
    for cmd in (commands.choices["compare"], sweep):
        cmd.add_argument("--mode", choices=[mode.value for mode in TrackingMode], default=TrackingMode.PCS.value)

    eval_cmd = commands.add_parser("eval", help="Print the metrics report of a run as CSV.")
    eval_cmd.add_argument("--run", required=True, help="Run record (JSONL).")
    eval_cmd.add_argument("--gt", required=True, help="Ground truth (JSONL).")
    eval_cmd.add_argument("--alpha", type=float, default=0.5, help="IoU threshold for identity switches.")
    eval_cmd.add_argument("--resolution", type=int, default=DEFAULT_RESOLUTION, help="Boundary-F raster size.")
    eval_cmd.add_argument("--matching", choices=["hungarian", "greedy"], default="hungarian")

    render = commands.add_parser("render", help="Write one P6 image per frame.")
    render.add_argument("--run", required=True, help="Run record (JSONL).")
    render.add_argument("--gt", required=True, help="Ground truth (JSONL).")
    render.add_argument("--outdir", required=True, help="Directory for frame_NNNN.ppm files.")
    render.add_argument("--resolution", type=int, default=256, help="Pixels along the longer world side.")
    return parser


def cmd_run(args) -> int:
    scenario, tracker = parse_config(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError(f"seed must be non-negative, got {args.seed}")
        scenario = scenario.model_copy(update={"seed": args.seed})
        tracker = tracker.model_copy(update={"encoder_noise_seed": args.seed})
    if args.policy:
        policy = tracker.policy.model_copy(update={"kind": PolicyKind(args.policy)})
        tracker = tracker.model_copy(update={"policy": policy})
    truth, metadata, frames = simulate(scenario)
    record = run(frames, tracker, scenario.seed)
    logging.getLogger(__name__).info({
        "event": "save_rates",
        "rates": save_rates(record),
        "max_identity_cosine": metadata.max_abs_cosine,
    })
    write_run(record, args.out, scenario)
    if args.gt_out:
        write_truth(truth, args.gt_out)
    print(f"Run written to {args.out}", file=sys.stderr)
    return EXIT_OK


def cmd_compare(args) -> int:
    table = compare(args.archetype, args.seeds, TrackingMode(args.mode), args.resolution, args.workers)
    write_csv(table, args.out)
    return EXIT_OK


def cmd_sweep(args) -> int:
    gaps, runs = density_sweep(args.densities, args.seeds, TrackingMode(args.mode), args.resolution, args.workers)
    write_csv(gaps, args.out)
    if args.runs_out:
        write_csv(runs, args.runs_out)
    return EXIT_OK


def cmd_pvs(args) -> int:
    write_csv(pvs_gap(args.archetype, args.seeds, args.resolution, args.workers), args.out)
    return EXIT_OK


def cmd_eval(args) -> int:
    report = evaluate(
        read_run(args.run), read_truth(args.gt), alpha=args.alpha, resolution=args.resolution, matching=args.matching
    )
    table = with_schema_version(pd.DataFrame([report.as_row()]))
    table.to_csv(sys.stdout, index=False, float_format="%.17g", lineterminator="\n")
    return EXIT_OK


def cmd_render(args) -> int:
    written = render_run(read_run(args.run), read_truth(args.gt), args.outdir, args.resolution)
    print(f"{len(written)} frames written to {args.outdir}", file=sys.stderr)
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "pvs": cmd_pvs,
    "eval": cmd_eval,
    "render": cmd_render,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    Command-line interface: run, compare, sweep, pvs, eval, render.
    Returns the process exit code (0 success, 1 usage/config error, 2 runtime error).
    """
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    resolution = getattr(args, "resolution", None)
    if resolution is not None and resolution < MIN_RESOLUTION:
        parser.print_usage(sys.stderr)
        print(f"ERROR: --resolution must be at least {MIN_RESOLUTION}", file=sys.stderr)
        return EXIT_USAGE

    setup_logging(debug=args.debug)
    logger = logging.getLogger(__name__)
    start_time = time.time()
    logger.info({"event": "cli_start", "args": vars(args)})

    try:
        code = COMMANDS[args.command](args)
    except (ConfigError, UnknownArchetype) as e:
        logger.error({"event": "cli_end", "status": "failed", "reason": "config", "error": str(e)})
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_USAGE
    except MemtrackError as e:
        logger.error({"event": "cli_end", "status": "failed", "reason": "runtime", "error": str(e)})
        print(f"ERROR: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as e:
        logger.exception({"event": "cli_end", "status": "failed", "reason": "unexpected", "error": str(e)})
        print(f"ERROR: Unexpected failure: {e}", file=sys.stderr)
        return EXIT_RUNTIME

    logger.info({"event": "cli_end", "status": "success", "total_duration_seconds": round(time.time() - start_time, 3)})
    return code


if __name__ == "__main__":
    sys.exit(main())
