import argparse
import json
import logging
import sys
from typing import Any, Dict, List, Optional, Sequence

from dotenv import load_dotenv

from src.core.adaptation import STRATEGY_ALIASES
from src.core.config import load_config, resolve_run_config
from src.core.exceptions import (
    AvhfFormatError,
    ConfigError,
    ContractError,
    DataValidationError,
    DimensionError,
    HighlightTTAError,
    MetricError,
    NumericError,
    UsageError,
)
from src.core.pipeline import RunDirectory, run_adapt_eval, run_gen_synth, run_shift_score, run_train
from src.core.schemas import RunConfig
from src.scripts.ablations import STUDIES, run_ablation
from src.scripts.gradcheck import result_rows, run_gradcheck

logger = logging.getLogger("HighlightTTA")

EXIT_OK, EXIT_FAILURE, EXIT_USAGE, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3, 4

_EXIT_CODES = (
    (UsageError, EXIT_USAGE),
    ((ConfigError, ContractError, DataValidationError, AvhfFormatError, DimensionError), EXIT_CONFIG),
    ((NumericError, MetricError), EXIT_NUMERIC),
)


class _Parser(argparse.ArgumentParser):
    """argparse reports usage errors by exiting; we want them as exceptions."""

    def error(self, message: str) -> None:
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", default="config.yaml", help="YAML/JSON run configuration")
    common.add_argument("--out", help="Output directory (paths.out_dir)")
    common.add_argument("--seed", type=int, help="Master seed; wins over runtime.seed and MTTA_SEED")
    common.add_argument("--threads", type=int, help="Per-video worker threads during evaluation")
    common.add_argument("--data-dir", help="Directory holding train/test_iid/test_shifted .avhf files")
    common.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                        help="Override any config value (repeatable)")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = _Parser(prog="highlight-tta", description="Meta-auxiliary test-time adaptation for highlight detection")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    commands.add_parser("gen-synth", parents=[common], help="Write the synthetic benchmark as AVHF files")

    train = commands.add_parser("train", parents=[common], help="Joint or meta-auxiliary training")
    train.add_argument("--stage", choices=["joint", "meta"], required=True)
    train.add_argument("--epochs", type=int, help="Epochs of the selected stage")
    train.add_argument("--init", help="Joint checkpoint to start meta-auxiliary training from")
    train.add_argument("--data", help="Training split (.avhf)")

    adapt = commands.add_parser("adapt-eval", parents=[common], help="Test-time adaptation and evaluation")
    adapt.add_argument("--strategy", choices=list(STRATEGY_ALIASES), default="halluc")
    adapt.add_argument("--checkpoint", help="Trained checkpoint (.mtta)")
    adapt.add_argument("--data", help="Evaluation split (.avhf)")

    ablate = commands.add_parser("ablate", parents=[common], help="Multi-seed ablation studies")
    ablate.add_argument("--study", choices=list(STUDIES), required=True)

    shift = commands.add_parser("shift-score", parents=[common], help="FID between train halves and the test split")
    shift.add_argument("--train-data", help="Training split (.avhf)")
    shift.add_argument("--test-data", help="Test split (.avhf)")

    commands.add_parser("gradcheck", parents=[common], help="Finite-difference gradient suite")
    return parser


def _flag_values(args: argparse.Namespace) -> Dict[str, Any]:
    """Dotted config keys set by dedicated flags."""
    values: Dict[str, Any] = {"command.name": args.command}
    flags = {
        "out": "paths.out_dir",
        "threads": "runtime.threads",
        "data_dir": "paths.data_dir",
        "log_level": "runtime.log_level",
        "init": "paths.init_checkpoint",
        "checkpoint": "paths.checkpoint",
        "train_data": "paths.train_data",
        "test_data": "paths.test_data",
        "study": "command.study",
    }
    for flag, key in flags.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value

    if args.command == "train":
        values["command.stage"] = args.stage
        if args.epochs is not None:
            values[f"train.{args.stage}_epochs"] = args.epochs
        if args.data is not None:
            values["paths.train_data"] = args.data
    elif args.command == "adapt-eval":
        values["adapt.kind"] = STRATEGY_ALIASES[args.strategy]
        if args.data is not None:
            values["paths.test_data"] = args.data
    return values


def _dispatch(config: RunConfig, run: RunDirectory) -> None:
    command = config.command.name
    if command == "gen-synth":
        run_gen_synth(config, run)
    elif command == "train":
        run_train(config, run, config.command.stage)
    elif command == "adapt-eval":
        run_adapt_eval(config, run, config.adapt)
    elif command == "ablate":
        run_ablation(config, run, config.command.study)
    elif command == "shift-score":
        run_shift_score(config, run)
    elif command == "gradcheck":
        results = run_gradcheck(config.runtime.seed or 0)
        run.write_csv("gradcheck.csv", result_rows(results), ["case", "seed", "relative_error", "passed"])
        failed = [r for r in results if not r.passed]
        if failed:
            run.finalize()
            worst = max(failed, key=lambda r: r.error)
            raise NumericError(f"{len(failed)} gradient case(s) failed; worst {worst.name} (seed {worst.seed}) at {worst.error:.3e}")
    else:
        raise UsageError(f"Unknown subcommand '{command}'")
    run.finalize()


def exit_code_for(exc: BaseException) -> int:
    for kinds, code in _EXIT_CODES:
        if isinstance(exc, kinds):
            return code
    return EXIT_FAILURE


def error_line(exc: BaseException) -> str:
    return f"error code={exit_code_for(exc)} kind={type(exc).__name__} message={json.dumps(str(exc))}"


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)

    try:
        # 1. Parse the command line (usage errors exit 2)
        args = build_parser().parse_args(argv)

        logging.basicConfig(
            level=args.log_level or "INFO",
            format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
            handlers=[logging.StreamHandler(sys.stderr)],
        )
        load_dotenv()

        # 2. Load and resolve configuration (fail fast if config is bad)
        raw = load_config(args.config)
        config = resolve_run_config(raw, args.overrides, args.seed, _flag_values(args))
        if args.log_level is None:
            logging.getLogger().setLevel(config.runtime.log_level)
        logger.info(f"--- {config.app.name} {config.app.version}: {args.command} (seed {config.runtime.seed}) ---")

        # 3. Run the pipeline into its output directory
        _dispatch(config, RunDirectory(config, argv))
        return EXIT_OK

    except HighlightTTAError as e:
        logger.debug("Run failed", exc_info=True)
        print(error_line(e), file=sys.stderr)
        return exit_code_for(e)
    except Exception as e:
        logger.critical(f"Unexpected failure: {e}", exc_info=True)
        print(error_line(e), file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
