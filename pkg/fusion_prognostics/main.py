import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from fusion_prognostics.app import Application, make_app
from fusion_prognostics.configurations import LoggingConfiguration
from fusion_prognostics.exceptions import FusionError, UsageError

logger = logging.getLogger("fusion_prognostics.main")


class FusionArgumentParser(argparse.ArgumentParser):
    """Argument errors become a UsageError so they leave with the usage exit code."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def existing_directory(value: str) -> Path:
    path = Path(value)
    if not path.is_dir():
        raise argparse.ArgumentTypeError(f"directory {value} does not exist")
    return path


def existing_file(value: str) -> Path:
    path = Path(value)
    if not path.is_file():
        raise argparse.ArgumentTypeError(f"file {value} does not exist")
    return path


def open_percentile(value: str) -> float:
    try:
        percentile = float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"{value} is not a number")
    if not 0 < percentile < 100:
        raise argparse.ArgumentTypeError(f"percentile {value} is outside (0, 100)")
    return percentile


def build_parser() -> FusionArgumentParser:
    parser = FusionArgumentParser(
        prog="fusion-prognostics",
        description="Sensor-fusion prognostics: failure-mode diagnosis and remaining-life prediction.",
    )
    parser.add_argument("--config", type=existing_file, default=None, help="Run configuration YAML")
    parser.add_argument("--seed", type=int, default=None, help="Seed for every stochastic step")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=FusionArgumentParser)

    simulate = commands.add_parser("simulate", help="Generates the seeded simulation dataset with its ground truth")
    simulate.add_argument("--out", type=Path, required=True)
    simulate.add_argument("--regime", default=None, help="SNR regime of the informative sensors, e.g. snr_2_5")
    simulate.set_defaults(handler=_simulate)

    fit_offline = commands.add_parser("fit-offline", help="Fits the mixture regression on the training systems")
    fit_offline.add_argument("--data", type=existing_directory, required=True)
    fit_offline.add_argument("--out", type=Path, required=True)
    fit_offline.add_argument("--k", dest="K", type=int, default=None)
    fit_offline.add_argument("--lambda", dest="lambda_", type=float, default=None)
    fit_offline.add_argument("--alpha", type=float, default=None)
    fit_offline.set_defaults(handler=_fit_offline)

    cv = commands.add_parser("cv", help="Selects lambda and alpha by cross-validation")
    cv.add_argument("--data", type=existing_directory, required=True)
    cv.add_argument("--out", type=Path, required=True)
    cv.add_argument("--folds", type=int, default=None)
    cv.set_defaults(handler=_cv)

    predict = commands.add_parser("predict", help="Predicts the remaining life of every test unit")
    predict.add_argument("--model", type=existing_directory, required=True)
    predict.add_argument("--data", type=existing_directory, required=True)
    predict.add_argument("--out", type=Path, required=True)
    predict.add_argument("--t-star", dest="t_star", type=float, default=None)
    predict.add_argument("--percentile", type=open_percentile, default=None)
    predict.set_defaults(handler=_predict)

    evaluate = commands.add_parser("evaluate", help="Summarizes the relative errors of a prediction run")
    evaluate.add_argument("--preds", type=existing_directory, required=True)
    evaluate.add_argument("--out", type=Path, required=True)
    evaluate.add_argument("--truth", type=existing_file, default=None)
    evaluate.set_defaults(handler=_evaluate)

    ingest = commands.add_parser("ingest-cmapss", help="Converts C-MAPSS text files into a dataset directory")
    ingest.add_argument("--train", type=existing_file, required=True)
    ingest.add_argument("--test", type=existing_file, required=True)
    ingest.add_argument("--rul", type=existing_file, required=True)
    ingest.add_argument("--out", type=Path, required=True)
    ingest.set_defaults(handler=_ingest_cmapss)

    report = commands.add_parser("report", help="Writes report.md from the tables of a run directory")
    report.add_argument("--run", type=existing_directory, required=True)
    report.set_defaults(handler=_report)

    study = commands.add_parser("study", help="Simulation study over every configured SNR regime")
    study.add_argument("--out", type=Path, required=True)
    study.set_defaults(handler=_study)

    cmapss = commands.add_parser("cmapss", help="C-MAPSS study on an ingested dataset directory")
    cmapss.add_argument("--data", type=existing_directory, required=True)
    cmapss.add_argument("--out", type=Path, required=True)
    cmapss.set_defaults(handler=_cmapss)

    return parser


def _simulate(app: Application, args: argparse.Namespace):
    app.simulate(args.out, args.regime)


def _fit_offline(app: Application, args: argparse.Namespace):
    app.fit_offline(args.data, args.out, args.K, args.lambda_, args.alpha)


def _cv(app: Application, args: argparse.Namespace):
    penalty = app.cv(args.data, args.out, args.folds)
    print(json.dumps({"lambda": penalty.lambda_, "alpha": penalty.alpha}))


def _predict(app: Application, args: argparse.Namespace):
    app.predict(args.model, args.data, args.out, args.t_star, args.percentile)


def _evaluate(app: Application, args: argparse.Namespace):
    app.evaluate(args.preds, args.out, args.truth)


def _ingest_cmapss(app: Application, args: argparse.Namespace):
    app.ingest_cmapss(args.train, args.test, args.rul, args.out)


def _report(app: Application, args: argparse.Namespace):
    app.report(args.run)


def _study(app: Application, args: argparse.Namespace):
    app.study(args.out)


def _cmapss(app: Application, args: argparse.Namespace):
    app.cmapss(args.data, args.out)


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Runs one command and returns its exit code: 0 success, 1 usage, 2 data, 3 numerical or internal."""
    try:
        args = build_parser().parse_args(argv)

        app = make_app(args.config)
        set_up_logging(app.configuration.logging)

        if app.configuration.debug:
            app.logger.debug("Debug mode is on")
            app.logger.debug(f"Configuration: {app.configuration}")
        if args.seed is not None:
            app.run_config = app.run_config.with_overrides(seed=args.seed)
        if app.configuration.debug:
            app.logger.debug(f"Run configuration: {app.run_config.model_dump(mode='json', by_alias=True)}")

        args.handler(app, args)
    except FusionError as error:
        logger.exception(f"{type(error).__name__}: {error.message}")
        _report_error(error)
        return error.exit_code
    except Exception as error:
        logger.exception(f"Unexpected failure: {error}")
        internal = FusionError(f"Unexpected failure: {error}", kind=type(error).__name__)
        _report_error(internal)
        return internal.exit_code
    return 0


def set_up_logging(config: LoggingConfiguration):
    logging_handlers = []
    if config.path is not None:
        logging_handlers.append(logging.FileHandler(config.path, mode="w"))

    if len(logging_handlers) > 0:
        logging.basicConfig(
            level=config.level.upper(),
            handlers=logging_handlers,
            format=config.format,
        )
    else:
        logging.basicConfig(
            level=config.level.upper(),
            format=config.format,
        )


def _report_error(error: FusionError):
    print(f"Error: {error.message}", file=sys.stderr)
    print(error.json_record, file=sys.stderr)


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
