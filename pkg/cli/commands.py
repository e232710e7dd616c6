import argparse
import sys
from pathlib import Path
from typing import List

import pandas as pd

from core.config import get_settings
from core.constants import (
    AGGREGATE_FILE,
    EFFECTIVE_CONFIG_FILE,
    EXIT_IO,
    EXIT_OK,
    EXIT_PARTIAL,
    EXIT_USAGE,
    TRIALS_FILE,
)
from core.exceptions import ActiveCqError, ReportMismatchError
from core.logging import get_logger
from models.dataset import TreatmentMode
from schemas.experiment_schemas import GeneratorConfig, GeneratorName
from services.data_service import DataService, write_csv_atomic
from services.experiment_service import run_trials
from services.generator_service import generate
from services.table_service import DEFAULT_REPORT_METRIC, TableService
from validators import ValidationError

from .config_loader import echo_effective_config, parse_config

logger = get_logger(__name__)


def _fail(code: int, message: str, **context) -> int:
    logger.error(message, exit_code=code, **context)
    print(f"error: {message}", file=sys.stderr)
    return code


def cmd_datagen(args: argparse.Namespace) -> int:
    """Write one generated dataset as CSV plus its metadata sidecar"""
    data_service = DataService()
    try:
        spec = GeneratorConfig(
            generator=GeneratorName(args.gen),
            n=args.n,
            treatment_mode=TreatmentMode(args.mode),
            seed=args.seed,
            noise_sd=args.noise_sd,
            covariates_path=args.covariates,
        )
    except ValueError as error:
        return _fail(EXIT_USAGE, str(error))

    try:
        covariates = None
        if spec.generator == GeneratorName.SEMISYNTHETIC:
            if spec.covariates_path is None:
                return _fail(EXIT_USAGE, "--covariates is required for the semisynthetic generator")
            covariates = data_service.load_covariates_csv(spec.covariates_path)
        dataset = generate(spec, covariates)
    except OSError as error:
        return _fail(EXIT_IO, f"cannot read covariates: {error}")
    except ActiveCqError as error:
        return _fail(EXIT_USAGE, error.message, **error.context)

    out = Path(args.out) if args.out else Path(get_settings().out) / f"{spec.generator.value}_{spec.seed}.csv"
    try:
        data_service.write_dataset(dataset, out)
    except OSError as error:
        return _fail(EXIT_IO, f"cannot write {out}: {error}")
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    """Run every (strategy, seed) trial of a configuration and write its CSVs"""
    try:
        config = parse_config(args.config)
    except ValidationError as error:
        return _fail(EXIT_USAGE, error.message, field=error.field)
    except OSError as error:
        return _fail(EXIT_USAGE, f"cannot read configuration: {error}")

    out = Path(args.out or config.out or get_settings().out)
    existing = [name for name in (TRIALS_FILE, AGGREGATE_FILE, EFFECTIVE_CONFIG_FILE) if (out / name).exists()]
    if existing and not args.force:
        return _fail(EXIT_USAGE, f"{out} already holds {existing}; pass --force to overwrite", out=str(out))

    try:
        echo_effective_config(config, out)
        table = run_trials(config, parallel=args.parallel, out_dir=out)
    except OSError as error:
        return _fail(EXIT_IO, f"cannot write results to {out}: {error}")

    if table.n_aborted:
        return _fail(EXIT_PARTIAL, f"{table.n_aborted} trial(s) aborted", out=str(out))
    logger.info("Run finished", out=str(out))
    return EXIT_OK


def cmd_report(args: argparse.Namespace) -> int:
    """Merge aggregate CSVs into one rounds x strategies table"""
    frames: List[pd.DataFrame] = []
    for path in args.inputs:
        try:
            frames.append(pd.read_csv(path))
        except (OSError, pd.errors.EmptyDataError, pd.errors.ParserError) as error:
            return _fail(EXIT_IO, f"cannot read {path}: {error}")

    try:
        wide = TableService().wide_report(frames, metric=args.metric)
    except ReportMismatchError as error:
        return _fail(EXIT_USAGE, error.message, **error.context)

    print(wide.to_string(index=False))
    if args.out:
        try:
            write_csv_atomic(wide, args.out)
        except OSError as error:
            return _fail(EXIT_IO, f"cannot write {args.out}: {error}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="activecq", description="Active estimation of causal quantities.")
    subparsers = parser.add_subparsers(dest="command", required=True)

    datagen = subparsers.add_parser("datagen", help="Generate a seeded dataset.")
    datagen.add_argument("--gen", required=True, choices=[g.value for g in GeneratorName])
    datagen.add_argument("--n", type=int, default=500)
    datagen.add_argument("--mode", default=TreatmentMode.CONTINUOUS.value, choices=[m.value for m in TreatmentMode])
    datagen.add_argument("--seed", type=int, default=0)
    datagen.add_argument("--noise-sd", type=float, default=0.4)
    datagen.add_argument("--covariates", default=None, help="Covariate CSV for the semisynthetic generator.")
    datagen.add_argument("--out", default=None, help="Output CSV path.")
    datagen.set_defaults(handler=cmd_datagen)

    run = subparsers.add_parser("run", help="Run the trials described by a JSON config.")
    run.add_argument("config")
    run.add_argument("--parallel", type=int, default=1, help="Trials run concurrently.")
    run.add_argument("--out", default=None, help="Output directory (default: config 'out' or ACTIVECQ_OUT).")
    run.add_argument("--force", action="store_true", help="Overwrite existing outputs.")
    run.set_defaults(handler=cmd_run)

    report = subparsers.add_parser("report", help="Tabulate aggregate CSVs.")
    report.add_argument("inputs", nargs="+")
    report.add_argument("--metric", default=DEFAULT_REPORT_METRIC)
    report.add_argument("--out", default=None, help="Also write the table as CSV.")
    report.set_defaults(handler=cmd_report)
    return parser
