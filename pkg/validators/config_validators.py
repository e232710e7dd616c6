"""Cross-field validation of experiment configurations"""
from typing import List

from models.dataset import TreatmentMode
from schemas.experiment_schemas import CqKind, GeneratorName, RunConfig
from services.acquisition_service import parse_strategy

from .base_validator import BaseValidator, SchemaError


def validate_budget(config: RunConfig) -> bool:
    """
    Raises:
        SchemaError: budget not divisible by the batch size, or larger than the pool
    """
    if config.budget % config.batch_size != 0:
        raise SchemaError(
            "budget",
            f"budget {config.budget} is not divisible by batch_size {config.batch_size}",
            value=config.budget,
        )
    # semi-synthetic row counts are only known once the covariates are read
    if config.generator.generator != GeneratorName.SEMISYNTHETIC:
        if config.warm_start + config.budget > config.generator.n:
            raise SchemaError(
                "budget",
                f"warm_start {config.warm_start} + budget {config.budget} exceeds {config.generator.n} rows",
                value=config.budget,
            )
    return True


def validate_strategies(strategies: List[str]) -> bool:
    if not strategies:
        raise SchemaError("strategies", "at least one strategy is required")
    for name in strategies:
        try:
            parse_strategy(name)
        except ValueError as error:
            raise SchemaError("strategies", str(error), value=name) from error
    if len(set(strategies)) != len(strategies):
        raise SchemaError("strategies", "strategy names must be unique", value=strategies)
    return True


def validate_kind_generator(config: RunConfig) -> bool:
    generator = config.generator
    if generator.generator == GeneratorName.SHIFT_TARGET:
        raise SchemaError("generator", "shift_target produces no outcomes and cannot drive a run")
    if generator.generator == GeneratorName.VISUALIZATION and generator.treatment_mode == TreatmentMode.BINARY:
        raise SchemaError("generator.treatment_mode", "visualization supports continuous or discrete treatments")
    if generator.generator == GeneratorName.SEMISYNTHETIC:
        if generator.covariates_path is None:
            raise SchemaError("generator.covariates_path", "semisynthetic runs need a covariate file")
    if config.cq_kind == CqKind.ATEDS and generator.generator == GeneratorName.VISUALIZATION:
        raise SchemaError("cq_kind", "ateds needs a generator with a shifted target")
    return True


class RunConfigValidator(BaseValidator):
    """Collects every cross-field problem and raises the first"""

    def __init__(self):
        self.errors: List[SchemaError] = []

    def validate(self, data: RunConfig) -> bool:
        self.errors = []
        checks = [
            lambda: validate_budget(data),
            lambda: validate_strategies(data.strategies),
            lambda: validate_kind_generator(data),
        ]
        if not data.seeds:
            self.errors.append(SchemaError("seeds", "at least one seed is required"))
        for check in checks:
            try:
                check()
            except SchemaError as error:
                self.errors.append(error)
        if self.errors:
            raise self.errors[0]
        return True

    def get_errors(self) -> List[str]:
        return [error.message for error in self.errors]
