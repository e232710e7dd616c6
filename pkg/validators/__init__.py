"""
Validation utilities for experiment configurations
"""
from .base_validator import BaseValidator, SchemaError, ValidationError, VersionError
from .config_validators import (
    RunConfigValidator,
    validate_budget,
    validate_kind_generator,
    validate_strategies,
)

__all__ = [
    "RunConfigValidator",
    "validate_budget",
    "validate_kind_generator",
    "validate_strategies",
    "ValidationError",
    "SchemaError",
    "VersionError",
    "BaseValidator",
]
