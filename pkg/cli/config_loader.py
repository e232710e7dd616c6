"""JSON experiment documents -> validated ``RunConfig``"""
import json
from pathlib import Path
from typing import Optional, Union

import pydantic

from core.constants import EFFECTIVE_CONFIG_FILE, SPEC_VERSION
from core.logging import get_logger
from schemas.experiment_schemas import RunConfig
from services.data_service import write_json_atomic
from validators import RunConfigValidator, SchemaError, VersionError

logger = get_logger(__name__)


def _schema_error(error: pydantic.ValidationError) -> SchemaError:
    first = error.errors()[0]
    key = ".".join(str(part) for part in first["loc"]) or "<document>"
    if first["type"] == "extra_forbidden":
        return SchemaError(key, "unknown key", value=first.get("input"))
    return SchemaError(key, first["msg"], expected=first["type"], value=first.get("input"))


def parse_config(path: Union[str, Path], out_dir: Optional[Union[str, Path]] = None) -> RunConfig:
    """
    Read, default and validate a run configuration. With ``out_dir`` the
    effective configuration is echoed there.

    Raises:
        SchemaError: unknown key, wrong type, or inconsistent values
        VersionError: ``spec_version`` other than the supported one
    """
    path = Path(path)
    try:
        document = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as error:
        raise SchemaError("<document>", f"invalid JSON: {error.msg}") from error
    if not isinstance(document, dict):
        raise SchemaError("<document>", "configuration must be a JSON object")

    version = document.get("spec_version", SPEC_VERSION)
    if version != SPEC_VERSION:
        raise VersionError(f"Unsupported spec_version {version!r}, expected {SPEC_VERSION}", "spec_version", version)

    try:
        config = RunConfig.model_validate(document)
    except pydantic.ValidationError as error:
        raise _schema_error(error) from error
    RunConfigValidator().validate(config)
    logger.info("Configuration parsed", path=str(path), cq_kind=config.cq_kind.value, strategies=config.strategies)

    if out_dir is not None:
        echo_effective_config(config, out_dir)
    return config


def effective_config(config: RunConfig) -> dict:
    return config.model_dump(mode="json")


def echo_effective_config(config: RunConfig, out_dir: Union[str, Path]) -> Path:
    return write_json_atomic(effective_config(config), Path(out_dir) / EFFECTIVE_CONFIG_FILE)
