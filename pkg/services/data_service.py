import json
import os
import tempfile
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

import pandas as pd

from core.exceptions import EmptyFileError, ParseError
from core.logging import get_logger
from models.dataset import CovariateTable, Dataset, DatasetMeta

logger = get_logger(__name__)

PathLike = Union[str, Path]

CONTINUOUS_PREFIX = "c_"
BINARY_PREFIX = "b_"
TREATMENT_COLUMN = "treatment"
ROLES_SUFFIX = ".roles.json"
META_SUFFIX = ".meta.json"


def sidecar_path(path: PathLike, suffix: str) -> Path:
    path = Path(path)
    return path.with_name(path.stem + suffix)


def atomic_write_text(path: PathLike, text: str) -> Path:
    """Write via a temporary file in the target directory, then rename over the target"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    handle, temp_name = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(handle, "w", encoding="utf-8", newline="") as stream:
            stream.write(text)
        os.replace(temp_name, path)
    except BaseException:
        if os.path.exists(temp_name):
            os.unlink(temp_name)
        raise
    return path


def write_csv_atomic(frame: pd.DataFrame, path: PathLike) -> Path:
    return atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))


def write_json_atomic(document: Dict[str, Any], path: PathLike) -> Path:
    return atomic_write_text(path, json.dumps(document, indent=2, sort_keys=True) + "\n")


class DataService:
    """Reads covariate files and writes generated datasets with their metadata sidecars"""

    def __init__(self, data_directory: Optional[PathLike] = None):
        self.data_directory = Path(data_directory) if data_directory is not None else None

    def _resolve(self, path: PathLike) -> Path:
        path = Path(path)
        if self.data_directory is not None and not path.is_absolute():
            return self.data_directory / path
        return path

    # ===== Covariate ingestion =====

    def _roles(self, path: Path, columns: List[str]) -> Dict[str, Any]:
        roles_file = sidecar_path(path, ROLES_SUFFIX)
        if roles_file.exists():
            roles = json.loads(roles_file.read_text(encoding="utf-8"))
            logger.info("Column roles read from sidecar", path=str(roles_file))
            return {
                "continuous": list(roles.get("continuous", [])),
                "binary": list(roles.get("binary", [])),
                "treatment": roles.get("treatment"),
            }
        return {
            "continuous": [c for c in columns if c.startswith(CONTINUOUS_PREFIX)],
            "binary": [c for c in columns if c.startswith(BINARY_PREFIX)],
            "treatment": TREATMENT_COLUMN if TREATMENT_COLUMN in columns else None,
        }

    @staticmethod
    def _parse_column(raw: pd.Series, column: str, binary: bool) -> pd.Series:
        values = pd.to_numeric(raw.str.strip(), errors="coerce")
        invalid = values.isna()
        if binary:
            invalid |= ~values.isin([0.0, 1.0])
        if invalid.any():
            position = int(invalid.to_numpy().argmax())
            # header is file row 1
            raise ParseError(
                f"Invalid value {raw.iloc[position]!r} in column '{column}' at row {position + 2}",
                row=position + 2,
                column=column,
            )
        return values.astype(float)

    def load_covariates_csv(self, path: PathLike) -> CovariateTable:
        """
        Read a header-first CSV of covariates. Roles come from a
        ``<stem>.roles.json`` sidecar when present, otherwise from the
        ``c_``/``b_`` prefixes and an optional ``treatment`` column.

        Raises:
            EmptyFileError: no header or no data rows
            ParseError: a role column holds a non-numeric (or non-0/1 binary) cell
        """
        path = self._resolve(path)
        try:
            raw = pd.read_csv(path, dtype=str, keep_default_na=False)
        except pd.errors.EmptyDataError as error:
            raise EmptyFileError(f"Covariate file {path} is empty", path=str(path)) from error
        if raw.empty:
            raise EmptyFileError(f"Covariate file {path} has no data rows", path=str(path))

        roles = self._roles(path, list(raw.columns))
        missing = [c for c in roles["continuous"] + roles["binary"] if c not in raw.columns]
        if roles["treatment"] is not None and roles["treatment"] not in raw.columns:
            missing.append(roles["treatment"])
        if missing:
            raise ParseError(f"Columns {missing} named by the roles are absent", column=missing[0])

        frame = pd.DataFrame(index=raw.index)
        for column in roles["continuous"]:
            frame[column] = self._parse_column(raw[column], column, binary=False)
        for column in roles["binary"]:
            frame[column] = self._parse_column(raw[column], column, binary=True)
        if roles["treatment"] is not None:
            frame[roles["treatment"]] = self._parse_column(raw[roles["treatment"]], roles["treatment"], binary=False)

        logger.info(
            "Covariates loaded",
            path=str(path),
            n_rows=len(frame),
            n_continuous=len(roles["continuous"]),
            n_binary=len(roles["binary"]),
        )
        return CovariateTable(
            frame=frame, continuous=roles["continuous"], binary=roles["binary"], treatment=roles["treatment"]
        )

    # ===== Dataset export =====

    def write_dataset(self, dataset: Dataset, path: PathLike) -> Path:
        """CSV with columns a, z_j, s_j, y plus a ``<stem>.meta.json`` sidecar"""
        path = self._resolve(path)
        write_csv_atomic(dataset.to_frame(), path)
        if dataset.meta is not None:
            write_json_atomic(dataset.meta.to_dict(), sidecar_path(path, META_SUFFIX))
        logger.info("Dataset written", path=str(path), n_rows=dataset.n_rows)
        return path

    def read_dataset(self, path: PathLike) -> Dataset:
        path = self._resolve(path)
        try:
            frame = pd.read_csv(path)
        except pd.errors.EmptyDataError as error:
            raise EmptyFileError(f"Dataset file {path} is empty", path=str(path)) from error
        meta_file = sidecar_path(path, META_SUFFIX)
        meta = None
        if meta_file.exists():
            meta = DatasetMeta.from_dict(json.loads(meta_file.read_text(encoding="utf-8")))
        return Dataset.from_frame(frame, meta)
