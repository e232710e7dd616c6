from dataclasses import dataclass, field, replace
from enum import Enum
from typing import List, Optional, Sequence

import numpy as np
import pandas as pd

from core.constants import RNG_VERSION
from core.custom_typing import Matrix, Vector
from core.exceptions import DimensionMismatchError


class TreatmentMode(str, Enum):
    BINARY = "binary"
    DISCRETE = "discrete"
    CONTINUOUS = "continuous"


@dataclass(frozen=True)
class DatasetMeta:
    generator: str
    seed: int
    treatment_mode: TreatmentMode
    noise_sd: float = 0.0
    outcome_variant: Optional[str] = None
    n_continuous: Optional[int] = None  # semi-synthetic: leading columns of [z, s] that form x
    rng_version: str = RNG_VERSION

    def to_dict(self) -> dict:
        return {
            "generator": self.generator,
            "seed": self.seed,
            "treatment_mode": self.treatment_mode.value,
            "noise_sd": self.noise_sd,
            "outcome_variant": self.outcome_variant,
            "n_continuous": self.n_continuous,
            "rng_version": self.rng_version,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DatasetMeta":
        return cls(
            generator=data["generator"],
            seed=int(data["seed"]),
            treatment_mode=TreatmentMode(data["treatment_mode"]),
            noise_sd=float(data.get("noise_sd", 0.0)),
            outcome_variant=data.get("outcome_variant"),
            n_continuous=data.get("n_continuous"),
            rng_version=data.get("rng_version", RNG_VERSION),
        )


def _as_matrix(values: Optional[np.ndarray]) -> Optional[Matrix]:
    if values is None:
        return None
    array = np.asarray(values, dtype=float)
    if array.ndim == 1:
        array = array[:, None]
    return array


@dataclass(frozen=True)
class Dataset:
    """
    Columnar record: treatment ``a``, conditioning ``z``, adjustment ``s`` and
    optional outcomes ``y``. Target-population samples carry no treatment.
    """

    s: Matrix
    a: Optional[Vector] = None
    z: Optional[Matrix] = None
    y: Optional[Vector] = None
    meta: Optional[DatasetMeta] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "s", _as_matrix(self.s))
        object.__setattr__(self, "z", _as_matrix(self.z))
        if self.a is not None:
            object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        if self.y is not None:
            object.__setattr__(self, "y", np.asarray(self.y, dtype=float).reshape(-1))

        n = self.s.shape[0]
        for name in ("a", "z", "y"):
            column = getattr(self, name)
            if column is not None and column.shape[0] != n:
                raise DimensionMismatchError(
                    f"Column '{name}' has {column.shape[0]} rows, expected {n}", column=name
                )

    @property
    def n_rows(self) -> int:
        return int(self.s.shape[0])

    @property
    def labeled(self) -> bool:
        return self.y is not None

    @property
    def treatment_matrix(self) -> Optional[Matrix]:
        return None if self.a is None else self.a[:, None]

    def subset(self, indices: Sequence[int]) -> "Dataset":
        idx = np.asarray(indices, dtype=int)
        return Dataset(
            s=self.s[idx],
            a=None if self.a is None else self.a[idx],
            z=None if self.z is None else self.z[idx],
            y=None if self.y is None else self.y[idx],
            meta=self.meta,
        )

    def with_outcomes(self, y: Optional[Vector]) -> "Dataset":
        return replace(self, y=y)

    def fold_conditioning(self, keep_adjustment: Optional[int] = None) -> "Dataset":
        """Move ``z`` into the adjustment block, keeping the first ``keep_adjustment`` columns of ``s``"""
        s = self.s if keep_adjustment is None else self.s[:, :keep_adjustment]
        if self.z is not None:
            s = np.hstack([self.z, s])
        return replace(self, s=s, z=None)

    def to_frame(self) -> pd.DataFrame:
        columns = {}
        if self.a is not None:
            columns["a"] = self.a
        if self.z is not None:
            for j in range(self.z.shape[1]):
                columns[f"z_{j + 1}"] = self.z[:, j]
        for j in range(self.s.shape[1]):
            columns[f"s_{j + 1}"] = self.s[:, j]
        if self.y is not None:
            columns["y"] = self.y
        return pd.DataFrame(columns)

    @classmethod
    def from_frame(cls, frame: pd.DataFrame, meta: Optional[DatasetMeta] = None) -> "Dataset":
        z_columns = sorted((c for c in frame.columns if c.startswith("z_")), key=lambda c: int(c[2:]))
        s_columns = sorted((c for c in frame.columns if c.startswith("s_")), key=lambda c: int(c[2:]))
        return cls(
            s=frame[s_columns].to_numpy(dtype=float),
            a=frame["a"].to_numpy(dtype=float) if "a" in frame else None,
            z=frame[z_columns].to_numpy(dtype=float) if z_columns else None,
            y=frame["y"].to_numpy(dtype=float) if "y" in frame else None,
            meta=meta,
        )


@dataclass(frozen=True)
class CovariateTable:
    """Ingested covariates with column roles; row order is preserved"""

    frame: pd.DataFrame
    continuous: List[str]
    binary: List[str] = field(default_factory=list)
    treatment: Optional[str] = None

    @property
    def n_rows(self) -> int:
        return int(len(self.frame))
