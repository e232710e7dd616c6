from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, PositiveFloat, PositiveInt


class UtilityKind(str, Enum):
    IG = "ig"
    TVR = "tvr"


class SelectionRule(str, Enum):
    TOP_B = "top_b"
    GREEDY = "greedy"
    SOFTMAX = "softmax"


class BaselineKind(str, Enum):
    RANDOM = "random"
    POOL_VARIANCE = "pool_variance"
    MU_BALD = "mu_bald"
    CORESET = "coreset"


class UtilitySpec(BaseModel):
    """
    How a batch is scored and picked. ``softmax_temperature`` of None means
    the per-round default ``max(max score - median score, 1e-6)``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: UtilityKind = UtilityKind.TVR
    selection: SelectionRule = SelectionRule.TOP_B
    batch_size: PositiveInt = 5
    softmax_temperature: Optional[PositiveFloat] = None


class StrategySpec(BaseModel):
    """Parsed strategy name, e.g. ``tvr_cme_g`` or ``mu_bald``"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    name: str
    selection: SelectionRule = SelectionRule.TOP_B
    baseline: Optional[BaselineKind] = None
    utility: Optional[UtilityKind] = None
    source: Optional[str] = None  # "cme" | "mc"

    @property
    def is_baseline(self) -> bool:
        return self.baseline is not None

    def utility_spec(self, batch_size: int, softmax_temperature: Optional[float] = None) -> UtilitySpec:
        return UtilitySpec(
            kind=self.utility,
            selection=self.selection,
            batch_size=batch_size,
            softmax_temperature=softmax_temperature,
        )
