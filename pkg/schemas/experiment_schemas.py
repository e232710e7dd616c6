from enum import Enum
from typing import List, Literal, Optional

from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    NonNegativeFloat,
    NonNegativeInt,
    PositiveFloat,
    PositiveInt,
    field_validator,
)

from core.constants import MAX_INTEREST_POINTS, OUTCOME_NOISE_SD, SPEC_VERSION
from models.dataset import TreatmentMode
from schemas.kernel_schemas import KernelFamily, KernelSpec


class CqKind(str, Enum):
    CATE = "cate"
    ATE = "ate"
    ATT = "att"
    ATEDS = "ateds"


class GeneratorName(str, Enum):
    VISUALIZATION = "visualization"
    SIMULATION = "simulation"
    SHIFT_TARGET = "shift_target"
    SEMISYNTHETIC = "semisynthetic"


class TreatmentChoice(str, Enum):
    FIXED_TREATMENT = "fixed_treatment"
    ALL_TREATMENTS = "all_treatments"


class ConditioningChoice(str, Enum):
    FIXED_Z = "fixed_z"
    RANDOM_Z = "random_z"


class _Config(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# Generator Schemas
class GeneratorConfig(_Config):
    """
    Data-generating process. ``seed`` of None means "use the trial seed", so
    every trial draws its own dataset.
    """

    generator: GeneratorName
    n: PositiveInt = 500
    treatment_mode: TreatmentMode = TreatmentMode.CONTINUOUS
    seed: Optional[int] = None
    noise_sd: NonNegativeFloat = OUTCOME_NOISE_SD
    covariates_path: Optional[str] = None
    target_n: PositiveInt = 500  # shifted target samples for ATEDS

    def with_seed(self, seed: int) -> "GeneratorConfig":
        return self if self.seed is not None else self.model_copy(update={"seed": seed})


# Model Schemas
class GpConfig(_Config):
    """
    Initial kernels per input block. A full ``*_kernel`` entry is used as
    given; otherwise the block gets its ``*_family`` with a median-heuristic
    lengthscale.
    """

    treatment_family: Optional[KernelFamily] = None  # None: delta for binary treatments, rbf otherwise
    conditioning_family: KernelFamily = KernelFamily.RBF
    adjustment_family: KernelFamily = KernelFamily.RBF
    treatment_kernel: Optional[KernelSpec] = None
    conditioning_kernel: Optional[KernelSpec] = None
    adjustment_kernel: Optional[KernelSpec] = None
    noise_variance: PositiveFloat = 0.1
    iterations: NonNegativeInt = 500
    refit_iterations: NonNegativeInt = 100  # later rounds start from the previous optimum
    step: PositiveFloat = 0.05
    optimize_output_scale: bool = True
    freeze_after_warm_start: bool = False


class CmeConfig(_Config):
    lam: PositiveFloat = 0.01
    scale_lambda_by_n: bool = True
    conditioning_lengthscale: Optional[PositiveFloat] = None  # None: median heuristic


class McConfig(_Config):
    n_s: PositiveInt = 50
    bandwidth: Optional[PositiveFloat] = None  # None: median heuristic of the conditioning values
    smoothing: Optional[PositiveFloat] = None


class InterestConfig(_Config):
    treatment: TreatmentChoice = TreatmentChoice.ALL_TREATMENTS
    conditioning: ConditioningChoice = ConditioningChoice.FIXED_Z
    n_points: PositiveInt = 10
    fixed_treatment: Optional[float] = None
    z_star: Optional[float] = None
    max_points: PositiveInt = MAX_INTEREST_POINTS


# Experiment Schemas
class ExperimentConfig(_Config):
    cq_kind: CqKind
    generator: GeneratorConfig
    warm_start: PositiveInt = 20
    batch_size: PositiveInt = 5
    budget: NonNegativeInt = 180
    interest: InterestConfig = Field(default_factory=InterestConfig)
    gp: GpConfig = Field(default_factory=GpConfig)
    cme: CmeConfig = Field(default_factory=CmeConfig)
    mc: McConfig = Field(default_factory=McConfig)
    softmax_temperature: Optional[PositiveFloat] = None
    oracle_mc_n: Optional[PositiveInt] = None
    record_wall_time: bool = False

    @field_validator("generator", mode="before")
    @classmethod
    def generator_shorthand(cls, value):
        if isinstance(value, str):
            return {"generator": value}
        return value

    @property
    def n_rounds(self) -> int:
        return self.budget // self.batch_size


class TrialConfig(ExperimentConfig):
    strategy: str


class RunConfig(ExperimentConfig):
    spec_version: Literal[1] = SPEC_VERSION
    strategies: List[str] = Field(default_factory=lambda: ["random", "tvr_cme_g"])
    seeds: List[int] = Field(default_factory=lambda: list(range(20)))
    out: Optional[str] = None

    def trial(self, strategy: str) -> TrialConfig:
        shared = self.model_dump(exclude={"spec_version", "strategies", "seeds", "out"})
        return TrialConfig(strategy=strategy, **shared)


# Result Schemas
class RoundRecord(_Config):
    round: NonNegativeInt
    labeled: PositiveInt
    amse: NonNegativeFloat
    trace_q: float
    logdet_q: float
    wall_time_s: NonNegativeFloat = 0.0
    selected: List[int] = Field(default_factory=list)
