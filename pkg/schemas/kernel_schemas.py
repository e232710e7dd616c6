from enum import Enum
from typing import Optional

from pydantic import BaseModel, ConfigDict, PositiveFloat


class KernelFamily(str, Enum):
    RBF = "rbf"
    MATERN52 = "matern52"
    RATIONAL_QUADRATIC = "rational_quadratic"
    DELTA = "delta"


class KernelSpec(BaseModel):
    """Stationary kernel on one input block; ``lengthscale`` is unused for Delta"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    family: KernelFamily = KernelFamily.RBF
    lengthscale: PositiveFloat = 1.0
    variance: PositiveFloat = 1.0
    rq_alpha: PositiveFloat = 1.0

    @property
    def has_lengthscale(self) -> bool:
        return self.family != KernelFamily.DELTA


class ProductKernelSpec(BaseModel):
    """k = output_scale * k_treatment * k_conditioning * k_adjustment on matched rows"""

    model_config = ConfigDict(frozen=True, extra="forbid")

    treatment: KernelSpec
    conditioning: Optional[KernelSpec] = None
    adjustment: KernelSpec
    output_scale: PositiveFloat = 1.0


class GpModel(BaseModel):
    """
    Outcome model y = f(a, z, s) + eps, eps ~ N(0, noise_variance).

    ``noise_variance`` doubles as the regularizer lambda_f of the effective-input
    posteriors.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kernel: ProductKernelSpec
    noise_variance: PositiveFloat = 0.1
