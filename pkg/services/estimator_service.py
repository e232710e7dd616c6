"""
Posterior of a causal quantity over an interest set.

Each interest point is turned into an *effective input*: treatment (and, for
CATE, conditioning) features combined with an embedding of the adjustment
distribution, represented as weights over anchor adjustment points. The CQ
estimator is then GP prediction at effective inputs:

    nu   = k_{xbar X_T} (K + noise I)^{-1} y_T
    Q    = k_{xbar xbar'} - k_{xbar X_T} (K + noise I)^{-1} k_{X_T xbar'}

with k_{xbar X_T} = k_a * k_z * (w^T K_{S S_T}) and
k_{xbar xbar'} = k_a * k_z * (w^T K_{S S} w'). The Monte-Carlo source uses
per-point sample blocks with uniform weights in place of CME weights.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from core.constants import CME_SMOOTHING_FRACTION
from core.custom_typing import Matrix, RandomStream, Vector
from core.exceptions import (
    EmptyAnchorsError,
    InconsistentKindError,
    MissingBlockError,
    MissingContextError,
    SamplerUnavailableError,
)
from core.logging import get_logger
from models.dataset import Dataset
from schemas.experiment_schemas import CqKind
from schemas.kernel_schemas import KernelSpec, ProductKernelSpec
from services.embedding_service import CmeOperatorFit, EmbeddingWeights, cme_weight_matrix
from services.gp_service import GpPosterior
from services.kernel_service import KernelRows, as_points, cross_gram, gram, product_gram
from services.matrix_service import half_solve, symmetrize
from services.stats_service import positive_median_heuristic

logger = get_logger(__name__)


class CqSource(str, Enum):
    CME_CLOSED_FORM = "cme"
    MC_SAMPLING = "mc"


@dataclass(frozen=True)
class InterestSet:
    """CATE: (a_i, z_i); ATE/ATEDS: (a_i); ATT: (a_i, a_prior_i)"""

    kind: CqKind
    a: Vector
    z: Optional[Matrix] = None
    a_prior: Optional[Vector] = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "a", np.asarray(self.a, dtype=float).reshape(-1))
        if self.z is not None:
            object.__setattr__(self, "z", as_points(self.z))
        if self.a_prior is not None:
            object.__setattr__(self, "a_prior", np.asarray(self.a_prior, dtype=float).reshape(-1))

        if self.a.size < 1:
            raise InconsistentKindError("Interest set must contain at least one point")
        if (self.z is not None) != (self.kind == CqKind.CATE):
            raise InconsistentKindError(f"Only CATE interest points carry z, got kind {self.kind.value}")
        if (self.a_prior is not None) != (self.kind == CqKind.ATT):
            raise InconsistentKindError(f"Only ATT interest points carry a prior treatment, got kind {self.kind.value}")
        for name in ("z", "a_prior"):
            column = getattr(self, name)
            if column is not None and column.shape[0] != self.a.size:
                raise InconsistentKindError(
                    f"Interest column '{name}' has {column.shape[0]} rows, expected {self.a.size}"
                )

    @property
    def n_points(self) -> int:
        return int(self.a.size)

    @property
    def treatment_matrix(self) -> Matrix:
        return self.a[:, None]


@dataclass(frozen=True)
class EmbeddingContext:
    """
    ``cme`` supplies conditional weights (CATE: fitted on (Z, S); ATT: on (a, S)).
    ``marginal`` supplies one weight vector shared by every interest point
    (ATE: uniform over S of the full data; ATEDS: uniform over target samples).
    """

    cme: Optional[CmeOperatorFit] = None
    marginal: Optional[EmbeddingWeights] = None


@dataclass(frozen=True)
class EffectiveInputs:
    interest: InterestSet
    anchors: Matrix
    weights: Matrix  # (n_anchors, n_I)
    source: CqSource
    block_size: Optional[int] = None  # MC anchors: n_I consecutive blocks of this size


@dataclass(frozen=True)
class CqPosterior:
    nu: Vector
    q: Matrix
    source: CqSource


@dataclass(frozen=True)
class CqContext:
    """Posterior plus the cached half-solve ``L^{-1} k_{X_T xbar}`` reused by acquisition"""

    effective: EffectiveInputs
    posterior: CqPosterior
    half_interest: Matrix


# ===== Effective inputs =====


def effective_inputs_cme(interest: InterestSet, embeddings: EmbeddingContext) -> EffectiveInputs:
    if interest.kind in (CqKind.CATE, CqKind.ATT) and embeddings.cme is not None:
        query = interest.z if interest.kind == CqKind.CATE else interest.a_prior[:, None]
        weights = cme_weight_matrix(embeddings.cme, query)
        anchors = embeddings.cme.anchor_adjustment
    elif embeddings.marginal is not None and embeddings.marginal.anchors is not None:
        weights = np.tile(embeddings.marginal.weights[:, None], (1, interest.n_points))
        anchors = embeddings.marginal.anchors
    else:
        raise MissingContextError(f"No embedding available for {interest.kind.value}", kind=interest.kind.value)
    return EffectiveInputs(interest=interest, anchors=anchors, weights=weights, source=CqSource.CME_CLOSED_FORM)


@dataclass(frozen=True)
class ConditionalSampler:
    """
    Kernel-weighted resampler for P(s | conditioning): pick anchor i with
    probability proportional to k(query, c_i), return s_i + N(0, h^2 I).
    Without conditioning anchors it resamples the marginal of s.
    """

    adjustment: Matrix
    smoothing: float
    conditioning: Optional[Matrix] = None
    kernel: Optional[KernelSpec] = None

    @property
    def is_conditional(self) -> bool:
        return self.conditioning is not None

    def sample(self, query: Optional[np.ndarray], n: int, rng: RandomStream) -> Matrix:
        n_anchors = self.adjustment.shape[0]
        probabilities = None
        if self.is_conditional:
            q = np.atleast_1d(np.asarray(query, dtype=float))[None, :]
            weights = cross_gram(self.kernel, q, self.conditioning)[0]
            total = float(np.sum(weights))
            if np.isfinite(total) and total > 0.0:
                probabilities = weights / total
            else:
                logger.debug("Sampler query outside anchor support, drawing uniformly")
        index = rng.choice(n_anchors, size=n, p=probabilities)
        noise = rng.standard_normal((n, self.adjustment.shape[1]))
        return self.adjustment[index] + self.smoothing * noise


def fit_conditional_sampler(
    conditioning: Optional[np.ndarray],
    adjustment: np.ndarray,
    bandwidth: float = 1.0,
    smoothing: Optional[float] = None,
) -> ConditionalSampler:
    s = as_points(adjustment)
    if s.shape[0] < 1:
        raise EmptyAnchorsError("Conditional sampler needs at least one anchor")
    if smoothing is None:
        spread = positive_median_heuristic(s) if s.shape[0] >= 2 else 1.0
        smoothing = CME_SMOOTHING_FRACTION * spread
    if conditioning is None:
        return ConditionalSampler(adjustment=s, smoothing=smoothing)
    return ConditionalSampler(
        adjustment=s,
        smoothing=smoothing,
        conditioning=as_points(conditioning),
        kernel=KernelSpec(lengthscale=bandwidth),
    )


def effective_inputs_mc(
    interest: InterestSet, sampler: ConditionalSampler, n_s: int, rng: RandomStream
) -> EffectiveInputs:
    if n_s < 1:
        raise ValueError(f"n_s must be positive, got {n_s}")
    needs_conditional = interest.kind in (CqKind.CATE, CqKind.ATT)
    if needs_conditional != sampler.is_conditional:
        raise SamplerUnavailableError(
            f"{interest.kind.value} needs a {'conditional' if needs_conditional else 'marginal'} sampler"
        )

    blocks = []
    for i in range(interest.n_points):
        if interest.kind == CqKind.CATE:
            query = interest.z[i]
        elif interest.kind == CqKind.ATT:
            query = interest.a_prior[i : i + 1]
        else:
            query = None
        blocks.append(sampler.sample(query, n_s, rng))

    weights = np.kron(np.eye(interest.n_points), np.full((n_s, 1), 1.0 / n_s))
    return EffectiveInputs(
        interest=interest,
        anchors=np.vstack(blocks),
        weights=weights,
        source=CqSource.MC_SAMPLING,
        block_size=n_s,
    )


# ===== Kernel terms on effective inputs =====


def _outer_factors(kernel: ProductKernelSpec, interest: InterestSet, rows: KernelRows) -> Matrix:
    factors = cross_gram(kernel.treatment, interest.treatment_matrix, rows.treatment_matrix)
    if kernel.conditioning is not None:
        if interest.z is None or rows.z is None:
            raise MissingBlockError("Kernel has a conditioning block but inputs carry no z", block="conditioning")
        factors = factors * cross_gram(kernel.conditioning, interest.z, rows.z)
    return factors


def effective_cross(kernel: ProductKernelSpec, effective: EffectiveInputs, rows: KernelRows) -> Matrix:
    """Prior covariance between effective inputs and raw rows, shape (n_I, n_rows)"""
    embedded = effective.weights.T @ cross_gram(kernel.adjustment, effective.anchors, rows.s)
    return _outer_factors(kernel, effective.interest, rows) * embedded * kernel.output_scale


def _embedded_gram(kernel: KernelSpec, effective: EffectiveInputs) -> Matrix:
    if effective.block_size is None:
        return effective.weights.T @ gram(kernel, effective.anchors) @ effective.weights
    n_i, size = effective.interest.n_points, effective.block_size
    blocks = [effective.anchors[i * size : (i + 1) * size] for i in range(n_i)]
    embedded = np.empty((n_i, n_i))
    for i in range(n_i):
        for j in range(i, n_i):
            embedded[i, j] = embedded[j, i] = float(np.mean(cross_gram(kernel, blocks[i], blocks[j])))
    return embedded


def effective_gram(kernel: ProductKernelSpec, effective: EffectiveInputs) -> Matrix:
    interest = effective.interest
    factors = cross_gram(kernel.treatment, interest.treatment_matrix, interest.treatment_matrix)
    if kernel.conditioning is not None:
        if interest.z is None:
            raise MissingBlockError("Kernel has a conditioning block but interest points carry no z")
        factors = factors * cross_gram(kernel.conditioning, interest.z, interest.z)
    return factors * _embedded_gram(kernel.adjustment, effective) * kernel.output_scale


# ===== Posteriors =====


def build_cq_context(gp: GpPosterior, effective: EffectiveInputs) -> CqContext:
    kernel = gp.model.kernel
    cross_train = effective_cross(kernel, effective, gp.train)
    nu = cross_train @ gp.alpha
    half = half_solve(gp.factor, cross_train.T)
    q = symmetrize(effective_gram(kernel, effective) - half.T @ half)
    posterior = CqPosterior(nu=nu, q=q, source=effective.source)
    return CqContext(effective=effective, posterior=posterior, half_interest=half)


def cq_posterior(gp: GpPosterior, effective: EffectiveInputs) -> CqPosterior:
    return build_cq_context(gp, effective).posterior


def cq_posterior_cme(gp: GpPosterior, interest: InterestSet, embeddings: EmbeddingContext) -> CqPosterior:
    return cq_posterior(gp, effective_inputs_cme(interest, embeddings))


def cq_posterior_mc(
    gp: GpPosterior, interest: InterestSet, sampler: ConditionalSampler, n_s: int, rng: RandomStream
) -> CqPosterior:
    return cq_posterior(gp, effective_inputs_mc(interest, sampler, n_s, rng))


def cross_covariance_with_pool(gp: GpPosterior, context: CqContext, pool: Dataset) -> Matrix:
    """
    Posterior covariance between the CQ at each interest point and the latent
    outcome at each pool row, shape (n_I, n_pool).
    """
    kernel = gp.model.kernel
    prior = effective_cross(kernel, context.effective, pool)
    half_pool = half_solve(gp.factor, product_gram(kernel, gp.train, pool))
    return prior - context.half_interest.T @ half_pool
