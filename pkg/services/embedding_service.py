"""
Conditional and marginal mean embeddings in the adjustment-kernel space.

An embedding is a weight vector over anchor adjustment points:
mu = sum_i w_i phi(s_i). Conditional weights come from kernel ridge regression
w(z) = (K_ZZ + lambda' I)^{-1} k_Z(z); marginal ones are uniform.
"""
from dataclasses import dataclass, replace
from enum import Enum
from typing import Optional

import numpy as np

from core.constants import CME_LAMBDA
from core.custom_typing import Matrix, Vector
from core.exceptions import DimensionMismatchError, KernelMismatchError, ZeroCountError
from core.logging import get_logger
from schemas.kernel_schemas import KernelSpec
from services.kernel_service import as_points, cross_gram, gram
from services.matrix_service import PsdFactor, jittered_cholesky, psd_solve

logger = get_logger(__name__)


class EmbeddingKind(str, Enum):
    CONDITIONAL = "conditional"
    MARGINAL_UNIFORM = "marginal_uniform"
    SHIFTED_UNIFORM = "shifted_uniform"


@dataclass(frozen=True)
class CmeOperatorFit:
    anchor_conditioning: Matrix
    anchor_adjustment: Matrix
    conditioning_kernel: KernelSpec
    adjustment_kernel: KernelSpec
    lam: float
    scale_lambda_by_n: bool
    factor: PsdFactor

    @property
    def n_anchors(self) -> int:
        return int(self.anchor_conditioning.shape[0])

    @property
    def effective_lambda(self) -> float:
        return self.lam * self.n_anchors if self.scale_lambda_by_n else self.lam


@dataclass(frozen=True)
class EmbeddingWeights:
    weights: Vector
    kind: EmbeddingKind
    anchors: Optional[Matrix] = None
    adjustment_kernel: Optional[KernelSpec] = None


def fit_cme(
    conditioning: np.ndarray,
    adjustment: np.ndarray,
    conditioning_kernel: KernelSpec,
    adjustment_kernel: KernelSpec,
    lam: float = CME_LAMBDA,
    scale_lambda_by_n: bool = True,
) -> CmeOperatorFit:
    """Factor ``K_ZZ + lambda' I`` over all paired (conditioning, adjustment) rows"""
    z = as_points(conditioning)
    s = as_points(adjustment)
    if z.shape[0] < 1:
        raise ZeroCountError("CME needs at least one anchor pair")
    if z.shape[0] != s.shape[0]:
        raise DimensionMismatchError(f"Anchor counts differ: {z.shape[0]} vs {s.shape[0]}")
    if lam <= 0.0:
        raise ValueError(f"CME regularizer must be positive, got {lam}")

    n = z.shape[0]
    effective = lam * n if scale_lambda_by_n else lam
    factor = jittered_cholesky(gram(conditioning_kernel, z) + effective * np.eye(n), base_jitter=0.0)
    logger.info("CME fitted", n_anchors=n, effective_lambda=effective, scale_lambda_by_n=scale_lambda_by_n)
    return CmeOperatorFit(
        anchor_conditioning=z,
        anchor_adjustment=s,
        conditioning_kernel=conditioning_kernel,
        adjustment_kernel=adjustment_kernel,
        lam=lam,
        scale_lambda_by_n=scale_lambda_by_n,
        factor=factor,
    )


def with_adjustment_kernel(fit: CmeOperatorFit, kernel: KernelSpec) -> CmeOperatorFit:
    """Swap the adjustment features; the conditioning factor is unaffected"""
    return replace(fit, adjustment_kernel=kernel)


def cme_weight_matrix(fit: CmeOperatorFit, queries: np.ndarray) -> Matrix:
    """Columns are the weight vectors w(z_q) for each query row"""
    q = as_points(queries)
    if q.shape[1] != fit.anchor_conditioning.shape[1]:
        raise DimensionMismatchError(
            f"Query dimension {q.shape[1]} does not match anchors {fit.anchor_conditioning.shape[1]}"
        )
    return psd_solve(fit.factor, cross_gram(fit.conditioning_kernel, fit.anchor_conditioning, q))


def cme_weights(fit: CmeOperatorFit, query: np.ndarray) -> EmbeddingWeights:
    q = np.atleast_1d(np.asarray(query, dtype=float))[None, :]
    return EmbeddingWeights(
        weights=cme_weight_matrix(fit, q)[:, 0],
        kind=EmbeddingKind.CONDITIONAL,
        anchors=fit.anchor_adjustment,
        adjustment_kernel=fit.adjustment_kernel,
    )


def uniform_weights(
    n: int,
    kind: EmbeddingKind = EmbeddingKind.MARGINAL_UNIFORM,
    anchors: Optional[np.ndarray] = None,
) -> EmbeddingWeights:
    if n < 1:
        raise ZeroCountError(f"Uniform embedding needs at least one anchor, got {n}")
    if anchors is not None and as_points(anchors).shape[0] != n:
        raise DimensionMismatchError(f"{n} weights but {as_points(anchors).shape[0]} anchors")
    return EmbeddingWeights(
        weights=np.full(n, 1.0 / n),
        kind=kind,
        anchors=None if anchors is None else as_points(anchors),
    )


def embedding_inner(w: EmbeddingWeights, w2: EmbeddingWeights, adjustment_kernel: KernelSpec) -> float:
    """<mu, mu2> = w^T K_{S S2} w2"""
    for side in (w, w2):
        if side.adjustment_kernel is not None and side.adjustment_kernel != adjustment_kernel:
            raise KernelMismatchError("Embedding was built for a different adjustment kernel")
    if w.anchors is None or w2.anchors is None:
        raise DimensionMismatchError("Both embeddings need anchor points for an inner product")
    return float(w.weights @ cross_gram(adjustment_kernel, w.anchors, w2.anchors) @ w2.weights)
