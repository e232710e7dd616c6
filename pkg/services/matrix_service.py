"""Dense positive-definite linear algebra: jittered Cholesky, solves, log-determinants."""
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg

from core.config import get_settings
from core.custom_typing import Matrix
from core.exceptions import (
    DimensionMismatchError,
    NonFiniteError,
    NotFactorizableError,
    NotSymmetricError,
)
from core.logging import get_logger

logger = get_logger(__name__)

SYMMETRY_TOLERANCE = 1e-12
LOG_2PI_E = np.log(2.0 * np.pi * np.e)


@dataclass(frozen=True)
class PsdFactor:
    """Lower Cholesky factor of ``A + jitter_used * I``"""

    lower_triangular: Matrix
    jitter_used: float

    @property
    def dimension(self) -> int:
        return int(self.lower_triangular.shape[0])

    def reconstruct(self) -> Matrix:
        return self.lower_triangular @ self.lower_triangular.T


def _jitter_ladder(base_jitter: float) -> list[float]:
    settings = get_settings()
    steps = range(settings.max_jitter_steps + 1)
    if base_jitter > 0.0:
        return [base_jitter * 10.0**k for k in steps]
    # a zero base still needs somewhere to escalate to
    return [0.0] + [settings.base_jitter * 10.0**k for k in steps]


def jittered_cholesky(matrix: Matrix, base_jitter: Optional[float] = None) -> PsdFactor:
    """
    Factor ``matrix + jitter * I`` with the smallest jitter on a x10 ladder
    that yields a valid factor.

    Raises:
        NotSymmetricError: if the input is not symmetric within 1e-12
        NotFactorizableError: if every rung of the ladder fails
    """
    a = np.asarray(matrix, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise DimensionMismatchError(f"Expected a square matrix, got shape {a.shape}", shape=a.shape)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError("Matrix contains non-finite entries")
    asymmetry = float(np.max(np.abs(a - a.T))) if a.size else 0.0
    if asymmetry > SYMMETRY_TOLERANCE:
        raise NotSymmetricError(f"Matrix is not symmetric (max |A - A^T| = {asymmetry:.3e})", asymmetry=asymmetry)

    if base_jitter is None:
        base_jitter = get_settings().base_jitter
    if base_jitter < 0.0:
        raise ValueError(f"base_jitter must be non-negative, got {base_jitter}")

    identity = np.eye(a.shape[0])
    ladder = _jitter_ladder(base_jitter)
    for step, jitter in enumerate(ladder):
        try:
            lower = scipy.linalg.cholesky(a + jitter * identity, lower=True, check_finite=False)
        except np.linalg.LinAlgError:
            continue
        diagonal = np.diag(lower)
        if np.all(np.isfinite(lower)) and np.all(diagonal > 0.0):
            if step > 0:
                logger.warning("Cholesky required jitter escalation", dimension=a.shape[0], jitter=jitter)
            return PsdFactor(lower_triangular=lower, jitter_used=float(jitter))

    raise NotFactorizableError(
        f"Matrix of dimension {a.shape[0]} is not factorizable up to jitter {ladder[-1]:.1e}",
        max_jitter=ladder[-1],
    )


def psd_solve(factor: PsdFactor, rhs: Matrix) -> Matrix:
    """Solve ``(A + jitter I) X = rhs`` with two triangular solves"""
    b = np.asarray(rhs, dtype=float)
    if b.shape[0] != factor.dimension:
        raise DimensionMismatchError(
            f"Right-hand side has {b.shape[0]} rows, factor has dimension {factor.dimension}",
            rows=b.shape[0],
            dimension=factor.dimension,
        )
    half = scipy.linalg.solve_triangular(factor.lower_triangular, b, lower=True, check_finite=False)
    return scipy.linalg.solve_triangular(factor.lower_triangular.T, half, lower=False, check_finite=False)


def half_solve(factor: PsdFactor, rhs: Matrix) -> Matrix:
    """``L^{-1} rhs``; ``half_solve(f, B).T @ half_solve(f, C) == B.T (A + jitter I)^{-1} C``"""
    b = np.asarray(rhs, dtype=float)
    if b.shape[0] != factor.dimension:
        raise DimensionMismatchError(
            f"Right-hand side has {b.shape[0]} rows, factor has dimension {factor.dimension}",
            rows=b.shape[0],
            dimension=factor.dimension,
        )
    return scipy.linalg.solve_triangular(factor.lower_triangular, b, lower=True, check_finite=False)


def psd_logdet(factor: PsdFactor) -> float:
    return float(2.0 * np.sum(np.log(np.diag(factor.lower_triangular))))


def gaussian_entropy(covariance_factor: PsdFactor) -> float:
    """Differential entropy ``0.5 * log|2 pi e Sigma|`` of a Gaussian"""
    m = covariance_factor.dimension
    return 0.5 * (m * LOG_2PI_E + psd_logdet(covariance_factor))


def symmetrize(matrix: Matrix) -> Matrix:
    return 0.5 * (matrix + matrix.T)
