"""Kernel families, Gram matrices and the treatment x conditioning x adjustment product kernel."""
from typing import Optional, Protocol

import numpy as np
from scipy.spatial.distance import cdist, pdist, squareform

from core.custom_typing import Matrix, Vector
from core.exceptions import DimensionMismatchError, MissingBlockError
from schemas.kernel_schemas import KernelFamily, KernelSpec, ProductKernelSpec

SQRT5 = np.sqrt(5.0)


class KernelRows(Protocol):
    """Anything exposing the three input blocks, e.g. ``models.dataset.Dataset``"""

    @property
    def treatment_matrix(self) -> Optional[Matrix]: ...

    @property
    def z(self) -> Optional[Matrix]: ...

    @property
    def s(self) -> Matrix: ...


def as_points(x: np.ndarray) -> Matrix:
    points = np.asarray(x, dtype=float)
    if points.ndim == 0:
        return points.reshape(1, 1)
    if points.ndim == 1:
        return points[:, None]
    return points


def _check_dims(X: Matrix, X2: Matrix) -> None:
    if X.shape[1] != X2.shape[1]:
        raise DimensionMismatchError(
            f"Input dimensions differ: {X.shape[1]} vs {X2.shape[1]}", d1=X.shape[1], d2=X2.shape[1]
        )


def _from_sqdist(spec: KernelSpec, sqdist: Matrix) -> Matrix:
    ell = spec.lengthscale
    if spec.family == KernelFamily.RBF:
        return spec.variance * np.exp(-0.5 * sqdist / ell**2)
    if spec.family == KernelFamily.MATERN52:
        u = SQRT5 * np.sqrt(sqdist) / ell
        return spec.variance * (1.0 + u + u**2 / 3.0) * np.exp(-u)
    if spec.family == KernelFamily.RATIONAL_QUADRATIC:
        return spec.variance * (1.0 + sqdist / (2.0 * spec.rq_alpha * ell**2)) ** (-spec.rq_alpha)
    raise ValueError(f"Unsupported distance-based family {spec.family}")


def _delta(spec: KernelSpec, X: Matrix, X2: Matrix) -> Matrix:
    equal = np.all(X[:, None, :] == X2[None, :, :], axis=2)
    return spec.variance * equal.astype(float)


def cross_gram(spec: KernelSpec, X: np.ndarray, X2: np.ndarray) -> Matrix:
    X, X2 = as_points(X), as_points(X2)
    _check_dims(X, X2)
    if spec.family == KernelFamily.DELTA:
        return _delta(spec, X, X2)
    return _from_sqdist(spec, cdist(X, X2, "sqeuclidean"))


def gram(spec: KernelSpec, X: np.ndarray) -> Matrix:
    X = as_points(X)
    if spec.family == KernelFamily.DELTA:
        return _delta(spec, X, X)
    return _from_sqdist(spec, squareform(pdist(X, "sqeuclidean")))


def kernel_eval(spec: KernelSpec, x: np.ndarray, x2: np.ndarray) -> float:
    x, x2 = np.atleast_1d(np.asarray(x, dtype=float)), np.atleast_1d(np.asarray(x2, dtype=float))
    if x.shape != x2.shape:
        raise DimensionMismatchError(f"Input dimensions differ: {x.shape} vs {x2.shape}")
    return float(cross_gram(spec, x[None, :], x2[None, :])[0, 0])


def lengthscale_gradient(spec: KernelSpec, X: np.ndarray, X2: Optional[np.ndarray] = None) -> Matrix:
    """Derivative of the Gram matrix with respect to ``log(lengthscale)``"""
    X = as_points(X)
    X2 = X if X2 is None else as_points(X2)
    _check_dims(X, X2)
    if spec.family == KernelFamily.DELTA:
        return np.zeros((X.shape[0], X2.shape[0]))

    sqdist = cdist(X, X2, "sqeuclidean")
    ell = spec.lengthscale
    if spec.family == KernelFamily.RBF:
        return _from_sqdist(spec, sqdist) * sqdist / ell**2
    if spec.family == KernelFamily.MATERN52:
        u = SQRT5 * np.sqrt(sqdist) / ell
        return spec.variance * np.exp(-u) * u**2 * (1.0 + u) / 3.0
    alpha = spec.rq_alpha
    b = sqdist / (2.0 * alpha * ell**2)
    return spec.variance * 2.0 * alpha * b * (1.0 + b) ** (-alpha - 1.0)


def _block(rows: KernelRows, name: str) -> Matrix:
    values = rows.treatment_matrix if name == "treatment" else getattr(rows, name)
    if values is None:
        raise MissingBlockError(f"Rows do not provide the '{name}' block required by the kernel", block=name)
    return values


def block_grams(spec: ProductKernelSpec, rows: KernelRows, rows2: KernelRows) -> dict[str, Matrix]:
    """Per-block cross-grams keyed by ``treatment``/``conditioning``/``adjustment``"""
    blocks = {
        "treatment": cross_gram(spec.treatment, _block(rows, "treatment"), _block(rows2, "treatment")),
        "adjustment": cross_gram(spec.adjustment, _block(rows, "s"), _block(rows2, "s")),
    }
    if spec.conditioning is not None:
        blocks["conditioning"] = cross_gram(spec.conditioning, _block(rows, "z"), _block(rows2, "z"))
    return blocks


def combine_blocks(spec: ProductKernelSpec, blocks: dict[str, Matrix]) -> Matrix:
    product = blocks["treatment"]
    if "conditioning" in blocks:
        product = product * blocks["conditioning"]
    product = product * blocks["adjustment"]
    return product * spec.output_scale


def product_gram(spec: ProductKernelSpec, rows: KernelRows, rows2: KernelRows) -> Matrix:
    """Hadamard product of per-block cross-grams times the global output scale"""
    return combine_blocks(spec, block_grams(spec, rows, rows2))


def product_prior_variance(spec: ProductKernelSpec) -> float:
    """k(x, x) of the product kernel (constant for stationary blocks)"""
    variance = spec.output_scale * spec.treatment.variance * spec.adjustment.variance
    if spec.conditioning is not None:
        variance *= spec.conditioning.variance
    return float(variance)


def product_diag(spec: ProductKernelSpec, rows: KernelRows) -> Vector:
    return np.full(rows.s.shape[0], product_prior_variance(spec))
