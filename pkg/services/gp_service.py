"""Gaussian-process outcome model: exact posterior, marginal likelihood and hyperparameter fitting."""
from dataclasses import dataclass
from typing import List, NamedTuple, Tuple

import numpy as np

from core.constants import GP_ITERATIONS, GP_LOG_LENGTHSCALE_BOUNDS, GP_LOG_NOISE_FLOOR, GP_STEP
from core.custom_typing import Matrix, Vector
from core.exceptions import ActiveCqError, EmptyTrainingError, NonFiniteGradientError
from core.logging import get_logger
from models.dataset import Dataset
from schemas.kernel_schemas import GpModel
from services.kernel_service import (
    KernelRows,
    block_grams,
    combine_blocks,
    lengthscale_gradient,
    product_gram,
    product_prior_variance,
)
from services.matrix_service import PsdFactor, half_solve, jittered_cholesky, psd_logdet, psd_solve, symmetrize

logger = get_logger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
_BLOCKS = ("treatment", "conditioning", "adjustment")


@dataclass(frozen=True)
class GpPosterior:
    """Fitted GP: factor of ``K + noise I`` and ``alpha = (K + noise I)^{-1} y``"""

    model: GpModel
    train: Dataset
    factor: PsdFactor
    alpha: Vector

    @property
    def n_train(self) -> int:
        return self.train.n_rows


class Prediction(NamedTuple):
    mean: Vector
    covariance: Matrix  # full matrix, or the diagonal when requested without covariance


def _training_factor(model: GpModel, train: Dataset) -> PsdFactor:
    if train.n_rows < 1:
        raise EmptyTrainingError("GP training set is empty")
    if train.y is None:
        raise EmptyTrainingError("GP training set has no outcomes")
    gram = product_gram(model.kernel, train, train)
    return jittered_cholesky(gram + model.noise_variance * np.eye(train.n_rows), base_jitter=0.0)


def fit(model: GpModel, train: Dataset) -> GpPosterior:
    factor = _training_factor(model, train)
    alpha = psd_solve(factor, train.y)
    return GpPosterior(model=model, train=train, factor=factor, alpha=alpha)


def refit_outcomes(posterior: GpPosterior, y: Vector) -> GpPosterior:
    """Same inputs and hyperparameters, new outcomes; the factor is reused"""
    return GpPosterior(
        model=posterior.model,
        train=posterior.train.with_outcomes(y),
        factor=posterior.factor,
        alpha=psd_solve(posterior.factor, np.asarray(y, dtype=float)),
    )


def predict(posterior: GpPosterior, query: KernelRows, with_covariance: bool = True) -> Prediction:
    """Posterior mean and latent (noise-free) covariance at ``query``"""
    kernel = posterior.model.kernel
    cross = product_gram(kernel, query, posterior.train)
    mean = cross @ posterior.alpha
    half = half_solve(posterior.factor, cross.T)
    if not with_covariance:
        variance = product_prior_variance(kernel) - np.sum(half**2, axis=0)
        return Prediction(mean=mean, covariance=variance)
    prior = product_gram(kernel, query, query)
    return Prediction(mean=mean, covariance=symmetrize(prior - half.T @ half))


def posterior_covariance(posterior: GpPosterior, rows: KernelRows, rows2: KernelRows) -> Matrix:
    """Latent posterior cross-covariance k_post(rows, rows2)"""
    kernel = posterior.model.kernel
    left = half_solve(posterior.factor, product_gram(kernel, posterior.train, rows))
    right = half_solve(posterior.factor, product_gram(kernel, posterior.train, rows2))
    return product_gram(kernel, rows, rows2) - left.T @ right


def marginal_log_likelihood(model: GpModel, train: Dataset) -> float:
    """Exact log p(y | X) = -y^T K^{-1} y / 2 - log|K| / 2 - n log(2 pi) / 2"""
    factor = _training_factor(model, train)
    alpha = psd_solve(factor, train.y)
    n = train.n_rows
    return float(-0.5 * train.y @ alpha - 0.5 * psd_logdet(factor) - 0.5 * n * LOG_2PI)


# ===== Hyperparameters in log space =====


def parameter_names(model: GpModel, optimize_output_scale: bool = True) -> List[str]:
    names = []
    for block in _BLOCKS:
        spec = getattr(model.kernel, block)
        if spec is not None and spec.has_lengthscale:
            names.append(f"{block}.lengthscale")
    if optimize_output_scale:
        names.append("output_scale")
    names.append("noise_variance")
    return names


def pack(model: GpModel, names: List[str]) -> Vector:
    values = []
    for name in names:
        if name == "noise_variance":
            values.append(model.noise_variance)
        elif name == "output_scale":
            values.append(model.kernel.output_scale)
        else:
            values.append(getattr(model.kernel, name.split(".")[0]).lengthscale)
    return np.log(np.asarray(values, dtype=float))


def unpack(model: GpModel, names: List[str], theta: Vector) -> GpModel:
    kernel_update = {}
    noise = model.noise_variance
    for name, value in zip(names, np.exp(theta)):
        if name == "noise_variance":
            noise = float(value)
        elif name == "output_scale":
            kernel_update["output_scale"] = float(value)
        else:
            block = name.split(".")[0]
            kernel_update[block] = getattr(model.kernel, block).model_copy(update={"lengthscale": float(value)})
    kernel = model.kernel.model_copy(update=kernel_update)
    return model.model_copy(update={"kernel": kernel, "noise_variance": noise})


def mll_gradient(model: GpModel, train: Dataset, optimize_output_scale: bool = True) -> Tuple[float, Vector]:
    """
    MLL and its gradient with respect to ``pack(model, parameter_names(model))``.

    Uses d MLL / d theta = tr((alpha alpha^T - K^{-1}) dK / d theta) / 2.
    """
    names = parameter_names(model, optimize_output_scale)
    kernel = model.kernel
    blocks = block_grams(kernel, train, train)
    gram = combine_blocks(kernel, blocks)
    n = train.n_rows
    factor = jittered_cholesky(gram + model.noise_variance * np.eye(n), base_jitter=0.0)
    alpha = psd_solve(factor, train.y)
    value = float(-0.5 * train.y @ alpha - 0.5 * psd_logdet(factor) - 0.5 * n * LOG_2PI)

    inner = np.outer(alpha, alpha) - psd_solve(factor, np.eye(n))
    gradient = np.empty(len(names))
    for i, name in enumerate(names):
        if name == "noise_variance":
            gradient[i] = 0.5 * model.noise_variance * np.trace(inner)
        elif name == "output_scale":
            gradient[i] = 0.5 * np.sum(inner * gram)
        else:
            block = name.split(".")[0]
            spec = getattr(kernel, block)
            derived = dict(blocks)
            derived[block] = lengthscale_gradient(spec, _block_inputs(train, block))
            gradient[i] = 0.5 * np.sum(inner * combine_blocks(kernel, derived))
    return value, gradient


def _block_inputs(train: Dataset, block: str) -> Matrix:
    if block == "treatment":
        return train.treatment_matrix
    if block == "conditioning":
        return train.z
    return train.s


def _clip(names: List[str], theta: Vector) -> Vector:
    low, high = GP_LOG_LENGTHSCALE_BOUNDS
    clipped = theta.copy()
    for i, name in enumerate(names):
        if name.endswith("lengthscale"):
            clipped[i] = np.clip(clipped[i], low, high)
        elif name == "noise_variance":
            clipped[i] = max(clipped[i], GP_LOG_NOISE_FLOOR)
    return clipped


def optimize_hyperparameters(
    model: GpModel,
    train: Dataset,
    iterations: int = GP_ITERATIONS,
    step: float = GP_STEP,
    optimize_output_scale: bool = True,
) -> GpModel:
    """
    Gradient ascent on the exact MLL over log-lengthscales, log output scale and
    log noise. Each coordinate moves at most ``step`` per iteration; the best
    model seen (by MLL) is returned, so the result never scores below the input.
    """
    if iterations < 0:
        raise ValueError(f"iterations must be non-negative, got {iterations}")
    if iterations == 0:
        return model

    names = parameter_names(model, optimize_output_scale)
    theta = pack(model, names)
    best_model, best_value = model, -np.inf
    initial_value = None

    current = model
    for iteration in range(iterations + 1):
        try:
            value, gradient = mll_gradient(current, train, optimize_output_scale)
            if not (np.isfinite(value) and np.all(np.isfinite(gradient))):
                raise NonFiniteGradientError("Non-finite MLL or gradient", iteration=iteration)
        except ActiveCqError as error:
            logger.warning("Hyperparameter optimization stopped early", iteration=iteration, error=str(error))
            break

        if initial_value is None:
            initial_value = value
        if value > best_value:
            best_model, best_value = current, value
        if iteration == iterations:
            break

        scale = max(1.0, float(np.max(np.abs(gradient))))
        theta = _clip(names, theta + step * gradient / scale)
        current = unpack(model, names, theta)

    logger.info(
        "Hyperparameters optimized",
        iterations=iterations,
        initial_mll=initial_value,
        best_mll=best_value,
        noise_variance=best_model.noise_variance,
    )
    return best_model
