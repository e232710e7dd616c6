"""Random streams and scalar special functions used by the generators and kernels."""
import math
import warnings
from typing import Union

import numpy as np
import scipy.special
from scipy.spatial.distance import pdist

from core.constants import RNG_VERSION
from core.custom_typing import Matrix, RandomStream
from core.exceptions import DegeneratePointsError, DegeneratePointsWarning, InvalidScaleError, NonFiniteError
from core.logging import get_logger

logger = get_logger(__name__)

ArrayLike = Union[float, np.ndarray]


def make_rng(seed: int, *stream: int) -> RandomStream:
    """
    Counter-based random stream (Philox) keyed by ``seed`` and an optional
    stream path, so independent purposes never share draws.
    """
    sequence = np.random.SeedSequence([int(seed), *[int(s) for s in stream]])
    return np.random.Generator(np.random.Philox(sequence))


def rng_version() -> str:
    return RNG_VERSION


def standard_normal_cdf(x: float) -> float:
    if not math.isfinite(x):
        raise NonFiniteError(f"standard_normal_cdf requires a finite argument, got {x}")
    return float(scipy.special.ndtr(x))


def normal_cdf(x: np.ndarray) -> np.ndarray:
    """Vectorized ``standard_normal_cdf``"""
    values = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("normal_cdf requires finite arguments")
    return scipy.special.ndtr(values)


def sigmoid(x: ArrayLike) -> ArrayLike:
    return scipy.special.expit(x)


def skew_normal_sample(rng: RandomStream, xi: ArrayLike, omega: ArrayLike, alpha: ArrayLike) -> ArrayLike:
    """
    Draw from Skew(xi, omega, alpha) with the |U0| construction.

    Parameters broadcast against each other; one draw per broadcast element.
    """
    xi_arr, omega_arr, alpha_arr = np.broadcast_arrays(
        np.asarray(xi, dtype=float), np.asarray(omega, dtype=float), np.asarray(alpha, dtype=float)
    )
    if np.any(omega_arr <= 0.0):
        raise InvalidScaleError("Skew-normal scale omega must be positive")

    delta = alpha_arr / np.sqrt(1.0 + alpha_arr**2)
    u0 = rng.standard_normal(xi_arr.shape)
    u1 = rng.standard_normal(xi_arr.shape)
    draw = xi_arr + omega_arr * (delta * np.abs(u0) + np.sqrt(1.0 - delta**2) * u1)
    if draw.ndim == 0:
        return float(draw)
    return draw


def skew_normal_mean(xi: ArrayLike, omega: ArrayLike, alpha: ArrayLike) -> ArrayLike:
    delta = np.asarray(alpha) / np.sqrt(1.0 + np.asarray(alpha) ** 2)
    return xi + omega * delta * np.sqrt(2.0 / np.pi)


def _sorted_distances(points: Matrix) -> np.ndarray:
    x = np.asarray(points, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.shape[0] < 2:
        raise DegeneratePointsError(f"median_heuristic needs at least 2 points, got {x.shape[0]}")
    return np.sort(pdist(x))


def _lower_median(values: np.ndarray) -> float:
    return float(values[(values.size - 1) // 2])


def median_heuristic(points: Matrix) -> float:
    """
    Median of all pairwise Euclidean distances (lower median for even counts).

    Raises:
        DegeneratePointsError: fewer than two points

    All-identical points return 1.0 with a ``DegeneratePointsWarning``.
    """
    distances = _sorted_distances(points)
    if distances[-1] == 0.0:
        warnings.warn("All points identical; median heuristic falls back to 1.0", DegeneratePointsWarning)
        logger.warning("Degenerate points for median heuristic", n_points=int(distances.size))
        return 1.0
    return _lower_median(distances)


def positive_median_heuristic(points: Matrix) -> float:
    """
    ``median_heuristic`` for use as a lengthscale. When ties make the median
    zero (e.g. a binary column), the median over the non-zero distances is
    used instead.
    """
    median = median_heuristic(points)
    if median > 0.0:
        return median
    distances = _sorted_distances(points)
    positive = distances[distances > 0.0]
    fallback = _lower_median(positive)
    logger.warning(
        "Median pairwise distance is zero, using the non-zero median",
        n_pairs=int(distances.size),
        n_zero=int(distances.size - positive.size),
        fallback=fallback,
    )
    return fallback
