"""
Acquisition: score pool candidates by how much observing them would shrink
the CQ posterior, and pick batches.

Gaussian conditioning never looks at outcome values, so a candidate is
"fantasized" by the rank-1 update ``Q - c c^T / (v + noise)`` where ``c`` is
the posterior cross-covariance between the CQ and the candidate's latent
outcome and ``v`` the candidate's latent variance.
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from core.config import get_settings
from core.constants import BASE_STRATEGIES, GREEDY_SUFFIX, SOFTMAX_SUFFIX
from core.custom_typing import Matrix, RandomStream, Vector
from core.exceptions import NegativeVarianceError, PoolExhaustedError
from core.logging import get_logger
from models.dataset import Dataset
from schemas.acquisition_schemas import (
    BaselineKind,
    SelectionRule,
    StrategySpec,
    UtilityKind,
    UtilitySpec,
)
from services.estimator_service import CqContext, cross_covariance_with_pool
from services.gp_service import GpPosterior, posterior_covariance, predict
from services.matrix_service import half_solve, jittered_cholesky, psd_logdet, symmetrize

logger = get_logger(__name__)

TIE_TOLERANCE = 1e-12
MIN_SOFTMAX_TEMPERATURE = 1e-6


# ===== Strategy names =====


def parse_strategy(name: str) -> StrategySpec:
    """
    ``random``, ``pool_variance``, ``mu_bald``, ``coreset`` or
    ``{ig,tvr}_{cme,mc}`` with an optional ``_g`` (greedy) or ``_s`` (softmax).
    """
    base, selection = name, SelectionRule.TOP_B
    if name.endswith(GREEDY_SUFFIX):
        base, selection = name[: -len(GREEDY_SUFFIX)], SelectionRule.GREEDY
    elif name.endswith(SOFTMAX_SUFFIX):
        base, selection = name[: -len(SOFTMAX_SUFFIX)], SelectionRule.SOFTMAX

    if base not in BASE_STRATEGIES:
        raise ValueError(f"Unknown strategy '{name}'")
    if base in {kind.value for kind in BaselineKind}:
        if selection != SelectionRule.TOP_B:
            raise ValueError(f"Baseline strategy '{base}' takes no selection suffix")
        return StrategySpec(name=name, baseline=BaselineKind(base))

    utility, source = base.split("_")
    return StrategySpec(name=name, selection=selection, utility=UtilityKind(utility), source=source)


# ===== Fantasy state =====


@dataclass(frozen=True)
class FantasyState:
    """CQ covariance after conditioning on the candidates selected so far"""

    base_q: Matrix
    q: Matrix
    crosses: Tuple[Vector, ...] = field(default_factory=tuple)
    conditional_variances: Tuple[float, ...] = field(default_factory=tuple)

    @classmethod
    def start(cls, q: Matrix) -> "FantasyState":
        q = np.asarray(q, dtype=float)
        return cls(base_q=q, q=q)

    @property
    def n_selected(self) -> int:
        return len(self.crosses)


def fantasy_downdate(state: FantasyState, cross: Vector, variance: float, noise: float) -> FantasyState:
    denominator = float(variance) + float(noise)
    if denominator <= get_settings().base_jitter:
        raise NegativeVarianceError(
            f"Candidate predictive variance {denominator:.3e} is not positive", variance=variance, noise=noise
        )
    c = np.asarray(cross, dtype=float).reshape(-1)
    q = symmetrize(state.q - np.outer(c, c) / denominator)
    return FantasyState(
        base_q=state.base_q,
        q=q,
        crosses=state.crosses + (c,),
        conditional_variances=state.conditional_variances + (denominator,),
    )


def _ig_factor(q: Matrix):
    jitter = get_settings().ig_jitter
    return jittered_cholesky(symmetrize(q) + jitter * np.eye(q.shape[0]), base_jitter=0.0)


def utility(spec: UtilitySpec, state: FantasyState) -> float:
    """Negative log-det (IG) or negative trace (TVR) of the current CQ covariance"""
    if spec.kind == UtilityKind.TVR:
        return -float(np.trace(state.q))
    return -psd_logdet(_ig_factor(state.q))


def information_gain(before: FantasyState, after: FantasyState) -> float:
    """Mutual information between the CQ and the fantasized outcomes"""
    return 0.5 * (psd_logdet(_ig_factor(before.q)) - psd_logdet(_ig_factor(after.q)))


def singleton_scores(kind: UtilityKind, state: FantasyState, crosses: Matrix, denominators: Vector) -> Vector:
    """
    Utility of the state after conditioning on each candidate alone.

    ``crosses`` is (n_I, n_candidates), ``denominators`` are ``v + noise``.
    """
    if kind == UtilityKind.TVR:
        return -float(np.trace(state.q)) + np.sum(crosses**2, axis=0) / denominators
    factor = _ig_factor(state.q)
    explained = np.sum(half_solve(factor, crosses) ** 2, axis=0) / denominators
    remaining = np.clip(1.0 - explained, np.finfo(float).tiny, None)
    return -psd_logdet(factor) - np.log(remaining)


def _best_index(scores: Vector, available: np.ndarray) -> int:
    """Lowest available index among those within tolerance of the best score"""
    masked = np.where(available, scores, -np.inf)
    best = float(np.max(masked))
    tolerance = TIE_TOLERANCE * max(1.0, abs(best))
    return int(np.flatnonzero(available & (masked >= best - tolerance))[0])


def _top_indices(scores: Vector, count: int) -> List[int]:
    """The ``count`` largest scores, near-ties resolved like ``_best_index``"""
    available = np.ones(scores.shape[0], dtype=bool)
    selected = []
    for _ in range(count):
        pick = _best_index(scores, available)
        available[pick] = False
        selected.append(pick)
    return selected


def _softmax_indices(scores: Vector, count: int, temperature: Optional[float], rng: RandomStream) -> List[int]:
    if temperature is None:
        temperature = max(float(np.max(scores) - np.median(scores)), MIN_SOFTMAX_TEMPERATURE)
    # Gumbel top-k draws without replacement with probability proportional to exp(score / T)
    keys = (scores - np.max(scores)) / temperature + rng.gumbel(size=scores.shape[0])
    return _top_indices(keys, count)


def _check_pool(pool: Dataset, batch_size: int) -> None:
    if pool.n_rows < 1 or batch_size > pool.n_rows:
        raise PoolExhaustedError(
            f"Cannot select {batch_size} candidates from a pool of {pool.n_rows}",
            batch_size=batch_size,
            pool_size=pool.n_rows,
        )


# ===== Batch selection =====


def select_batch(
    spec: UtilitySpec, gp: GpPosterior, context: CqContext, pool: Dataset, rng: RandomStream
) -> List[int]:
    _check_pool(pool, spec.batch_size)
    noise = gp.model.noise_variance
    crosses = cross_covariance_with_pool(gp, context, pool)
    variances = np.clip(predict(gp, pool, with_covariance=False).covariance, 0.0, None)
    state = FantasyState.start(context.posterior.q)

    if spec.selection == SelectionRule.GREEDY:
        selected = _greedy(spec, gp, pool, state, crosses, variances)
    else:
        scores = singleton_scores(spec.kind, state, crosses, variances + noise)
        if spec.selection == SelectionRule.TOP_B:
            selected = _top_indices(scores, spec.batch_size)
        else:
            selected = _softmax_indices(scores, spec.batch_size, spec.softmax_temperature, rng)

    logger.debug("Batch selected", utility=spec.kind.value, selection=spec.selection.value, indices=selected)
    return selected


def _greedy(
    spec: UtilitySpec,
    gp: GpPosterior,
    pool: Dataset,
    state: FantasyState,
    crosses: Matrix,
    variances: Vector,
) -> List[int]:
    """
    Sequential argmax. After each pick the remaining candidates' cross vectors
    and latent variances are conditioned on it with the same rank-1 rule,
    using the pick's conditioned latent covariance column over the pool.
    """
    noise = gp.model.noise_variance
    crosses, variances = crosses.copy(), variances.copy()
    available = np.ones(pool.n_rows, dtype=bool)
    columns: List[Vector] = []
    denominators: List[float] = []
    selected: List[int] = []

    for _ in range(spec.batch_size):
        scores = singleton_scores(spec.kind, state, crosses, np.clip(variances, 0.0, None) + noise)
        pick = _best_index(scores, available)
        denominator = max(float(variances[pick]), 0.0) + noise

        column = posterior_covariance(gp, pool, pool.subset([pick]))[:, 0]
        for previous, previous_denominator in zip(columns, denominators):
            column = column - previous * previous[pick] / previous_denominator

        state = fantasy_downdate(state, crosses[:, pick], max(float(variances[pick]), 0.0), noise)
        crosses = crosses - np.outer(crosses[:, pick], column) / denominator
        variances = variances - column**2 / denominator

        columns.append(column)
        denominators.append(denominator)
        available[pick] = False
        selected.append(pick)
    return selected


# ===== Baselines =====


def baseline_scores(kind: BaselineKind, gp: GpPosterior, pool: Dataset) -> Vector:
    """Per-candidate scores for the score-based baselines (larger is better)"""
    noise = gp.model.noise_variance
    if kind == BaselineKind.MU_BALD:
        variances = np.clip(predict(gp, pool, with_covariance=False).covariance, 0.0, None)
        return 0.5 * np.log1p(variances / noise)
    if kind == BaselineKind.POOL_VARIANCE:
        covariance = symmetrize(posterior_covariance(gp, pool, pool))
        variances = np.clip(np.diag(covariance), 0.0, None)
        state = FantasyState.start(covariance)
        return singleton_scores(UtilityKind.TVR, state, covariance, variances + noise)
    raise ValueError(f"Baseline '{kind.value}' selects indices directly")


def _coreset(gp: GpPosterior, pool: Dataset, count: int) -> List[int]:
    covariance = symmetrize(posterior_covariance(gp, pool, pool))
    variances = np.clip(np.diag(covariance), np.finfo(float).tiny, None)
    scale = np.sqrt(variances)
    distance = 1.0 - covariance / np.outer(scale, scale)

    available = np.ones(pool.n_rows, dtype=bool)
    selected = [_best_index(variances, available)]
    available[selected[0]] = False
    nearest = distance[selected[0]].copy()
    while len(selected) < count:
        pick = _best_index(nearest, available)
        selected.append(pick)
        available[pick] = False
        nearest = np.minimum(nearest, distance[pick])
    return selected


def select_baseline(
    kind: BaselineKind, gp: GpPosterior, pool: Dataset, batch_size: int, rng: RandomStream
) -> List[int]:
    _check_pool(pool, batch_size)
    if kind == BaselineKind.RANDOM:
        return [int(i) for i in rng.choice(pool.n_rows, size=batch_size, replace=False)]
    if kind == BaselineKind.CORESET:
        return _coreset(gp, pool, batch_size)
    return _top_indices(baseline_scores(kind, gp, pool), batch_size)
