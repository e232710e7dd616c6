import math

import numpy as np
import pytest

from core.exceptions import NegativeVarianceError, PoolExhaustedError
from models.dataset import Dataset
from schemas.acquisition_schemas import BaselineKind, SelectionRule, UtilityKind, UtilitySpec
from schemas.experiment_schemas import CqKind
from schemas.kernel_schemas import GpModel, KernelSpec, ProductKernelSpec
from services.acquisition_service import (
    FantasyState,
    baseline_scores,
    fantasy_downdate,
    information_gain,
    parse_strategy,
    select_baseline,
    select_batch,
    singleton_scores,
    utility,
)
from services.embedding_service import fit_cme
from services.estimator_service import (
    EmbeddingContext,
    InterestSet,
    build_cq_context,
    cross_covariance_with_pool,
    effective_inputs_cme,
)
from services.gp_service import fit, posterior_covariance, predict
from services.stats_service import make_rng

UNIT_MODEL = GpModel(kernel=ProductKernelSpec(treatment=KernelSpec(), adjustment=KernelSpec()), noise_variance=0.1)
TVR = UtilitySpec(kind=UtilityKind.TVR)
IG = UtilitySpec(kind=UtilityKind.IG)


def _append(train: Dataset, pool: Dataset, picks) -> Dataset:
    """Training rows plus pool rows with arbitrary outcomes"""
    added = pool.subset(picks)
    return Dataset(
        s=np.vstack([train.s, added.s]),
        a=np.concatenate([train.a, added.a]),
        z=np.vstack([train.z, added.z]),
        y=np.concatenate([train.y, np.zeros(added.n_rows)]),
    )


def _pool_terms(gp, context, pool):
    crosses = cross_covariance_with_pool(gp, context, pool)
    variances = np.clip(predict(gp, pool, with_covariance=False).covariance, 0.0, None)
    return crosses, variances


# ===== Strategy names =====


def test_parse_strategy():
    spec = parse_strategy("tvr_cme_g")
    assert (spec.utility, spec.source, spec.selection) == (UtilityKind.TVR, "cme", SelectionRule.GREEDY)
    spec = parse_strategy("ig_mc_s")
    assert (spec.utility, spec.source, spec.selection) == (UtilityKind.IG, "mc", SelectionRule.SOFTMAX)
    assert parse_strategy("ig_cme").selection == SelectionRule.TOP_B
    assert parse_strategy("mu_bald").baseline == BaselineKind.MU_BALD
    assert parse_strategy("coreset").is_baseline


@pytest.mark.parametrize("name", ["foo", "tvr", "random_g", "tvr_cme_x", ""])
def test_parse_strategy_rejects(name):
    with pytest.raises(ValueError):
        parse_strategy(name)


# ===== Fantasy conditioning =====


def test_downdate_with_zero_cross_keeps_q():
    q = np.array([[2.0, 0.3], [0.3, 1.0]])
    state = fantasy_downdate(FantasyState.start(q), np.zeros(2), 0.5, 0.1)
    np.testing.assert_array_equal(state.q, q)
    assert state.n_selected == 1


def test_downdate_scalar_formula():
    state = fantasy_downdate(FantasyState.start(np.array([[2.0]])), np.array([1.0]), 0.5, 0.5)
    np.testing.assert_allclose(state.q, [[1.0]])
    np.testing.assert_allclose(state.base_q, [[2.0]])


def test_downdate_rejects_non_positive_variance():
    with pytest.raises(NegativeVarianceError):
        fantasy_downdate(FantasyState.start(np.eye(2)), np.ones(2), -1.0, 0.5)


def test_sequential_downdates_equal_block_conditioning():
    """Test three rank-1 downdates against conditioning on the 3x3 candidate block at once"""
    stream = make_rng(21)
    for _ in range(20):
        joint = stream.standard_normal((8, 8))
        joint = joint @ joint.T + 0.1 * np.eye(8)
        q, c, k = joint[:5, :5], joint[:5, 5:], joint[5:, 5:]
        noise = 0.2
        expected = q - c @ np.linalg.solve(k + noise * np.eye(3), c.T)

        state = FantasyState.start(q)
        crosses, candidates = c.copy(), k.copy()
        for j in range(3):
            denominator = candidates[j, j] + noise
            state = fantasy_downdate(state, crosses[:, j], candidates[j, j], noise)
            crosses = crosses - np.outer(crosses[:, j], candidates[j]) / denominator
            candidates = candidates - np.outer(candidates[:, j], candidates[j]) / denominator
        np.testing.assert_allclose(state.q, expected, atol=1e-8)


def test_downdates_match_refit(toy_model, toy_train, toy_pool, toy_context):
    """Test sequential fantasy conditioning against refitting the GP with the picks appended"""
    effective = toy_context.effective
    picks = [1, 6, 11]
    state = FantasyState.start(toy_context.posterior.q)
    for k, pick in enumerate(picks):
        current = fit(toy_model, _append(toy_train, toy_pool, picks[:k]))
        crosses, variances = _pool_terms(current, build_cq_context(current, effective), toy_pool)
        state = fantasy_downdate(state, crosses[:, pick], variances[pick], toy_model.noise_variance)

    refit = build_cq_context(fit(toy_model, _append(toy_train, toy_pool, picks)), effective)
    np.testing.assert_allclose(state.q, refit.posterior.q, atol=1e-8)


def test_fantasy_never_increases_variances(toy_gp, toy_pool, toy_context):
    crosses, variances = _pool_terms(toy_gp, toy_context, toy_pool)
    start = FantasyState.start(toy_context.posterior.q)
    for j in range(toy_pool.n_rows):
        after = fantasy_downdate(start, crosses[:, j], variances[j], toy_gp.model.noise_variance)
        assert np.all(np.diag(after.q) <= np.diag(start.q) + 1e-12)


# ===== Utilities =====


def test_utility_examples():
    identity = FantasyState.start(np.eye(2))
    assert utility(IG, identity) == pytest.approx(0.0, abs=1e-7)
    assert utility(TVR, identity) == -2.0
    assert utility(IG, FantasyState.start(np.diag([1.0, 4.0]))) == pytest.approx(-math.log(4.0), abs=1e-7)


def test_downdate_increases_tvr_utility():
    start = FantasyState.start(np.eye(2))
    after = fantasy_downdate(start, np.array([0.3, -0.1]), 1.0, 0.1)
    assert utility(TVR, after) > utility(TVR, start)
    assert information_gain(start, after) > 0.0


def test_singleton_scores_equal_downdated_utility(toy_gp, toy_pool, toy_context):
    crosses, variances = _pool_terms(toy_gp, toy_context, toy_pool)
    noise = toy_gp.model.noise_variance
    state = FantasyState.start(toy_context.posterior.q)
    for spec in (TVR, IG):
        scores = singleton_scores(spec.kind, state, crosses, variances + noise)
        for j in (0, 5, 14):
            after = fantasy_downdate(state, crosses[:, j], variances[j], noise)
            assert scores[j] == pytest.approx(utility(spec, after), rel=1e-8, abs=1e-8)


def test_information_gain_non_negative(toy_gp, toy_pool, toy_context):
    crosses, variances = _pool_terms(toy_gp, toy_context, toy_pool)
    start = FantasyState.start(toy_context.posterior.q)
    state = start
    for j in range(3):
        state = fantasy_downdate(state, crosses[:, j], variances[j], toy_gp.model.noise_variance)
        assert information_gain(start, state) >= -1e-10


def test_utility_ignores_pool_outcomes(toy_gp, toy_pool, toy_context):
    spec = UtilitySpec(kind=UtilityKind.TVR, selection=SelectionRule.GREEDY, batch_size=3)
    labeled = toy_pool.with_outcomes(np.full(toy_pool.n_rows, 5.0))
    first = select_batch(spec, toy_gp, toy_context, toy_pool, make_rng(0))
    second = select_batch(spec, toy_gp, toy_context, labeled, make_rng(0))
    assert first == second


# ===== Batch selection =====


@pytest.mark.parametrize("kind", list(UtilityKind))
def test_single_pick_greedy_equals_top_b(kind, toy_gp, toy_pool, toy_context):
    greedy = UtilitySpec(kind=kind, selection=SelectionRule.GREEDY, batch_size=1)
    top = UtilitySpec(kind=kind, selection=SelectionRule.TOP_B, batch_size=1)
    assert select_batch(greedy, toy_gp, toy_context, toy_pool, make_rng(0)) == select_batch(
        top, toy_gp, toy_context, toy_pool, make_rng(0)
    )


@pytest.mark.parametrize("selection", [SelectionRule.GREEDY, SelectionRule.TOP_B])
def test_identical_candidates_pick_lowest_indices(selection, toy_gp, toy_pool, toy_context):
    duplicates = toy_pool.subset([0] * 6)
    spec = UtilitySpec(kind=UtilityKind.TVR, selection=selection, batch_size=3)
    assert select_batch(spec, toy_gp, toy_context, duplicates, make_rng(0)) == [0, 1, 2]


@pytest.mark.parametrize("selection", list(SelectionRule))
def test_selection_returns_distinct_indices(selection, toy_gp, toy_pool, toy_context):
    spec = UtilitySpec(kind=UtilityKind.IG, selection=selection, batch_size=5)
    picks = select_batch(spec, toy_gp, toy_context, toy_pool, make_rng(4))
    assert len(picks) == 5
    assert len(set(picks)) == 5
    assert all(0 <= i < toy_pool.n_rows for i in picks)


def test_softmax_is_seeded(toy_gp, toy_pool, toy_context):
    spec = UtilitySpec(kind=UtilityKind.TVR, selection=SelectionRule.SOFTMAX, batch_size=4)
    first = select_batch(spec, toy_gp, toy_context, toy_pool, make_rng(8))
    assert first == select_batch(spec, toy_gp, toy_context, toy_pool, make_rng(8))


def test_softmax_cold_temperature_is_top_b(toy_gp, toy_pool, toy_context):
    cold = UtilitySpec(kind=UtilityKind.TVR, selection=SelectionRule.SOFTMAX, batch_size=3, softmax_temperature=1e-12)
    top = UtilitySpec(kind=UtilityKind.TVR, selection=SelectionRule.TOP_B, batch_size=3)
    assert select_batch(cold, toy_gp, toy_context, toy_pool, make_rng(1)) == select_batch(
        top, toy_gp, toy_context, toy_pool, make_rng(1)
    )


def test_greedy_final_trace_matches_refit(toy_model, toy_train, toy_pool, toy_context):
    spec = UtilitySpec(kind=UtilityKind.TVR, selection=SelectionRule.GREEDY, batch_size=4)
    gp = fit(toy_model, toy_train)
    picks = select_batch(spec, gp, toy_context, toy_pool, make_rng(0))
    refit = build_cq_context(fit(toy_model, _append(toy_train, toy_pool, picks)), toy_context.effective)
    assert np.trace(refit.posterior.q) <= np.trace(toy_context.posterior.q)


def test_select_batch_pool_exhausted(toy_gp, toy_pool, toy_context):
    spec = UtilitySpec(batch_size=toy_pool.n_rows + 1)
    with pytest.raises(PoolExhaustedError):
        select_batch(spec, toy_gp, toy_context, toy_pool, make_rng(0))


# ===== Baselines =====


def test_random_baseline_is_seeded(toy_gp, toy_pool):
    first = select_baseline(BaselineKind.RANDOM, toy_gp, toy_pool, 5, make_rng(3))
    assert first == select_baseline(BaselineKind.RANDOM, toy_gp, toy_pool, 5, make_rng(3))
    assert len(set(first)) == 5


def test_mu_bald_matches_predictive_variance(toy_gp, toy_pool):
    scores = baseline_scores(BaselineKind.MU_BALD, toy_gp, toy_pool)
    variances = predict(toy_gp, toy_pool, with_covariance=False).covariance
    np.testing.assert_allclose(scores, 0.5 * np.log1p(np.clip(variances, 0.0, None) / toy_gp.model.noise_variance))


def test_mu_bald_prefers_unexplored_points():
    train = Dataset(s=[[0.0], [0.5], [1.0], [1.5], [2.0]], a=[0.5] * 5, y=[0.0, 0.4, 0.8, 0.3, -0.2])
    gp = fit(UNIT_MODEL, train)
    pool = Dataset(s=[[0.5], [8.0]], a=[0.5, 0.5])
    scores = baseline_scores(BaselineKind.MU_BALD, gp, pool)
    assert scores[1] > scores[0]
    assert select_baseline(BaselineKind.MU_BALD, gp, pool, 1, make_rng(0)) == [1]


def test_pool_variance_scores(toy_gp, toy_pool):
    scores = baseline_scores(BaselineKind.POOL_VARIANCE, toy_gp, toy_pool)
    covariance = posterior_covariance(toy_gp, toy_pool, toy_pool)
    j = int(np.argmax(scores))
    reduced = np.sum(covariance[:, j] ** 2) / (covariance[j, j] + toy_gp.model.noise_variance)
    assert scores[j] == pytest.approx(-np.trace(covariance) + reduced)


def test_coreset_starts_at_highest_variance(toy_gp, toy_pool):
    picks = select_baseline(BaselineKind.CORESET, toy_gp, toy_pool, 4, make_rng(0))
    variances = np.diag(posterior_covariance(toy_gp, toy_pool, toy_pool))
    assert picks[0] == int(np.argmax(variances))
    assert len(set(picks)) == 4


def test_baseline_pool_exhausted(toy_gp, toy_pool):
    with pytest.raises(PoolExhaustedError):
        select_baseline(BaselineKind.RANDOM, toy_gp, toy_pool, toy_pool.n_rows + 1, make_rng(0))

# ===== Greedy against top-b =====


def _cate_instance(seed: int, n_train: int = 20, n_pool: int = 50, n_interest: int = 8):
    """CATE toy with a CME target embedding: model, training rows, pool, round-start context"""
    stream = make_rng(seed)
    n = n_train + n_pool
    z = stream.uniform(-2.0, 2.0, n)
    a = stream.uniform(0.0, 1.0, n)
    s = np.column_stack([z + 0.5 * stream.standard_normal(n), stream.standard_normal(n)])
    data = Dataset(s=s, a=a, z=z, y=a * z + s[:, 0] + 0.1 * stream.standard_normal(n))
    model = GpModel(
        kernel=ProductKernelSpec(
            treatment=KernelSpec(lengthscale=0.5),
            conditioning=KernelSpec(),
            adjustment=KernelSpec(lengthscale=1.5),
        ),
        noise_variance=0.1,
    )
    train = data.subset(range(n_train))
    pool = data.subset(range(n_train, n)).with_outcomes(None)
    z_star = float(stream.uniform(-1.0, 1.0))
    interest = InterestSet(kind=CqKind.CATE, a=np.linspace(0.1, 0.9, n_interest), z=[[z_star]] * n_interest)
    cme = fit_cme(data.z, data.s, KernelSpec(), model.kernel.adjustment)
    effective = effective_inputs_cme(interest, EmbeddingContext(cme=cme))
    return model, train, pool, build_cq_context(fit(model, train), effective)


def _refit_trace(model, train, pool, context, picks) -> float:
    refit = build_cq_context(fit(model, _append(train, pool, picks)), context.effective)
    return float(np.trace(refit.posterior.q))


def test_greedy_tvr_gains_do_not_grow():
    spec = UtilitySpec(kind=UtilityKind.TVR, selection=SelectionRule.GREEDY, batch_size=5)
    for seed in range(20):
        model, train, pool, context = _cate_instance(seed)
        picks = select_batch(spec, fit(model, train), context, pool, make_rng(seed))
        traces = [_refit_trace(model, train, pool, context, picks[:k]) for k in range(len(picks) + 1)]
        gains = -np.diff(traces)
        assert np.all(gains >= -1e-10)
        assert np.all(np.diff(gains) <= 1e-10), (seed, gains)


def test_greedy_tvr_no_worse_than_top_b():
    greedy = UtilitySpec(kind=UtilityKind.TVR, selection=SelectionRule.GREEDY, batch_size=5)
    top = UtilitySpec(kind=UtilityKind.TVR, selection=SelectionRule.TOP_B, batch_size=5)
    for seed in range(20):
        model, train, pool, context = _cate_instance(100 + seed)
        gp = fit(model, train)
        greedy_picks = select_batch(greedy, gp, context, pool, make_rng(seed))
        top_picks = select_batch(top, gp, context, pool, make_rng(seed))
        greedy_trace = _refit_trace(model, train, pool, context, greedy_picks)
        top_trace = _refit_trace(model, train, pool, context, top_picks)
        assert greedy_trace <= top_trace + 1e-10, seed
