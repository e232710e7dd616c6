"""
Active-learning harness: per-trial data preparation, interest sets, the
acquisition loop with AMSE tracking, and multi-seed orchestration.
"""
import itertools
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np

from core.config import get_settings
from core.constants import AGGREGATE_FILE, TREATMENT_GRID_STEP, TRIALS_FILE
from core.custom_typing import RandomStream, Vector
from core.exceptions import ActiveCqError, InconsistentKindError, LengthMismatchError, PoolExhaustedError
from core.logging import get_logger
from models.dataset import CovariateTable, Dataset, TreatmentMode
from schemas.acquisition_schemas import StrategySpec
from schemas.experiment_schemas import (
    ConditioningChoice,
    CqKind,
    GeneratorConfig,
    GeneratorName,
    RoundRecord,
    RunConfig,
    TreatmentChoice,
    TrialConfig,
)
from schemas.kernel_schemas import GpModel, KernelFamily, KernelSpec, ProductKernelSpec
from services.acquisition_service import parse_strategy, select_baseline, select_batch
from services.data_service import DataService, write_csv_atomic
from services.embedding_service import (
    CmeOperatorFit,
    EmbeddingKind,
    fit_cme,
    uniform_weights,
    with_adjustment_kernel,
)
from services.estimator_service import (
    ConditionalSampler,
    CqContext,
    EmbeddingContext,
    EffectiveInputs,
    InterestSet,
    build_cq_context,
    effective_inputs_cme,
    effective_inputs_mc,
    fit_conditional_sampler,
)
from services.generator_service import (
    discretize,
    gen_shift_target,
    generate,
    semisynthetic_target,
    true_cq_oracle,
)
from services.gp_service import GpPosterior, fit, optimize_hyperparameters
from services.matrix_service import jittered_cholesky, psd_logdet, symmetrize
from services.stats_service import make_rng, positive_median_heuristic
from services.table_service import MetricsTable, TableService

logger = get_logger(__name__)

# Random stream ids under the trial seed
_WARM_START, _INTEREST, _ORACLE, _ACQUISITION, _SAMPLING = range(5)

SIMULATION_ADJUSTMENT_KEPT = 3


# ===== Trial data =====


@dataclass(frozen=True)
class TrialData:
    """
    ``data`` is laid out for the GP (non-CATE kinds fold z into s);
    ``observed`` keeps the generated layout for the oracle; ``target`` holds
    ATEDS target samples in the folded layout.
    """

    data: Dataset
    observed: Dataset
    generator: GeneratorConfig
    target: Optional[Dataset] = None


def _model_layout(raw: Dataset, kind: CqKind, generator: GeneratorName) -> Dataset:
    if kind == CqKind.CATE:
        return raw
    if generator == GeneratorName.SIMULATION:
        return raw.fold_conditioning(keep_adjustment=SIMULATION_ADJUSTMENT_KEPT)
    return raw.fold_conditioning()


def prepare_trial_data(
    config: TrialConfig, seed: int, data_service: Optional[DataService] = None
) -> TrialData:
    generator = config.generator.with_seed(seed)
    covariates: Optional[CovariateTable] = None
    if generator.generator == GeneratorName.SEMISYNTHETIC:
        covariates = (data_service or DataService()).load_covariates_csv(generator.covariates_path)

    raw = generate(generator, covariates)
    target = None
    if config.cq_kind == CqKind.ATEDS:
        if generator.generator == GeneratorName.SIMULATION:
            target_spec = GeneratorConfig(generator=GeneratorName.SHIFT_TARGET, n=generator.target_n, seed=seed)
            target = gen_shift_target(target_spec)
        elif generator.generator == GeneratorName.SEMISYNTHETIC:
            target = semisynthetic_target(covariates, seed)
        else:
            raise InconsistentKindError(f"ATEDS has no shifted target for '{generator.generator.value}'")

    return TrialData(
        data=_model_layout(raw, config.cq_kind, generator.generator),
        observed=raw,
        generator=generator,
        target=target,
    )


# ===== Interest sets =====


def treatment_grid(mode: TreatmentMode) -> Vector:
    if mode == TreatmentMode.BINARY:
        return np.array([0.0, 1.0])
    return discretize(np.arange(1, round(1.0 / TREATMENT_GRID_STEP)) * TREATMENT_GRID_STEP)


def build_interest_set(config: TrialConfig, data: Dataset, rng: RandomStream) -> InterestSet:
    """
    Treatments: the whole grid, or one fixed value (default 1 for binary,
    0.5 otherwise). CATE crosses them with one z* or ``n_points`` random z
    drawn uniformly over the z range of ``data`` (the labeled training rows);
    ATT crosses them with prior treatments over the grid. At most
    ``max_points`` points are kept.
    """
    settings = config.interest
    mode = config.generator.treatment_mode
    grid = treatment_grid(mode)
    if settings.treatment == TreatmentChoice.FIXED_TREATMENT:
        default = 1.0 if mode == TreatmentMode.BINARY else 0.5
        treatments = np.array([settings.fixed_treatment if settings.fixed_treatment is not None else default])
    else:
        treatments = grid

    kind = config.cq_kind
    if kind == CqKind.CATE:
        if data.z is None:
            raise InconsistentKindError("CATE interest points need a conditioning column")
        z_low, z_high = float(np.min(data.z[:, 0])), float(np.max(data.z[:, 0]))
        if settings.conditioning == ConditioningChoice.FIXED_Z:
            z_star = settings.z_star if settings.z_star is not None else float(rng.uniform(z_low, z_high))
            z_values = np.array([z_star])
        else:
            z_values = rng.uniform(z_low, z_high, settings.n_points)
        pairs = np.array(list(itertools.product(treatments, z_values)))
        a, extra = pairs[:, 0], {"z": pairs[:, 1:]}
    elif kind == CqKind.ATT:
        pairs = np.array(list(itertools.product(treatments, grid)))
        a, extra = pairs[:, 0], {"a_prior": pairs[:, 1]}
    else:
        a, extra = treatments, {}

    if a.size > settings.max_points:
        keep = np.sort(rng.choice(a.size, size=settings.max_points, replace=False))
        a = a[keep]
        extra = {name: values[keep] for name, values in extra.items()}
    return InterestSet(kind=kind, a=a, **extra)


# ===== Model and embeddings =====


def _lengthscale(values: np.ndarray) -> float:
    return positive_median_heuristic(values) if values.shape[0] >= 2 else 1.0


def _block_kernel(given: Optional[KernelSpec], family: KernelFamily, values: np.ndarray) -> KernelSpec:
    if given is not None:
        return given
    return KernelSpec(family=family, lengthscale=_lengthscale(values))


def initial_model(config: TrialConfig, data: Dataset) -> GpModel:
    """Configured kernels, or median-heuristic lengthscales on the full input set"""
    gp = config.gp
    binary = config.generator.treatment_mode == TreatmentMode.BINARY
    treatment_family = gp.treatment_family or (KernelFamily.DELTA if binary else KernelFamily.RBF)
    conditioning = None
    if config.cq_kind == CqKind.CATE:
        conditioning = _block_kernel(gp.conditioning_kernel, gp.conditioning_family, data.z)
    kernel = ProductKernelSpec(
        treatment=_block_kernel(gp.treatment_kernel, treatment_family, data.treatment_matrix),
        conditioning=conditioning,
        adjustment=_block_kernel(gp.adjustment_kernel, gp.adjustment_family, data.s),
    )
    return GpModel(kernel=kernel, noise_variance=config.gp.noise_variance)


@dataclass
class EmbeddingSources:
    """Per-trial embedding inputs; the CME adjustment kernel is swapped each round"""

    cme: Optional[CmeOperatorFit] = None
    marginal_anchors: Optional[np.ndarray] = None
    sampler: Optional[ConditionalSampler] = None

    def context(self, adjustment_kernel: KernelSpec) -> EmbeddingContext:
        cme = None if self.cme is None else with_adjustment_kernel(self.cme, adjustment_kernel)
        marginal = None
        if self.marginal_anchors is not None:
            marginal = uniform_weights(
                self.marginal_anchors.shape[0], kind=EmbeddingKind.MARGINAL_UNIFORM, anchors=self.marginal_anchors
            )
        return EmbeddingContext(cme=cme, marginal=marginal)


def _conditioning_values(kind: CqKind, data: Dataset) -> Optional[np.ndarray]:
    if kind == CqKind.CATE:
        return data.z
    if kind == CqKind.ATT:
        return data.treatment_matrix
    return None


def build_embedding_sources(
    config: TrialConfig, trial: TrialData, model: GpModel, strategy: StrategySpec
) -> EmbeddingSources:
    data, kind = trial.data, config.cq_kind
    conditioning = _conditioning_values(kind, data)
    sources = EmbeddingSources()

    if conditioning is not None:
        binary_att = kind == CqKind.ATT and config.generator.treatment_mode == TreatmentMode.BINARY
        if binary_att:
            conditioning_kernel = KernelSpec(family=KernelFamily.DELTA)
        else:
            lengthscale = config.cme.conditioning_lengthscale or _lengthscale(conditioning)
            conditioning_kernel = KernelSpec(lengthscale=lengthscale)
        sources.cme = fit_cme(
            conditioning,
            data.s,
            conditioning_kernel,
            model.kernel.adjustment,
            lam=config.cme.lam,
            scale_lambda_by_n=config.cme.scale_lambda_by_n,
        )
    else:
        sources.marginal_anchors = trial.target.s if kind == CqKind.ATEDS else data.s

    if strategy.source == "mc":
        if conditioning is not None:
            bandwidth = config.mc.bandwidth or 0.1 * _lengthscale(conditioning)
            sources.sampler = fit_conditional_sampler(conditioning, data.s, bandwidth, config.mc.smoothing)
        else:
            sources.sampler = fit_conditional_sampler(None, sources.marginal_anchors, smoothing=config.mc.smoothing)
    return sources


def effective_inputs(
    config: TrialConfig,
    strategy: StrategySpec,
    interest: InterestSet,
    sources: EmbeddingSources,
    model: GpModel,
    rng: RandomStream,
) -> EffectiveInputs:
    if strategy.source == "mc":
        return effective_inputs_mc(interest, sources.sampler, config.mc.n_s, rng)
    return effective_inputs_cme(interest, sources.context(model.kernel.adjustment))


# ===== Metrics =====


def amse(estimated: Vector, truth: Vector) -> float:
    estimated, truth = np.asarray(estimated, dtype=float), np.asarray(truth, dtype=float)
    if estimated.shape != truth.shape:
        raise LengthMismatchError(
            f"Estimate has shape {estimated.shape}, truth has {truth.shape}",
            estimated=estimated.shape,
            truth=truth.shape,
        )
    return float(np.mean((estimated - truth) ** 2))


def covariance_summary(context: CqContext) -> Tuple[float, float]:
    """Trace and jittered log-determinant of the CQ covariance"""
    q = symmetrize(context.posterior.q)
    jitter = get_settings().ig_jitter
    return float(np.trace(q)), psd_logdet(jittered_cholesky(q + jitter * np.eye(q.shape[0]), base_jitter=0.0))


# ===== Active loop =====


@dataclass
class TrialResult:
    strategy: str
    cq_kind: CqKind
    seed: int
    records: List[RoundRecord] = field(default_factory=list)
    aborted: bool = False
    error: Optional[str] = None


def _select(
    strategy: StrategySpec,
    config: TrialConfig,
    gp: GpPosterior,
    context: CqContext,
    pool: Dataset,
    rng: RandomStream,
) -> List[int]:
    if strategy.is_baseline:
        return select_baseline(strategy.baseline, gp, pool, config.batch_size, rng)
    spec = strategy.utility_spec(config.batch_size, config.softmax_temperature)
    return select_batch(spec, gp, context, pool, rng)


def run_active_loop(config: TrialConfig, seed: int, data_service: Optional[DataService] = None) -> TrialResult:
    """
    One trial: warm start, then ``budget / batch_size`` acquisition rounds.
    Round 0 is the warm-start evaluation; round r records the rows bought at
    the end of round r - 1. An error aborts the trial and keeps the records
    collected so far.
    """
    result = TrialResult(strategy=config.strategy, cq_kind=config.cq_kind, seed=seed)
    log = logger.bind(strategy=config.strategy, cq_kind=config.cq_kind.value, seed=seed)
    try:
        strategy = parse_strategy(config.strategy)
        trial = prepare_trial_data(config, seed, data_service)
        data = trial.data
        if config.warm_start + config.budget > data.n_rows:
            raise PoolExhaustedError(
                f"Warm start {config.warm_start} plus budget {config.budget} exceeds {data.n_rows} rows",
                n_rows=data.n_rows,
            )

        warm = make_rng(seed, _WARM_START).choice(data.n_rows, config.warm_start, replace=False)
        labeled = [int(i) for i in np.sort(warm)]
        pool = sorted(set(range(data.n_rows)) - set(labeled))

        interest = build_interest_set(config, data.subset(labeled), make_rng(seed, _INTEREST))
        mc_n = config.oracle_mc_n or get_settings().oracle_mc_n
        truth = true_cq_oracle(
            trial.generator, interest, mc_n, make_rng(seed, _ORACLE), observed=trial.observed, target=trial.target
        )

        model = initial_model(config, data)
        sources = build_embedding_sources(config, trial, model, strategy)
        selected: List[int] = []

        for round_index in range(config.n_rounds + 1):
            started = time.perf_counter()
            train = data.subset(labeled)
            if round_index == 0 or not config.gp.freeze_after_warm_start:
                iterations = config.gp.iterations if round_index == 0 else config.gp.refit_iterations
                model = optimize_hyperparameters(
                    model, train, iterations, config.gp.step, config.gp.optimize_output_scale
                )
            gp = fit(model, train)
            effective = effective_inputs(
                config, strategy, interest, sources, model, make_rng(seed, _SAMPLING, round_index)
            )
            context = build_cq_context(gp, effective)
            trace_q, logdet_q = covariance_summary(context)
            error = amse(context.posterior.nu, truth)

            next_selected: List[int] = []
            if round_index < config.n_rounds:
                pool_data = data.subset(pool).with_outcomes(None)
                picks = _select(strategy, config, gp, context, pool_data, make_rng(seed, _ACQUISITION, round_index))
                next_selected = [pool[i] for i in picks]

            elapsed = time.perf_counter() - started
            record = RoundRecord(
                round=round_index,
                labeled=len(labeled),
                amse=error,
                trace_q=trace_q,
                logdet_q=logdet_q,
                wall_time_s=elapsed if config.record_wall_time else 0.0,
                selected=selected,
            )
            result.records.append(record)
            log.info(
                "Round complete",
                round=round_index,
                labeled=len(labeled),
                sqrt_amse=float(np.sqrt(error)),
                trace_q=trace_q,
                wall_time_s=elapsed,
            )

            # querying reveals the stored outcome of each bought row
            labeled = labeled + next_selected
            chosen = set(next_selected)
            pool = [i for i in pool if i not in chosen]
            selected = next_selected
    except (ActiveCqError, np.linalg.LinAlgError) as error:
        result.aborted = True
        result.error = str(error)
        log.error("Trial aborted", error=str(error), rounds_completed=len(result.records))
    return result


# ===== Trials =====


def _run_one(job: Tuple[TrialConfig, int]) -> TrialResult:
    config, seed = job
    return run_active_loop(config, seed)


def run_trials(
    config: RunConfig,
    parallel: int = 1,
    out_dir: Optional[Union[str, Path]] = None,
) -> MetricsTable:
    """
    Every (strategy, seed) pair as an independent trial. Results are
    collected in submission order, so outputs do not depend on ``parallel``.
    """
    jobs: Sequence[Tuple[TrialConfig, int]] = [
        (config.trial(strategy), seed) for strategy in config.strategies for seed in config.seeds
    ]
    logger.info("Running trials", n_trials=len(jobs), parallel=parallel)
    if parallel > 1:
        with ProcessPoolExecutor(max_workers=parallel) as executor:
            results = list(executor.map(_run_one, jobs))
    else:
        results = [_run_one(job) for job in jobs]

    table = TableService().metrics_table(results)
    if out_dir is not None:
        out_dir = Path(out_dir)
        write_csv_atomic(table.trials, out_dir / TRIALS_FILE)
        write_csv_atomic(table.aggregate, out_dir / AGGREGATE_FILE)
    logger.info("Trials finished", n_trials=len(results), n_aborted=table.n_aborted)
    return table
