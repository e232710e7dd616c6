"""
Seeded data-generating processes and their brute-force ground truth.

Every generator is a pure function of its config: one Philox stream keyed by
(seed, generator stream id), consumed in a fixed order. The noiseless outcome
functions are exposed so the oracle evaluates exactly the mechanism that
produced the data.
"""
from typing import Callable, Dict, Optional

import numpy as np

from core.constants import SIMULATION_OUTCOME_VARIANT, TREATMENT_GRID_STEP
from core.custom_typing import Matrix, RandomStream, Vector
from core.exceptions import (
    InconsistentKindError,
    NoContinuousColumnsError,
    UnknownMechanismError,
    ZeroCountError,
)
from core.logging import get_logger
from models.dataset import CovariateTable, Dataset, DatasetMeta, TreatmentMode
from schemas.experiment_schemas import CqKind, GeneratorConfig, GeneratorName
from services.estimator_service import InterestSet
from services.stats_service import make_rng, normal_cdf, sigmoid, skew_normal_sample

logger = get_logger(__name__)

VISUALIZATION_BETA = np.array([1.0, 0.25])
SIMULATION_BETA = 1.0 / np.arange(1, 5) ** 2
SHIFT_LOW = np.array([-1.0, -1.0, -0.5, 0.0])
SHIFT_HIGH = np.array([1.0, 1.0, 0.0, 0.5])
SEMISYNTHETIC_SHIFT_RANGE = (0.0, 0.5)
ATT_WINDOW = 0.05
CATE_WINDOW_FRACTION = 0.1
POSITIVITY_FLOOR = 0.05

_STREAMS: Dict[GeneratorName, int] = {
    GeneratorName.VISUALIZATION: 1,
    GeneratorName.SIMULATION: 2,
    GeneratorName.SHIFT_TARGET: 3,
    GeneratorName.SEMISYNTHETIC: 4,
}


def _stream(spec: GeneratorConfig) -> RandomStream:
    if spec.seed is None:
        raise ValueError(f"Generator '{spec.generator.value}' needs a seed")
    return make_rng(spec.seed, _STREAMS[spec.generator])


# ===== Treatment assignment =====


def discretize(a: Vector, step: float = TREATMENT_GRID_STEP) -> Vector:
    return np.round(np.round(np.asarray(a) / step) * step, 10)


def latent_treatment(x: Matrix, beta: Vector, rng: RandomStream) -> Vector:
    """a_org = Phi(3 x beta) + 1.5 eps - 0.5"""
    return normal_cdf(3.0 * (x @ beta)) + 1.5 * rng.standard_normal(x.shape[0]) - 0.5


def assign_treatment(a_org: Vector, mode: TreatmentMode) -> Vector:
    if mode == TreatmentMode.BINARY:
        return (a_org > 0.0).astype(float)
    a = sigmoid(a_org)
    return discretize(a) if mode == TreatmentMode.DISCRETE else a


def _check_positivity(a: Vector, mode: TreatmentMode, generator: str) -> None:
    if mode != TreatmentMode.BINARY or a.size == 0:
        return
    treated = float(np.mean(a))
    if min(treated, 1.0 - treated) < POSITIVITY_FLOOR:
        logger.warning("Treatment arm below positivity floor", generator=generator, treated_fraction=treated)


# ===== Visualization =====


def visualization_adjustment(z: Vector, rng: RandomStream) -> Matrix:
    x = 2.5 * z
    s1 = skew_normal_sample(rng, 0.1 * x, 0.1 * np.abs(x) + 0.05, -8.0 + 8.0 * sigmoid(x))
    eps = rng.standard_normal((z.shape[0], 2))
    s2 = np.exp(2.0 * eps[:, 0]) + eps[:, 1]
    return np.column_stack([s1, s2])


def visualization_outcome(a: Vector, z: Vector, s: Matrix) -> Vector:
    s1 = s[:, 0]
    return a * z * s1 + 2.0 * z + s1


def gen_visualization(spec: GeneratorConfig) -> Dataset:
    if spec.treatment_mode == TreatmentMode.BINARY:
        raise InconsistentKindError("The visualization generator has continuous or discrete treatments only")
    rng = _stream(spec)
    z = rng.uniform(-2.0, 2.0, spec.n)
    s = visualization_adjustment(z, rng)
    a = assign_treatment(latent_treatment(np.column_stack([z, s[:, 0]]), VISUALIZATION_BETA, rng), spec.treatment_mode)
    y = visualization_outcome(a, z, s) + spec.noise_sd * rng.standard_normal(spec.n)
    meta = DatasetMeta(
        generator=spec.generator.value, seed=spec.seed, treatment_mode=spec.treatment_mode, noise_sd=spec.noise_sd
    )
    return Dataset(s=s, a=a, z=z, y=y, meta=meta)


# ===== Simulation =====


def simulation_adjustment(z: Vector, rng: RandomStream) -> Matrix:
    eps = rng.standard_normal((z.shape[0], 5))
    return np.column_stack(
        [
            np.cos(z) + z + eps[:, 0],
            -1.0 + 0.25 * z**2 + eps[:, 1],
            np.sin(z) ** 2 + eps[:, 2],
            np.exp(2.0 * eps[:, 3]) + eps[:, 4],
        ]
    )


def simulation_outcome(a: Vector, z: Vector, s: Matrix) -> Vector:
    """Outcome variant ``spec_v1``: a z + a s1 + s2 + sin(s3); s4 is irrelevant"""
    return a * z + a * s[:, 0] + s[:, 1] + np.sin(s[:, 2])


def gen_simulation(spec: GeneratorConfig) -> Dataset:
    rng = _stream(spec)
    z = rng.uniform(-2.0, 2.0, spec.n)
    s = simulation_adjustment(z, rng)
    a = assign_treatment(latent_treatment(np.column_stack([z, s[:, :3]]), SIMULATION_BETA, rng), spec.treatment_mode)
    _check_positivity(a, spec.treatment_mode, spec.generator.value)
    y = simulation_outcome(a, z, s) + spec.noise_sd * rng.standard_normal(spec.n)
    meta = DatasetMeta(
        generator=spec.generator.value,
        seed=spec.seed,
        treatment_mode=spec.treatment_mode,
        noise_sd=spec.noise_sd,
        outcome_variant=SIMULATION_OUTCOME_VARIANT,
    )
    return Dataset(s=s, a=a, z=z, y=y, meta=meta)


def shift_draws(n: int, rng: RandomStream) -> Matrix:
    """Columns (z, s1, s2, s3) of the shifted target population"""
    return rng.uniform(SHIFT_LOW, SHIFT_HIGH, size=(n, SHIFT_LOW.size))


def gen_shift_target(spec: GeneratorConfig) -> Dataset:
    """
    Adjustment-only target samples laid out like the folded simulation data
    (z first, then s1..s3), so they embed directly for ATEDS.
    """
    rng = _stream(spec)
    meta = DatasetMeta(generator=spec.generator.value, seed=spec.seed, treatment_mode=spec.treatment_mode)
    return Dataset(s=shift_draws(spec.n, rng), meta=meta)


# ===== Semi-synthetic =====


def semisynthetic_beta(n_continuous: int) -> Vector:
    return 1.0 / np.arange(1, n_continuous + 1)


def semisynthetic_outcome(x: Matrix, t: Vector, mode: TreatmentMode) -> Vector:
    """
    Noiseless outcome over continuous covariates ``x``; the first column
    plays the birth-weight role.
    """
    beta = semisynthetic_beta(x.shape[1])
    base = 1.2 * (x @ beta)
    bw = x[:, 0]
    if mode == TreatmentMode.BINARY:
        return base + 1.0 + t * (np.exp(x + 0.5) @ beta + 3.0 * bw)
    return base + 1.2 * t + bw**2 + t * bw


def _semisynthetic_dataset(
    covariates: CovariateTable,
    x: Matrix,
    a: Optional[Vector],
    y: Optional[Vector],
    meta: DatasetMeta,
) -> Dataset:
    binary = covariates.frame[covariates.binary].to_numpy(dtype=float)
    return Dataset(s=np.hstack([x[:, 1:], binary]), a=a, z=x[:, :1], y=y, meta=meta)


def _continuous_matrix(covariates: CovariateTable) -> Matrix:
    if not covariates.continuous:
        raise NoContinuousColumnsError("Semi-synthetic outcomes need at least one continuous covariate")
    return covariates.frame[covariates.continuous].to_numpy(dtype=float)


def semisynthetic_outcomes(
    covariates: CovariateTable,
    treatment_mode: TreatmentMode,
    seed: int,
    noise_sd: float = 0.4,
) -> Dataset:
    """
    Attach treatments (unless binary ones are supplied) and outcomes to
    ingested covariates. ``z`` is the first continuous column.
    """
    x = _continuous_matrix(covariates)
    rng = make_rng(seed, _STREAMS[GeneratorName.SEMISYNTHETIC])
    supplied = treatment_mode == TreatmentMode.BINARY and covariates.treatment is not None
    if supplied:
        a = covariates.frame[covariates.treatment].to_numpy(dtype=float)
    else:
        a = assign_treatment(latent_treatment(x, semisynthetic_beta(x.shape[1]), rng), treatment_mode)
    _check_positivity(a, treatment_mode, GeneratorName.SEMISYNTHETIC.value)
    y = semisynthetic_outcome(x, a, treatment_mode) + noise_sd * rng.standard_normal(x.shape[0])

    meta = DatasetMeta(
        generator=GeneratorName.SEMISYNTHETIC.value,
        seed=seed,
        treatment_mode=treatment_mode,
        noise_sd=noise_sd,
        n_continuous=x.shape[1],
    )
    logger.info("Semi-synthetic outcomes attached", n_rows=x.shape[0], n_continuous=x.shape[1], supplied=supplied)
    return _semisynthetic_dataset(covariates, x, a, y, meta)


def shift_covariates(covariates: CovariateTable, seed: int) -> CovariateTable:
    """Replace every continuous column with Uniform(0, 0.5) draws"""
    x = _continuous_matrix(covariates)
    rng = make_rng(seed, _STREAMS[GeneratorName.SEMISYNTHETIC], 1)
    frame = covariates.frame.copy()
    frame[covariates.continuous] = rng.uniform(*SEMISYNTHETIC_SHIFT_RANGE, size=x.shape)
    return CovariateTable(
        frame=frame,
        continuous=list(covariates.continuous),
        binary=list(covariates.binary),
        treatment=covariates.treatment,
    )


def semisynthetic_target(covariates: CovariateTable, seed: int) -> Dataset:
    """Shifted covariates without treatments or outcomes, folded like ATEDS training data"""
    shifted = shift_covariates(covariates, seed)
    x = _continuous_matrix(shifted)
    meta = DatasetMeta(
        generator=GeneratorName.SEMISYNTHETIC.value,
        seed=seed,
        treatment_mode=TreatmentMode.CONTINUOUS,
        n_continuous=x.shape[1],
    )
    return _semisynthetic_dataset(shifted, x, None, None, meta).fold_conditioning()


def generate(spec: GeneratorConfig, covariates: Optional[CovariateTable] = None) -> Dataset:
    """Dispatch on ``spec.generator``"""
    if spec.generator == GeneratorName.SEMISYNTHETIC:
        if covariates is None:
            raise NoContinuousColumnsError("Semi-synthetic generation needs ingested covariates")
        return semisynthetic_outcomes(covariates, spec.treatment_mode, spec.seed, spec.noise_sd)
    generators: Dict[GeneratorName, Callable[[GeneratorConfig], Dataset]] = {
        GeneratorName.VISUALIZATION: gen_visualization,
        GeneratorName.SIMULATION: gen_simulation,
        GeneratorName.SHIFT_TARGET: gen_shift_target,
    }
    return generators[spec.generator](spec)


# ===== Ground truth =====


_MECHANISMS = {
    GeneratorName.VISUALIZATION: (visualization_adjustment, visualization_outcome, VISUALIZATION_BETA, 1),
    GeneratorName.SIMULATION: (simulation_adjustment, simulation_outcome, SIMULATION_BETA, 3),
}


def _treated_rows(a: Vector, prior: float, mode: TreatmentMode) -> np.ndarray:
    if mode == TreatmentMode.CONTINUOUS:
        return np.abs(a - prior) <= ATT_WINDOW
    return np.isclose(a, prior)


def _synthetic_oracle(
    generator: GeneratorConfig, interest: InterestSet, mc_n: int, rng: RandomStream
) -> Vector:
    adjustment, outcome, beta, n_features = _MECHANISMS[generator.generator]
    truth = np.empty(interest.n_points)

    if interest.kind == CqKind.CATE:
        for i in range(interest.n_points):
            z = np.full(mc_n, interest.z[i, 0])
            truth[i] = np.mean(outcome(np.full(mc_n, interest.a[i]), z, adjustment(z, rng)))
        return truth

    if interest.kind == CqKind.ATEDS:
        if generator.generator != GeneratorName.SIMULATION:
            raise UnknownMechanismError(f"No shifted target is defined for '{generator.generator.value}'")
        draws = shift_draws(mc_n, rng)
        z, s = draws[:, 0], draws[:, 1:]
        for i in range(interest.n_points):
            truth[i] = np.mean(outcome(np.full(mc_n, interest.a[i]), z, s))
        return truth

    z = rng.uniform(-2.0, 2.0, mc_n)
    s = adjustment(z, rng)
    if interest.kind == CqKind.ATE:
        for i in range(interest.n_points):
            truth[i] = np.mean(outcome(np.full(mc_n, interest.a[i]), z, s))
        return truth

    features = np.column_stack([z, s[:, :n_features]])
    a = assign_treatment(latent_treatment(features, beta, rng), generator.treatment_mode)
    for i in range(interest.n_points):
        rows = _treated_rows(a, interest.a_prior[i], generator.treatment_mode)
        if not np.any(rows):
            raise ZeroCountError(f"No population rows received treatment {interest.a_prior[i]}")
        truth[i] = np.mean(outcome(np.full(int(rows.sum()), interest.a[i]), z[rows], s[rows]))
    return truth


def _semisynthetic_x(data: Dataset) -> Matrix:
    if data.meta is None or data.meta.n_continuous is None:
        raise UnknownMechanismError("Dataset does not record its continuous covariates")
    columns = data.s if data.z is None else np.hstack([data.z, data.s])
    return columns[:, : data.meta.n_continuous]


def conditioning_window(z: Vector, z_star: float) -> np.ndarray:
    """
    Rows with |z - z*| within 0.1 standard deviations of z. The window widens
    to the nearest row when it would otherwise be empty.
    """
    distance = np.abs(z - z_star)
    half_width = max(CATE_WINDOW_FRACTION * float(np.std(z)), float(np.min(distance)))
    return distance <= half_width


def _semisynthetic_oracle(
    generator: GeneratorConfig, interest: InterestSet, observed: Optional[Dataset], target: Optional[Dataset]
) -> Vector:
    """
    Known outcome formula averaged over the empirical covariates. CATE
    averages over the rows whose z falls in a window around z*, ATT over the
    rows that received the prior treatment.
    """
    mode = generator.treatment_mode
    source = target if interest.kind == CqKind.ATEDS else observed
    if source is None:
        raise UnknownMechanismError(f"No covariate sample available for {interest.kind.value}")
    x = _semisynthetic_x(source)

    truth = np.empty(interest.n_points)
    for i in range(interest.n_points):
        rows = np.ones(x.shape[0], dtype=bool)
        if interest.kind == CqKind.ATT:
            rows = _treated_rows(source.a, interest.a_prior[i], mode)
            if not np.any(rows):
                raise ZeroCountError(f"No rows received treatment {interest.a_prior[i]}")
        elif interest.kind == CqKind.CATE:
            rows = conditioning_window(x[:, 0], float(interest.z[i, 0]))
        truth[i] = np.mean(semisynthetic_outcome(x[rows], np.full(int(rows.sum()), interest.a[i]), mode))
    return truth


def true_cq_oracle(
    generator: GeneratorConfig,
    interest: InterestSet,
    mc_n: int,
    rng: RandomStream,
    observed: Optional[Dataset] = None,
    target: Optional[Dataset] = None,
) -> Vector:
    """
    True CQ at each interest point by brute-force Monte Carlo over the data
    mechanism. Semi-synthetic data has no covariate mechanism, so its truth
    averages the outcome formula over ``observed`` (or ``target`` for ATEDS).
    """
    if mc_n < 1:
        raise ValueError(f"mc_n must be positive, got {mc_n}")
    if generator.generator in _MECHANISMS:
        return _synthetic_oracle(generator, interest, mc_n, rng)
    if generator.generator == GeneratorName.SEMISYNTHETIC:
        return _semisynthetic_oracle(generator, interest, observed, target)
    raise UnknownMechanismError(f"Generator '{generator.generator.value}' has no outcome mechanism")
