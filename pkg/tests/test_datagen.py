import json
import math

import numpy as np
import pytest

from core.exceptions import EmptyFileError, InconsistentKindError, ParseError, UnknownMechanismError
from models.dataset import TreatmentMode
from schemas.experiment_schemas import CqKind, GeneratorConfig, GeneratorName
from services.data_service import DataService, sidecar_path
from services.estimator_service import InterestSet
from services.generator_service import (
    SHIFT_HIGH,
    SHIFT_LOW,
    SIMULATION_BETA,
    conditioning_window,
    generate,
    semisynthetic_outcome,
    semisynthetic_target,
    shift_covariates,
    true_cq_oracle,
)
from services.stats_service import make_rng, sigmoid, skew_normal_mean
from utils.sample_data import INVALID_COVARIATES, write_covariates

ORACLE_MC_N = 100_000


def _spec(generator: str, **kwargs) -> GeneratorConfig:
    return GeneratorConfig(generator=GeneratorName(generator), seed=kwargs.pop("seed", 0), **kwargs)


# ===== Synthetic generators =====


@pytest.mark.parametrize("generator", ["visualization", "simulation", "shift_target"])
def test_generators_are_deterministic(generator):
    first = generate(_spec(generator, n=50, seed=3))
    second = generate(_spec(generator, n=50, seed=3))
    other = generate(_spec(generator, n=50, seed=4))
    np.testing.assert_array_equal(first.s, second.s)
    if first.y is not None:
        np.testing.assert_array_equal(first.y, second.y)
        np.testing.assert_array_equal(first.a, second.a)
    assert first.meta == second.meta
    assert not np.array_equal(first.s, other.s)


def test_visualization_layout_and_ranges():
    data = generate(_spec("visualization", n=300))
    assert data.n_rows == 300
    assert data.z.shape == (300, 1)
    assert data.s.shape == (300, 2)
    assert np.all((data.z >= -2.0) & (data.z <= 2.0))
    assert np.all((data.a > 0.0) & (data.a < 1.0))
    assert data.meta.generator == "visualization"


def test_visualization_has_no_binary_mode():
    with pytest.raises(InconsistentKindError):
        generate(_spec("visualization", treatment_mode=TreatmentMode.BINARY))


def test_discrete_treatments_sit_on_grid():
    data = generate(_spec("simulation", n=200, treatment_mode=TreatmentMode.DISCRETE))
    np.testing.assert_allclose(data.a * 10.0, np.round(data.a * 10.0), atol=1e-9)
    assert np.all((data.a >= 0.0) & (data.a <= 1.0))


def test_simulation_layout_and_metadata():
    data = generate(_spec("simulation", n=100))
    assert data.s.shape == (100, 4)
    assert data.meta.outcome_variant is not None
    assert data.meta.to_dict()["rng_version"] == data.meta.rng_version


def test_simulation_propensity_weights():
    np.testing.assert_allclose(SIMULATION_BETA, [1.0, 1.0 / 4.0, 1.0 / 9.0, 1.0 / 16.0])


def test_simulation_second_covariate_near_zero_z():
    data = generate(_spec("simulation", n=40_000, seed=11))
    rows = np.abs(data.z[:, 0]) < 0.05
    s2 = data.s[rows, 1]
    assert abs(float(np.mean(s2)) + 1.0) <= 3.0 * np.std(s2) / math.sqrt(s2.size) + 1e-3


@pytest.mark.parametrize("seed", range(5))
def test_binary_simulation_positivity(seed):
    data = generate(_spec("simulation", n=500, seed=seed, treatment_mode=TreatmentMode.BINARY))
    assert set(np.unique(data.a)) == {0.0, 1.0}
    assert 0.05 <= float(np.mean(data.a)) <= 0.95


def test_shift_target_ranges():
    data = generate(_spec("shift_target", n=400))
    assert data.a is None and data.y is None
    assert np.all(data.s >= SHIFT_LOW) and np.all(data.s <= SHIFT_HIGH)


# ===== Ground truth =====


def test_visualization_cate_oracle_matches_closed_form():
    a = np.array([0.2, 0.8, 0.5])
    z = np.array([-1.0, 0.5, 1.5])
    interest = InterestSet(kind=CqKind.CATE, a=a, z=z[:, None])
    truth = true_cq_oracle(_spec("visualization"), interest, ORACLE_MC_N, make_rng(0))

    x = 2.5 * z
    xi, omega, alpha = 0.1 * x, 0.1 * np.abs(x) + 0.05, -8.0 + 8.0 * sigmoid(x)
    delta = alpha / np.sqrt(1.0 + alpha**2)
    expected = (a * z + 1.0) * skew_normal_mean(xi, omega, alpha) + 2.0 * z
    standard_error = np.abs(a * z + 1.0) * omega * np.sqrt(1.0 - 2.0 * delta**2 / math.pi) / math.sqrt(ORACLE_MC_N)
    assert np.all(np.abs(truth - expected) <= 4.0 * standard_error)


def test_simulation_cate_oracle_matches_closed_form():
    a = np.array([0.1, 0.9, 0.5])
    z = np.array([-1.5, 0.0, 1.2])
    interest = InterestSet(kind=CqKind.CATE, a=a, z=z[:, None])
    truth = true_cq_oracle(_spec("simulation"), interest, ORACLE_MC_N, make_rng(1))

    expected = a * z + a * (np.cos(z) + z) - 1.0 + 0.25 * z**2 + np.sin(np.sin(z) ** 2) * math.exp(-0.5)
    standard_error = np.sqrt(a**2 + 2.0) / math.sqrt(ORACLE_MC_N)
    assert np.all(np.abs(truth - expected) <= 4.0 * standard_error)


def test_simulation_ateds_oracle_matches_closed_form():
    a = np.array([0.2, 0.7])
    interest = InterestSet(kind=CqKind.ATEDS, a=a)
    truth = true_cq_oracle(_spec("simulation"), interest, ORACLE_MC_N, make_rng(2))

    expected = -0.25 + (1.0 - math.cos(0.5)) / 0.5
    standard_error = np.sqrt(2.0 * a**2 / 3.0 + 0.1) / math.sqrt(ORACLE_MC_N)
    assert np.all(np.abs(truth - expected) <= 4.0 * standard_error)


def test_oracle_is_frozen_by_its_stream():
    interest = InterestSet(kind=CqKind.ATT, a=[0.0, 1.0], a_prior=[1.0, 1.0])
    spec = _spec("simulation", treatment_mode=TreatmentMode.BINARY)
    first = true_cq_oracle(spec, interest, 20_000, make_rng(5))
    np.testing.assert_array_equal(first, true_cq_oracle(spec, interest, 20_000, make_rng(5)))
    assert np.all(np.isfinite(first))


def test_visualization_has_no_shifted_target():
    with pytest.raises(UnknownMechanismError):
        true_cq_oracle(_spec("visualization"), InterestSet(kind=CqKind.ATEDS, a=[0.5]), 100, make_rng(0))


def test_oracle_error_shrinks_with_sample_count():
    interest = InterestSet(kind=CqKind.ATE, a=[0.5])
    spec = _spec("simulation")

    def spread(mc_n: int) -> float:
        draws = [true_cq_oracle(spec, interest, mc_n, make_rng(1000 + mc_n, k))[0] for k in range(400)]
        return float(np.std(draws, ddof=1))

    assert 1.2 <= spread(2000) / spread(4000) <= 1.65


# ===== Semi-synthetic =====


def test_semisynthetic_outcome_at_zero():
    x = np.zeros((3, 2))
    t = np.zeros(3)
    np.testing.assert_allclose(semisynthetic_outcome(x, t, TreatmentMode.BINARY), np.ones(3))
    np.testing.assert_allclose(semisynthetic_outcome(x, t, TreatmentMode.CONTINUOUS), np.zeros(3))


def test_semisynthetic_layout(covariates_path):
    covariates = DataService().load_covariates_csv(covariates_path)
    data = generate(_spec("semisynthetic", covariates_path=str(covariates_path)), covariates)
    assert data.n_rows == 10
    np.testing.assert_array_equal(data.z[:, 0], covariates.frame["c_bw"].to_numpy())
    np.testing.assert_array_equal(data.s[:, 0], covariates.frame["c_age"].to_numpy())
    np.testing.assert_array_equal(data.s[:, 1], covariates.frame["b_flag"].to_numpy())
    assert data.meta.n_continuous == 2


def test_semisynthetic_ate_oracle_averages_formula(covariates_path):
    covariates = DataService().load_covariates_csv(covariates_path)
    spec = _spec("semisynthetic", covariates_path=str(covariates_path))
    data = generate(spec, covariates)
    truth = true_cq_oracle(spec, InterestSet(kind=CqKind.ATE, a=[0.3]), 1, make_rng(0), observed=data)

    x = covariates.frame[["c_bw", "c_age"]].to_numpy()
    expected = np.mean(semisynthetic_outcome(x, np.full(10, 0.3), TreatmentMode.CONTINUOUS))
    assert truth[0] == pytest.approx(expected)


def test_semisynthetic_cate_oracle_averages_window(covariates_path):
    covariates = DataService().load_covariates_csv(covariates_path)
    spec = _spec("semisynthetic", covariates_path=str(covariates_path))
    observed = generate(spec, covariates)
    # z* = 0.085 sits between c_bw = 0.05 and 0.12, both inside the window; z* = 3 is past every row
    interest = InterestSet(kind=CqKind.CATE, a=[0.3, 0.7], z=[[0.085], [3.0]])
    truth = true_cq_oracle(spec, interest, 1, make_rng(0), observed=observed)

    x = covariates.frame[["c_bw", "c_age"]].to_numpy()
    near = semisynthetic_outcome(x[[0, 7]], np.full(2, 0.3), TreatmentMode.CONTINUOUS)
    nearest = semisynthetic_outcome(x[[2]], np.full(1, 0.7), TreatmentMode.CONTINUOUS)
    np.testing.assert_allclose(truth, [np.mean(near), nearest[0]])


def test_conditioning_window():
    z = np.array([-1.0, 0.0, 0.02, 1.0])
    np.testing.assert_array_equal(conditioning_window(z, 0.01), [False, True, True, False])
    np.testing.assert_array_equal(conditioning_window(z, 5.0), [False, False, False, True])


def test_shifted_covariates(covariates_path):
    covariates = DataService().load_covariates_csv(covariates_path)
    shifted = shift_covariates(covariates, seed=0)
    values = shifted.frame[covariates.continuous].to_numpy()
    assert np.all((values >= 0.0) & (values <= 0.5))
    np.testing.assert_array_equal(shifted.frame["b_flag"], covariates.frame["b_flag"])

    target = semisynthetic_target(covariates, seed=0)
    assert target.z is None and target.a is None
    assert target.s.shape == (10, 3)


# ===== Covariate ingestion =====


def test_load_covariates_two_rows(tmp_path):
    path = write_covariates(tmp_path / "two.csv", "c_bw,b_flag\n0.5,1\n-0.2,0\n")
    covariates = DataService().load_covariates_csv(path)
    assert covariates.n_rows == 2
    assert covariates.continuous == ["c_bw"]
    assert covariates.binary == ["b_flag"]
    assert covariates.treatment is None


def test_load_covariates_names_bad_cell(tmp_path):
    path = write_covariates(tmp_path / "bad.csv", INVALID_COVARIATES["non_numeric"])
    with pytest.raises(ParseError) as error:
        DataService().load_covariates_csv(path)
    assert (error.value.row, error.value.column) == (3, "c_bw")


def test_load_covariates_rejects_non_binary_flag(tmp_path):
    path = write_covariates(tmp_path / "flag.csv", INVALID_COVARIATES["binary_out_of_range"])
    with pytest.raises(ParseError) as error:
        DataService().load_covariates_csv(path)
    assert error.value.column == "b_flag"


@pytest.mark.parametrize("case", ["header_only", "empty"])
def test_load_covariates_empty(tmp_path, case):
    path = write_covariates(tmp_path / f"{case}.csv", INVALID_COVARIATES[case])
    with pytest.raises(EmptyFileError):
        DataService().load_covariates_csv(path)


def test_load_covariates_roles_sidecar(tmp_path):
    path = write_covariates(tmp_path / "plain.csv", "bw,age,flag,treated\n1.0,2.0,0,1\n0.5,1.0,1,0\n")
    roles = {"continuous": ["bw", "age"], "binary": ["flag"], "treatment": "treated"}
    sidecar_path(path, ".roles.json").write_text(json.dumps(roles), encoding="utf-8")
    covariates = DataService(data_directory=tmp_path).load_covariates_csv("plain.csv")
    assert covariates.continuous == ["bw", "age"]
    assert covariates.treatment == "treated"
    np.testing.assert_array_equal(covariates.frame["treated"], [1.0, 0.0])


def test_write_and_read_dataset(tmp_path):
    data = generate(_spec("visualization", n=12, seed=7))
    service = DataService()
    path = service.write_dataset(data, tmp_path / "out" / "vis.csv")
    header = path.read_text(encoding="utf-8").splitlines()[0]
    assert header == "a,z_1,s_1,s_2,y"
    meta = json.loads(sidecar_path(path, ".meta.json").read_text(encoding="utf-8"))
    assert meta["generator"] == "visualization" and meta["seed"] == 7

    restored = service.read_dataset(path)
    np.testing.assert_allclose(restored.s, data.s)
    np.testing.assert_allclose(restored.y, data.y)
    assert restored.meta == data.meta
