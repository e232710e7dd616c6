import numpy as np
import pytest

from core.config import get_settings
from models.dataset import Dataset
from schemas.experiment_schemas import CqKind
from schemas.kernel_schemas import GpModel, KernelSpec, ProductKernelSpec
from services.embedding_service import fit_cme
from services.estimator_service import EmbeddingContext, InterestSet, build_cq_context, effective_inputs_cme
from services.gp_service import fit
from services.stats_service import make_rng
from utils.sample_data import write_covariates

N_TOY = 40
N_TRAIN = 25


@pytest.fixture(autouse=True)
def fresh_settings():
    """Settings are cached per process; tests that patch the environment need a clean read"""
    get_settings.cache_clear()
    yield
    get_settings.cache_clear()


@pytest.fixture
def rng():
    return make_rng(1234)


@pytest.fixture
def toy_data() -> Dataset:
    """CATE-shaped toy: s | z ~ N(z, 0.25) in the first column, unrelated noise in the second"""
    stream = make_rng(7)
    z = stream.uniform(-2.0, 2.0, N_TOY)
    a = stream.uniform(0.0, 1.0, N_TOY)
    s = np.column_stack([z + 0.5 * stream.standard_normal(N_TOY), stream.standard_normal(N_TOY)])
    y = a * z + s[:, 0] + 0.1 * stream.standard_normal(N_TOY)
    return Dataset(s=s, a=a, z=z, y=y)


@pytest.fixture
def toy_model() -> GpModel:
    kernel = ProductKernelSpec(
        treatment=KernelSpec(lengthscale=0.5),
        conditioning=KernelSpec(lengthscale=1.0),
        adjustment=KernelSpec(lengthscale=1.5),
    )
    return GpModel(kernel=kernel, noise_variance=0.1)


@pytest.fixture
def toy_train(toy_data) -> Dataset:
    return toy_data.subset(range(N_TRAIN))


@pytest.fixture
def toy_pool(toy_data) -> Dataset:
    return toy_data.subset(range(N_TRAIN, N_TOY)).with_outcomes(None)


@pytest.fixture
def toy_gp(toy_model, toy_train):
    return fit(toy_model, toy_train)


@pytest.fixture
def toy_interest() -> InterestSet:
    return InterestSet(kind=CqKind.CATE, a=[0.2, 0.5, 0.8], z=[[0.3], [0.3], [0.3]])


@pytest.fixture
def toy_embeddings(toy_data, toy_model) -> EmbeddingContext:
    cme = fit_cme(toy_data.z, toy_data.s, KernelSpec(lengthscale=1.0), toy_model.kernel.adjustment)
    return EmbeddingContext(cme=cme)


@pytest.fixture
def toy_context(toy_gp, toy_interest, toy_embeddings):
    return build_cq_context(toy_gp, effective_inputs_cme(toy_interest, toy_embeddings))


@pytest.fixture
def covariates_path(tmp_path):
    return write_covariates(tmp_path / "covariates.csv")
