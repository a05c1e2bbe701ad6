import numpy as np
import pytest

from app import config
from app.fem.fe1d import Constraint, Family, FESpace1D, uniform_partition
from app.fem.problems import make_problem
from app.fem.st_assembly import tensor_space
from app.schemas import ProblemKind


@pytest.fixture(autouse=True)
def default_settings(tmp_path, monkeypatch):
    """Run every test against built-in defaults, never a stray spacetime.env."""
    monkeypatch.chdir(tmp_path)
    config.use_config_file(None)
    yield
    config.get_settings.cache_clear()


@pytest.fixture
def rng():
    """Provide a seeded random generator."""
    return np.random.default_rng(20240601)


@pytest.fixture
def spatial_space():
    """Provide a zero-both P1 space on 8 uniform elements."""
    return FESpace1D(uniform_partition(8), Family.P1, Constraint.ZERO_BOTH)


@pytest.fixture
def trial_space():
    """Provide X = P1 (x) P1 on a 4 x 4 mesh."""
    return tensor_space(4, 4)


@pytest.fixture
def p0_test_space():
    """Provide Y_new = P0 (x) P1 on a 4 x 4 mesh."""
    return tensor_space(4, 4, family=Family.P0)


@pytest.fixture
def refined_test_space():
    """Provide Y_Andr = P1 on the once-refined temporal mesh (x) P1."""
    return tensor_space(4, 4, t_refine=2)


@pytest.fixture
def smooth_problem():
    """Provide the smooth symmetric problem."""
    return make_problem(ProblemKind.SMOOTH)


@pytest.fixture
def singular_problem():
    """Provide the singular symmetric problem."""
    return make_problem(ProblemKind.SINGULAR)
