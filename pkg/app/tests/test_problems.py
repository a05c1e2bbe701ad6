import numpy as np
import pytest

from app.exceptions import InvalidArgumentError
from app.fem.problems import ProblemDef, discrete_solution, make_problem, smooth_solution
from app.fem.st_assembly import interpolate_st, tensor_space
from app.schemas import ProblemKind

# Points away from the kink t = x
T_PTS = np.array([0.1, 0.35, 0.6, 0.9, 0.2])
X_PTS = np.array([0.4, 0.7, 0.15, 0.3, 0.85])


@pytest.mark.parametrize("kind", [ProblemKind.SMOOTH, ProblemKind.SINGULAR])
def test_derivatives_match_finite_differences(kind):
    """dt and dx agree with central differences off the break line."""
    exact = make_problem(kind).exact
    step = 1e-6
    fd_t = (exact.value(T_PTS + step, X_PTS) - exact.value(T_PTS - step, X_PTS)) / (2 * step)
    fd_x = (exact.value(T_PTS, X_PTS + step) - exact.value(T_PTS, X_PTS - step)) / (2 * step)
    np.testing.assert_allclose(exact.dt(T_PTS, X_PTS), fd_t, rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(exact.dx(T_PTS, X_PTS), fd_x, rtol=1e-6, atol=1e-8)


def test_solutions_vanish_on_spatial_boundary():
    """All model solutions satisfy the homogeneous boundary condition."""
    t = np.linspace(0.0, 1.0, 7)
    for kind in ProblemKind:
        exact = make_problem(kind).exact
        np.testing.assert_allclose(exact.value(t, np.zeros_like(t)), 0.0, atol=1e-15)
        np.testing.assert_allclose(exact.value(t, np.ones_like(t)), 0.0, atol=1e-15)


def test_singular_solution_flags_break_line():
    """Only the singular solution carries the t = x break line."""
    assert make_problem(ProblemKind.SINGULAR).exact.singular_line
    assert not make_problem(ProblemKind.SMOOTH).exact.singular_line
    assert make_problem(ProblemKind.ZERO).exact.is_zero


def test_problem_initial_value_and_symmetry():
    """u0 is the exact solution at t = 0; beta = 0 is the symmetric case."""
    problem = make_problem(ProblemKind.SMOOTH)
    x = np.linspace(0.0, 1.0, 9)
    np.testing.assert_allclose(problem.u0(x), np.sin(np.pi * x), atol=1e-15)
    assert problem.symmetric
    assert not make_problem(ProblemKind.SMOOTH, beta=100.0).symmetric


def test_problem_rejects_invalid_parameters():
    """Final time must be positive and beta non-negative."""
    with pytest.raises(InvalidArgumentError):
        ProblemDef(smooth_solution(), T=0.0)
    with pytest.raises(InvalidArgumentError):
        ProblemDef(smooth_solution(), beta=-1.0)


def test_discrete_solution_reproduces_interpolant():
    """A discrete exact solution evaluates to its finite element function, with the mesh as breaks."""
    space = tensor_space(4, 5)
    c = interpolate_st(space, lambda t, x: (1.0 + t) * x * (1.0 - x))
    exact = discrete_solution(space, c)
    t = np.array([[0.0, 0.5], [0.25, 1.0]])
    x = np.array([[0.2, 0.4], [0.6, 0.8]])
    np.testing.assert_allclose(exact.value(t, x), (1.0 + t) * x * (1.0 - x), atol=1e-15)
    assert exact.t_breaks == tuple(space.temporal.partition.points)
    assert exact.x_breaks == tuple(space.spatial.partition.points)
    assert not exact.is_zero

    c[0] = 99.0
    assert exact.value(np.array([0.0]), np.array([0.2]))[0] == pytest.approx(0.8 * 0.2, abs=1e-15)

    with pytest.raises(InvalidArgumentError):
        discrete_solution(space, c[:-1])
