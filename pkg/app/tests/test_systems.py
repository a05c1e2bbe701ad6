import numpy as np
import pytest
import scipy.sparse as sp

from app.exceptions import InvalidArgumentError, SolverFailureError
from app.fem.fe1d import Constraint, evaluate
from app.fem.problems import ProblemDef, discrete_solution, make_problem
from app.fem.st_assembly import STOperator, assemble_load, assemble_st, evaluate_st, interpolate_st, tensor_space
from app.fem.systems import (
    GalerkinSystem,
    SaddleSystem,
    SchurComplement,
    build_andreev,
    build_new_mixed,
    build_steinbach,
    build_system,
    discrete_spaces,
    solve,
    solve_direct,
    solve_schur_cg,
    steinbach_lift,
    unconstrained,
)
from app.schemas import Method, ProblemKind, SolverKind


def _smooth_coeffs(space):
    return interpolate_st(space, lambda t, x: np.exp(-2.0 * t) * np.sin(np.pi * x) + t * x * (1.0 - x))


# ==================== STRUCTURE ====================


def test_new_mixed_blocks(trial_space, p0_test_space, smooth_problem):
    """Without convection the off-diagonal block is Dt and the system is symmetric."""
    system = build_new_mixed(trial_space, p0_test_space, smooth_problem)
    (a11, a12), (a21, a22) = system.blocks
    assert system.sizes == (p0_test_space.dim, trial_space.dim)
    assert system.labels == ("lambda", "u")
    np.testing.assert_allclose(
        a12.toarray(), assemble_st(trial_space, p0_test_space, STOperator.DT).toarray(), atol=1e-15
    )
    np.testing.assert_allclose(a21.toarray(), a12.T.toarray(), atol=1e-15)
    np.testing.assert_allclose(a22.toarray(), a22.T.toarray(), atol=1e-14)
    assert system.a11_factors.diagonal


def test_andreev_blocks(trial_space, refined_test_space, smooth_problem):
    """The (1,1) block is -Gamma0, of rank at most the spatial dimension."""
    system = build_andreev(trial_space, refined_test_space, smooth_problem)
    (_, a12), (_, a22) = system.blocks
    assert system.labels == ("mu", "u")
    assert np.linalg.matrix_rank(a22.toarray()) <= trial_space.spatial.dim
    np.testing.assert_allclose(
        a12.toarray(), assemble_st(trial_space, refined_test_space, STOperator.B).toarray(), atol=1e-15
    )


def test_andreev_rhs_without_initial_datum(trial_space, refined_test_space, smooth_problem):
    """u0 = 0 leaves the second right-hand side block zero."""
    problem = ProblemDef(smooth_problem.exact, u0=lambda x: np.zeros_like(x))
    system = build_andreev(trial_space, refined_test_space, problem)
    assert not np.any(system.rhs[1])
    np.testing.assert_allclose(system.rhs[0], assemble_load(refined_test_space, problem), atol=1e-15)


def test_andreev_requires_nested_temporal_meshes(smooth_problem):
    """A test mesh that does not refine the trial mesh is rejected."""
    with pytest.raises(InvalidArgumentError):
        build_andreev(tensor_space(4, 4), tensor_space(3, 4), smooth_problem)
    with pytest.raises(InvalidArgumentError):
        build_andreev(tensor_space(4, 4), tensor_space(4, 4, constraint=Constraint.ZERO_LEFT, t_refine=2), smooth_problem)


def test_pair_mismatch_rejected(smooth_problem):
    """Trial and test spaces must share the spatial mesh and the final time."""
    with pytest.raises(InvalidArgumentError):
        build_new_mixed(tensor_space(4, 4), tensor_space(4, 8, family="P0"), smooth_problem)
    with pytest.raises(InvalidArgumentError):
        build_new_mixed(tensor_space(4, 4, T=2.0), tensor_space(4, 4, T=2.0, family="P0"), smooth_problem)


def test_saddle_system_checks_symmetry(trial_space):
    """A system flagged symmetric must have mirrored off-diagonal blocks."""
    n = trial_space.dim
    eye = sp.identity(n, format="csr")
    with pytest.raises(InvalidArgumentError):
        SaddleSystem(
            blocks=((eye, 2.0 * eye), (eye, eye)),
            rhs=(np.zeros(n), np.zeros(n)),
            labels=("a", "b"),
            symmetric=True,
            method=Method.NEW_MIXED,
            trial=trial_space,
            test=trial_space,
        )


def test_new_mixed_has_about_half_the_nonzeros_of_andreev(smooth_problem):
    """Block-diagonal As^YY and the coarser test mesh halve the fill."""
    Xn, Yn = discrete_spaces(Method.NEW_MIXED, 32)
    Xa, Ya = discrete_spaces(Method.ANDREEV, 32)
    ratio = build_new_mixed(Xn, Yn, smooth_problem).nnz / build_andreev(Xa, Ya, smooth_problem).nnz
    assert 0.4 <= ratio <= 0.6


def test_discrete_spaces():
    """Each method gets its trial / test pair with h_t = h_x by default."""
    X, Y = discrete_spaces(Method.NEW_MIXED, 6)
    assert (X.temporal.dim, Y.temporal.dim, X.spatial.dim) == (7, 6, 5)
    X, Y = discrete_spaces(Method.ANDREEV, 6, n_x=3)
    assert (X.temporal.dim, Y.temporal.dim, X.spatial.dim) == (7, 13, 2)
    X, Y = discrete_spaces(Method.STEINBACH, 6)
    assert X is Y and X.temporal.constraint == Constraint.ZERO_LEFT


# ==================== STEINBACH ====================


def test_steinbach_lift(trial_space, rng):
    """The lift is constant in time and has no time derivative."""
    c0 = rng.standard_normal(trial_space.spatial.dim)
    lift = steinbach_lift(trial_space, c0)
    t, x = rng.uniform(0.0, 1.0, (2, 15))
    np.testing.assert_allclose(evaluate_st(trial_space, lift, t, x), evaluate(trial_space.spatial, c0, x), atol=1e-14)
    np.testing.assert_allclose(assemble_st(trial_space, trial_space, STOperator.DT) @ lift, 0.0, atol=1e-14)
    assert not np.any(steinbach_lift(trial_space, np.zeros(trial_space.spatial.dim)))


def test_steinbach_system_is_nonsymmetric(smooth_problem):
    """B^{X0 X0} is not symmetric; with u0 = 0 the right-hand side is the plain load."""
    X0, _ = discrete_spaces(Method.STEINBACH, 4)
    system = build_steinbach(X0, smooth_problem)
    K = system.matrix()
    assert abs(K - K.T).max() > 1e-3

    problem = ProblemDef(smooth_problem.exact, u0=lambda x: np.zeros_like(x))
    system = build_steinbach(X0, problem)
    assert not np.any(system.lift)
    np.testing.assert_allclose(system.rhs, assemble_load(X0, problem), atol=0.0)


def test_steinbach_rejects_bad_input(smooth_problem, trial_space):
    """u0 must vanish on the boundary, and the trial space must vanish at t = 0."""
    X0, _ = discrete_spaces(Method.STEINBACH, 4)
    with pytest.raises(InvalidArgumentError):
        build_steinbach(X0, ProblemDef(smooth_problem.exact, u0=lambda x: 1.0 + 0.0 * x))
    with pytest.raises(InvalidArgumentError):
        build_steinbach(trial_space, smooth_problem)
    with pytest.raises(InvalidArgumentError):
        build_steinbach(X0, smooth_problem, lift=np.zeros(3))


# ==================== CONSISTENCY ====================


@pytest.mark.parametrize(
    "method, beta",
    [
        (Method.NEW_MIXED, 0.0),
        (Method.ANDREEV, 0.0),
        (Method.ANDREEV, 10.0),
        (Method.STEINBACH, 0.0),
        (Method.STEINBACH, 10.0),
    ],
)
def test_exact_discrete_solution_is_reproduced(method, beta):
    """Data manufactured from a trial function gives that function back."""
    Xd, Yd = discrete_spaces(method, 4)
    full = unconstrained(Xd)
    c = _smooth_coeffs(full)
    problem = ProblemDef(discrete_solution(full, c), beta=beta)
    sol = solve(build_system(method, Xd, Yd, problem))
    assert sol.space.dim == full.dim
    np.testing.assert_allclose(sol.u_coeffs, c, atol=1e-9)
    if method == Method.ANDREEV:
        np.testing.assert_allclose(sol.aux_coeffs, 0.0, atol=1e-9)


def test_new_mixed_aux_is_time_average_of_exact_solution():
    """lambda is the cell average in time of u when u lies in the trial space."""
    Xd, Yd = discrete_spaces(Method.NEW_MIXED, 4)
    c = _smooth_coeffs(Xd)
    sol = solve(build_system(Method.NEW_MIXED, Xd, Yd, ProblemDef(discrete_solution(Xd, c))))
    C = c.reshape(Xd.shape)
    np.testing.assert_allclose(sol.aux_coeffs.reshape(Yd.shape), 0.5 * (C[:-1] + C[1:]), atol=1e-9)


# ==================== SOLVERS ====================


def test_direct_identity_system(trial_space, rng):
    """For the identity the right-hand side comes back unchanged."""
    n = trial_space.dim
    eye = sp.identity(n, format="csr")
    zero = sp.csr_matrix((n, n))
    f1, f2 = rng.standard_normal((2, n))
    system = SaddleSystem(
        blocks=((eye, zero), (zero, eye)),
        rhs=(f1, f2),
        labels=("a", "u"),
        symmetric=True,
        method=Method.NEW_MIXED,
        trial=trial_space,
        test=trial_space,
    )
    sol = solve_direct(system)
    np.testing.assert_allclose(sol.u_coeffs, f2, atol=1e-15)
    np.testing.assert_allclose(sol.aux_coeffs, f1, atol=1e-15)


def _galerkin(matrix, rhs):
    space = tensor_space(10, 6, constraint=Constraint.ZERO_LEFT)
    return GalerkinSystem(
        matrix_=sp.csr_matrix(matrix),
        rhs=rhs,
        space=space,
        full_space=space,
        extension=sp.identity(space.dim, format="csr"),
        lift=np.zeros(space.dim),
    )


def test_direct_random_spd_matches_dense(rng):
    """Sparse LU agrees with a dense solve on a random SPD matrix."""
    a = sp.random(50, 50, density=0.1, random_state=7).toarray()
    A = a @ a.T + 5.0 * np.eye(50)
    b = rng.standard_normal(50)
    sol = solve_direct(_galerkin(A, b))
    np.testing.assert_allclose(sol.u_coeffs, np.linalg.solve(A, b), rtol=1e-10, atol=1e-12)
    assert sol.diagnostics.residual <= 1e-10


def test_direct_singular_system_fails():
    """A singular matrix raises SolverFailureError with a condition estimate."""
    d = np.ones(50)
    d[17] = 0.0
    with pytest.raises(SolverFailureError) as info:
        solve_direct(_galerkin(sp.diags(d), np.ones(50)))
    assert "condition" in info.value.diagnostics


def test_direct_zero_rhs(trial_space, p0_test_space):
    """Zero data gives the zero solution."""
    sol = solve_direct(build_new_mixed(trial_space, p0_test_space, make_problem(ProblemKind.ZERO)))
    assert not np.any(sol.u_coeffs)
    assert not np.any(sol.aux_coeffs)


def test_new_mixed_direct_residual(trial_space, p0_test_space, smooth_problem):
    """The relative residual of a direct solve is below the solver tolerance."""
    sol = solve(build_new_mixed(trial_space, p0_test_space, smooth_problem), SolverKind.DIRECT)
    assert sol.diagnostics.residual <= 1e-10
    assert sol.diagnostics.factorizations == 1


@pytest.mark.parametrize("method, n, beta", [(Method.NEW_MIXED, 8, 0.0), (Method.ANDREEV, 4, 10.0)])
def test_schur_cg_agrees_with_direct(method, n, beta):
    """Schur-complement CG reproduces the direct solution and reports a positive Ritz value."""
    Xd, Yd = discrete_spaces(method, n)
    system = build_system(method, Xd, Yd, make_problem(ProblemKind.SMOOTH, beta))
    direct = solve(system, SolverKind.DIRECT)
    cg = solve(system, SolverKind.SCHUR_CG)
    np.testing.assert_allclose(cg.u_coeffs, direct.u_coeffs, atol=1e-8)
    np.testing.assert_allclose(cg.aux_coeffs, direct.aux_coeffs, atol=1e-8)
    assert cg.diagnostics.iterations > 0
    assert cg.diagnostics.min_ritz > 0.0


def test_schur_complement_is_positive_definite(trial_space, p0_test_space, smooth_problem, rng):
    """u^T S u > 0 for random u."""
    S = SchurComplement(build_new_mixed(trial_space, p0_test_space, smooth_problem))
    for _ in range(10):
        u = rng.standard_normal(S.dim)
        assert u @ S.apply(u) > 0.0


def test_schur_cg_zero_rhs_and_wrong_system(trial_space, p0_test_space):
    """Zero data gives zero without iterating; Galerkin systems are rejected."""
    sol = solve_schur_cg(build_new_mixed(trial_space, p0_test_space, make_problem(ProblemKind.ZERO)))
    assert not np.any(sol.u_coeffs)
    assert sol.diagnostics.iterations == 0

    X0, _ = discrete_spaces(Method.STEINBACH, 4)
    with pytest.raises(InvalidArgumentError):
        solve(build_steinbach(X0, make_problem(ProblemKind.SMOOTH)), SolverKind.SCHUR_CG)
