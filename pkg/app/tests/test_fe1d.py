import numpy as np
import pytest
import scipy.sparse.linalg as spla

from app.exceptions import InvalidArgumentError
from app.fem.fe1d import (
    Constraint,
    Family,
    FESpace1D,
    MatrixKind,
    PairingKind,
    Partition1D,
    assemble_1d,
    basis_matrix,
    evaluate,
    hminus1_gram,
    interpolate,
    pairing_matrix,
    prolongation,
    uniform_partition,
)


def test_partition_rejects_bad_points():
    """Partitions need two or more finite, strictly increasing points."""
    for points in ([0.0], [0.0, 0.5, 0.5, 1.0], [0.0, np.nan, 1.0], [1.0, 0.0]):
        with pytest.raises(InvalidArgumentError):
            Partition1D(points)
    with pytest.raises(InvalidArgumentError):
        uniform_partition(0)


def test_refinement_relations():
    """Refining splits every element and yields a nested partition."""
    coarse = Partition1D([0.0, 0.3, 1.0])
    fine = coarse.refine(2)
    np.testing.assert_allclose(fine.points, [0.0, 0.15, 0.3, 0.65, 1.0])
    assert fine.is_refinement_of(coarse)
    assert not coarse.is_refinement_of(fine)
    assert not uniform_partition(3).is_refinement_of(uniform_partition(2))
    assert uniform_partition(4).same_as(uniform_partition(2).refine(2))


@pytest.mark.parametrize(
    "family, constraint, dim",
    [
        (Family.P1, Constraint.NONE, 7),
        (Family.P1, Constraint.ZERO_LEFT, 6),
        (Family.P1, Constraint.ZERO_RIGHT, 6),
        (Family.P1, Constraint.ZERO_BOTH, 5),
        (Family.P0, Constraint.NONE, 6),
    ],
)
def test_space_dimensions(family, constraint, dim):
    """Dimension follows the family and the number of removed end nodes."""
    assert FESpace1D(uniform_partition(6), family, constraint).dim == dim


def test_invalid_spaces():
    """Constrained P0 spaces and empty spaces are rejected."""
    with pytest.raises(InvalidArgumentError):
        FESpace1D(uniform_partition(4), Family.P0, Constraint.ZERO_LEFT)
    with pytest.raises(InvalidArgumentError):
        FESpace1D(uniform_partition(1), Family.P1, Constraint.ZERO_BOTH)


def test_mass_and_stiffness_on_nonuniform_mesh():
    """Unconstrained mass sums to the length; stiffness annihilates constants."""
    space = FESpace1D(Partition1D([0.0, 0.1, 0.35, 0.5, 1.0]))
    mass = assemble_1d(space, MatrixKind.MASS)
    stiff = assemble_1d(space, MatrixKind.STIFFNESS)
    ones = np.ones(space.dim)
    assert ones @ mass @ ones == pytest.approx(1.0, rel=1e-14)
    np.testing.assert_allclose(stiff @ ones, 0.0, atol=1e-12)
    assert mass[1, 1] == pytest.approx((0.1 + 0.25) / 3.0, rel=1e-14)
    assert stiff[1, 2] == pytest.approx(-1.0 / 0.25, rel=1e-14)


def test_convection_integration_by_parts():
    """N + N^T equals the boundary term of the unconstrained space and vanishes with zero ends."""
    free = FESpace1D(uniform_partition(5))
    conv = assemble_1d(free, MatrixKind.CONVECTION).toarray()
    boundary = np.zeros_like(conv)
    boundary[0, 0], boundary[-1, -1] = -1.0, 1.0
    np.testing.assert_allclose(conv + conv.T, boundary, atol=1e-14)

    zero = FESpace1D(uniform_partition(5), constraint=Constraint.ZERO_BOTH)
    conv0 = assemble_1d(zero, MatrixKind.CONVECTION).toarray()
    np.testing.assert_allclose(conv0 + conv0.T, 0.0, atol=1e-14)


def test_nonp1_matrices_rejected():
    """Stiffness and convection need P1."""
    p0 = FESpace1D(uniform_partition(3), Family.P0)
    with pytest.raises(InvalidArgumentError):
        assemble_1d(p0, MatrixKind.STIFFNESS)
    with pytest.raises(InvalidArgumentError):
        pairing_matrix(p0, p0, PairingKind.VALUE_DERIVATIVE)


def test_evaluate_and_interpolate_linear_function(rng):
    """P1 interpolation reproduces affine functions; P0 takes midpoint values."""
    space = FESpace1D(Partition1D([0.0, 0.2, 0.7, 1.0]))
    coeffs = interpolate(space, lambda x: 3.0 * x - 1.0)
    x = rng.uniform(0.0, 1.0, 20)
    np.testing.assert_allclose(evaluate(space, coeffs, x), 3.0 * x - 1.0, atol=1e-14)
    np.testing.assert_allclose(evaluate(space, coeffs, x, derivative=True), 3.0, atol=1e-13)

    p0 = FESpace1D(space.partition, Family.P0)
    np.testing.assert_allclose(interpolate(p0, lambda x: x), [0.1, 0.45, 0.85])


def test_evaluate_rejects_outside_points_and_bad_coefficients():
    """Points off the interval and wrongly sized coefficients fail."""
    space = FESpace1D(uniform_partition(4))
    with pytest.raises(InvalidArgumentError):
        evaluate(space, np.zeros(space.dim), [1.5])
    with pytest.raises(InvalidArgumentError):
        evaluate(space, np.zeros(3), [0.5])


def test_constrained_basis_vanishes_at_ends():
    """Zero-both basis functions evaluate to zero at both boundary points."""
    space = FESpace1D(uniform_partition(4), constraint=Constraint.ZERO_BOTH)
    mat = basis_matrix(space, [0.0, 1.0])
    assert mat.nnz == 0 or np.max(np.abs(mat.data)) == 0.0


def test_prolongation_reproduces_coarse_function(rng):
    """Embedding coefficients describe the same function on the fine mesh."""
    coarse = FESpace1D(Partition1D([0.0, 0.4, 1.0]), constraint=Constraint.ZERO_LEFT)
    fine = coarse.on_partition(coarse.partition.refine(3))
    c = rng.standard_normal(coarse.dim)
    x = rng.uniform(0.0, 1.0, 30)
    np.testing.assert_allclose(
        evaluate(fine, prolongation(coarse, fine) @ c, x), evaluate(coarse, c, x), atol=1e-13
    )
    with pytest.raises(InvalidArgumentError):
        prolongation(FESpace1D(coarse.partition), fine)


def test_pairing_between_nested_partitions():
    """Pairings on nested meshes are transposes of each other and match the fine assembly."""
    coarse = FESpace1D(uniform_partition(3))
    fine = FESpace1D(uniform_partition(6))
    p0_fine = FESpace1D(uniform_partition(6), Family.P0)
    a = pairing_matrix(fine, coarse).toarray()
    b = pairing_matrix(coarse, fine).toarray()
    np.testing.assert_allclose(a, b.T, atol=1e-15)
    np.testing.assert_allclose(
        a, (assemble_1d(fine, MatrixKind.MASS) @ prolongation(coarse, fine)).toarray(), atol=1e-15
    )
    # Each P0 cell sees the derivative of the coarse function on it
    dt = pairing_matrix(p0_fine, coarse, PairingKind.VALUE_DERIVATIVE).toarray()
    np.testing.assert_allclose(dt @ np.arange(coarse.dim), np.full(6, 1.0 / 6.0) * 3.0, atol=1e-14)
    with pytest.raises(InvalidArgumentError):
        pairing_matrix(FESpace1D(uniform_partition(4)), coarse)


def test_hminus1_gram_single_hat():
    """For one hat on [0, 1] the closed form of integral (Phi - c)^2 is 1/30."""
    space = FESpace1D(uniform_partition(2), constraint=Constraint.ZERO_BOTH)
    assert hminus1_gram(space)[0, 0] == pytest.approx(1.0 / 30.0, rel=1e-13)


def test_hminus1_gram_matches_fine_galerkin_oracle():
    """Discrete dual norms over a fine space converge to the exact H^{-1} Gram."""
    space = FESpace1D(Partition1D([0.0, 0.25, 0.5, 0.625, 1.0]), constraint=Constraint.ZERO_BOTH)
    gram = hminus1_gram(space)
    assert np.allclose(gram, gram.T)
    assert np.all(np.linalg.eigvalsh(gram) > 0.0)

    fine = FESpace1D(uniform_partition(8192), constraint=Constraint.ZERO_BOTH)
    mass_coarse_fine = pairing_matrix(fine, space).tocsc()
    stiff = assemble_1d(fine, MatrixKind.STIFFNESS).tocsc()
    oracle = mass_coarse_fine.T @ spla.spsolve(stiff, mass_coarse_fine.toarray())
    np.testing.assert_allclose(gram, oracle, rtol=1e-6, atol=1e-9 * np.abs(gram).max())
