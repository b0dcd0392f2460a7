import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from magnetohf.grid import Grid, chebyshev_nodes, make_domain
from magnetohf.hamiltonian import Discretization, single_particle_coeffs
from magnetohf.spectral import (
    BC,
    DIRICHLET_ALL,
    NEUMANN_ALL,
    BoundaryPolicy,
    assemble_operator,
    diff_matrix,
    eliminate_boundaries,
    interior_values,
    kron_ops,
    reconstruct_boundary,
)


def ops_for(N):
    D = diff_matrix(chebyshev_nodes(N))
    return kron_ops(D, D)


def trimmed_samples(f, N):
    """Samples of f(x, y) on the trimmed grid (outer nodes dropped)."""
    x = chebyshev_nodes(N)
    X, Y = np.meshgrid(x, x, indexing="ij")
    return f(X, Y)[1:, 1:].ravel()


# ---------------------------------------------------------------- diff matrix


def test_diff_matrix_n1():
    np.testing.assert_allclose(diff_matrix(chebyshev_nodes(1)), [[0.5, -0.5], [0.5, -0.5]], atol=1e-15)


def test_diff_matrix_n2():
    expected = [[1.5, -2.0, 0.5], [0.5, 0.0, -0.5], [-0.5, 2.0, -1.5]]
    np.testing.assert_allclose(diff_matrix(chebyshev_nodes(2)), expected, atol=1e-14)


def test_diff_matrix_diagonal_formula():
    x = chebyshev_nodes(9)
    D = diff_matrix(x)
    for j in range(x.size):
        expected = sum(1.0 / (x[j] - x[k]) for k in range(x.size) if k != j)
        assert D[j, j] == pytest.approx(expected, rel=1e-12, abs=1e-12)


@pytest.mark.parametrize("N", [3, 5, 10, 20])
def test_diff_matrix_cubic_exact(N):
    x = chebyshev_nodes(N)
    assert np.max(np.abs(diff_matrix(x) @ x**3 - 3 * x**2)) <= 1e-12


@pytest.mark.parametrize("N", [4, 8, 16])
def test_diff_matrix_monomials(N):
    x = chebyshev_nodes(N)
    D = diff_matrix(x)
    for k in range(1, N + 1):
        assert np.max(np.abs(D @ x**k - k * x ** (k - 1))) <= 1e-10 * k * k


def test_diff_matrix_rejects_duplicates():
    with pytest.raises(ValueError):
        diff_matrix(np.array([1.0, 0.0, 0.0, -1.0]))


@settings(max_examples=40, deadline=None)
@given(N=st.integers(1, 60))
def test_row_sums_vanish(N):
    assert np.max(np.abs(diff_matrix(chebyshev_nodes(N)).sum(axis=1))) <= 1e-12


# ---------------------------------------------------------------- Kronecker operators
# the trimmed operators assume zero data on the outer edges x = 1 and y = 1,
# so test functions carry a factor vanishing there


def test_kron_dx_of_linear():
    N = 8
    ops = ops_for(N)
    f = trimmed_samples(lambda x, y: (x - 1.0) * (y - 1.0), N)
    np.testing.assert_allclose(ops.Dx @ f, trimmed_samples(lambda x, y: y - 1.0, N), atol=1e-13)
    np.testing.assert_allclose(ops.Dy @ f, trimmed_samples(lambda x, y: x - 1.0, N), atol=1e-13)


def test_kron_dy_and_second_derivative():
    N = 8
    ops = ops_for(N)
    f = trimmed_samples(lambda x, y: (x - 1.0) * (y - 1.0), N)
    g = trimmed_samples(lambda x, y: (x - 1.0) * (y - 1.0) ** 2, N)
    # d/dy of (x-1)(y-1)^2 is 2(x-1)(y-1) = 2 f
    np.testing.assert_allclose(ops.Dy @ g, 2 * f, atol=1e-12)
    np.testing.assert_allclose(ops.Dxx @ f, 0.0, atol=1e-11)


@pytest.mark.parametrize("N", [5, 9, 15])
def test_mixed_partials_commute(N):
    ops = ops_for(N)
    f = trimmed_samples(lambda x, y: x**2 * y**2, N)
    assert np.max(np.abs(ops.Dx @ (ops.Dy @ f) - ops.Dy @ (ops.Dx @ f))) <= 1e-10


def test_kron_structure():
    N = 6
    D = diff_matrix(chebyshev_nodes(N))
    ops = kron_ops(D, D)
    eye = np.eye(N)
    np.testing.assert_allclose(ops.Dx.toarray(), np.kron(D[1:, 1:], eye))
    np.testing.assert_allclose(ops.Dy.toarray(), np.kron(eye, D[1:, 1:]))
    np.testing.assert_allclose(ops.Dxx.toarray(), np.kron((D @ D)[1:, 1:], eye))
    np.testing.assert_allclose(ops.Dyy.toarray(), np.kron(eye, (D @ D)[1:, 1:]))


# ---------------------------------------------------------------- assembly


def test_cartesian_laplacian():
    N = 12
    ops = ops_for(N)
    L = assemble_operator(1.0, 0.0, 1.0, 0.0, 0.0, ops)
    f = trimmed_samples(lambda x, y: (x**2 - 1) * (y**2 - 1), N)
    lap = trimmed_samples(lambda x, y: 2 * (y**2 - 1) + 2 * (x**2 - 1), N)
    assert np.max(np.abs(L @ f - lap)) <= 1e-10


def test_e_only_operator_is_diagonal(rng):
    N = 7
    ops = ops_for(N)
    e = rng.normal(size=(N + 1, N + 1))
    L = assemble_operator(0.0, 0.0, 0.0, 0.0, e, ops)
    p = rng.normal(size=N * N)
    np.testing.assert_allclose(L @ p, e[1:, 1:].ravel() * p)
    assert sp.triu(L, 1).nnz == 0 and sp.tril(L, -1).nnz == 0


def test_assemble_rejects_bad_shape():
    ops = ops_for(5)
    with pytest.raises(ValueError):
        assemble_operator(np.ones((4, 4)), 0.0, 0.0, 0.0, 0.0, ops)


def test_hydrogenic_coefficients_on_gaussian():
    """Assembled operator on a Gaussian against the analytic action, no Coulomb term."""
    beta = 1.0
    errs = []
    for N in (11, 21, 31, 41, 51):
        g = Grid(N, make_domain(beta, 1.0))
        L = assemble_operator(*single_particle_coeffs(g, 0, beta, coulomb=False), Discretization(g).ops)
        rho, z = g.rho[:, None], g.z[None, :]
        u = np.exp(-(rho**2) - z**2)
        r2 = rho**2 + z**2
        exact = (6 - 4 * r2 + beta**2 * rho**2 - 2 * beta) * u
        got = (L @ u[1:, 1:].ravel()).reshape(N, N)[:-1, :-1]
        errs.append(np.max(np.abs(got - exact[1:-1, 1:-1])))
    assert all(b < a for a, b in zip(errs, errs[1:]))
    assert errs[-1] < 1e-3 * errs[0]


# ---------------------------------------------------------------- elimination


def test_dirichlet_all_is_interior_block(rng):
    N = 6
    ops = ops_for(N)
    L = assemble_operator(1.0, 0.3, 1.0, -0.2, 2.0, ops)
    red = eliminate_boundaries(L, DIRICHLET_ALL, ops)
    np.testing.assert_allclose(red.A.toarray(), red.blocks["E"].toarray())
    assert red.recon_bx.nnz == 0 and red.recon_by.nnz == 0
    full = red.full(rng.normal(size=red.size))
    assert np.all(full[0] == 0) and np.all(full[:, 0] == 0)
    assert np.all(full[-1] == 0) and np.all(full[:, -1] == 0)


def test_block_shapes_n3():
    ops = ops_for(3)
    L = assemble_operator(1.0, 0.0, 1.0, 0.0, 0.0, ops)
    red = eliminate_boundaries(L, NEUMANN_ALL, ops)
    shapes = {k: v.shape for k, v in red.blocks.items()}
    assert shapes == {
        "E": (4, 4),
        "C": (4, 2),
        "E_N": (4, 3),
        "B_1": (3, 4),
        "B_2": (3, 2),
        "B_N": (3, 3),
        "G": (2, 4),
        "H": (2, 2),
    }
    assert red.A.shape == (4, 4)


def test_neumann_formula():
    """Reduced operator equals the explicit Schur-complement expression."""
    N = 6
    ops = ops_for(N)
    L = assemble_operator(1.0, 0.4, 1.0, 0.1, -0.5, ops)
    red = eliminate_boundaries(L, NEUMANN_ALL, ops)
    b = {k: v.toarray() for k, v in red.blocks.items()}
    HG = np.linalg.solve(b["H"], b["G"])
    expected = b["E"] - b["E_N"] @ np.linalg.solve(b["B_N"], b["B_1"] - b["B_2"] @ HG) - b["C"] @ HG
    np.testing.assert_allclose(red.A.toarray(), expected, atol=1e-10)


def test_dirichlet_axis_drops_axis_correction():
    N = 6
    ops = ops_for(N)
    L = assemble_operator(1.0, 0.4, 1.0, 0.1, -0.5, ops)
    red = eliminate_boundaries(L, BoundaryPolicy(BC.DIRICHLET, BC.NEUMANN), ops)
    b = {k: v.toarray() for k, v in red.blocks.items()}
    expected = b["E"] - b["C"] @ np.linalg.solve(b["H"], b["G"])
    np.testing.assert_allclose(red.A.toarray(), expected, atol=1e-10)
    assert red.recon_bx.nnz == 0


def manufactured(N, scale=2.5):
    """Cartesian Poisson problem on the square with u = exp(-rho^2 - z^2).

    With rho = scale (1 + x) and z = scale (1 + y) the normal derivatives
    vanish on the inner edges; u is below 1e-10 on the outer edges.
    """
    ops = ops_for(N)
    L = assemble_operator(1.0, 0.0, 1.0, 0.0, 0.0, ops)
    red = eliminate_boundaries(L, NEUMANN_ALL, ops)
    x = chebyshev_nodes(N)
    X, Y = np.meshgrid(x, x, indexing="ij")
    rho, z = scale * (1 + X), scale * (1 + Y)
    u = np.exp(-(rho**2) - z**2)
    f = scale**2 * (4 * rho**2 + 4 * z**2 - 4) * u
    p = np.linalg.solve(red.A.toarray(), interior_values(f))
    return red, p, u


def test_manufactured_solution_n41():
    red, p, u = manufactured(41)
    assert np.max(np.abs(p - interior_values(u))) < 1e-8
    full = reconstruct_boundary(red, p)
    assert np.max(np.abs(full[-1, :] - u[-1, :])) < 1e-7
    assert np.max(np.abs(full[:, -1] - u[:, -1])) < 1e-7


def test_manufactured_spectral_convergence():
    errs = []
    for N in (11, 21, 31, 41):
        _, p, u = manufactured(N)
        errs.append(np.max(np.abs(p - interior_values(u))))
    for a, b in zip(errs, errs[1:]):
        if a < 1e-10:
            break
        # at least two decades per ten extra nodes
        assert np.log10(a) - np.log10(b) >= 2.0


def test_reconstruct_constant_neumann():
    N = 10
    ops = ops_for(N)
    L = assemble_operator(1.0, 0.2, 1.0, 0.3, 0.0, ops)
    red = eliminate_boundaries(L, NEUMANN_ALL, ops)
    full = red.full(np.full(red.size, 3.5), outer=3.5)
    np.testing.assert_allclose(full, 3.5, rtol=1e-12)


def test_reconstruct_size_check():
    ops = ops_for(5)
    red = eliminate_boundaries(assemble_operator(1.0, 0.0, 1.0, 0.0, 0.0, ops), NEUMANN_ALL, ops)
    with pytest.raises(ValueError):
        red.full(np.ones(7))


def test_reconstruct_multiple_columns(rng):
    ops = ops_for(7)
    red = eliminate_boundaries(assemble_operator(1.0, 0.0, 1.0, 0.0, 0.0, ops), NEUMANN_ALL, ops)
    P = rng.normal(size=(red.size, 3))
    full = red.full(P)
    for c in range(3):
        np.testing.assert_allclose(full[..., c], red.full(P[:, c]))
