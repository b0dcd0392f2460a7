import logging

import numpy as np
import pytest
import scipy.linalg as sl
import scipy.sparse as sp

from magnetohf.eigen import (
    ComplexEigenvalueError,
    EigenError,
    EigenRequest,
    EigenResult,
    StateLostError,
    check_real,
    dense_eigs,
    select_orbital,
    shift_invert_eigs,
)
from magnetohf.grid import Grid, make_domain
from magnetohf.hamiltonian import Discretization, hydrogenic_operator
from magnetohf.oracle import compare_eigensolvers
from magnetohf.scf import HFSolver
from magnetohf.states import OrbitalSpec, hydrogenic_configuration


@pytest.fixture(scope="module")
def hydrogen41():
    disc = Discretization(Grid(41, make_domain(1.0, 1.0)))
    return hydrogenic_operator(disc, OrbitalSpec(0, 1), 1.0).A


def test_diagonal_example():
    res = shift_invert_eigs(EigenRequest(np.diag([1.0, 2.0, 4.0]), 3.5, k=1))
    assert res.values[0] == pytest.approx(4.0, abs=1e-14)


def test_diagonal_example_arpack():
    A = sp.diags(np.arange(1.0, 301.0), format="csr")
    res = shift_invert_eigs(EigenRequest(A, 3.4, k=3, dense_max=0))
    assert res.method == "arpack"
    np.testing.assert_allclose(res.values, [3.0, 4.0, 2.0], atol=1e-10)


def test_random_symmetric_against_dense(rng):
    M = rng.normal(size=(200, 200))
    A = (M + M.T) / 2
    sigma = 0.3
    res = shift_invert_eigs(EigenRequest(A, sigma, k=5, dense_max=0))
    ref = np.linalg.eigvalsh(A)
    nearest = ref[np.argsort(np.abs(ref - sigma))[:5]]
    np.testing.assert_allclose(res.values, nearest, atol=1e-10)
    assert compare_eigensolvers(A, sigma, k=5) <= 1e-10


def test_residuals_reported(rng):
    M = rng.normal(size=(120, 120))
    A = M + M.T
    res = shift_invert_eigs(EigenRequest(A, 0.0, k=4, dense_max=0))
    assert np.all(res.residuals < 1e-8)


@pytest.mark.parametrize("krylov_dim", [50, 100, 250])
def test_krylov_dimension_stability(hydrogen41, krylov_dim):
    ref = shift_invert_eigs(EigenRequest(hydrogen41, -2.0, k=6, krylov_dim=50, dense_max=0)).values
    res = shift_invert_eigs(EigenRequest(hydrogen41, -2.0, k=6, krylov_dim=krylov_dim, dense_max=0))
    assert res.method == "arpack"
    low = np.min(np.real(res.values))
    assert low < 0.0
    assert abs(low - np.min(np.real(ref))) <= 1e-8


def test_sigma_independence(hydrogen41):
    base = shift_invert_eigs(EigenRequest(hydrogen41, -2.0, k=6, dense_max=0))
    ground = float(np.min(np.real(base.values)))
    for sigma in (ground - 0.5, ground - 0.25, ground - 0.05, ground + 0.05):
        res = shift_invert_eigs(EigenRequest(hydrogen41, sigma, k=6, dense_max=0))
        got = np.real(res.values)[np.argmin(np.abs(np.real(res.values) - ground))]
        assert abs(got - ground) <= 1e-9


def test_eigenvector_subspace_angle():
    disc = Discretization(Grid(31, make_domain(1.0, 1.0)))
    A = hydrogenic_operator(disc, OrbitalSpec(-1, 1), 1.0).A
    res = shift_invert_eigs(EigenRequest(A, -1.5, k=4, dense_max=0))
    ref = dense_eigs(A, -1.5, 4)
    for c in range(4):
        j = int(np.argmin(np.abs(ref.values - res.values[c])))
        u = np.real(res.vectors[:, c])
        v = np.real(ref.vectors[:, j])
        cos = abs(u @ v) / (np.linalg.norm(u) * np.linalg.norm(v))
        assert np.sqrt(max(0.0, 1.0 - cos**2)) <= 1e-6


def test_quadrature_normalization():
    solver = HFSolver(hydrogenic_configuration(1.0), Grid(31, make_domain(1.0, 1.0)))
    A = solver.builder.hydrogenic(0).A
    res = shift_invert_eigs(solver._request(A, -2.0, 0))
    for c in range(res.vectors.shape[1]):
        assert solver.norm2(0, res.vectors[:, c]) == pytest.approx(1.0, abs=1e-10)


def test_singular_shift_is_perturbed(caplog):
    A = sp.diags(np.arange(1.0, 501.0), format="csr")
    with caplog.at_level(logging.WARNING, logger="magnetohf.eigen"):
        res = shift_invert_eigs(EigenRequest(A, 3.0, k=1, dense_max=0))
    assert res.values[0] == pytest.approx(3.0, abs=1e-10)
    assert "singular" in caplog.text


def test_arpack_failure_falls_back_to_dense(rng, monkeypatch):
    import scipy.sparse.linalg as sla

    def no_convergence(*args, **kwargs):
        raise sla.ArpackNoConvergence("forced", np.array([]), np.zeros((0, 0)))

    monkeypatch.setattr(sla, "eigs", no_convergence)
    M = rng.normal(size=(300, 300))
    A = M + M.T
    req = EigenRequest(A, 0.0, k=10, dense_max=0)
    res = shift_invert_eigs(req)
    assert res.method == "dense-fallback"
    ref = np.linalg.eigvalsh(A)
    np.testing.assert_allclose(np.sort(res.values), np.sort(ref[np.argsort(np.abs(ref))[:10]]), atol=1e-9)
    req.fallback_max = 0
    with pytest.raises(EigenError):
        shift_invert_eigs(req)


def test_check_real():
    assert check_real(complex(-2.0, 1e-12)) == -2.0
    with pytest.raises(ComplexEigenvalueError):
        check_real(complex(-2.0, 1e-3))


# ---------------------------------------------------------------- selection


def result_of(values, vectors=None):
    values = np.asarray(values)
    if vectors is None:
        vectors = np.eye(values.size)
    return EigenResult(values, vectors, 0.0, "test")


def test_select_nu_one():
    res = result_of([-1.2, -3.0, -0.4])
    idx, _ = select_orbital(res, nu=1)
    assert res.values[idx] == -3.0


def test_select_nu_two_skips_complex():
    res = result_of(np.array([-1.2 + 0.5j, -3.0, -0.4, -1.2 - 0.5j]))
    idx, _ = select_orbital(res, nu=2)
    assert res.values[idx] == -0.4


def test_select_previous_orbital():
    vecs = np.eye(3)
    res = result_of([-3.0, -1.2, -0.4], vecs)
    idx, ov = select_orbital(res, previous=vecs[:, 1].copy())
    assert idx == 1 and ov == pytest.approx(1.0)


def test_select_near_tie_warns(caplog):
    res = result_of([-1.0, -0.9, 0.5])
    prev = np.array([0.71, 0.70, np.sqrt(1 - 0.71**2 - 0.70**2)])
    with caplog.at_level(logging.WARNING, logger="magnetohf.eigen"):
        idx, ov = select_orbital(res, previous=prev)
    assert idx == 0 and ov == pytest.approx(0.71)
    assert "near tie" in caplog.text


def test_select_state_lost():
    res = result_of([-1.0, -0.9, 0.5])
    prev = np.array([0.4, 0.4, np.sqrt(1 - 0.32)])
    res.vectors = res.vectors[:, :2]
    res.values = res.values[:2]
    with pytest.raises(StateLostError):
        select_orbital(res, previous=prev)


def test_select_needs_one_target():
    res = result_of([-1.0])
    with pytest.raises(ValueError):
        select_orbital(res)
    with pytest.raises(ValueError):
        select_orbital(res, nu=1, previous=np.ones(1))


def test_dense_oracle_is_full_spectrum(rng):
    A = rng.normal(size=(30, 30))
    res = dense_eigs(A, 0.0)
    np.testing.assert_allclose(np.sort_complex(res.values), np.sort_complex(sl.eigvals(A)), atol=1e-10)
