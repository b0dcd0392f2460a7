import logging

import numpy as np
import pytest

from magnetohf.extrap import FitError, extrapolate_domain, extrapolate_mesh
from magnetohf.grid import Grid, make_domain
from magnetohf.poisson import PotentialField
from magnetohf.hamiltonian import Potentials, PotentialKind
from magnetohf.scf import HFSolver, ScfNotConverged, ScfOptions, hydrogenic_init, run_hf, total_energy
from magnetohf.spectral import NEUMANN_ALL
from magnetohf.states import hydrogenic_configuration, resolve_state


@pytest.fixture(scope="module")
def helium_p1():
    """Converged 1^3(-1)+ solver state at beta_Z = 1, N = 21."""
    solver = HFSolver(resolve_state("1^3(-1)+", 2), Grid(21, make_domain(1.0, 1.0)))
    return solver, solver.run()


def test_hydrogenic_init_helium():
    cfg = resolve_state("1^3(-1)+", 2)
    psi, eps = hydrogenic_init(cfg, Grid(21, make_domain(1.0, 1.0)))
    assert [(o.m, o.nu) for o in cfg.orbitals] == [(0, 1), (-1, 1)]
    assert len(psi) == 2
    assert all(e < 0 for e in eps)


def test_hydrogenic_init_lithium():
    cfg = resolve_state("1^4(-3)+", 3)
    assert [(o.m, o.z_parity, o.nu) for o in cfg.orbitals] == [(0, 1, 1), (-1, 1, 1), (-2, 1, 1)]
    psi, eps = hydrogenic_init(cfg, Grid(21, make_domain(1.0, 1.0)))
    assert len(psi) == 3 and all(e < 0 for e in eps)


def test_hydrogenic_init_excited_in_sector():
    cfg = resolve_state("1^3(0)+", 2)
    _, eps = hydrogenic_init(cfg, Grid(21, make_domain(1.0, 1.0)))
    # 2s0 is the second level of the same sector
    assert eps[0] < eps[1] < 0


def test_coulomb_mode_ground_level():
    rec = run_hf(hydrogenic_configuration(1.0), Grid(31, make_domain(0.0, 1.0, rho_max=40.0)))
    assert rec.E_HF == pytest.approx(-1.0, rel=0.01)


def test_single_electron_one_iteration():
    rec = run_hf(hydrogenic_configuration(1.0, -1), Grid(21, make_domain(6.25, 1.0)))
    assert rec.iterations == 1
    assert rec.E_HF == rec.eps[0]


def test_total_energy_without_interaction():
    g = Grid(5, make_domain(1.0, 1.0))
    zero = PotentialField(np.zeros(16), np.zeros(g.shape), PotentialKind.DIRECT, NEUMANN_ALL)
    pots = Potentials({0: zero, 1: zero}, {(0, 1): zero})
    orbitals = [np.ones(g.shape), np.ones(g.shape)]
    assert total_energy([-1.5, -0.25], orbitals, pots, 2.0, g) == -1.75
    assert total_energy([-1.5, -0.25], orbitals, None, 2.0, g) == -1.75


def interaction_brackets(solver, psi, pots):
    """Per-electron interaction energy, g sum_j (<i|Phi_j|i> - <i|alpha_ij|j>), on the full grid."""
    full = [solver.full(i, p) for i, p in enumerate(psi)]
    g = solver.builder.coupling
    out = []
    for i in range(len(full)):
        b = 0.0
        for j in range(len(full)):
            if j != i:
                b += solver.grid.inner(full[i] ** 2, pots.direct[j].full)
                b -= solver.grid.inner(full[i] * pots.exchange[(min(i, j), max(i, j))].full, full[j])
        out.append(g * b)
    return out


def test_double_counting_is_half_the_interaction(helium_p1):
    solver, state = helium_p1
    psi, pots, eps = state.psi, state.potentials, state.eps
    interaction = sum(interaction_brackets(solver, psi, pots))
    correction = sum(eps) - solver.energy(eps, psi, pots)
    assert interaction > 0
    assert correction == pytest.approx(interaction / 2, rel=1e-12)


def test_double_counting_from_operator_assembly(helium_p1):
    """Rayleigh quotients of the Fock and bare operators differ by the interaction.

    The interior rule omits the symmetry-plane row, so agreement is at the
    O(1/N^2) quadrature level rather than round-off.
    """
    solver, state = helium_p1
    psi, pots = state.psi, state.potentials
    kernels = solver._kernels()
    w = solver.disc.interior_weights
    eps_with, eps_without = [], []
    for i, p in enumerate(psi):
        F = solver.builder.decoupled(i, pots, psi, exchange="nonlocal", exchange_kernels=kernels)
        h = solver.builder.hydrogenic(i).A
        norm = np.sum(w * p * p)
        eps_with.append(float(np.sum(w * p * (F @ p)) / norm))
        eps_without.append(float(np.sum(w * p * (h @ p)) / norm))
    interaction = sum(eps_with) - sum(eps_without)
    correction = sum(eps_with) - solver.energy(eps_with, psi, pots)
    assert correction == pytest.approx(interaction / 2, rel=2e-3)


def test_orbital_norms(helium_p1):
    solver, state = helium_p1
    for i, p in enumerate(state.psi):
        assert solver.norm2(i, p) == pytest.approx(1.0, abs=1e-9)


def test_energy_oscillation_is_damped(helium_p1):
    _, state = helium_p1
    steps = np.abs(np.diff(state.history[2:]))
    for prev, cur in zip(steps, steps[1:]):
        if prev < 1e-6:
            break
        assert cur < prev / 3


def test_energy_rise_is_logged(caplog):
    with caplog.at_level(logging.INFO, logger="magnetohf.scf"):
        rec = run_hf(resolve_state("1^3(-1)+", 2), Grid(21, make_domain(1.0, 1.0)))
    assert rec.converged
    assert "E_HF rose" in caplog.text


@pytest.mark.xfail(
    strict=True,
    reason="undamped iteration approaches E_HF as a damped alternation: the energy "
    "over-binds at iteration 2 and rises at iteration 3 in every run measured",
)
def test_energy_decreases_after_second_iteration():
    runs = [
        run_hf(resolve_state(label, 2), Grid(21, make_domain(beta, 1.0)))
        for label in ("1^3(0)+", "1^3(-1)+")
        for beta in (1.0, 6.25)
    ]
    monotone = [bool(np.all(np.diff(r.trace[2:]) < 1e-6)) for r in runs]
    assert np.mean(monotone) >= 0.95


@pytest.mark.parametrize("beta", [1.0, 10.0, 100.0])
def test_helium_iteration_count(beta):
    rec = run_hf(resolve_state("1^3(-1)+", 2), Grid(21, make_domain(beta, 1.0)))
    assert rec.converged
    assert rec.iterations <= 10


def test_exchange_modes_agree_for_nodeless_orbitals():
    cfg = resolve_state("1^3(-1)+", 2)
    g = Grid(21, make_domain(1.0, 1.0))
    a = run_hf(cfg, g, ScfOptions(exchange="nonlocal")).E_HF
    b = run_hf(cfg, g, ScfOptions(exchange="slater")).E_HF
    assert abs(a - b) <= 1e-5


def test_dropping_exchange_raises_energy():
    cfg = resolve_state("1^3(-1)+", 2)
    g = Grid(21, make_domain(1.0, 1.0))
    with_x = run_hf(cfg, g).E_HF
    without = run_hf(cfg, g, ScfOptions(exchange="none")).E_HF
    assert without > with_x


def test_coupled_rejects_shared_sector():
    with pytest.raises(ValueError, match="distinct"):
        HFSolver(resolve_state("1^3(0)+", 2), Grid(11, make_domain(1.0, 1.0)), ScfOptions(exchange="coupled"))


def test_non_convergence_reports_trace():
    with pytest.raises(ScfNotConverged) as info:
        run_hf(resolve_state("1^3(-1)+", 2), Grid(15, make_domain(1.0, 1.0)), ScfOptions(max_iter=1))
    assert len(info.value.trace) == 2


@pytest.mark.parametrize("kw", [{"exchange": "bogus"}, {"mixing": 1.0}, {"tol": 0.0}, {"max_iter": 0}])
def test_options_validation(kw):
    with pytest.raises(ValueError):
        ScfOptions(**kw)


def test_workers_capped_by_electrons():
    s = HFSolver(resolve_state("1^3(-1)+", 2), Grid(11, make_domain(1.0, 1.0)), ScfOptions(workers=8))
    assert s.workers == 2


def test_threaded_run_matches_serial():
    cfg = resolve_state("1^4(-3)+", 3)
    g = Grid(15, make_domain(1.0, 1.0))
    a = run_hf(cfg, g, ScfOptions(workers=1))
    b = run_hf(cfg, g, ScfOptions(workers=3))
    assert a.E_HF == pytest.approx(b.E_HF, abs=1e-12)


@pytest.fixture(scope="module")
def helium_p1_beta_125():
    cfg = resolve_state("1^3(-1)+", 2)
    return {eta: [run_hf(cfg, Grid(N, make_domain(125.0, eta))) for N in (26, 31, 36, 41, 51)] for eta in (0.25, 0.5, 1.0)}


@pytest.mark.slow
@pytest.mark.xfail(
    strict=True,
    raises=FitError,
    reason="at eta = 1 the five mesh levels are pre-asymptotic (N = 26 over-binds by 0.14) "
    "and the biexponential limit lands 0.06 below the converged value",
)
def test_helium_p1_at_beta_125(helium_p1_beta_125):
    finals = [extrapolate_mesh(recs).value for recs in helium_p1_beta_125.values()]
    areas = [recs[0].area for recs in helium_p1_beta_125.values()]
    value = extrapolate_domain(areas, finals).value
    assert abs(value) == pytest.approx(14.0163, rel=5e-3)


@pytest.mark.slow
def test_helium_p1_at_beta_125_finest_mesh(helium_p1_beta_125):
    finals = [recs[-1].E_HF for recs in helium_p1_beta_125.values()]
    areas = [recs[-1].area for recs in helium_p1_beta_125.values()]
    value = extrapolate_domain(areas, finals).value
    assert abs(value) == pytest.approx(14.0163, rel=5e-3)
