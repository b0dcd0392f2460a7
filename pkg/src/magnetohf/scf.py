"""Self-consistent field loop for fully spin-polarized atoms.

Each iteration solves the Poisson problems for the current orbitals,
evaluates the HF energy, and then re-solves every electron's eigenproblem
with the other electrons frozen.  Several ways of handling the exchange
coupling are available; see :class:`ScfOptions`.
"""

from __future__ import annotations

import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .eigen import EigenRequest, StateLostError, check_real, select_orbital, shift_invert_eigs
from .grid import Grid
from .hamiltonian import Discretization, HFOperatorBuilder, Potentials
from .poisson import PoissonSolver, direct_potential, exchange_potential
from .states import Configuration

log = logging.getLogger(__name__)

EXCHANGE_MODES = ("nonlocal", "slater", "coupled", "none")


class ScfNotConverged(RuntimeError):
    def __init__(self, message: str, trace):
        super().__init__(message)
        self.trace = list(trace)


@dataclass
class ScfOptions:
    """Knobs of the SCF loop and its eigensolves.

    ``exchange`` chooses how the other electrons' exchange enters electron
    ``i``'s eigenproblem: ``"nonlocal"`` applies the Fock operator built
    from the previous orbitals, ``"slater"`` divides it by the previous
    orbital to get a local potential, and ``"coupled"`` solves all orbitals
    at once in the block operator.  ``mixing`` blends the previous orbital
    into the new one (0 means no damping).
    """

    tol: float = 1e-6
    max_iter: int = 30
    exchange: str = "nonlocal"
    mixing: float = 0.0
    k: int = 15
    krylov_dim: int = 50
    eig_tol: float = 1e-10
    shift_fraction: float = 0.05
    first_shift_factor: float = 1.1
    dense_max: int = 400
    workers: int = 1
    slater_guard: float = 1e-8

    def __post_init__(self):
        if self.exchange not in EXCHANGE_MODES:
            raise ValueError(f"exchange must be one of {EXCHANGE_MODES}, got {self.exchange!r}")
        if not 0.0 <= self.mixing < 1.0:
            raise ValueError("mixing must lie in [0, 1)")
        if self.tol <= 0 or self.max_iter < 1:
            raise ValueError("tol must be positive and max_iter >= 1")


@dataclass
class EnergyRecord:
    """Result of one ``(beta_Z, eta, N)`` run; energies in ``E_{Z,inf}``."""

    beta_Z: float
    eta: float
    N: int
    E_HF: float
    eps: tuple
    iterations: int
    seconds: float
    converged: bool = True
    trace: tuple = ()
    area: float = float("nan")


@dataclass
class ScfState:
    iteration: int
    psi: list
    eps: list
    potentials: Potentials | None
    history: list = field(default_factory=list)
    converged: bool = False
    overlaps: list = field(default_factory=list)


def total_energy(eps, orbitals, potentials: Potentials | None, Z: float, grid: Grid) -> float:
    """HF energy from orbital energies minus the double-counted interaction.

    ``orbitals`` are full-grid fields and ``potentials`` carries full-grid
    fields in ``.full``; brackets use the grid quadrature.
    """
    E = float(np.sum(eps))
    if potentials is None:
        return E
    n = len(orbitals)
    for i in range(n):
        for j in range(n):
            if i == j:
                continue
            Jij = grid.inner(orbitals[i] ** 2, potentials.direct[j].full)
            E -= Jij / Z
            if (min(i, j), max(i, j)) in potentials.exchange:
                Kij = grid.inner(orbitals[i] * potentials.exchange[(min(i, j), max(i, j))].full, orbitals[j])
                E += Kij / Z
    return E


def initial_shift(beta_Z: float) -> float:
    """A shift safely below the lowest bound level at field ``beta_Z``."""
    return -(2.0 + 2.0 * math.log1p(beta_Z) ** 2)


class HFSolver:
    """Runs the SCF iteration for one configuration on one grid."""

    def __init__(self, config: Configuration, grid: Grid, options: ScfOptions | None = None):
        self.config = config
        self.grid = grid
        self.opts = options or ScfOptions()
        self.disc = Discretization(grid)
        self.builder = HFOperatorBuilder(config, self.disc, grid.domain.beta_Z)
        self.poisson = PoissonSolver(self.disc)
        self.workers = max(1, min(self.opts.workers, config.n_e))
        self.exchange = self.opts.exchange if config.fully_spin_polarized else "none"
        if self.exchange == "coupled":
            sectors = [(o.m, o.z_parity) for o in config.orbitals]
            if len(set(sectors)) != len(sectors):
                # the shifted block null vector collapses both orbitals onto
                # the lower level when they share a symmetry sector
                raise ValueError("coupled exchange needs orbitals in distinct (m, parity) sectors")

    # quadrature helpers on interior vectors
    def full(self, i: int, v: np.ndarray) -> np.ndarray:
        return self.builder.hydrogenic(i).full(v)

    def norm2(self, i: int, v: np.ndarray) -> float:
        f = self.full(i, v)
        return self.grid.inner(f, f)

    def normalize(self, i: int, v: np.ndarray) -> np.ndarray:
        return v / math.sqrt(self.norm2(i, v))

    def inner(self, i: int, u: np.ndarray, v: np.ndarray) -> float:
        return self.grid.inner(self.full(i, u), self.full(i, v))

    def _request(self, A, sigma, i, v0=None) -> EigenRequest:
        o = self.opts
        return EigenRequest(
            A, sigma, k=o.k, krylov_dim=o.krylov_dim, tol=o.eig_tol, v0=v0,
            dense_max=o.dense_max, normalize=lambda v: self.normalize(i, v),
        )

    def _map(self, fn, items):
        items = list(items)
        if self.workers == 1 or len(items) == 1:
            return [fn(x) for x in items]
        with ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(fn, items))

    def hydrogenic_init(self):
        """Bare-nucleus orbitals: the ``nu``-th level of each electron's sector."""

        def solve(i):
            orb = self.config.orbitals[i]
            A = self.builder.hydrogenic(i).A
            sigma = initial_shift(self.grid.domain.beta_Z)
            for _ in range(6):
                res = shift_invert_eigs(self._request(A, sigma, i, v0=np.ones(A.shape[0])))
                lowest = float(np.min(np.real(res.values)))
                if lowest > sigma:
                    break
                sigma = lowest - abs(lowest) - 1.0
            idx, _ = select_orbital(res, nu=orb.nu)
            eps = check_real(res.values[idx])
            v = np.real(res.vectors[:, idx])
            v = v * np.sign(v[np.argmax(np.abs(v))])
            return v, eps

        out = self._map(solve, range(self.config.n_e))
        return [o[0] for o in out], [o[1] for o in out]

    def potentials(self, psi) -> Potentials:
        """Direct and (if needed) exchange potentials of the given orbitals."""
        n = self.config.n_e
        orbs = self.config.orbitals
        tasks = [("d", j, j) for j in range(n)]
        if self.exchange != "none":
            tasks += [("x", i, j) for i in range(n) for j in range(i + 1, n)]

        def solve(task):
            kind, i, j = task
            if kind == "d":
                return direct_potential(self.poisson, psi[j])
            dm = orbs[i].m - orbs[j].m
            return exchange_potential(self.poisson, psi[i], psi[j], dm, orbs[i].z_parity * orbs[j].z_parity)

        fields = self._map(solve, tasks) if n > 1 else []
        direct, exchange = {}, {}
        for (kind, i, j), f in zip(tasks, fields):
            if kind == "d":
                direct[j] = f
            else:
                exchange[(i, j)] = f
        return Potentials(direct, exchange)

    def _kernels(self):
        orbs = self.config.orbitals
        n = self.config.n_e
        ker = {}
        for i in range(n):
            for j in range(n):
                if i != j:
                    ker[(i, j)] = self.poisson.kernel(orbs[i].m - orbs[j].m, orbs[i].z_parity * orbs[j].z_parity)
        return ker

    def energy(self, eps, psi, pots) -> float:
        if self.config.n_e == 1:
            return float(eps[0])
        full = [self.full(i, p) for i, p in enumerate(psi)]
        return total_energy(eps, full, pots, self.config.Z, self.grid)

    def _decoupled_step(self, psi, eps, pots, first: bool, hydro_eps):
        # the block solve is started from one decoupled step, as the bare
        # hydrogenic energies are too far off for its shifts
        mode = "nonlocal" if self.exchange == "coupled" else self.exchange
        kernels = self._kernels() if mode == "nonlocal" else None

        def solve(i):
            A = self.builder.decoupled(
                i, pots, psi, exchange=mode, exchange_kernels=kernels, guard=self.opts.slater_guard
            )
            if first:
                sigma = self.opts.first_shift_factor * hydro_eps[i]
            else:
                sigma = eps[i] - self.opts.shift_fraction * abs(eps[i])
            res = shift_invert_eigs(self._request(A, sigma, i, v0=psi[i]))
            idx, ov = select_orbital(res, previous=psi[i], inner=lambda u, v: self.inner(i, u, v))
            v = np.real(res.vectors[:, idx])
            if self.inner(i, v, psi[i]) < 0:
                v = -v
            return v, check_real(res.values[idx]), ov

        out = self._map(solve, range(self.config.n_e))
        return [o[0] for o in out], [o[1] for o in out], [o[2] for o in out]

    def _coupled_step(self, psi, eps, pots):
        n = self.config.n_e
        size = psi[0].size
        M = self.builder.coupled(pots, shifts=eps)
        prev = np.concatenate(psi)

        def block_inner(u, v):
            return sum(self.inner(i, u[i * size:(i + 1) * size], v[i * size:(i + 1) * size]) for i in range(n))

        o = self.opts
        req = EigenRequest(M, 0.0, k=min(o.k, 6), krylov_dim=o.krylov_dim, tol=o.eig_tol, v0=prev, dense_max=o.dense_max)
        res = shift_invert_eigs(req)
        idx, ov = select_orbital(res, previous=prev, inner=block_inner)
        w = np.real(res.vectors[:, idx])
        new_psi, new_eps = [], []
        g = self.builder.coupling
        for i in range(n):
            v = self.normalize(i, w[i * size:(i + 1) * size])
            if self.inner(i, v, psi[i]) < 0:
                v = -v
            new_psi.append(v)
        wts = self.disc.interior_weights
        for i in range(n):
            Hv = self.builder.hydrogenic(i).A @ new_psi[i] + g * pots.direct_on(i, n) * new_psi[i]
            for j in range(n):
                if j != i:
                    Hv = Hv - g * pots.pair(i, j) * new_psi[j]
            new_eps.append(float(np.sum(wts * new_psi[i] * Hv) / np.sum(wts * new_psi[i] ** 2)))
        return new_psi, new_eps, [ov] * n

    def run(self) -> ScfState:
        cfg, opts = self.config, self.opts
        psi, eps = self.hydrogenic_init()
        hydro_eps = list(eps)
        if cfg.n_e == 1:
            state = ScfState(1, psi, eps, None, [eps[0]], True)
            log.info("iter 1 eps=%s E_HF=%.10f (single electron)", _fmt(eps), eps[0])
            return state
        pots = self.potentials(psi)
        history = [self.energy(eps, psi, pots)]
        log.info("iter 0 eps=%s E_HF=%.10f (hydrogenic)", _fmt(eps), history[0])
        state = ScfState(0, psi, eps, pots, history)
        for it in range(1, opts.max_iter + 1):
            if self.exchange == "coupled" and it > 1:
                new_psi, new_eps, ov = self._coupled_step(psi, eps, pots)
            else:
                new_psi, new_eps, ov = self._decoupled_step(psi, eps, pots, it == 1, hydro_eps)
            if opts.mixing > 0:
                new_psi = [
                    self.normalize(i, (1 - opts.mixing) * p + opts.mixing * q)
                    for i, (p, q) in enumerate(zip(new_psi, psi))
                ]
            change = max(math.sqrt(self.norm2(i, p - q)) for i, (p, q) in enumerate(zip(new_psi, psi)))
            psi, eps = new_psi, new_eps
            pots = self.potentials(psi)
            E = self.energy(eps, psi, pots)
            history.append(E)
            log.info("iter %d eps=%s E_HF=%.10f max|dpsi|=%.3e", it, _fmt(eps), E, change)
            self._log_same_sector_overlaps(psi)
            if it >= 2 and history[-2] < E - opts.tol:
                log.info("E_HF rose by %.3e at iteration %d", E - history[-2], it)
            state = ScfState(it, psi, eps, pots, history, False, ov)
            if it >= 2 and abs(E - history[-2]) < opts.tol:
                state.converged = True
                return state
        raise ScfNotConverged(
            f"SCF did not converge in {opts.max_iter} iterations; last change "
            f"{abs(history[-1] - history[-2]):.3e}",
            history,
        )

    def _log_same_sector_overlaps(self, psi):
        orbs = self.config.orbitals
        for i in range(len(orbs)):
            for j in range(i + 1, len(orbs)):
                if (orbs[i].m, orbs[i].z_parity) == (orbs[j].m, orbs[j].z_parity):
                    log.debug("overlap <%d|%d> = %.3e", i, j, self.inner(i, psi[i], psi[j]))


def _fmt(eps) -> str:
    return "[" + ", ".join(f"{e:.8f}" for e in eps) + "]"


def hydrogenic_init(config: Configuration, grid: Grid, options: ScfOptions | None = None):
    """Initial orbitals (interior fields) and energies for ``config``."""
    return HFSolver(config, grid, options).hydrogenic_init()


def run_hf(config: Configuration, grid: Grid, options: ScfOptions | None = None) -> EnergyRecord:
    """Converged HF energy of ``config`` on ``grid``."""
    t0 = time.perf_counter()
    state = HFSolver(config, grid, options).run()
    dt = time.perf_counter() - t0
    return EnergyRecord(
        beta_Z=grid.domain.beta_Z,
        eta=grid.domain.eta,
        N=grid.N,
        E_HF=float(state.history[-1]),
        eps=tuple(float(e) for e in state.eps),
        iterations=max(1, state.iteration),
        seconds=dt,
        converged=state.converged,
        trace=tuple(state.history),
        area=grid.domain.area,
    )
