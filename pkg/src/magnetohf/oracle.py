"""Analytic and brute-force validation suites.

Each check returns an :class:`OracleCheck` holding the measured quantity,
its reference and the tolerance, so that callers (tests, the ``oracle``
subcommand) only have to report.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .eigen import EigenRequest, dense_eigs, shift_invert_eigs
from .extrap import extrapolate_domain, extrapolate_mesh
from .grid import Grid, make_domain
from .hamiltonian import Discretization, hydrogenic_operator
from .poisson import PoissonSolver
from .scf import HFSolver, ScfOptions, initial_shift, run_hf
from .states import OrbitalSpec, hydrogenic_configuration, resolve_state

FOUR_PI = 4.0 * np.pi


@dataclass
class OracleCheck:
    name: str
    value: float
    reference: float
    tolerance: float
    relative: bool = False
    detail: dict = field(default_factory=dict)

    @property
    def error(self) -> float:
        err = abs(self.value - self.reference)
        return err / abs(self.reference) if self.relative else err

    @property
    def passed(self) -> bool:
        return bool(self.error <= self.tolerance)

    def line(self) -> str:
        kind = "rel" if self.relative else "abs"
        status = "PASS" if self.passed else "FAIL"
        return (
            f"{status} {self.name}: value={self.value:.10g} reference={self.reference:.10g} "
            f"{kind} error={self.error:.3e} (tol {self.tolerance:.1e})"
        )


# ---------------------------------------------------------------- eigensolver


def _sorted_spectrum(vals) -> np.ndarray:
    vals = np.asarray(vals, dtype=complex)
    return vals[np.lexsort((vals.imag, vals.real))]


def compare_eigensolvers(A, sigma: float, k: int = 6, krylov_dim: int = 50) -> float:
    """Largest eigenvalue gap between ARPACK shift-invert and a dense solve."""
    req = EigenRequest(A, sigma, k=k, krylov_dim=krylov_dim, dense_max=0, fallback_max=0)
    got = shift_invert_eigs(req)
    ref = dense_eigs(A, sigma, k)
    return float(np.max(np.abs(_sorted_spectrum(got.values) - _sorted_spectrum(ref.values))))


SECTORS = ((0, 1), (-1, 1), (0, -1), (-2, 1))


def eigen_equivalence(
    N_values=(21, 31, 41),
    beta_Z: float = 1.0,
    eta: float = 1.0,
    k: int = 6,
    tol: float = 1e-9,
    sectors=SECTORS,
    hf: bool = True,
) -> list[OracleCheck]:
    """Shift-invert against dense eigenvalues on hydrogenic and HF operators."""
    checks = []
    for N in N_values:
        grid = Grid(N, make_domain(beta_Z, eta))
        disc = Discretization(grid)
        sigma = initial_shift(beta_Z)
        for m, par in sectors:
            A = hydrogenic_operator(disc, OrbitalSpec(m, par), beta_Z).A
            gap = compare_eigensolvers(A, sigma, k)
            checks.append(
                OracleCheck(f"eigen hydrogenic m={m} parity={par:+d} N={N}", gap, 0.0, tol, detail={"n": A.shape[0]})
            )
    if not hf:
        return checks
    # one frozen-field HF operator with dense nonlocal exchange
    N = N_values[min(1, len(N_values) - 1)]
    solver = HFSolver(resolve_state("1^3(-1)+", 2), Grid(N, make_domain(beta_Z, eta)))
    psi, eps = solver.hydrogenic_init()
    pots = solver.potentials(psi)
    kernels = solver._kernels()
    for i in range(len(psi)):
        A = solver.builder.decoupled(i, pots, psi, exchange="nonlocal", exchange_kernels=kernels)
        gap = compare_eigensolvers(A, eps[i], k)
        checks.append(OracleCheck(f"eigen HF electron {i} N={N}", gap, 0.0, tol, detail={"n": A.shape[0]}))
    return checks


# ---------------------------------------------------------------- Poisson


def harmonic_lift(grid: Grid):
    """A smooth function equal to ``1/r`` on the outer edges, and its Laplacian.

    ``g = s^(-1/2)`` with ``s = r^2 + c (R_rho^2 - rho^2)(R_z^2 - z^2)``;
    the second term vanishes on both outer edges and keeps ``s > 0`` at the
    origin.  Adding ``Q g`` to the Dirichlet-zero solution of the corrected
    source gives the free-space potential of a charge ``Q``.
    """
    dom = grid.domain
    P = dom.rho_max**2
    Qz = dom.z_max**2
    c = 1.0 / (2.0 * max(P, Qz))
    rho, z = grid.mesh()
    p = P - rho**2
    q = Qz - z**2
    s = rho**2 + z**2 + c * p * q
    lap_s = 6.0 - 4.0 * c * q - 2.0 * c * p
    grad2 = (2.0 * rho - 2.0 * c * rho * q) ** 2 + (2.0 * z - 2.0 * c * z * p) ** 2
    g = s**-0.5
    lap_g = -0.5 * s**-1.5 * lap_s + 0.75 * s**-2.5 * grad2
    return g, lap_g


def free_space_potential(solver: PoissonSolver, density_full: np.ndarray) -> np.ndarray:
    """Potential of an axisymmetric, z-even density without the outer-wall image.

    Returns the field on the full grid.
    """
    grid = solver.disc.grid
    Q = grid.integrate(density_full)
    g, lap_g = harmonic_lift(grid)
    src = density_full + Q * lap_g / FOUR_PI
    w = solver.field(src[1:-1, 1:-1].ravel()).full
    return w + Q * g


def uniform_ball_potential(r, radius: float, charge: float = 1.0):
    r = np.asarray(r, dtype=float)
    inside = charge * (3.0 * radius**2 - r**2) / (2.0 * radius**3)
    with np.errstate(divide="ignore"):
        outside = charge / r
    return np.where(r <= radius, inside, outside)


def poisson_ball(N: int = 61, extent: float = 10.0) -> list[OracleCheck]:
    """Uniform unit-charge ball of radius ``extent/10``: interior error and far-field ``r Phi``."""
    radius = extent / 10.0
    grid = Grid(N, make_domain(0.0, 1.0, rho_max=extent))
    solver = PoissonSolver(Discretization(grid))
    rho, z = grid.mesh()
    r = np.hypot(rho, z)
    density = np.where(r <= radius, 3.0 / (FOUR_PI * radius**3), 0.0)
    # the sampled step carries an O(1/N) charge error; rescale it to the
    # known unit charge, as normalized orbital densities are in the SCF
    density /= grid.integrate(density)
    phi = free_space_potential(solver, density)
    exact = uniform_ball_potential(r, radius)
    inner = (slice(1, -1), slice(1, -1))
    err = float(np.max(np.abs(phi[inner] - exact[inner])) / np.max(np.abs(exact[inner])))
    far = np.zeros_like(r, dtype=bool)
    far[inner] = r[inner] > 0.8 * extent
    r_phi = r[far] * phi[far]
    worst = float(r_phi[np.argmax(np.abs(r_phi - 1.0))])
    return [
        OracleCheck(f"uniform ball potential N={N}", err, 0.0, 0.01),
        OracleCheck(f"far-field r*Phi N={N}", worst, 1.0, 0.05, relative=True),
    ]


def gaussian_interaction(a: float = 1.0, b: float = 2.0, N: int = 41, extent: float = 12.0) -> OracleCheck:
    """Coulomb energy of two normalized Gaussian densities, ``2 sqrt(mu/pi)``."""
    grid = Grid(N, make_domain(0.0, 1.0, rho_max=extent))
    solver = PoissonSolver(Discretization(grid))
    rho, z = grid.mesh()
    r2 = rho**2 + z**2
    na = (a / np.pi) ** 1.5 * np.exp(-a * r2)
    nb = (b / np.pi) ** 1.5 * np.exp(-b * r2)
    phi_b = free_space_potential(solver, nb)
    value = grid.integrate(na * phi_b)
    ref = 2.0 * math.sqrt(a * b / (np.pi * (a + b)))
    return OracleCheck(f"gaussian interaction a={a} b={b} N={N}", value, ref, 1e-4, relative=True)


# ---------------------------------------------------------------- Coulomb mode

# base extents chosen so that the smallest domain still carries a visible
# confinement shift while the largest is converged
COULOMB_EXTENTS = {0: 24.0, -1: 72.0}


def coulomb_level(
    m: int,
    *,
    rho_max: float | None = None,
    etas=(0.25, 0.5, 1.0),
    N_values=(21, 26, 31, 36, 41),
    options: ScfOptions | None = None,
) -> OracleCheck:
    """Lowest even-parity level of sector ``m`` without field, after both extrapolations."""
    rho_max = COULOMB_EXTENTS.get(m, 24.0 * (abs(m) + 1) ** 2) if rho_max is None else rho_max
    cfg = hydrogenic_configuration(1.0, m, 1, 1)
    mesh_limits, areas, r2 = [], [], []
    for eta in etas:
        recs = [run_hf(cfg, Grid(N, make_domain(0.0, eta, rho_max=rho_max)), options) for N in N_values]
        ext = extrapolate_mesh(recs)
        mesh_limits.append(ext.value)
        areas.append(recs[0].area)
        r2.append(ext.fit.r2)
    dom = extrapolate_domain(areas, mesh_limits)
    ref = -1.0 / (abs(m) + 1) ** 2
    return OracleCheck(
        f"Coulomb level m={m}",
        dom.value,
        ref,
        0.01,
        relative=True,
        detail={"mesh_limits": mesh_limits, "mesh_r2": r2, "domain_r2": dom.fit.r2},
    )


def run_all(quick: bool = False) -> list[OracleCheck]:
    """Every suite; ``quick`` trims mesh sizes for a fast smoke run."""
    checks = []
    checks += eigen_equivalence((21, 31) if quick else (21, 31, 41))
    checks += poisson_ball(51 if quick else 61)
    checks.append(gaussian_interaction())
    checks.append(coulomb_level(0))
    checks.append(coulomb_level(-1))
    return checks
