"""Coefficient fields of the compactified operators and HF operator assembly.

Energies are in units of the Rydberg energy of charge ``Z`` and lengths in
Bohr radii of charge ``Z``.  For electron ``i`` the operator is

    -lap + m^2/rho^2 + beta^2 rho^2 + 2 beta (m - 1) - 2/r
        + (2/Z) sum_j Phi_D[j]  - (2/Z) sum_j exchange_j

which under ``x = log10(1 + alpha rho) - 1`` becomes
``a d2x + b dx + c d2y + d dy + e``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .grid import LN10, Grid
from .spectral import (
    BC,
    BoundaryPolicy,
    KronOps,
    ReducedOperator,
    assemble_operator,
    diff_matrix,
    eliminate_boundaries,
    kron_ops,
)
from .states import Configuration, OrbitalSpec


def single_particle_coeffs(
    grid: Grid,
    m: int,
    beta_Z: float,
    *,
    coulomb: bool = True,
    zeeman: bool = True,
):
    """Coefficient fields ``(a, b, c, d, e)`` on the full grid.

    ``e`` holds ``m^2/rho^2 + beta^2 rho^2 - 2/r`` plus the constant
    ``2 beta (m - 1)`` when ``zeeman`` is set, so eigenvalues are the
    orbital energies measured from the spin-down Landau floor.
    """
    dom = grid.domain
    ax, az = dom.alpha_rho, dom.alpha_z
    tx, tz = ax / LN10, az / LN10
    # expm1 keeps 10^(x+1) - 1 accurate at the offset axis node
    um1 = np.expm1((grid.x_eval + 1.0) * LN10)
    vm1 = np.expm1((grid.nodes_y + 1.0) * LN10)
    Um1, Vm1 = np.meshgrid(um1, vm1, indexing="ij")
    U, V = Um1 + 1.0, Vm1 + 1.0
    a = -tx**2 * U**-2.0
    b = -tx * ax * U**-2.0 / Um1
    c = -tz**2 * V**-2.0
    d = tz * az * V**-2.0
    rho = Um1 / ax
    e = (m * m) / rho**2 + (beta_Z * rho) ** 2
    if zeeman:
        e = e + 2.0 * beta_Z * (m - 1)
    if coulomb:
        z = Vm1 / az
        e = e - 2.0 / np.sqrt(rho**2 + z**2)
    return a, b, c, d, e


def unsimplified_a(grid: Grid) -> np.ndarray:
    """Unsimplified second-derivative coefficient in x, kept for cross-checks."""
    t = grid.domain.alpha_rho / LN10
    u = 10.0 ** (grid.x_eval + 1.0)
    col = -(t**2) * (10.0 ** (-(grid.x_eval + 1)) - 10.0 ** (-2 * (grid.x_eval + 1))) / (u - 1.0)
    return np.repeat(col[:, None], grid.N + 1, axis=1)


def laplacian_coeffs(grid: Grid, delta_m: int = 0):
    """Coefficients of ``-lap + delta_m^2 / rho^2`` (the potential operators)."""
    return single_particle_coeffs(grid, delta_m, 0.0, coulomb=False, zeeman=False)


class PotentialKind(enum.Enum):
    ORBITAL = "orbital"
    DIRECT = "direct"
    EXCHANGE = "exchange"


def boundary_policy(kind: PotentialKind | str, m: int = 0, z_parity: int = 1) -> BoundaryPolicy:
    """Inner-edge conditions for an orbital or an interaction potential.

    For an orbital ``m`` is its magnetic number; for an exchange potential
    ``m`` is ``delta_m`` and ``z_parity`` the product of the two orbital
    parities (an odd source gives a potential that vanishes on ``z = 0``).
    """
    kind = PotentialKind(kind)
    if kind is PotentialKind.DIRECT:
        return BoundaryPolicy(BC.NEUMANN, BC.NEUMANN)
    axis = BC.NEUMANN if m == 0 else BC.DIRICHLET
    plane = BC.NEUMANN if z_parity > 0 else BC.DIRICHLET
    return BoundaryPolicy(axis, plane)


@dataclass
class Discretization:
    """Grid plus its Kronecker derivative operators."""

    grid: Grid

    @cached_property
    def ops(self) -> KronOps:
        D = diff_matrix(self.grid.nodes_x)
        return kron_ops(D, D)

    def reduce(self, coeffs, policy: BoundaryPolicy) -> ReducedOperator:
        return eliminate_boundaries(assemble_operator(*coeffs, self.ops), policy, self.ops)

    @cached_property
    def interior_weights(self) -> np.ndarray:
        """Full-space quadrature weights restricted to strictly interior nodes."""
        return 2.0 * self.grid.weights[1:-1, 1:-1].ravel()


def hydrogenic_operator(
    disc: Discretization, orbital: OrbitalSpec, beta_Z: float, *, coulomb: bool = True
) -> ReducedOperator:
    coeffs = single_particle_coeffs(disc.grid, orbital.m, beta_Z, coulomb=coulomb)
    return disc.reduce(coeffs, boundary_policy(PotentialKind.ORBITAL, orbital.m, orbital.z_parity))


class MissingPotentialError(KeyError):
    pass


@dataclass
class Potentials:
    """Interior values of the interaction potentials for one SCF iteration.

    ``direct[j]`` is the potential generated by electron ``j``;
    ``exchange[(i, j)]`` (stored for ``i < j``) the exchange potential of
    the pair.
    """

    direct: dict
    exchange: dict

    def pair(self, i: int, j: int) -> np.ndarray:
        key = (min(i, j), max(i, j))
        try:
            field = self.exchange[key]
        except KeyError:
            raise MissingPotentialError(f"no exchange potential for pair {key}") from None
        return getattr(field, "values", field)

    def direct_on(self, i: int, n_e: int) -> np.ndarray:
        """Sum of the direct potentials felt by electron ``i``."""
        total = 0.0
        for j in range(n_e):
            if j != i:
                f = self.direct[j]
                total = total + getattr(f, "values", f)
        return total


class HFOperatorBuilder:
    """Assembles per-electron (decoupled) and block-coupled HF operators."""

    def __init__(self, config: Configuration, disc: Discretization, beta_Z: float):
        self.config = config
        self.disc = disc
        self.beta_Z = beta_Z
        self._hydro: dict[int, ReducedOperator] = {}

    def hydrogenic(self, i: int) -> ReducedOperator:
        if i not in self._hydro:
            self._hydro[i] = hydrogenic_operator(self.disc, self.config.orbitals[i], self.beta_Z)
        return self._hydro[i]

    @property
    def coupling(self) -> float:
        return 2.0 / self.config.Z

    def decoupled(
        self,
        i: int,
        potentials: Potentials | None,
        psi_prev: list[np.ndarray] | None = None,
        *,
        exchange: str = "nonlocal",
        exchange_kernels: dict | None = None,
        guard: float = 1e-8,
    ):
        """Operator for electron ``i`` with the other electrons frozen.

        ``exchange`` selects how the exchange coupling is made local to
        electron ``i``:

        ``"slater"``
            multiplicative potential ``-(2/Z) alpha_ij psi_j / psi_i`` from the
            previous orbitals; nodes with
            ``|psi_i| < guard * max|psi_i|`` get no exchange contribution.
        ``"nonlocal"``
            dense operator ``-(2/Z) psi_j K_ij psi_j`` where ``K_ij`` is the
            inverse of the exchange Poisson operator (``exchange_kernels``).
        ``"none"``
            exchange dropped (not fully spin-polarized states).
        """
        n = self.config.n_e
        base = self.hydrogenic(i).A
        if potentials is None or n == 1:
            return base
        g = self.coupling
        A = base + sp.diags(g * potentials.direct_on(i, n))
        if exchange == "none" or not self.config.fully_spin_polarized:
            return A.tocsr()
        if exchange == "slater":
            if psi_prev is None:
                raise ValueError("Slater exchange needs the previous orbitals")
            den = psi_prev[i]
            ok = np.abs(den) > guard * np.abs(den).max()
            w = np.zeros_like(den)
            for j in range(n):
                if j == i:
                    continue
                w[ok] -= g * potentials.pair(i, j)[ok] * psi_prev[j][ok] / den[ok]
            return (A + sp.diags(w)).tocsr()
        if exchange == "nonlocal":
            if psi_prev is None or exchange_kernels is None:
                raise ValueError("nonlocal exchange needs previous orbitals and kernels")
            dense = A.toarray()
            for j in range(n):
                if j == i:
                    continue
                K = exchange_kernels[(i, j)]
                pj = psi_prev[j]
                dense -= g * (pj[:, None] * K * pj[None, :])
            return dense
        raise ValueError(f"unknown exchange mode {exchange!r}")

    def coupled(self, potentials: Potentials, shifts=None) -> sp.csr_matrix:
        """Block operator over all electrons with diagonal exchange couplings.

        Diagonal blocks are ``A_i + (2/Z) diag(sum Phi_D) - shift_i I`` and the
        off-diagonal blocks ``T_ij = -(2/Z) diag(alpha_ij)``, so
        ``T_ij == T_ji``.  The matrix has size ``n_e (N-1)^2``.
        """
        n = self.config.n_e
        g = self.coupling
        size = self.hydrogenic(0).size
        shifts = np.zeros(n) if shifts is None else np.asarray(shifts, dtype=float)
        rows = []
        for i in range(n):
            row = []
            for j in range(n):
                if i == j:
                    blk = (
                        self.hydrogenic(i).A
                        + sp.diags(g * potentials.direct_on(i, n))
                        - shifts[i] * sp.identity(size)
                    )
                elif self.config.fully_spin_polarized:
                    blk = sp.diags(-g * potentials.pair(i, j))
                else:
                    blk = None
                row.append(blk)
            rows.append(row)
        return sp.bmat(rows, format="csr")
