"""Direct and exchange potentials from the cylindrical Poisson equation.

Potentials solve ``(-lap + delta_m^2/rho^2) Phi = 4 pi * source`` with
``Phi = 0`` on the outer edges, so that the interaction with a density
``n`` is ``(2/Z) Phi`` in the scaled units of :mod:`magnetohf.hamiltonian`.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sl

from .hamiltonian import Discretization, PotentialKind, boundary_policy, laplacian_coeffs
from .spectral import BoundaryPolicy, ReducedOperator

FOUR_PI = 4.0 * np.pi


@dataclass(frozen=True)
class PotentialField:
    """Potential on the interior nodes plus its reconstructed full-grid field."""

    values: np.ndarray
    full: np.ndarray
    kind: PotentialKind
    policy: BoundaryPolicy
    delta_m: int = 0


@dataclass
class _Factor:
    reduced: ReducedOperator
    lu: tuple
    kernel: np.ndarray | None = None


def _private_pivots(lu_piv):
    # LAPACK getrs shifts the pivot array in place for the duration of the
    # call, so concurrent solves with one cached factorization need copies.
    lu, piv = lu_piv
    return lu, piv.copy()


class PoissonSolver:
    """Caches one LU factorization per ``(|delta_m|, z-parity)`` operator.

    The factorizations are reused across every SCF iteration of a run since
    the potential operators do not depend on the orbitals.
    """

    def __init__(self, disc: Discretization):
        self.disc = disc
        self._cache: dict[tuple[int, int], _Factor] = {}
        self._lock = threading.Lock()

    def _factor(self, delta_m: int, z_parity: int) -> _Factor:
        key = (abs(int(delta_m)), 1 if z_parity > 0 else -1)
        with self._lock:
            fac = self._cache.get(key)
            if fac is None:
                kind = PotentialKind.DIRECT if key == (0, 1) else PotentialKind.EXCHANGE
                policy = boundary_policy(kind, key[0], key[1])
                reduced = self.disc.reduce(laplacian_coeffs(self.disc.grid, key[0]), policy)
                fac = _Factor(reduced, sl.lu_factor(reduced.A.toarray()))
                self._cache[key] = fac
            return fac

    def policy(self, delta_m: int = 0, z_parity: int = 1) -> BoundaryPolicy:
        return self._factor(delta_m, z_parity).reduced.policy

    def solve(self, source: np.ndarray, delta_m: int = 0, z_parity: int = 1) -> np.ndarray:
        """Interior solution of ``K Phi = 4 pi source``."""
        fac = self._factor(delta_m, z_parity)
        return sl.lu_solve(_private_pivots(fac.lu), FOUR_PI * np.asarray(source, dtype=float))

    def field(self, source, delta_m=0, z_parity=1, kind=PotentialKind.DIRECT) -> PotentialField:
        fac = self._factor(delta_m, z_parity)
        vals = self.solve(source, delta_m, z_parity)
        return PotentialField(vals, fac.reduced.full(vals), kind, fac.reduced.policy, abs(int(delta_m)))

    def kernel(self, delta_m: int, z_parity: int) -> np.ndarray:
        """Dense ``4 pi K^{-1}``, the interior Green's matrix of the operator."""
        fac = self._factor(delta_m, z_parity)
        with self._lock:
            if fac.kernel is None:
                eye = np.eye(fac.reduced.size)
                fac.kernel = FOUR_PI * sl.lu_solve(_private_pivots(fac.lu), eye)
            return fac.kernel


def direct_potential(solver: PoissonSolver, psi_j: np.ndarray) -> PotentialField:
    """Potential of the density ``|psi_j|^2`` (axis and plane Neumann)."""
    return solver.field(np.abs(psi_j) ** 2, 0, 1, PotentialKind.DIRECT)


def exchange_potential(
    solver: PoissonSolver,
    psi_i: np.ndarray,
    psi_j: np.ndarray,
    delta_m: int,
    z_parity: int = 1,
) -> PotentialField:
    """Potential of the overlap density ``psi_i psi_j``.

    ``z_parity`` is the product of the two orbital parities; an odd overlap
    density gives a potential that vanishes on the ``z = 0`` plane.
    """
    return solver.field(psi_i * psi_j, delta_m, z_parity, PotentialKind.EXCHANGE)
