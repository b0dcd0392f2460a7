"""Computational domain, Chebyshev-Lobatto grid and cylindrical quadrature.

The physical quarter plane ``0 <= rho <= rho_max``, ``0 <= z <= z_max`` is
mapped onto ``[-1, 1] x [-1, 1]`` by the logarithmic compactification

    x = log10(1 + alpha_rho * rho) - 1,    alpha_rho = 99 / rho_max

and likewise for ``z``.  Lengths are in Bohr radii of the charge-Z atom.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

LN10 = math.log(10.0)
DEFAULT_DELTA = 1e-14


@dataclass(frozen=True)
class DomainSpec:
    """Physical extents of the truncated domain and the map constants."""

    beta_Z: float
    eta: float
    rho_max: float
    z_max: float

    @property
    def alpha_rho(self) -> float:
        return 99.0 / self.rho_max

    @property
    def alpha_z(self) -> float:
        return 99.0 / self.z_max

    @property
    def area(self) -> float:
        return self.rho_max * self.z_max


def domain_extent(beta_Z: float, eta: float) -> float:
    """Square-domain extent ``100 eta / (1 + log10 beta_Z)``."""
    if beta_Z <= 0:
        raise ValueError(f"beta_Z must be positive for the field-scaled domain, got {beta_Z}")
    denom = 1.0 + math.log10(beta_Z)
    if denom <= 0:
        raise ValueError(
            f"beta_Z={beta_Z} gives 1 + log10(beta_Z) = {denom:.3g} <= 0; "
            "use an explicit extent (Coulomb test mode) instead"
        )
    return 100.0 * eta / denom


def make_domain(
    beta_Z: float,
    eta: float,
    *,
    rho_max: float | None = None,
    z_max: float | None = None,
) -> DomainSpec:
    """Build the domain for field strength ``beta_Z`` and scaling ``eta``.

    Explicit ``rho_max``/``z_max`` override the field-scaled formula; this is
    the Coulomb test mode (``beta_Z == 0``) and the unequal-extent option.
    Explicit extents are multiplied by ``eta`` so that domain sequences work
    the same way in both modes.
    """
    if eta <= 0:
        raise ValueError(f"eta must be positive, got {eta}")
    if beta_Z < 0:
        raise ValueError(f"beta_Z must be non-negative, got {beta_Z}")
    if rho_max is None and z_max is None:
        ext = domain_extent(beta_Z, eta)
        return DomainSpec(beta_Z, eta, ext, ext)
    if rho_max is None:
        rho_max = z_max
    if z_max is None:
        z_max = rho_max
    if rho_max <= 0 or z_max <= 0:
        raise ValueError("domain extents must be positive")
    return DomainSpec(beta_Z, eta, rho_max * eta, z_max * eta)


def compactify(r, alpha: float, r_max: float | None = None):
    """Map a physical coordinate in ``[0, r_max]`` to ``[-1, 1]``."""
    r = np.asarray(r, dtype=float)
    if r_max is None:
        r_max = 99.0 / alpha
    tol = 1e-12 * r_max
    if np.any(r < -tol) or np.any(r > r_max + tol):
        raise ValueError(f"coordinate outside [0, {r_max}]")
    return np.log10(1.0 + r * alpha) - 1.0


def decompactify(x, alpha: float):
    """Inverse of :func:`compactify`."""
    x = np.asarray(x, dtype=float)
    # expm1 keeps full relative precision near the axis
    return np.expm1((x + 1.0) * LN10) / alpha


def chebyshev_nodes(N: int) -> np.ndarray:
    """Chebyshev-Lobatto points ``cos(pi j / N)``, ``j = 0..N`` (decreasing)."""
    if N < 1:
        raise ValueError("N must be >= 1")
    x = np.cos(np.pi * np.arange(N + 1) / N)
    # exact symmetry and end points
    x = 0.5 * (x - x[::-1])
    x[0], x[-1] = 1.0, -1.0
    if N % 2 == 0:
        x[N // 2] = 0.0
    return x


def clenshaw_curtis(N: int) -> np.ndarray:
    """Clenshaw-Curtis weights on :func:`chebyshev_nodes` for ``[-1, 1]``."""
    theta = np.pi * np.arange(N + 1) / N
    w = np.zeros(N + 1)
    ii = np.arange(1, N)
    v = np.ones(N - 1)
    if N % 2 == 0:
        w[0] = w[N] = 1.0 / (N**2 - 1)
        for k in range(1, N // 2):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k**2 - 1)
        v -= np.cos(N * theta[ii]) / (N**2 - 1)
    else:
        w[0] = w[N] = 1.0 / N**2
        for k in range(1, (N - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[ii]) / (4 * k**2 - 1)
    w[ii] = 2.0 * v / N
    return w


@dataclass(frozen=True)
class Grid:
    """Tensor Chebyshev-Lobatto grid of degree ``N`` on a :class:`DomainSpec`.

    Full-grid arrays are indexed ``[i, k]`` with ``i`` running over
    ``nodes_x`` and ``k`` over ``nodes_y``; flattening is C-order, so the
    y-index varies fastest (y-columns stacked for successive x-nodes).
    """

    N: int
    domain: DomainSpec
    delta: float = DEFAULT_DELTA
    nodes_x: np.ndarray = field(init=False, repr=False, compare=False)
    nodes_y: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("N must be >= 2")
        nodes = chebyshev_nodes(self.N)
        object.__setattr__(self, "nodes_x", nodes)
        object.__setattr__(self, "nodes_y", nodes.copy())

    @property
    def shape(self) -> tuple[int, int]:
        return (self.N + 1, self.N + 1)

    @cached_property
    def x_eval(self) -> np.ndarray:
        """x-nodes with the axis node moved to ``-1 + delta``."""
        x = self.nodes_x.copy()
        x[-1] = -1.0 + self.delta
        return x

    @cached_property
    def rho(self) -> np.ndarray:
        """Physical rho at each x-node (axis node offset by ``delta``)."""
        return decompactify(self.x_eval, self.domain.alpha_rho)

    @cached_property
    def z(self) -> np.ndarray:
        """Physical z at each y-node (exact, z = 0 on the plane)."""
        return decompactify(self.nodes_y, self.domain.alpha_z)

    @cached_property
    def rho_exact(self) -> np.ndarray:
        return decompactify(self.nodes_x, self.domain.alpha_rho)

    def mesh(self) -> tuple[np.ndarray, np.ndarray]:
        """``(RHO, Z)`` arrays of full-grid shape using exact node positions."""
        return np.meshgrid(self.rho_exact, self.z, indexing="ij")

    @cached_property
    def weights(self) -> np.ndarray:
        """Quadrature weights for ``int f 2 pi rho drho dz`` over the half plane.

        Callers integrating over the full space (both signs of z) multiply
        by 2.
        """
        return quadrature_weights(self)

    def integrate(self, f: np.ndarray, full_space: bool = True) -> float:
        """Integrate a full-grid field with the cylindrical measure."""
        s = float(np.sum(self.weights * f))
        return 2.0 * s if full_space else s

    def inner(self, f: np.ndarray, g: np.ndarray) -> float:
        """Full-space inner product of two real full-grid fields."""
        return self.integrate(f * g)


def quadrature_weights(grid: Grid) -> np.ndarray:
    """Clenshaw-Curtis weights through the log map, times ``2 pi rho``."""
    N = grid.N
    w1 = clenshaw_curtis(N)
    ax, az = grid.domain.alpha_rho, grid.domain.alpha_z
    jac_x = LN10 * 10.0 ** (grid.nodes_x + 1.0) / ax
    jac_y = LN10 * 10.0 ** (grid.nodes_y + 1.0) / az
    wx = w1 * jac_x * 2.0 * np.pi * grid.rho_exact
    wy = w1 * jac_y
    return np.outer(wx, wy)
