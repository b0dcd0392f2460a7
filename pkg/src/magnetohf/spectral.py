"""Chebyshev collocation operators on the tensor grid.

Operators act on the *trimmed* grid: the outer nodes ``x = +1`` and
``y = +1`` carry homogeneous Dirichlet data and are never stored.  On the
trimmed grid the node ``(i, k)``, ``i, k = 1..N``, has flat index
``(i - 1) * N + (k - 1)`` (y varies fastest).  The inner edges ``x = -1``
(the magnetic axis) and ``y = -1`` (the ``z = 0`` plane) are eliminated in
favour of the strictly interior ``(N - 1)**2`` unknowns by
:func:`eliminate_boundaries`.
"""

from __future__ import annotations

import enum
import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

log = logging.getLogger(__name__)


class BC(enum.Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"


@dataclass(frozen=True)
class BoundaryPolicy:
    """Conditions on the two inner edges; outer edges are always Dirichlet."""

    axis: BC  # x = -1, rho = 0
    plane: BC  # y = -1, z = 0

    def __str__(self) -> str:
        return f"axis={self.axis.value},plane={self.plane.value}"


DIRICHLET_ALL = BoundaryPolicy(BC.DIRICHLET, BC.DIRICHLET)
NEUMANN_ALL = BoundaryPolicy(BC.NEUMANN, BC.NEUMANN)


def diff_matrix(nodes: np.ndarray) -> np.ndarray:
    """Collocation derivative matrix for interpolation on ``nodes``.

    Off-diagonal entries are ``a_i / (a_j (x_i - x_j))`` with
    ``a_j = prod_{k != j} (x_j - x_k)``.  The diagonal
    ``sum_{k != j} 1 / (x_j - x_k)`` is evaluated as minus the off-diagonal
    row sum, which is the same quantity but keeps row sums at round-off.
    """
    x = np.asarray(nodes, dtype=float)
    n = x.size
    diff = x[:, None] - x[None, :]
    np.fill_diagonal(diff, 1.0)
    if np.any(diff == 0.0):
        raise ValueError("nodes must be distinct")
    a = np.prod(diff, axis=1)
    D = (a[:, None] / a[None, :]) / diff
    np.fill_diagonal(D, 0.0)
    D[np.arange(n), np.arange(n)] = -D.sum(axis=1)
    return D


@dataclass(frozen=True)
class KronOps:
    """First and second derivative operators on the trimmed ``N x N`` grid."""

    N: int
    Dx: sp.csr_matrix
    Dy: sp.csr_matrix
    Dxx: sp.csr_matrix
    Dyy: sp.csr_matrix
    dx1: np.ndarray  # 1D trimmed first-derivative matrices, kept for B_x/B_y
    dy1: np.ndarray
    # weight of the outer node in the inner-edge derivative row
    x_outer: float = 0.0
    y_outer: float = 0.0

    @property
    def size(self) -> int:
        return self.N * self.N


def kron_ops(Dx: np.ndarray, Dy: np.ndarray) -> KronOps:
    """Build ``D_x (x) I``, ``I (x) D_y`` and their squares, outer rows excised."""
    if Dx.shape[0] != Dy.shape[0]:
        raise ValueError("only equal node counts in x and y are supported")
    N = Dx.shape[0] - 1
    # square before trimming: the dropped outer node carries a zero value
    dxx = (Dx @ Dx)[1:, 1:]
    dyy = (Dy @ Dy)[1:, 1:]
    dx = Dx[1:, 1:]
    dy = Dy[1:, 1:]
    eye = sp.identity(N, format="csr")
    return KronOps(
        N=N,
        Dx=sp.kron(sp.csr_matrix(dx), eye, format="csr"),
        Dy=sp.kron(eye, sp.csr_matrix(dy), format="csr"),
        Dxx=sp.kron(sp.csr_matrix(dxx), eye, format="csr"),
        Dyy=sp.kron(eye, sp.csr_matrix(dyy), format="csr"),
        dx1=dx,
        dy1=dy,
        x_outer=float(Dx[-1, 0]),
        y_outer=float(Dy[-1, 0]),
    )


def _trimmed(f: np.ndarray, N: int) -> np.ndarray:
    f = np.asarray(f, dtype=float)
    if f.shape == (N + 1, N + 1):
        f = f[1:, 1:]
    if f.shape == (N, N):
        return f.ravel()
    if f.shape == (N * N,):
        return f
    raise ValueError(f"coefficient field of shape {f.shape} does not fit N={N}")


def assemble_operator(a, b, c, d, e, ops: KronOps) -> sp.csr_matrix:
    """``diag(a) Dxx + diag(b) Dx + diag(c) Dyy + diag(d) Dy + diag(e)``.

    Coefficients may be full-grid ``(N+1, N+1)`` arrays, trimmed ``(N, N)``
    arrays, flat trimmed vectors or scalars.
    """
    N = ops.N
    terms = []
    for coef, op in ((a, ops.Dxx), (b, ops.Dx), (c, ops.Dyy), (d, ops.Dy)):
        if np.isscalar(coef):
            if coef != 0:
                terms.append(coef * op)
            continue
        terms.append(sp.diags(_trimmed(coef, N)) @ op)
    if np.isscalar(e):
        diag = np.full(N * N, float(e))
    else:
        diag = _trimmed(e, N)
    L = sp.diags(diag, format="csr")
    for t in terms:
        L = L + t
    return L.tocsr()


@dataclass(frozen=True)
class BoundaryIndex:
    """Flat trimmed-grid indices of the interior and the two inner edges."""

    N: int

    @cached_property
    def interior(self) -> np.ndarray:
        i, k = np.meshgrid(np.arange(self.N - 1), np.arange(self.N - 1), indexing="ij")
        return (i * self.N + k).ravel()

    @cached_property
    def by(self) -> np.ndarray:
        # y = -1 edge at interior x nodes
        return np.arange(self.N - 1) * self.N + (self.N - 1)

    @cached_property
    def bx(self) -> np.ndarray:
        # x = -1 edge, all y nodes including the corner
        return (self.N - 1) * self.N + np.arange(self.N)


class SingularBoundaryError(np.linalg.LinAlgError):
    pass


@dataclass
class ReducedOperator:
    """Operator on the strictly interior nodes with boundary reconstruction.

    ``recon_by @ p_int`` and ``recon_bx @ p_int`` give the values on the
    ``z = 0`` and axis edges; a Dirichlet edge has a zero map.  ``outer_by``
    and ``outer_bx`` are the edge values produced by a unit value on the
    outer edges (zero in every solve of this package, but needed to
    reconstruct fields that do not vanish there).
    """

    A: sp.csr_matrix
    recon_by: sp.csr_matrix
    recon_bx: sp.csr_matrix
    policy: BoundaryPolicy
    N: int
    blocks: dict
    outer_by: np.ndarray | None = None
    outer_bx: np.ndarray | None = None

    @property
    def size(self) -> int:
        return (self.N - 1) ** 2

    def full(self, p_int: np.ndarray, outer: float = 0.0) -> np.ndarray:
        """Alias for :func:`reconstruct_boundary`."""
        return reconstruct_boundary(self, p_int, outer)


def _solve_diag(M: np.ndarray, R, edge: str):
    d = np.asarray(M.diagonal() if sp.issparse(M) else np.diag(M))
    off = (M - sp.diags(d)) if sp.issparse(M) else M - np.diag(d)
    off_norm = abs(off).max() if off.size else 0.0
    if off_norm == 0.0:
        if np.any(d == 0):
            raise SingularBoundaryError(f"singular {edge} block on the inner edge")
        return sp.diags(1.0 / d) @ R
    dense = M.toarray() if sp.issparse(M) else M
    cond = np.linalg.cond(dense)
    log.debug("%s block condition number %.3e", edge, cond)
    if not np.isfinite(cond) or cond > 1e14:
        raise SingularBoundaryError(f"singular {edge} block on the inner edge")
    return sp.csr_matrix(np.linalg.solve(dense, R.toarray()))


def eliminate_boundaries(L: sp.spmatrix, policy: BoundaryPolicy, ops: KronOps) -> ReducedOperator:
    """Reduce ``L`` to interior unknowns using the inner-edge conditions.

    Neumann edges contribute the zero-normal-derivative rows of
    ``B_x = D_x (x) I`` (axis) and ``B_y = I (x) D_y`` (plane):

        p_by = -H^{-1} G p_int
        p_bx = -B_N^{-1} (B_1 - B_2 H^{-1} G) p_int
        A    = E - E_N B_N^{-1} (B_1 - B_2 H^{-1} G) - C H^{-1} G

    Dirichlet edges drop the corresponding blocks and pin the edge to zero.
    """
    N = ops.N
    idx = BoundaryIndex(N)
    L = sp.csr_matrix(L)
    if L.shape != (N * N, N * N):
        raise ValueError(f"operator shape {L.shape} does not match trimmed grid N={N}")
    I, BY, BX = idx.interior, idx.by, idx.bx
    Lr = L[I]
    E = Lr[:, I]
    C = Lr[:, BY]
    EN = Lr[:, BX]
    n_int = I.size
    blocks = {"E": E, "C": C, "E_N": EN}

    if policy.plane is BC.NEUMANN:
        By = ops.Dy[BY]
        G, H = By[:, I], By[:, BY]
        blocks.update(G=G, H=H)
        Ry = _solve_diag(H, sp.hstack([G, sp.csr_matrix(np.full((BY.size, 1), ops.y_outer))]).tocsr(), "H (z = 0 plane)")
        Ry = sp.csr_matrix(Ry)
        recon_by = -Ry[:, :n_int]
        outer_by = -Ry[:, n_int].toarray().ravel()
    else:
        recon_by = sp.csr_matrix((BY.size, n_int))
        outer_by = np.zeros(BY.size)

    if policy.axis is BC.NEUMANN:
        Bx = ops.Dx[BX]
        B1, B2, BN = Bx[:, I], Bx[:, BY], Bx[:, BX]
        blocks.update(B_1=B1, B_2=B2, B_N=BN)
        rhs = B1 + B2 @ recon_by  # B_1 - B_2 H^{-1} G  (zero B_2 term if plane Dirichlet)
        # the corner node of the axis edge lies on the outer z edge
        g_out = np.full(BX.size, ops.x_outer) + B2 @ outer_by
        Rx = sp.csr_matrix(_solve_diag(BN, sp.hstack([sp.csr_matrix(rhs), sp.csr_matrix(g_out[:, None])]).tocsr(), "B_N (axis)"))
        recon_bx = -Rx[:, :n_int]
        outer_bx = -Rx[:, n_int].toarray().ravel()
    else:
        recon_bx = sp.csr_matrix((BX.size, n_int))
        outer_bx = np.zeros(BX.size)

    A = E + C @ recon_by + EN @ recon_bx
    A = sp.csr_matrix(A)
    A.eliminate_zeros()
    return ReducedOperator(
        A=A,
        recon_by=sp.csr_matrix(recon_by),
        recon_bx=sp.csr_matrix(recon_bx),
        policy=policy,
        N=N,
        blocks=blocks,
        outer_by=outer_by,
        outer_bx=outer_bx,
    )


def reconstruct_boundary(reduced: ReducedOperator, p_int: np.ndarray, outer: float = 0.0) -> np.ndarray:
    """Full ``(N+1, N+1)`` field from interior values.

    The outer edges carry the constant ``outer`` (zero for every operator
    solved in this package).
    """
    N = reduced.N
    p_int = np.asarray(p_int)
    if p_int.shape[0] != (N - 1) ** 2:
        raise ValueError(f"expected {(N - 1) ** 2} interior values, got {p_int.shape[0]}")
    idx = BoundaryIndex(N)
    trimmed = np.zeros((N * N,) + p_int.shape[1:], dtype=np.result_type(p_int, float))
    trimmed[idx.interior] = p_int
    trimmed[idx.by] = reduced.recon_by @ p_int
    trimmed[idx.bx] = reduced.recon_bx @ p_int
    if outer != 0.0:
        extra = (slice(None),) + (None,) * (p_int.ndim - 1)
        if reduced.outer_by is not None:
            trimmed[idx.by] += outer * reduced.outer_by[extra]
        if reduced.outer_bx is not None:
            trimmed[idx.bx] += outer * reduced.outer_bx[extra]
    full = np.full((N + 1, N + 1) + p_int.shape[1:], outer, dtype=trimmed.dtype)
    full[1:, 1:] = trimmed.reshape((N, N) + p_int.shape[1:])
    return full


def interior_values(full: np.ndarray) -> np.ndarray:
    """Strictly interior samples of a full-grid field in canonical order."""
    return np.asarray(full)[1:-1, 1:-1].ravel()
