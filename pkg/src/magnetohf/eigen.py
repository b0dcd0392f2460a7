"""Shift-invert eigensolver for the reduced operators.

ARPACK (through :func:`scipy.sparse.linalg.eigs`) runs on the inverse of
``A - sigma I``.  Small problems, and problems where ARPACK fails, go to a
dense full-spectrum solve instead.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg as sl
import scipy.sparse as sp
import scipy.sparse.linalg as sla

log = logging.getLogger(__name__)


class EigenError(RuntimeError):
    pass


class ComplexEigenvalueError(EigenError):
    pass


class StateLostError(EigenError):
    pass


@dataclass
class EigenRequest:
    """Parameters of one shift-invert solve.

    ``dense_max`` is the size up to which the dense solver is used outright;
    ``fallback_max`` bounds the dense retry after an ARPACK failure.
    """

    operator: object
    sigma: float
    k: int = 15
    krylov_dim: int = 50
    tol: float = 1e-10
    maxiter: int | None = None
    v0: np.ndarray | None = None
    dense_max: int = 400
    fallback_max: int = 2500
    normalize: Callable[[np.ndarray], np.ndarray] | None = None


@dataclass
class EigenResult:
    values: np.ndarray
    vectors: np.ndarray
    sigma: float
    method: str
    residuals: np.ndarray | None = None

    def __len__(self) -> int:
        return self.values.size


def _as_dense(A) -> np.ndarray:
    return A.toarray() if sp.issparse(A) else np.asarray(A)


def _factorize(A, sigma: float):
    n = A.shape[0]
    if sp.issparse(A) and n > 4000:
        lu = sla.splu(sp.csc_matrix(A - sigma * sp.identity(n)))
        return lu.solve
    M = _as_dense(A) - sigma * np.eye(n)
    with warnings.catch_warnings():
        warnings.simplefilter("error", sl.LinAlgWarning)
        fac = sl.lu_factor(M, check_finite=False)
    if np.any(np.diag(fac[0]) == 0.0):
        raise sl.LinAlgError("exactly singular shifted operator")
    return lambda b: sl.lu_solve(fac, b, check_finite=False)


def _dense_eigs(A, sigma: float, k: int):
    vals, vecs = sl.eig(_as_dense(A))
    order = np.argsort(np.abs(vals - sigma))[:k]
    return vals[order], vecs[:, order]


def dense_eigs(A, sigma: float, k: int | None = None) -> EigenResult:
    """Full-spectrum reference solve, sorted by distance from ``sigma``."""
    n = A.shape[0]
    vals, vecs = _dense_eigs(A, sigma, n if k is None else k)
    return EigenResult(vals, vecs, sigma, "dense")


def shift_invert_eigs(req: EigenRequest) -> EigenResult:
    """The ``k`` eigenpairs of ``req.operator`` nearest ``req.sigma``.

    Eigenvalues are sorted by ``|lambda - sigma|`` and may be complex; the
    caller decides whether an imaginary part is acceptable.
    """
    A = req.operator
    n = A.shape[0]
    k = max(1, min(req.k, n - 2))
    sigma = float(req.sigma)

    if n <= req.dense_max:
        vals, vecs = _dense_eigs(A, sigma, k)
        return _finish(req, vals, vecs, sigma, "dense")

    solve = None
    for attempt in range(4):
        try:
            solve = _factorize(A, sigma)
            break
        except (sl.LinAlgError, sl.LinAlgWarning, RuntimeError):
            bump = 1e-8 * max(1.0, abs(sigma)) * 10**attempt
            log.warning("shift %.12g is singular, moving it by %.1e", sigma, bump)
            sigma += bump
    if solve is None:
        raise EigenError(f"could not factor the shifted operator near {req.sigma}")

    op = sla.LinearOperator((n, n), matvec=solve, dtype=float)
    ncv = min(n, max(req.krylov_dim, 2 * k + 1))
    v0 = None if req.v0 is None else np.asarray(req.v0, dtype=float)
    for ncv_try in (ncv, min(n, 2 * ncv)):
        try:
            mu, vecs = sla.eigs(op, k=k, ncv=ncv_try, tol=req.tol, v0=v0, maxiter=req.maxiter)
            vals = sigma + 1.0 / mu
            order = np.argsort(np.abs(vals - sigma))
            return _finish(req, vals[order], vecs[:, order], sigma, "arpack")
        except sla.ArpackNoConvergence:
            log.warning("ARPACK did not converge with ncv=%d", ncv_try)
    if n <= req.fallback_max:
        log.warning("falling back to the dense eigensolver (n=%d)", n)
        vals, vecs = _dense_eigs(A, sigma, k)
        return _finish(req, vals, vecs, sigma, "dense-fallback")
    raise EigenError(f"ARPACK failed near sigma={sigma} and n={n} is too large for the dense fallback")


def _finish(req: EigenRequest, vals, vecs, sigma, method) -> EigenResult:
    """Real-valued eigenvectors (phase fixed per column), normalized if requested.

    Eigenvalues stay complex when any of them has a non-negligible imaginary
    part, so callers can reject spurious pairs.
    """
    if np.all(np.abs(vals.imag) <= 1e-12 * np.maximum(1.0, np.abs(vals.real))):
        vals = vals.real
    vecs = _realify(vecs)
    if req.normalize is not None:
        vecs = np.column_stack([req.normalize(vecs[:, c]) for c in range(vecs.shape[1])])
    A = req.operator
    res = np.linalg.norm(A @ vecs - vecs * np.real(vals)[None, :], axis=0) / np.maximum(
        np.linalg.norm(vecs, axis=0), np.finfo(float).tiny
    )
    return EigenResult(vals, vecs, sigma, method, res)


def _realify(vecs: np.ndarray) -> np.ndarray:
    """Real eigenvectors from complex ones with an arbitrary phase."""
    if np.isrealobj(vecs):
        return vecs
    out = np.empty(vecs.shape)
    for c in range(vecs.shape[1]):
        v = vecs[:, c]
        p = v[np.argmax(np.abs(v))]
        out[:, c] = (v * np.conj(p) / abs(p)).real
    return out


def check_real(value, rel: float = 1e-6) -> float:
    """Real part of ``value``; raises if the imaginary part is not negligible."""
    value = complex(value)
    if abs(value.imag) > rel * max(1.0, abs(value.real)):
        raise ComplexEigenvalueError(f"selected eigenvalue {value} is not real")
    return value.real


def select_orbital(
    result: EigenResult,
    *,
    nu: int | None = None,
    previous: np.ndarray | None = None,
    inner: Callable[[np.ndarray, np.ndarray], float] | None = None,
    min_overlap: float = 0.5,
    tie_margin: float = 0.05,
) -> tuple[int, float]:
    """Index of the wanted eigenpair and its overlap with ``previous``.

    With ``nu`` the ``nu``-th lowest real eigenvalue is taken (used at start
    up, when ``sigma`` lies below the spectrum of interest).  Otherwise the
    eigenvector with the largest normalized overlap with ``previous`` wins.
    """
    if (nu is None) == (previous is None):
        raise ValueError("give exactly one of nu or previous")
    vals = np.asarray(result.values)
    if nu is not None:
        real = np.abs(vals.imag) <= 1e-6 * np.maximum(1.0, np.abs(vals.real)) if np.iscomplexobj(vals) else np.ones(vals.size, bool)
        cand = np.flatnonzero(real)
        if cand.size < nu:
            raise StateLostError(f"only {cand.size} real eigenvalues available, wanted nu={nu}")
        order = cand[np.argsort(vals.real[cand])]
        return int(order[nu - 1]), 1.0
    if inner is None:
        inner = lambda u, v: float(np.dot(u, v))  # noqa: E731
    vecs = np.real(result.vectors)
    pn = np.sqrt(abs(inner(previous, previous)))
    ov = np.empty(vecs.shape[1])
    for c in range(vecs.shape[1]):
        v = vecs[:, c]
        vn = np.sqrt(abs(inner(v, v)))
        ov[c] = abs(inner(v, previous)) / (vn * pn) if vn > 0 else 0.0
    order = np.argsort(ov)[::-1]
    best = int(order[0])
    if ov[best] < min_overlap:
        raise StateLostError(f"largest overlap with the previous orbital is {ov[best]:.3f}")
    if order.size > 1 and ov[best] - ov[order[1]] < tie_margin:
        log.warning("near tie in orbital selection: overlaps %.3f and %.3f", ov[best], ov[order[1]])
    return best, float(ov[best])
