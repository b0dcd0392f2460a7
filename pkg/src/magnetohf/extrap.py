"""Levenberg-Marquardt fitting, mesh/domain extrapolation and rational fits.

The mesh limit fits ``a exp(b A) + c exp(d A)`` in the mean area per node
``A = rho_max z_max / N^2`` and evaluates it at ``A = 0``.  The domain limit
fits ``a sqrt(x) + b`` in the inverse area ``x`` and keeps ``b``.
"""

from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from importlib import resources
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)


class FitError(RuntimeError):
    pass


class LMNotConverged(FitError):
    def __init__(self, message, params, grad_norm):
        super().__init__(message)
        self.params = params
        self.grad_norm = grad_norm


class PoleError(FitError):
    pass


class FitQualityWarning(UserWarning):
    pass


# ---------------------------------------------------------------- models


class Model:
    name = "model"
    n_params = 0
    min_points = 1

    def __call__(self, x, p):
        raise NotImplementedError

    def jac(self, x, p):
        raise NotImplementedError


class BiExponential(Model):
    """``a exp(b x) + c exp(d x)``; parameters ``(a, b, c, d)``."""

    name = "biexponential"
    n_params = 4
    min_points = 5

    def __call__(self, x, p):
        a, b, c, d = p
        return a * np.exp(b * x) + c * np.exp(d * x)

    def jac(self, x, p):
        a, b, c, d = p
        eb, ed = np.exp(b * x), np.exp(d * x)
        return np.column_stack([eb, a * x * eb, ed, c * x * ed])


class SqrtAffine(Model):
    """``a sqrt(x) + b``; parameters ``(a, b)``."""

    name = "sqrt-affine"
    n_params = 2
    min_points = 3

    def __call__(self, x, p):
        return p[0] * np.sqrt(x) + p[1]

    def jac(self, x, p):
        return np.column_stack([np.sqrt(x), np.ones_like(x)])


class Rational(Model):
    """``sum a_i x^i / (x^m + sum b_i x^i)`` with ``m = n - 2``.

    Parameters are ``(a_0..a_n, b_0..b_{m-1})``.
    """

    name = "rational"

    def __init__(self, n: int):
        if n < 2:
            raise ValueError("rational order n must be >= 2")
        self.n = n
        self.m = n - 2
        self.n_params = (n + 1) + self.m
        self.min_points = n + self.m + 2

    def split(self, p):
        p = np.asarray(p, dtype=float)
        return p[: self.n + 1], p[self.n + 1:]

    def parts(self, x, p):
        a, b = self.split(p)
        x = np.asarray(x, dtype=float)
        num = np.polynomial.polynomial.polyval(x, a)
        den = x**self.m + (np.polynomial.polynomial.polyval(x, b) if b.size else 0.0)
        return num, den

    def __call__(self, x, p):
        num, den = self.parts(x, p)
        return num / den

    def jac(self, x, p):
        x = np.asarray(x, dtype=float)
        num, den = self.parts(x, p)
        cols = [x**i / den for i in range(self.n + 1)]
        cols += [-num * x**i / den**2 for i in range(self.m)]
        return np.column_stack(cols)


# ---------------------------------------------------------------- LM


@dataclass
class FitModel:
    """Fitted model with goodness-of-fit diagnostics."""

    model: Model
    params: np.ndarray
    r2: float
    cost: float
    iterations: int
    grad_norm: float
    covariance: np.ndarray | None = None
    warnings: list = field(default_factory=list)

    def __call__(self, x):
        return self.model(np.asarray(x, dtype=float), self.params)


def r_squared(y, yfit) -> float:
    """Coefficient of determination clipped to ``[0, 1]``."""
    y = np.asarray(y, dtype=float)
    ss_res = float(np.sum((y - yfit) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    scale = max(float(np.max(np.abs(y))), 1.0) ** 2 * y.size
    if ss_tot <= 1e-28 * scale:
        return 1.0 if ss_res <= 1e-20 * scale else 0.0
    return float(min(1.0, max(0.0, 1.0 - ss_res / ss_tot)))


def gradient(model: Model, x, y, p) -> np.ndarray:
    """Gradient of ``0.5 * sum (f(x) - y)^2`` with respect to the parameters."""
    x = np.asarray(x, dtype=float)
    r = model(x, p) - np.asarray(y, dtype=float)
    return model.jac(x, p).T @ r


def lm_fit(
    model: Model,
    x,
    y,
    init,
    *,
    max_iter: int = 500,
    gtol: float = 1e-13,
    ftol: float = 1e-16,
    xtol: float = 1e-15,
    raise_on_failure: bool = True,
) -> FitModel:
    """Unweighted least squares by damped Gauss-Newton with a backtracking line search.

    Each step solves ``(J^T J + mu D) delta = -J^T r`` with ``D`` the
    diagonal of ``J^T J``; the step length is halved until the cost drops
    by the Armijo amount.  ``mu`` shrinks after full steps and grows when
    no step length helps.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("data must be finite")
    if x.size < model.min_points:
        raise ValueError(f"{model.name} needs at least {model.min_points} points, got {x.size}")
    p = np.array(init, dtype=float)
    if p.size != model.n_params:
        raise ValueError(f"{model.name} takes {model.n_params} parameters, got {p.size}")

    def cost_of(q):
        with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
            r = model(x, q) - y
            c = 0.5 * float(r @ r)
        return (c if math.isfinite(c) else math.inf), r

    cost, r = cost_of(p)
    if not math.isfinite(cost):
        raise FitError("initial parameters give a non-finite residual")
    mu = 1e-3
    yscale = max(float(np.max(np.abs(y))), 1e-300)
    converged = False
    it = 0
    g = np.zeros_like(p)
    for it in range(1, max_iter + 1):
        J = model.jac(x, p)
        g = J.T @ r
        if np.max(np.abs(g)) <= gtol * yscale * max(1.0, np.max(np.abs(J))):
            converged = True
            break
        JTJ = J.T @ J
        diag = np.maximum(np.diag(JTJ), 1e-12 * max(np.max(np.diag(JTJ)), 1e-300))
        accepted = False
        for _ in range(12):
            A = np.vstack([J, np.diag(np.sqrt(mu * diag))])
            b = np.concatenate([-r, np.zeros(p.size)])
            delta = np.linalg.lstsq(A, b, rcond=None)[0]
            slope = float(g @ delta)
            t = 1.0
            while t > 1e-6:
                trial = p + t * delta
                c_new, r_new = cost_of(trial)
                if c_new <= cost + 1e-4 * t * slope:
                    accepted = True
                    break
                t *= 0.5
            if accepted:
                break
            mu *= 10.0
        if not accepted:
            converged = cost <= ftol * yscale**2 or np.max(np.abs(g)) <= 1e-8 * yscale
            break
        step = t * delta
        drop = cost - c_new
        p, cost, r = trial, c_new, r_new
        mu = max(mu / 3.0, 1e-15) if t == 1.0 else mu
        if drop <= ftol * max(cost, yscale**2 * 1e-30) or np.max(np.abs(step)) <= xtol * (np.max(np.abs(p)) + xtol):
            converged = True
            break
    gn = float(np.linalg.norm(g))
    if not converged and raise_on_failure:
        raise LMNotConverged(
            f"{model.name} fit did not converge in {max_iter} iterations (|grad| = {gn:.3e})", p, gn
        )
    J = model.jac(x, p)
    dof = max(1, x.size - p.size)
    try:
        cov = np.linalg.pinv(J.T @ J) * (2.0 * cost / dof)
    except np.linalg.LinAlgError:
        cov = None
    return FitModel(model, p, r_squared(y, model(x, p)), cost, it, gn, cov)


# ---------------------------------------------------------------- extrapolation


@dataclass
class Extrapolation:
    value: float
    fit: FitModel
    x: np.ndarray
    y: np.ndarray
    warnings: list = field(default_factory=list)


def _exponent_grid(size: int = 60, top: float = 80.0) -> np.ndarray:
    pos = np.logspace(-2, math.log10(top), size)
    return np.concatenate([-pos[::-1], [0.0], pos])


def _projected_seeds(s, y, keep: int = 8) -> list:
    """Best exponent pairs on a grid, amplitudes solved linearly.

    For fixed exponents the model is linear in the amplitudes, so a coarse
    scan over exponent pairs finds the basin of the global minimum cheaply.
    """
    g = _exponent_grid()
    E = np.exp(np.outer(g, s))
    E /= np.linalg.norm(E, axis=1)[:, None]
    i, j = np.triu_indices(g.size, k=1)
    G = E @ E.T
    h = E @ y
    gaa, gbb, gab = G[i, i], G[j, j], G[i, j]
    det = gaa * gbb - gab**2
    with np.errstate(divide="ignore", invalid="ignore"):
        ca = (gbb * h[i] - gab * h[j]) / det
        cb = (gaa * h[j] - gab * h[i]) / det
        # residual of the projection onto span{E_i, E_j}
        res = float(y @ y) - (ca * h[i] + cb * h[j])
    res = np.where(det > 1e-12, res, np.inf)
    norms = np.linalg.norm(np.exp(np.outer(g, s)), axis=1)
    order = np.argsort(res, kind="stable")[:keep]
    return [(ca[k] / norms[i[k]], g[i[k]], cb[k] / norms[j[k]], g[j[k]]) for k in order]


def _biexp_fit(x, y) -> FitModel:
    """Biexponential fit seeded from a single exponential and an exponent scan."""
    scale = float(np.max(np.abs(x)))
    s = x / scale
    model = BiExponential()
    if np.all(y == y[0]):
        return FitModel(model, np.array([y[0], 0.0, 0.0, 0.0]), 1.0, 0.0, 0, 0.0)
    if np.all(y > 0) or np.all(y < 0):
        b, lna = np.polyfit(s, np.log(np.abs(y)), 1)
        a = math.copysign(math.exp(lna), y[0])
    else:
        a, b = float(np.mean(y)), 0.0
    spread = float(np.ptp(y)) or abs(a) * 1e-6
    seeds = [
        (a, b, 0.0, 0.0),
        (a, b, spread, -1.0),
        (a, b, -spread, -1.0),
        (a, b, spread, -5.0),
        (a, b, spread, 1.0),
        (a - spread, b, spread, -3.0),
    ] + _projected_seeds(s, y)
    best = None
    for seed in seeds:
        try:
            f = lm_fit(model, s, y, seed, raise_on_failure=False)
        except FitError:
            continue
        if not np.all(np.isfinite(f.params)):
            continue
        if best is None or f.cost < best.cost * (1 - 1e-12):
            best = f
    if best is None:
        raise FitError("biexponential fit failed for every seed")
    a, b, c, d = best.params
    best.params = np.array([a, b / scale, c, d / scale])
    if best.covariance is not None:
        D = np.diag([1.0, 1.0 / scale, 1.0, 1.0 / scale])
        best.covariance = D @ best.covariance @ D
    return best


def _check_r2(fit: FitModel, warn_below: float, fail_below: float, what: str) -> list:
    msgs = []
    if fit.r2 < fail_below:
        raise FitError(f"{what} fit has R^2 = {fit.r2:.4f} < {fail_below}")
    if fit.r2 < warn_below:
        msg = f"{what} fit has R^2 = {fit.r2:.4f} < {warn_below}"
        warnings.warn(msg, FitQualityWarning, stacklevel=3)
        msgs.append(msg)
    return msgs


def mesh_abscissa(area: float, N) -> np.ndarray:
    return area / np.asarray(N, dtype=float) ** 2


def extrapolate_mesh(records: Sequence, *, min_levels: int = 5, warn_below=0.95, fail_below=0.8) -> Extrapolation:
    """Zero-mesh-area limit of runs sharing ``(beta_Z, eta)``.

    Records need ``beta_Z``, ``eta``, ``N``, ``E_HF`` and ``area`` attributes.
    """
    recs = sorted(records, key=lambda r: r.N)
    if len(recs) < min_levels:
        raise ValueError(f"mesh extrapolation needs >= {min_levels} levels, got {len(recs)}")
    keys = {(r.beta_Z, r.eta) for r in recs}
    if len(keys) != 1:
        raise ValueError(f"records mix (beta_Z, eta) values: {sorted(keys)}")
    if len({r.N for r in recs}) != len(recs):
        raise ValueError("duplicate mesh levels")
    x = np.array([r.area / r.N**2 for r in recs])
    y = np.array([r.E_HF for r in recs])
    fit = _biexp_fit(x, y)
    msgs = _check_r2(fit, warn_below, fail_below, "mesh")
    value = float(fit(np.array([0.0]))[0])
    return Extrapolation(value, fit, x, y, msgs)


def extrapolate_domain(areas, energies, *, min_domains: int = 3, warn_below=0.95, fail_below=0.8) -> Extrapolation:
    """Infinite-domain limit from mesh-limit energies on domains of given area."""
    areas = np.asarray(areas, dtype=float)
    y = np.asarray(energies, dtype=float)
    if areas.size != y.size:
        raise ValueError("areas and energies differ in length")
    if areas.size < min_domains:
        raise ValueError(f"domain extrapolation needs >= {min_domains} domains, got {areas.size}")
    if np.any(areas <= 0):
        raise ValueError("domain areas must be positive")
    order = np.argsort(areas, kind="stable")
    x = 1.0 / areas[order]
    y = y[order]
    # linear least squares gives the starting point
    A = np.column_stack([np.sqrt(x), np.ones_like(x)])
    init = np.linalg.lstsq(A, y, rcond=None)[0]
    fit = lm_fit(SqrtAffine(), x, y, init)
    msgs = _check_r2(fit, warn_below, fail_below, "domain")
    return Extrapolation(float(fit.params[1]), fit, x, y, msgs)


# ---------------------------------------------------------------- rational fits


@dataclass(frozen=True)
class RationalCoefficients:
    a: tuple
    b: tuple
    eps: float | None = None
    label: str = ""

    @property
    def n(self) -> int:
        return len(self.a) - 1

    @property
    def m(self) -> int:
        return len(self.b)

    def __post_init__(self):
        if len(self.b) != len(self.a) - 3:
            raise ValueError(f"need m = n - 2 denominator coefficients: n={len(self.a) - 1}, m={len(self.b)}")

    @property
    def params(self) -> np.ndarray:
        return np.concatenate([self.a, self.b]).astype(float)


def rational_eval(coeffs: RationalCoefficients, beta_Z):
    """Fitted binding energy at ``beta_Z`` (scalar or array)."""
    beta = np.asarray(beta_Z, dtype=float)
    if np.any(beta < 0):
        raise ValueError("beta_Z must be non-negative")
    model = Rational(coeffs.n)
    num, den = model.parts(np.log1p(beta), coeffs.params)
    if np.any(np.abs(den) < 1e-12):
        raise PoleError(f"denominator vanishes near beta_Z={beta[np.abs(den) < 1e-12]}")
    out = num / den
    return float(out) if out.ndim == 0 else out


def _rational_starts(model: Rational, x, y, sweeps: int = 30):
    """Linearized starting points, plain and iteratively reweighted.

    Multiplying through by the denominator makes the problem linear in the
    coefficients; dividing each row by the previous denominator and
    repeating removes the bias this introduces.
    """
    n, m = model.n, model.m
    A0 = np.column_stack([x**i for i in range(n + 1)] + [-y * x**i for i in range(m)])
    rhs = y * x**m
    p = np.linalg.lstsq(A0, rhs, rcond=None)[0]
    starts = [p.copy()]
    for _ in range(sweeps):
        _, den = model.parts(x, p)
        if np.any(np.abs(den) < 1e-12):
            break
        w = 1.0 / np.abs(den)
        p_new = np.linalg.lstsq(A0 * w[:, None], rhs * w, rcond=None)[0]
        if np.allclose(p_new, p, rtol=1e-12, atol=1e-14):
            p = p_new
            break
        p = p_new
    starts.append(p)
    return starts


@dataclass
class RationalFit:
    coeffs: RationalCoefficients
    max_frac_error: float
    fit: FitModel


def rational_fit(beta_Z, energies, n: int, label: str = "") -> RationalFit:
    """Fit the rational form of order ``n`` to ``(beta_Z, E)`` data."""
    beta = np.asarray(beta_Z, dtype=float)
    y = np.asarray(energies, dtype=float)
    model = Rational(n)
    if beta.size < model.min_points:
        raise ValueError(f"order {n} needs at least {model.min_points} points, got {beta.size}")
    x = np.log1p(beta)
    if np.ptp(y) <= 1e-14 * max(1.0, float(np.max(np.abs(y)))):
        # constant data: denominator x^m + 1 and numerator value * (x^m + 1)
        v = float(y[0])
        a = np.zeros(n + 1)
        b = np.zeros(model.m)
        a[0] = v
        if model.m > 0:
            a[model.m] = v
            b[0] = 1.0
        coeffs = RationalCoefficients(tuple(map(float, a)), tuple(map(float, b)), 0.0, label)
        fit = FitModel(model, np.concatenate([a, b]), 1.0, 0.0, 0, 0.0)
        return RationalFit(coeffs, 0.0, fit)
    best = None
    for init in _rational_starts(model, x, y):
        try:
            fit = lm_fit(model, x, y, init, max_iter=2000, raise_on_failure=False)
        except FitError:
            continue
        if np.all(np.isfinite(fit.params)) and (best is None or fit.cost < best.cost):
            best = fit
    if best is None:
        raise FitError("rational fit failed from every starting point")
    fit = best
    a, b = model.split(fit.params)
    err = float(np.max(np.abs(fit(x) - y) / np.abs(y)))
    coeffs = RationalCoefficients(tuple(map(float, a)), tuple(map(float, b)), err, label)
    return RationalFit(coeffs, err, fit)


# ---------------------------------------------------------------- shipped data


def _load(name: str) -> dict:
    with resources.files("magnetohf.data").joinpath(name).open("r", encoding="utf-8") as fh:
        return json.load(fh)


def shipped_fits() -> dict[str, RationalCoefficients]:
    """Published rational-fit coefficients keyed by canonical state label."""
    data = _load("rational_fits.json")
    return {
        k: RationalCoefficients(tuple(v["a"]), tuple(v["b"]), v["eps"], k) for k, v in data["states"].items()
    }


def reference_energies() -> dict[str, dict]:
    """Tabulated binding energies: label -> {"Z", "points": [(beta_Z, |E|, method)]}."""
    return _load("reference_energies.json")["states"]
