"""Stacked estimating equations, sandwich covariance and the delta method.

The parameters solved jointly are, in this fixed order,

    (theta1, theta2, beta11, beta12, beta22, beta23, tau_rho, tau_pi)

with the tau blocks present only when the method fits that model (FI/MSI:
disease only; IPW: verification only; SPE: both; FULL: neither).  The
per-subject estimating functions and their analytic Jacobian blocks follow
the closed forms of the score equations; ``estimating_stack`` recomputes
the model probabilities from the tau entries of ``alpha`` so the analytic
Jacobians can be checked against finite differences.

The covariance of the TCF triple is the sandwich pushed through the
gradient of the map (alpha -> TCF); reported standard errors are
sqrt(diag / n).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .data import CutPair, Dataset
from .exceptions import DegenerateTheta, SingularBread, SingularCovariance
from . import glm
from .glm import clip_disease_probs, clip_verification_probs
from .tcf import FittedModels, Method, TcfEstimate, estimate_tcf, theta_beta

__all__ = [
    "AlphaHat",
    "build_alpha",
    "estimating_stack",
    "jacobian_stack",
    "SandwichCov",
    "sandwich",
    "h_gradient",
    "TcfCov",
    "tcf_covariance",
    "estimate_tcf_with_sd",
    "wald_intervals",
    "chi2_quantile",
    "Ellipse",
    "confidence_region",
]

CORE = 6  # (theta1, theta2, beta11, beta12, beta22, beta23)
THETA_TOL = 1e-8
BREAD_CONDITION_LIMIT = 1e12


@dataclass(frozen=True)
class AlphaHat:
    """Stacked parameter estimate for one method at one cut pair."""

    values: np.ndarray
    method: Method
    cut: CutPair
    dim_rho: int  # length of the tau_rho block (2q or 0)
    dim_pi: int   # length of the tau_pi block (q or 0)

    @property
    def dim(self) -> int:
        return self.values.size

    @property
    def theta(self) -> np.ndarray:
        return self.values[:2]

    @property
    def beta(self) -> np.ndarray:
        return self.values[2:6]

    @property
    def tau_rho(self) -> np.ndarray | None:
        return self.values[CORE:CORE + self.dim_rho] if self.dim_rho else None

    @property
    def tau_pi(self) -> np.ndarray | None:
        return self.values[CORE + self.dim_rho:] if self.dim_pi else None


def _dims(method: Method, fits: FittedModels) -> tuple[int, int]:
    dim_rho = fits.disease.n_params if method.needs_rho else 0
    dim_pi = fits.verification.n_params if method.needs_pi else 0
    return dim_rho, dim_pi


def build_alpha(method: Method, ds: Dataset, cut: CutPair, fits: FittedModels) -> AlphaHat:
    """Assemble the solution of the stacked equations from the fitted pieces."""
    tb = theta_beta(method, ds, cut, fits.rho, fits.pi)
    parts = [tb.alpha_core()]
    dim_rho, dim_pi = _dims(method, fits)
    if dim_rho:
        parts.append(fits.disease.tau.ravel())
    if dim_pi:
        parts.append(fits.verification.tau)
    return AlphaHat(np.concatenate(parts), method, cut, dim_rho, dim_pi)


def _probs_from_alpha(alpha: AlphaHat, ds: Dataset, fits: FittedModels):
    """Recompute (raw, clipped) model probabilities at alpha's tau blocks."""
    rho_raw = rho = u_rho = None
    pi_raw = pi = u_pi = None
    if alpha.dim_rho:
        u_rho = fits.disease.spec.build(ds)
        q = alpha.dim_rho // 2
        rho_raw = glm.multinomial_probs(u_rho, alpha.tau_rho.reshape(2, q))
        rho, _ = clip_disease_probs(rho_raw)
    if alpha.dim_pi:
        u_pi = fits.verification.spec.build(ds)
        pi_raw = glm.binary_probs(u_pi, alpha.tau_pi, _link(fits))
        pi, _ = clip_verification_probs(pi_raw)
    return u_rho, rho_raw, rho, u_pi, pi_raw, pi


def _link(fits: FittedModels) -> str:
    return fits.verification.family.removeprefix("binary-")


def _indicators(ds: Dataset, cut: CutPair) -> np.ndarray:
    return np.column_stack([ds.t >= cut.c1, ds.t >= cut.c2]).astype(float)


# row order of the core block: theta1, theta2, beta11, beta12, beta22, beta23
_BETA_JK = ((0, 0), (0, 1), (1, 1), (1, 2))


def estimating_stack(method: Method, ds: Dataset, alpha: AlphaHat,
                     cut: CutPair, fits: FittedModels) -> np.ndarray:
    """Per-subject estimating functions g_i(alpha), shape (n, dim)."""
    n = ds.n
    d_ind = ds.d_indicators()
    v = ds.v.astype(float)
    ind = _indicators(ds, cut)
    th = alpha.theta
    be = alpha.beta
    u_rho, rho_raw, rho, u_pi, pi_raw, pi = _probs_from_alpha(alpha, ds, fits)

    g = np.empty((n, alpha.dim))
    if method is Method.FULL:
        for s in range(2):
            g[:, s] = d_ind[:, s] - th[s]
        for col, (j, k) in enumerate(_BETA_JK, start=2):
            g[:, col] = ind[:, j] * d_ind[:, k] - be[col - 2]
        return g

    if method in (Method.FI, Method.MSI):
        m = method.m
        w_obs = v * m            # weight on observed indicators
        w_rho = 1.0 - m * v      # weight on model probabilities
        for s in range(2):
            g[:, s] = w_obs * d_ind[:, s] + w_rho * rho[:, s] - th[s]
        for col, (j, k) in enumerate(_BETA_JK, start=2):
            g[:, col] = ind[:, j] * (w_obs * d_ind[:, k] + w_rho * rho[:, k]) - be[col - 2]
    elif method is Method.IPW:
        w = v / pi
        for s in range(2):
            g[:, s] = w * (d_ind[:, s] - th[s])
        for col, (j, k) in enumerate(_BETA_JK, start=2):
            g[:, col] = w * (ind[:, j] * d_ind[:, k] - be[col - 2])
    elif method is Method.SPE:
        w = v / pi
        for s in range(2):
            g[:, s] = w * (d_ind[:, s] - th[s]) - (w - 1.0) * (rho[:, s] - th[s])
        for col, (j, k) in enumerate(_BETA_JK, start=2):
            g[:, col] = (w * (ind[:, j] * d_ind[:, k] - be[col - 2])
                         - (w - 1.0) * (ind[:, j] * rho[:, k] - be[col - 2]))
    else:  # pragma: no cover
        raise ValueError(method)

    col = CORE
    if alpha.dim_rho:
        q = alpha.dim_rho // 2
        for s in range(2):
            g[:, col:col + q] = (v * (d_ind[:, s] - rho_raw[:, s]))[:, None] * u_rho
            col += q
    if alpha.dim_pi:
        link = _link(fits)
        if link == "logit":
            g[:, col:] = (v - pi_raw)[:, None] * u_pi
        else:
            g_w, _ = glm._binary_score_hess_weights(u_pi @ alpha.tau_pi, v, link)
            g[:, col:] = g_w[:, None] * u_pi
    return g


def jacobian_stack(method: Method, ds: Dataset, alpha: AlphaHat,
                   cut: CutPair, fits: FittedModels) -> np.ndarray:
    """Summed analytic Jacobian of the stack, shape (dim, dim)."""
    n = ds.n
    d_ind = ds.d_indicators()
    v = ds.v.astype(float)
    ind = _indicators(ds, cut)
    u_rho, rho_raw, rho, u_pi, pi_raw, pi = _probs_from_alpha(alpha, ds, fits)
    dim = alpha.dim
    jac = np.zeros((dim, dim))

    if method is Method.IPW:
        w = v / pi
        jac[np.arange(CORE), np.arange(CORE)] = -np.sum(w)
    else:
        jac[np.arange(CORE), np.arange(CORE)] = -float(n)

    c_rho = CORE
    c_pi = CORE + alpha.dim_rho

    if alpha.dim_rho:
        q = alpha.dim_rho // 2
        # Derivatives use the raw model probabilities: where the clip floor
        # binds, the clipped weights are locally constant in tau and the
        # raw derivative (vanishingly small there) is the honest value.
        drho = glm.rho_tau_derivative(u_rho, rho_raw)  # (n, 3, 2, q)
        if method in (Method.FI, Method.MSI):
            wgt = 1.0 - method.m * v
        else:  # SPE: -(v - pi)/pi
            wgt = 1.0 - v / pi
        for l in range(2):
            cols = slice(c_rho + l * q, c_rho + (l + 1) * q)
            for s in range(2):
                jac[s, cols] = wgt @ drho[:, s, l, :]
            for row, (j, k) in enumerate(_BETA_JK, start=2):
                jac[row, cols] = (wgt * ind[:, j]) @ drho[:, k, l, :]
        _, jac_rho = glm.score_and_jacobian(fits.disease, ds, per_subject=False)
        jac[c_rho:c_pi, c_rho:c_pi] = jac_rho

    if alpha.dim_pi:
        link = _link(fits)
        dinv = glm.inv_prob_derivative(u_pi, alpha.tau_pi, pi_raw, link)
        if method is Method.IPW:
            th = alpha.theta
            be = alpha.beta
            for s in range(2):
                jac[s, c_pi:] = (v * (d_ind[:, s] - th[s]) * dinv) @ u_pi
            for row, (j, k) in enumerate(_BETA_JK, start=2):
                jac[row, c_pi:] = (v * (ind[:, j] * d_ind[:, k] - be[row - 2]) * dinv) @ u_pi
        else:  # SPE
            for s in range(2):
                jac[s, c_pi:] = (v * (d_ind[:, s] - rho[:, s]) * dinv) @ u_pi
            for row, (j, k) in enumerate(_BETA_JK, start=2):
                jac[row, c_pi:] = (v * ind[:, j] * (d_ind[:, k] - rho[:, k]) * dinv) @ u_pi
        _, jac_pi = glm.score_and_jacobian(fits.verification, ds, per_subject=False)
        jac[c_pi:, c_pi:] = jac_pi

    return jac


@dataclass(frozen=True)
class SandwichCov:
    """Plug-in covariance of sqrt(n)(alpha_hat - alpha0)."""

    sigma: np.ndarray
    bread: np.ndarray
    meat: np.ndarray


def sandwich(method: Method, ds: Dataset, alpha: AlphaHat,
             cut: CutPair, fits: FittedModels) -> SandwichCov:
    """Sigma_hat = n * bread^{-1} meat bread^{-T} at the stacked solution."""
    g = estimating_stack(method, ds, alpha, cut, fits)
    bread = jacobian_stack(method, ds, alpha, cut, fits)
    cond = np.linalg.cond(bread)
    if not np.isfinite(cond) or cond > BREAD_CONDITION_LIMIT:
        raise SingularBread(f"bread matrix condition number {cond:.2e} exceeds "
                            f"{BREAD_CONDITION_LIMIT:.0e}")
    meat = g.T @ g
    binv = np.linalg.inv(bread)
    sigma = ds.n * (binv @ meat @ binv.T)
    sigma = 0.5 * (sigma + sigma.T)
    return SandwichCov(sigma, bread, meat)


def h_gradient(alpha: AlphaHat | np.ndarray, dim: int | None = None) -> np.ndarray:
    """Gradient of (alpha -> TCF triple), shape (3, dim); tau columns are zero."""
    if isinstance(alpha, AlphaHat):
        core = alpha.values[:CORE]
        dim = alpha.dim
    else:
        core = np.asarray(alpha, dtype=float)[:CORE]
        dim = dim or core.size
    th1, th2, b11, b12, b22, b23 = core
    th3 = 1.0 - th1 - th2
    if min(th1, th2, th3) <= THETA_TOL:
        raise DegenerateTheta(
            f"class prevalence too small for the delta method: ({th1:.3e}, {th2:.3e}, {th3:.3e})")
    grad = np.zeros((3, dim))
    grad[0, 0] = b11 / th1 ** 2
    grad[0, 2] = -1.0 / th1
    grad[1, 1] = -(b12 - b22) / th2 ** 2
    grad[1, 3] = 1.0 / th2
    grad[1, 4] = -1.0 / th2
    grad[2, 0] = b23 / th3 ** 2
    grad[2, 1] = b23 / th3 ** 2
    grad[2, 5] = 1.0 / th3
    return grad


@dataclass(frozen=True)
class TcfCov:
    """Delta-method covariance of sqrt(n)(TCF_hat - TCF)."""

    xi: np.ndarray  # (3, 3)


def tcf_covariance(method: Method, ds: Dataset, cut: CutPair,
                   fits: FittedModels) -> tuple[TcfCov, np.ndarray]:
    """Xi_hat and the asymptotic sd triple sqrt(diag(Xi_hat)/n)."""
    alpha = build_alpha(method, ds, cut, fits)
    cov = sandwich(method, ds, alpha, cut, fits)
    grad = h_gradient(alpha)
    xi = grad @ cov.sigma @ grad.T
    xi = 0.5 * (xi + xi.T)
    return TcfCov(xi), np.sqrt(np.maximum(np.diag(xi), 0.0) / ds.n)


def estimate_tcf_with_sd(method: Method, ds: Dataset, cut: CutPair,
                         fits: FittedModels) -> TcfEstimate:
    """Point estimate plus delta-method covariance and standard errors."""
    point = estimate_tcf(method, ds, cut, fits.rho, fits.pi)
    xi, asy_sd = tcf_covariance(method, ds, cut, fits)
    return TcfEstimate(cut, method, point.tcf, cov=xi.xi / ds.n, asy_sd=asy_sd)


def wald_intervals(estimate: np.ndarray, sd: np.ndarray, level: float = 0.95) -> np.ndarray:
    """Component-wise Wald intervals, shape (k, 2)."""
    z = ndtri(0.5 + level / 2.0)
    estimate = np.asarray(estimate, dtype=float)
    sd = np.asarray(sd, dtype=float)
    return np.column_stack([estimate - z * sd, estimate + z * sd])


def chi2_quantile(level: float, dof: int = 2) -> float:
    """Chi-square quantile; with 2 degrees of freedom this is -2 log(1 - level)."""
    if not 0.0 < level < 1.0:
        raise ValueError("level must be in (0, 1)")
    if dof != 2:
        raise ValueError("only 2 degrees of freedom are needed here")
    return -2.0 * math.log1p(-level)


@dataclass(frozen=True)
class Ellipse:
    """Elliptical confidence region {x : (x-c)^T shape (x-c) <= radius_sq}."""

    center: np.ndarray
    shape: np.ndarray  # inverse covariance
    radius_sq: float

    def polygon(self, num: int = 100) -> np.ndarray:
        """Boundary discretisation, shape (num, 2)."""
        cov = np.linalg.inv(self.shape)
        chol = np.linalg.cholesky(cov)
        angles = 2.0 * np.pi * np.arange(num) / num
        circle = np.column_stack([np.cos(angles), np.sin(angles)])
        return self.center + math.sqrt(self.radius_sq) * circle @ chol.T


def confidence_region(pair_cov: np.ndarray, center, level: float = 0.95) -> Ellipse:
    """Elliptical region for a TCF pair from its 2x2 estimated covariance."""
    pair_cov = np.asarray(pair_cov, dtype=float)
    center = np.asarray(center, dtype=float)
    if pair_cov.shape != (2, 2) or center.shape != (2,):
        raise ValueError("need a 2x2 covariance and a 2-vector center")
    try:
        np.linalg.cholesky(pair_cov)
    except np.linalg.LinAlgError:
        raise SingularCovariance("pair covariance is not positive definite") from None
    return Ellipse(center, np.linalg.inv(pair_cov), chi2_quantile(level, 2))
