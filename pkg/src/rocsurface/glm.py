"""Working models for the disease and verification processes.

The disease model is a multinomial logistic regression (reference class 3)
fitted to verified subjects only; the verification model is a logistic or
probit regression for the verification flag fitted to all subjects.  Both
are solved by Newton-Raphson on their score equations with step-halving,
and both expose per-subject scores and analytic score Jacobians, which the
sandwich variance and the VUS variance build on.

Predicted probabilities are clipped away from zero (floor ``CLIP_EPS``)
before they are used as weights downstream; the number of clipped values
is surfaced so users can detect positivity violations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import log_ndtr

from .data import Dataset
from .exceptions import DataError, NonConvergence, SeparationError

__all__ = [
    "CLIP_EPS",
    "DesignSpec",
    "GlmFit",
    "DiseaseProbs",
    "VerificationProbs",
    "fit_disease",
    "fit_verification",
    "predict",
    "score_and_jacobian",
]

CLIP_EPS = 1e-3
# Verification probabilities additionally get a sample-size-scaled floor:
# a verified subject with pi below PI_FLOOR_SCALE/n would carry more than
# n/PI_FLOOR_SCALE of the total inverse-probability weight, letting a
# single observation dominate (and, for the signed SPE weights, nearly
# cancel) whole estimators.
PI_FLOOR_SCALE = 5.0
# Newton steps are scaled so no linear predictor leaves [-LP_CAP, LP_CAP];
# probabilities there are 0/1 far past double precision, so an optimizer
# pinned against the cap with a non-vanishing score means the MLE sits at
# infinity (complete separation).  Strong-signal designs legitimately have
# predictors of size ~50, so the cap is generous.
LP_CAP = 300.0
_LOG_SQRT_2PI = 0.5 * np.log(2.0 * np.pi)


def pi_floor(n: int, eps: float = CLIP_EPS) -> float:
    """Positivity floor for verification probabilities at sample size n."""
    return max(eps, PI_FLOOR_SCALE / n)


@dataclass(frozen=True)
class DesignSpec:
    """How to build a model's design matrix from a dataset.

    The canonical design is ``(1, t, a1, ..., ap)``.  Working models in the
    simulation studies deliberately drop or transform columns:
    ``a_indices=()`` keeps only ``(1, t)``, and ``a_abs_exponent=e``
    replaces each covariate with ``|a|**e``.
    """

    include_t: bool = True
    a_indices: tuple[int, ...] | None = None
    a_abs_exponent: float | None = None

    def build(self, ds: Dataset) -> np.ndarray:
        cols = [np.ones(ds.n)]
        if self.include_t:
            cols.append(ds.t)
        idx = range(ds.p) if self.a_indices is None else self.a_indices
        for j in idx:
            col = ds.a[:, j]
            if self.a_abs_exponent is not None:
                col = np.abs(col) ** self.a_abs_exponent
            cols.append(col)
        return np.column_stack(cols)


INTERCEPT_ONLY = DesignSpec(include_t=False, a_indices=())


@dataclass(frozen=True)
class GlmFit:
    """A fitted working model.

    ``tau`` has shape (2, q) for the multinomial disease model (one row per
    non-reference class) and shape (q,) for a binary verification model.
    """

    family: str  # "multinomial3" | "binary-logit" | "binary-probit"
    tau: np.ndarray
    converged: bool
    iterations: int
    score_norm: float
    spec: DesignSpec = field(default_factory=DesignSpec)

    @property
    def n_params(self) -> int:
        return self.tau.size

    def to_json_dict(self) -> dict:
        return {
            "family": self.family,
            "tau": self.tau.tolist(),
            "converged": self.converged,
            "iterations": self.iterations,
        }


@dataclass(frozen=True)
class DiseaseProbs:
    """Per-subject class probabilities, floored at ``CLIP_EPS`` and renormalised."""

    rho: np.ndarray  # (n, 3)
    n_clipped: int = 0


@dataclass(frozen=True)
class VerificationProbs:
    """Per-subject verification probabilities in [pi_floor(n), 1]."""

    pi: np.ndarray  # (n,)
    n_clipped: int = 0


# ---------------------------------------------------------------------------
# probability maps and their derivatives (shared with the variance machinery)
# ---------------------------------------------------------------------------

def multinomial_probs(u: np.ndarray, tau: np.ndarray) -> np.ndarray:
    """Raw (unclipped) class probabilities under the multinomial logit model."""
    eta = u @ tau.T  # (n, 2)
    ex = np.exp(eta)
    den = 1.0 + ex.sum(axis=1)
    rho = np.empty((u.shape[0], 3))
    rho[:, :2] = ex / den[:, None]
    rho[:, 2] = 1.0 / den
    return rho


def binary_probs(u: np.ndarray, tau: np.ndarray, link: str) -> np.ndarray:
    """Raw success probabilities under a logit or probit link."""
    x = u @ tau
    if link == "logit":
        return 1.0 / (1.0 + np.exp(-x))
    if link == "probit":
        return np.exp(log_ndtr(x))
    raise ValueError(f"unknown link '{link}'")


def inv_prob_derivative(u: np.ndarray, tau: np.ndarray, pi: np.ndarray, link: str) -> np.ndarray:
    """d(1/pi)/dx at each subject's linear predictor x.

    Zero where the positivity floor binds: the clipped probability is
    locally constant in tau there, and the raw derivative would blow up
    as 1/pi^2.
    """
    x = u @ tau
    if link == "logit":
        dinv = -np.exp(-x)
    elif link == "probit":
        log_phi = -0.5 * x * x - _LOG_SQRT_2PI
        dinv = -np.exp(log_phi - 2.0 * log_ndtr(x))
    else:
        raise ValueError(f"unknown link '{link}'")
    return np.where(pi >= pi_floor(pi.shape[0]), dinv, 0.0)


def rho_tau_derivative(u: np.ndarray, rho: np.ndarray) -> np.ndarray:
    """Per-subject d(rho_k)/d(tau_l), shape (n, 3, 2, q).

    Under the multinomial logit model, d(rho_k)/d(tau_l) = u * rho_k *
    (1{k=l} - rho_l) for k = 1..3 and l = 1..2 (the reference class k = 3
    follows from the rows summing to one).
    """
    n, q = u.shape
    kron = np.zeros((3, 2))
    kron[0, 0] = kron[1, 1] = 1.0
    w = rho[:, :, None] * (kron[None, :, :] - rho[:, None, :2])  # (n, 3, 2)
    return w[:, :, :, None] * u[:, None, None, :]


def clip_disease_probs(rho: np.ndarray, eps: float = CLIP_EPS) -> tuple[np.ndarray, int]:
    """Floor class probabilities at ``eps`` and rescale rows to sum to one."""
    rho = np.array(rho, dtype=float)
    n_clipped = int(np.count_nonzero(rho < eps))
    # Raising floored entries shrinks the rest; a shrunk entry can dip just
    # below eps, so repeat until the floor holds everywhere.
    for _ in range(4):
        low = rho < eps
        if not low.any():
            break
        k = low.sum(axis=1)
        rem = np.where(low, 0.0, rho).sum(axis=1)
        scale = np.where(k > 0, (1.0 - k * eps) / np.where(rem > 0, rem, 1.0), 1.0)
        rho = np.where(low, eps, rho * scale[:, None])
    return rho, n_clipped


def clip_verification_probs(pi: np.ndarray, eps: float = CLIP_EPS) -> tuple[np.ndarray, int]:
    floor = pi_floor(pi.shape[0], eps)
    n_clipped = int(np.count_nonzero(pi < floor))
    return np.clip(pi, floor, 1.0), n_clipped


# ---------------------------------------------------------------------------
# Newton-Raphson fitting
# ---------------------------------------------------------------------------

def _multinomial_loglik(eta: np.ndarray, y12: np.ndarray, w: np.ndarray) -> float:
    lin = (y12 * eta).sum(axis=1)
    # log(1 + e^eta1 + e^eta2), stable for large eta
    m = np.maximum(eta.max(axis=1), 0.0)
    lse = m + np.log(np.exp(-m) + np.exp(eta - m[:, None]).sum(axis=1))
    return float(np.sum(w * (lin - lse)))


def _cap_step(eta0: np.ndarray, eta_step: np.ndarray) -> float:
    """Largest fraction of the Newton step keeping every predictor in the cap."""
    worst = np.max(np.abs(eta0 + eta_step))
    if worst <= LP_CAP:
        return 1.0
    room = LP_CAP - np.max(np.abs(eta0))
    growth = np.max(np.abs(eta_step))
    return max(room, 0.0) / growth


def _diverged(message: str, fit: GlmFit, eta_max: float, tol: float):
    if eta_max >= 0.99 * LP_CAP:
        return SeparationError(
            f"{message}: score cannot vanish and the linear predictor is pinned "
            f"at {eta_max:.0f} (complete separation)")
    return NonConvergence(
        f"{message}: score norm {fit.score_norm:.2e} > {tol:.0e} "
        f"after {fit.iterations} iterations", fit=fit)


def fit_disease(ds: Dataset, spec: DesignSpec = DesignSpec(),
                tol: float = 1e-8, max_iter: int = 100) -> GlmFit:
    """Fit the multinomial logistic disease model on verified subjects.

    Raises
    ------
    DataError
        If some class never occurs among verified subjects.
    SeparationError
        If the iteration drives a linear predictor against ``LP_CAP``
        without the score vanishing (complete separation).
    NonConvergence
        If the score norm never reaches ``tol``; carries the last iterate.
    """
    counts = ds.verified_class_counts()
    if np.any(counts == 0):
        missing = int(np.argmin(counts)) + 1
        raise DataError(f"class {missing} never occurs among verified subjects")
    u = spec.build(ds)
    w = ds.v.astype(float)
    y12 = ds.d_indicators()[:, :2]
    n, q = u.shape
    tau = np.zeros((2, q))

    iterations = 0
    score_norm = np.inf
    for iterations in range(1, max_iter + 1):
        eta = u @ tau.T
        ex = np.exp(eta)
        den = 1.0 + ex.sum(axis=1)
        rho12 = ex / den[:, None]
        resid = w[:, None] * (y12 - rho12)
        score = np.concatenate([u.T @ resid[:, 0], u.T @ resid[:, 1]])
        score_norm = float(np.max(np.abs(score)))
        if score_norm <= tol:
            return GlmFit("multinomial3", tau, True, iterations - 1, score_norm, spec)
        # negated score Jacobian (positive definite), so the Newton step
        # solves info @ step = score
        info = np.empty((2 * q, 2 * q))
        for s in range(2):
            for l in range(2):
                wgt = w * rho12[:, s] * ((1.0 if s == l else 0.0) - rho12[:, l])
                info[s * q:(s + 1) * q, l * q:(l + 1) * q] = u.T @ (wgt[:, None] * u)
        step = np.linalg.solve(info, score).reshape(2, q)
        step *= _cap_step(eta, u @ step.T)
        ll0 = _multinomial_loglik(eta, y12, w)
        slack = 1e-10 * (abs(ll0) + 1.0)  # rounding noise near the optimum
        shrink = 1.0
        for _ in range(30):
            trial = tau + shrink * step
            if _multinomial_loglik(u @ trial.T, y12, w) >= ll0 - slack:
                break
            shrink *= 0.5
        tau = tau + shrink * step

    fit = GlmFit("multinomial3", tau, False, iterations, score_norm, spec)
    raise _diverged("disease model", fit, float(np.max(np.abs(u @ tau.T))), tol)


def _binary_score_hess_weights(x: np.ndarray, v: np.ndarray, link: str):
    """Per-subject score weight g_w (g = g_w * u) and Hessian weight h_w (<= 0)."""
    if link == "logit":
        pi = 1.0 / (1.0 + np.exp(-x))
        return v - pi, -pi * (1.0 - pi)
    # probit: scores use the Mills ratios phi/Phi and phi/(1-Phi)
    log_phi = -0.5 * x * x - _LOG_SQRT_2PI
    r1 = np.exp(log_phi - log_ndtr(x))
    r0 = np.exp(log_phi - log_ndtr(-x))
    g_w = v * r1 - (1.0 - v) * r0
    h_w = -(v * r1 * (x + r1) + (1.0 - v) * r0 * (r0 - x))
    return g_w, h_w


def _binary_loglik(x: np.ndarray, v: np.ndarray, link: str) -> float:
    if link == "logit":
        # v*x - log(1 + e^x), stable form
        return float(np.sum(v * x - (np.maximum(x, 0) + np.log1p(np.exp(-np.abs(x))))))
    return float(np.sum(v * log_ndtr(x) + (1.0 - v) * log_ndtr(-x)))


def fit_verification(ds: Dataset, link: str = "logit",
                     spec: DesignSpec = DesignSpec(),
                     tol: float = 1e-8, max_iter: int = 100) -> GlmFit:
    """Fit the binary verification model (logit or probit) on all subjects."""
    if link not in ("logit", "probit"):
        raise ValueError(f"unknown link '{link}'")
    v = ds.v.astype(float)
    if v.min() == v.max():
        raise DataError("verification model needs both verified and unverified subjects")
    u = spec.build(ds)
    n, q = u.shape
    tau = np.zeros(q)

    iterations = 0
    score_norm = np.inf
    for iterations in range(1, max_iter + 1):
        x = u @ tau
        g_w, h_w = _binary_score_hess_weights(x, v, link)
        score = u.T @ g_w
        score_norm = float(np.max(np.abs(score)))
        if score_norm <= tol:
            return GlmFit(f"binary-{link}", tau, True, iterations - 1, score_norm, spec)
        hess = u.T @ (h_w[:, None] * u)
        step = np.linalg.solve(-hess, score)
        step *= _cap_step(x, u @ step)
        ll0 = _binary_loglik(x, v, link)
        slack = 1e-10 * (abs(ll0) + 1.0)
        shrink = 1.0
        for _ in range(30):
            if _binary_loglik(u @ (tau + shrink * step), v, link) >= ll0 - slack:
                break
            shrink *= 0.5
        tau = tau + shrink * step

    fit = GlmFit(f"binary-{link}", tau, False, iterations, score_norm, spec)
    raise _diverged("verification model", fit, float(np.max(np.abs(u @ tau))), tol)


def predict(fit: GlmFit, ds: Dataset):
    """Predicted probabilities for every subject, clipped away from zero.

    Returns a ``DiseaseProbs`` (rows renormalised to sum to one after
    flooring) or a ``VerificationProbs`` depending on the fit's family.
    """
    u = fit.spec.build(ds)
    if fit.family == "multinomial3":
        rho, n_clipped = clip_disease_probs(multinomial_probs(u, fit.tau))
        return DiseaseProbs(rho, n_clipped)
    link = fit.family.removeprefix("binary-")
    pi, n_clipped = clip_verification_probs(binary_probs(u, fit.tau, link))
    return VerificationProbs(pi, n_clipped)


def score_and_jacobian(fit: GlmFit, ds: Dataset, per_subject: bool = True):
    """Per-subject scores g_i and the score Jacobian d(g_i)/d(tau).

    Returns ``(g, jac)`` with ``g`` of shape (n, dim).  With
    ``per_subject=True`` (the default) ``jac`` has shape (n, dim, dim);
    otherwise it is the summed (dim, dim) matrix, which is all the
    sandwich needs.

    Scores use the unclipped model probabilities so that their column sums
    vanish at the fitted coefficients.
    """
    u = fit.spec.build(ds)
    n, q = u.shape
    v = ds.v.astype(float)
    if fit.family == "multinomial3":
        rho = multinomial_probs(u, fit.tau)
        y12 = ds.d_indicators()[:, :2]
        g = np.concatenate([(v * (y12[:, s] - rho[:, s]))[:, None] * u for s in range(2)],
                           axis=1)  # (n, 2q)
        # Hessian blocks: d g^{tau_s} / d tau_l = -v u u^T rho_s (1{s=l} - rho_l)
        if per_subject:
            jac = np.zeros((n, 2 * q, 2 * q))
            uu = u[:, :, None] * u[:, None, :]
            for s in range(2):
                for l in range(2):
                    wgt = -v * rho[:, s] * ((1.0 if s == l else 0.0) - rho[:, l])
                    jac[:, s * q:(s + 1) * q, l * q:(l + 1) * q] = wgt[:, None, None] * uu
        else:
            jac = np.empty((2 * q, 2 * q))
            for s in range(2):
                for l in range(2):
                    wgt = -v * rho[:, s] * ((1.0 if s == l else 0.0) - rho[:, l])
                    jac[s * q:(s + 1) * q, l * q:(l + 1) * q] = u.T @ (wgt[:, None] * u)
        return g, jac

    link = fit.family.removeprefix("binary-")
    x = u @ fit.tau
    g_w, h_w = _binary_score_hess_weights(x, v, link)
    g = g_w[:, None] * u
    if per_subject:
        jac = h_w[:, None, None] * (u[:, :, None] * u[:, None, :])
    else:
        jac = u.T @ (h_w[:, None] * u)
    return g, jac
