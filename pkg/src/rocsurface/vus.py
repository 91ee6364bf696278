"""Volume under the ROC surface via a weighted three-sample U-statistic.

The point estimate replaces class indicators with the method's
pseudo-disease weights inside the ordering kernel

    k(ti, tl, tr) = 1{ti<tl<tr} + 1/2 1{ti<tl=tr} + 1/2 1{ti=tl<tr}
                  + 1/6 1{ti=tl=tr}

summed over ordered triples of distinct subjects.  Two engines compute the
same value: a naive cubic sum (the oracle, feasible to n of a few hundred)
and an O(n log n) path that sorts the test once and works block-by-block
over tied values with prefix sums, handling the 1/2 and 1/6 tie weights
and the coincident-index exclusions in closed form.

The variance estimate assembles per-subject influence terms from (a) the
symmetrised triple sums with the subject in each class slot and (b) one
correction term per fitted nuisance model, each a triple-sum derivative
with respect to that model's coefficients premultiplied by the inverse
summed score Jacobian and the subject's score.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .exceptions import DataError, DegenerateDenominator
from . import glm
from .tcf import FittedModels, Method, pseudo_disease, _as_pi

__all__ = [
    "triple_kernel",
    "VusEstimate",
    "vus_point",
    "vus_variance",
    "vus_with_sd",
]

DENOM_TOL = 1e-8
ENGINE_AGREEMENT_TOL = 1e-10


def triple_kernel(ti: float, tl: float, tr: float) -> float:
    """Ordering kernel with exact rational tie weights (0, 1/6, 1/2 or 1)."""
    if ti < tl:
        if tl < tr:
            return 1.0
        if tl == tr:
            return 0.5
        return 0.0
    if ti == tl:
        if tl < tr:
            return 0.5
        if tl == tr:
            return 1.0 / 6.0
    return 0.0


# ---------------------------------------------------------------------------
# tie-block machinery
# ---------------------------------------------------------------------------

class _TieBlocks:
    """Sorted view of the test values grouped into runs of ties."""

    def __init__(self, t: np.ndarray):
        self.n = t.shape[0]
        self.order = np.argsort(t, kind="stable")
        ts = t[self.order]
        new_block = np.r_[True, ts[1:] != ts[:-1]]
        self.starts = np.flatnonzero(new_block)
        self.m = self.starts.size
        block_of_sorted = np.cumsum(new_block) - 1
        self.block = np.empty(self.n, dtype=np.int64)
        self.block[self.order] = block_of_sorted

    def block_sums(self, w: np.ndarray) -> np.ndarray:
        """Per-block sums of a weight array of shape (n,) or (n, k)."""
        return np.add.reduceat(w[self.order], self.starts, axis=0)


def _col(w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return w[:, None] if w.ndim == 1 else w


def _excl_prefix(b: np.ndarray) -> np.ndarray:
    out = np.cumsum(b, axis=0)
    out -= b
    return out


def _excl_suffix(b: np.ndarray) -> np.ndarray:
    out = np.cumsum(b[::-1], axis=0)[::-1]
    out -= b
    return out


def _ordered_triple_sum(blocks: _TieBlocks, x, y, z) -> np.ndarray:
    """Sum of k(t_i,t_l,t_r) x_i y_l z_r over distinct-index triples.

    Any of the weights may carry a trailing vector dimension (at most one
    in practice); the result has the broadcast trailing shape.
    """
    x, y, z = _col(x), _col(y), _col(z)
    bx, by, bz = blocks.block_sums(x), blocks.block_sums(y), blocks.block_sums(z)
    pyz = blocks.block_sums(y * z)
    pxy = blocks.block_sums(x * y)
    pxz = blocks.block_sums(x * z)
    pxyz = blocks.block_sums(x * y * z)
    cum_x = _excl_prefix(bx)
    suf_z = _excl_suffix(bz)
    strict = (by * cum_x * suf_z).sum(axis=0)
    low_tie = 0.5 * ((by * bz - pyz) * cum_x).sum(axis=0)
    high_tie = 0.5 * ((bx * by - pxy) * suf_z).sum(axis=0)
    all_tie = (bx * by * bz - bx * pyz - by * pxz - bz * pxy + 2.0 * pxyz).sum(axis=0) / 6.0
    total = strict + low_tie + high_tie + all_tie
    return total[0] if total.size == 1 else total


def _plain_triple_sum(x, y, z) -> np.ndarray:
    """Sum of x_i y_l z_r over distinct-index triples (no ordering kernel)."""
    x, y, z = _col(x), _col(y), _col(z)
    sx, sy, sz = x.sum(axis=0), y.sum(axis=0), z.sum(axis=0)
    sxy = (x * y).sum(axis=0)
    sxz = (x * z).sum(axis=0)
    syz = (y * z).sum(axis=0)
    sxyz = (x * y * z).sum(axis=0)
    total = sx * sy * sz - sxy * sz - sxz * sy - syz * sx + 2.0 * sxyz
    return total[0] if total.size == 1 else total


def _per_index_sums(blocks: _TieBlocks, x, y, z, mu: float):
    """For each subject i, the symmetrised kernel sums with i in each slot.

    Returns the vector of sums over l != r (both != i) of
    G(i,l,r) + G(l,i,r) + G(r,l,i), where G(a,b,c) = x_a y_b z_c
    (k(t_a,t_b,t_c) - mu), without the 1/((n-1)(n-2)) normalisation.
    """
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    bx, by, bz = (blocks.block_sums(w) for w in (x, y, z))
    pxy = blocks.block_sums(x * y)
    pxz = blocks.block_sums(x * z)
    pyz = blocks.block_sums(y * z)
    cum_x = _excl_prefix(bx)
    suf_z = _excl_suffix(bz)
    w1 = _excl_suffix(by * suf_z)           # sum over blocks above: BY * SufZ
    w3 = _excl_prefix(by * cum_x)           # sum over blocks below: BY * CumX
    pairs_yz_above = _excl_suffix(by * bz - pyz)
    pairs_xy_below = _excl_prefix(bx * by - pxy)

    b = blocks.block
    sx, sy, sz = x.sum(), y.sum(), z.sum()
    sxy, sxz, syz = (x * y).sum(), (x * z).sum(), (y * z).sum()

    # i in the first (lowest-class) slot
    r1 = (w1[b]
          + 0.5 * pairs_yz_above[b]
          + 0.5 * (by[b] - y) * suf_z[b]
          + ((by[b] - y) * (bz[b] - z) - (pyz[b] - y * z)) / 6.0)
    k1 = (sy - y) * (sz - z) - (syz - y * z)
    # i in the middle slot
    r2 = (cum_x[b] * suf_z[b]
          + 0.5 * cum_x[b] * (bz[b] - z)
          + 0.5 * (bx[b] - x) * suf_z[b]
          + ((bx[b] - x) * (bz[b] - z) - (pxz[b] - x * z)) / 6.0)
    k2 = (sx - x) * (sz - z) - (sxz - x * z)
    # i in the last (highest-class) slot
    r3 = (w3[b]
          + 0.5 * (by[b] - y) * cum_x[b]
          + 0.5 * pairs_xy_below[b]
          + ((bx[b] - x) * (by[b] - y) - (pxy[b] - x * y)) / 6.0)
    k3 = (sx - x) * (sy - y) - (sxy - x * y)

    return x * (r1 - mu * k1) + y * (r2 - mu * k2) + z * (r3 - mu * k3)


# ---------------------------------------------------------------------------
# naive engines (cubic oracles, kept for cross-checks at small n)
# ---------------------------------------------------------------------------

def _distinct_mask(n: int) -> np.ndarray:
    idx = np.arange(n)
    i = idx[:, None, None]
    l = idx[None, :, None]
    r = idx[None, None, :]
    return (i != l) & (l != r) & (i != r)


def _naive_sums(t, x, y, z):
    lt = t[:, None] < t[None, :]
    eq = t[:, None] == t[None, :]
    kern = (lt[:, :, None] * lt[None, :, :] * 1.0
            + lt[:, :, None] * eq[None, :, :] * 0.5
            + eq[:, :, None] * lt[None, :, :] * 0.5
            + eq[:, :, None] * eq[None, :, :] / 6.0)
    mask = _distinct_mask(t.shape[0])
    w = np.einsum("i,l,r->ilr", x, y, z)
    return float(np.sum(kern * w * mask)), float(np.sum(w * mask))


def _naive_mu(t, dtilde) -> float:
    num, den = _naive_sums(t, dtilde[:, 0], dtilde[:, 1], dtilde[:, 2])
    return num / den


def _naive_per_index(t, x, y, z, mu) -> np.ndarray:
    n = t.shape[0]
    out = np.zeros(n)
    for i in range(n):
        others = np.delete(np.arange(n), i)
        for l in others:
            for r in others:
                if l == r:
                    continue
                out[i] += x[i] * y[l] * z[r] * (triple_kernel(t[i], t[l], t[r]) - mu)
                out[i] += x[l] * y[i] * z[r] * (triple_kernel(t[l], t[i], t[r]) - mu)
                out[i] += x[r] * y[l] * z[i] * (triple_kernel(t[r], t[l], t[i]) - mu)
    return out


# ---------------------------------------------------------------------------
# point estimate and variance
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class VusEstimate:
    """VUS point estimate with optional uncertainty attachments.

    ``asy_var`` is the estimated variance of the estimator itself (the
    large-sample variance of sqrt(n)(mu_hat - mu) already divided by n).
    """

    mu: float
    method: Method
    n: int
    theta: np.ndarray
    asy_var: float | None = None
    boot_sd: float | None = None

    @property
    def asy_sd(self) -> float | None:
        return None if self.asy_var is None else float(np.sqrt(self.asy_var))


def _theta_hats(method: Method, ds: Dataset, dtilde: np.ndarray, pi) -> np.ndarray:
    if method is Method.IPW:
        base = float(np.sum(ds.v / _as_pi(pi)))
    else:
        base = float(ds.n)
    return dtilde.sum(axis=0) / base


def vus_point(method: Method, ds: Dataset, rho=None, pi=None,
              engine: str = "fast") -> VusEstimate:
    """Point estimate of the volume under the surface.

    ``engine`` is one of ``fast``, ``naive`` or ``both``; ``both`` runs the
    cubic oracle alongside the fast path and raises if they disagree past
    1e-10 (a bug trap, only sensible at small n).
    """
    if engine not in ("fast", "naive", "both"):
        raise ValueError(f"unknown engine '{engine}'")
    dt = pseudo_disease(method, ds, rho, pi).dtilde
    col_sums = dt.sum(axis=0)
    for k in range(3):
        if abs(col_sums[k]) <= DENOM_TOL:
            raise DegenerateDenominator(k + 1, float(col_sums[k]))
    x, y, z = dt[:, 0], dt[:, 1], dt[:, 2]
    if engine in ("fast", "both"):
        blocks = _TieBlocks(ds.t)
        num = _ordered_triple_sum(blocks, x, y, z)
        den = _plain_triple_sum(x, y, z)
        if abs(den) <= DENOM_TOL:
            raise DegenerateDenominator(0, float(den))
        mu = float(num / den)
        if engine == "both":
            mu_naive = _naive_mu(ds.t, dt)
            if abs(mu - mu_naive) > ENGINE_AGREEMENT_TOL:
                raise RuntimeError(
                    f"fast/naive VUS engines disagree: {mu!r} vs {mu_naive!r}")
    else:
        num, den = _naive_sums(ds.t, x, y, z)
        if abs(den) <= DENOM_TOL:
            raise DegenerateDenominator(0, float(den))
        mu = num / den
    theta = _theta_hats(method, ds, dt, pi)
    return VusEstimate(mu, method, ds.n, theta)


def _dtilde_tau_rho_derivative(method: Method, ds: Dataset, fits: FittedModels) -> np.ndarray:
    """d(dtilde_k)/d(tau_rho) per subject, shape (n, 3, 2q).

    Evaluated at the raw model probabilities: where the clip floor binds,
    the weights are locally constant in tau and the raw derivative (which
    is then vanishingly small) is the better approximation.
    """
    u = fits.disease.spec.build(ds)
    n, q = u.shape
    rho_raw = glm.multinomial_probs(u, fits.disease.tau)
    drho = glm.rho_tau_derivative(u, rho_raw).reshape(n, 3, 2 * q)
    if method is Method.FI:
        w = np.ones(n)
    elif method is Method.MSI:
        w = 1.0 - ds.v.astype(float)
    elif method is Method.SPE:
        w = 1.0 - ds.v / fits.pi.pi
    else:
        raise ValueError(f"method {method.value} has no disease-model dependence")
    return w[:, None, None] * drho


def _dtilde_tau_pi_derivative(method: Method, ds: Dataset, fits: FittedModels) -> np.ndarray:
    """d(dtilde_k)/d(tau_pi) per subject, shape (n, 3, q)."""
    u = fits.verification.spec.build(ds)
    link = fits.verification.family.removeprefix("binary-")
    pi_raw = glm.binary_probs(u, fits.verification.tau, link)
    dinv = glm.inv_prob_derivative(u, fits.verification.tau, pi_raw, link)
    v = ds.v.astype(float)
    if method is Method.IPW:
        core = v[:, None] * ds.d_indicators()
    elif method is Method.SPE:
        core = v[:, None] * (ds.d_indicators() - fits.rho.rho)
    else:
        raise ValueError(f"method {method.value} has no verification-model dependence")
    return (core * dinv[:, None])[:, :, None] * u[:, None, :]


def _tau_correction(blocks: _TieBlocks, dt: np.ndarray, ddt: np.ndarray,
                    mu: float, n: int, scores: np.ndarray,
                    jac_sum: np.ndarray) -> np.ndarray:
    """One nuisance-model correction term of the influence vector.

    ``ddt`` holds d(dtilde)/d(tau); the triple-sum derivative lands on each
    class slot in turn.  Returns the per-subject correction (n,).
    """
    x, y, z = dt[:, 0], dt[:, 1], dt[:, 2]
    dx, dy, dz = ddt[:, 0, :], ddt[:, 1, :], ddt[:, 2, :]
    dg = (_ordered_triple_sum(blocks, dx, y, z) - mu * _plain_triple_sum(dx, y, z)
          + _ordered_triple_sum(blocks, x, dy, z) - mu * _plain_triple_sum(x, dy, z)
          + _ordered_triple_sum(blocks, x, y, dz) - mu * _plain_triple_sum(x, y, dz))
    coeff = dg / ((n - 1.0) * (n - 2.0))
    return scores @ np.linalg.solve(jac_sum.T, coeff)


def vus_variance(method: Method, ds: Dataset, fits: FittedModels,
                 mu_hat: float | None = None) -> float:
    """Estimated variance of the VUS estimator (already divided by n)."""
    n = ds.n
    if n < 4:
        raise DataError("the VUS variance needs at least 4 subjects")
    dt = pseudo_disease(method, ds, fits.rho, fits.pi).dtilde
    blocks = _TieBlocks(ds.t)
    if mu_hat is None:
        mu_hat = vus_point(method, ds, fits.rho, fits.pi).mu
    qi = _per_index_sums(blocks, dt[:, 0], dt[:, 1], dt[:, 2], mu_hat)
    qi = qi / ((n - 1.0) * (n - 2.0))
    if method.needs_rho:
        scores, jac = glm.score_and_jacobian(fits.disease, ds, per_subject=False)
        ddt = _dtilde_tau_rho_derivative(method, ds, fits)
        qi = qi - _tau_correction(blocks, dt, ddt, mu_hat, n, scores, jac)
    if method.needs_pi:
        scores, jac = glm.score_and_jacobian(fits.verification, ds, per_subject=False)
        ddt = _dtilde_tau_pi_derivative(method, ds, fits)
        qi = qi - _tau_correction(blocks, dt, ddt, mu_hat, n, scores, jac)
    theta = _theta_hats(method, ds, dt, fits.pi)
    var_root_n = float(np.sum(qi ** 2) / (n - 1.0)) / float(np.prod(theta ** 2))
    return var_root_n / n


def vus_with_sd(method: Method, ds: Dataset, fits: FittedModels,
                engine: str = "fast") -> VusEstimate:
    """Point estimate plus the influence-based standard error."""
    est = vus_point(method, ds, fits.rho, fits.pi, engine=engine)
    var = vus_variance(method, ds, fits, est.mu)
    return VusEstimate(est.mu, method, est.n, est.theta, asy_var=var)
