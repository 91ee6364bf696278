"""True class fraction estimators, ROC surface grids and curve projections.

Each estimator replaces the (partly unobserved) class indicators with
method-specific pseudo-disease weights:

* FULL - the observed indicators (requires complete verification),
* FI   - model probabilities ``rho`` for everyone,
* MSI  - observed indicators where verified, ``rho`` elsewhere,
* IPW  - observed indicators inversely weighted by ``pi`` (verified only),
* SPE  - the doubly robust combination of the two model fits.

SPE weights may be negative, so SPE fractions can fall outside [0, 1];
they are reported raw (clipping before variance estimation would bias it)
with a clipped companion view for plotting.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .data import CutPair, Dataset
from .exceptions import DataError, DegenerateDenominator
from . import glm
from .glm import DesignSpec, DiseaseProbs, GlmFit, VerificationProbs

__all__ = [
    "Method",
    "FittedModels",
    "prepare_fits",
    "PseudoDisease",
    "pseudo_disease",
    "ThetaBeta",
    "theta_beta",
    "TcfEstimate",
    "estimate_tcf",
    "default_grid",
    "roc_surface",
    "RocCurve",
    "roc_projection",
]

DENOM_TOL = 1e-8


class Method(enum.Enum):
    """Estimation method tag."""

    FULL = "full"
    FI = "fi"
    MSI = "msi"
    IPW = "ipw"
    SPE = "spe"

    @property
    def needs_rho(self) -> bool:
        return self in (Method.FI, Method.MSI, Method.SPE)

    @property
    def needs_pi(self) -> bool:
        return self in (Method.IPW, Method.SPE)

    @property
    def m(self) -> int:
        """Imputation flag of the imputation family: 0 for FI, 1 for MSI."""
        if self is Method.FI:
            return 0
        if self is Method.MSI:
            return 1
        raise ValueError(f"method {self.value} is not an imputation estimator")


@dataclass(frozen=True)
class FittedModels:
    """Fitted working models and their per-subject probabilities."""

    disease: GlmFit | None = None
    verification: GlmFit | None = None
    rho: DiseaseProbs | None = None
    pi: VerificationProbs | None = None


def prepare_fits(ds: Dataset, methods, link: str = "logit",
                 disease_spec: DesignSpec = DesignSpec(),
                 verification_spec: DesignSpec = DesignSpec()) -> FittedModels:
    """Fit whichever working models the requested methods need."""
    if isinstance(methods, Method):
        methods = (methods,)
    need_rho = any(m.needs_rho for m in methods)
    need_pi = any(m.needs_pi for m in methods)
    disease = glm.fit_disease(ds, disease_spec) if need_rho else None
    verification = glm.fit_verification(ds, link, verification_spec) if need_pi else None
    return FittedModels(
        disease=disease,
        verification=verification,
        rho=glm.predict(disease, ds) if disease is not None else None,
        pi=glm.predict(verification, ds) if verification is not None else None,
    )


@dataclass(frozen=True)
class PseudoDisease:
    """Method-specific class weights, one (possibly negative) row per subject."""

    dtilde: np.ndarray  # (n, 3)
    method: Method


def _as_rho(rho) -> np.ndarray | None:
    if rho is None:
        return None
    return rho.rho if isinstance(rho, DiseaseProbs) else np.asarray(rho, dtype=float)


def _as_pi(pi) -> np.ndarray | None:
    if pi is None:
        return None
    return pi.pi if isinstance(pi, VerificationProbs) else np.asarray(pi, dtype=float)


def pseudo_disease(method: Method, ds: Dataset, rho=None, pi=None) -> PseudoDisease:
    """Build the (n, 3) pseudo-disease weight matrix for ``method``.

    ``rho`` / ``pi`` may be the prediction objects from :mod:`rocsurface.glm`
    or plain arrays; only the pieces the method needs are required.
    """
    rho = _as_rho(rho)
    pi = _as_pi(pi)
    if method.needs_rho and rho is None:
        raise DataError(f"method {method.value} requires disease probabilities")
    if method.needs_pi and pi is None:
        raise DataError(f"method {method.value} requires verification probabilities")
    d_ind = ds.d_indicators()
    v = ds.v.astype(float)[:, None]
    if method is Method.FULL:
        if not ds.all_verified():
            raise DataError("the FULL estimator requires complete verification")
        dt = d_ind.copy()
    elif method is Method.FI:
        dt = rho.copy()
    elif method is Method.MSI:
        dt = v * d_ind + (1.0 - v) * rho
    elif method is Method.IPW:
        dt = v * d_ind / pi[:, None]
    elif method is Method.SPE:
        w = v / pi[:, None]
        dt = w * d_ind - rho * (w - 1.0)
    else:  # pragma: no cover
        raise ValueError(method)
    return PseudoDisease(dt, method)


@dataclass(frozen=True)
class ThetaBeta:
    """Class prevalences and joint exceedance probabilities at a cut pair.

    ``beta[j, k]`` estimates Pr(T >= c_{j+1}, class k+1); the stacked
    parameter vector of the estimating equations uses
    (theta1, theta2, beta11, beta12, beta22, beta23).
    """

    theta: np.ndarray  # (3,)
    beta: np.ndarray   # (2, 3)
    method: Method
    cut: CutPair

    def alpha_core(self) -> np.ndarray:
        return np.array([self.theta[0], self.theta[1],
                         self.beta[0, 0], self.beta[0, 1],
                         self.beta[1, 1], self.beta[1, 2]])


def _check_denominators(col_sums: np.ndarray):
    for k in range(3):
        if abs(col_sums[k]) <= DENOM_TOL:
            raise DegenerateDenominator(k + 1, float(col_sums[k]))


def theta_beta(method: Method, ds: Dataset, cut: CutPair, rho=None, pi=None) -> ThetaBeta:
    """Solve the method's estimating equations for theta and beta at ``cut``.

    For FULL/FI/MSI/SPE these are plain means of the pseudo-disease
    weights; IPW solves weighted equations, giving ratio estimates with
    the summed inverse-probability weights in the denominator.
    """
    dt = pseudo_disease(method, ds, rho, pi).dtilde
    ind = np.column_stack([ds.t >= cut.c1, ds.t >= cut.c2]).astype(float)
    if method is Method.IPW:
        base = float(np.sum(ds.v / _as_pi(pi)))
    else:
        base = float(ds.n)
    theta = dt.sum(axis=0) / base
    beta = (ind.T @ dt) / base
    return ThetaBeta(theta, beta, method, cut)


@dataclass(frozen=True)
class TcfEstimate:
    """A TCF triple at one cut pair, with optional uncertainty attachments."""

    cut: CutPair
    method: Method
    tcf: np.ndarray                 # (3,)
    cov: np.ndarray | None = None   # (3, 3) covariance of the estimates
    asy_sd: np.ndarray | None = None
    boot_sd: np.ndarray | None = None
    note: str | None = None

    @property
    def tcf_clipped(self) -> np.ndarray:
        """Range-respecting view for plotting (SPE can leave [0, 1])."""
        return np.clip(self.tcf, 0.0, 1.0)


def _tcf_from_sums(ge_c1, ge_c2, totals) -> np.ndarray:
    return np.array([
        1.0 - ge_c1[0] / totals[0],
        (ge_c1[1] - ge_c2[1]) / totals[1],
        ge_c2[2] / totals[2],
    ])


def estimate_tcf(method: Method, ds: Dataset, cut: CutPair, rho=None, pi=None) -> TcfEstimate:
    """Point estimate of (TCF1, TCF2, TCF3) at ``cut``.

    Ties with a cut value go rightward: the indicator convention is
    I(T >= c) at both cuts, so class 2 spans the half-open interval
    [c1, c2).
    """
    dt = pseudo_disease(method, ds, rho, pi).dtilde
    totals = dt.sum(axis=0)
    _check_denominators(totals)
    ge_c1 = dt[ds.t >= cut.c1].sum(axis=0)
    ge_c2 = dt[ds.t >= cut.c2].sum(axis=0)
    return TcfEstimate(cut, method, _tcf_from_sums(ge_c1, ge_c2, totals))


def default_grid(ds: Dataset, levels: np.ndarray | None = None) -> list[CutPair]:
    """All ordered pairs of the empirical 1%..99% quantiles of the test."""
    if levels is None:
        levels = np.linspace(0.01, 0.99, 99)
    qs = np.unique(np.quantile(ds.t, levels))
    return [CutPair(float(qs[i]), float(qs[j]))
            for i in range(len(qs)) for j in range(i + 1, len(qs))]


def roc_surface(method: Method, ds: Dataset, grid: list[CutPair] | None = None,
                rho=None, pi=None) -> list[TcfEstimate]:
    """Evaluate the TCF triple on a grid of cut pairs.

    Cut pairs whose denominators are degenerate are flagged via ``note``
    (with NaN fractions), never silently dropped.
    """
    if grid is None:
        grid = default_grid(ds)
    if not grid:
        raise DataError("surface grid must contain at least one cut pair")
    dt = pseudo_disease(method, ds, rho, pi).dtilde
    totals = dt.sum(axis=0)
    order = np.argsort(ds.t, kind="stable")
    t_sorted = ds.t[order]
    # suffix[i, k] = sum of dtilde[:, k] over subjects with T >= t_sorted[i]
    suffix = np.vstack([np.cumsum(dt[order][::-1], axis=0)[::-1], np.zeros(3)])

    degenerate = [k + 1 for k in range(3) if abs(totals[k]) <= DENOM_TOL]
    out = []
    for pair in grid:
        i1 = np.searchsorted(t_sorted, pair.c1, side="left")
        i2 = np.searchsorted(t_sorted, pair.c2, side="left")
        if degenerate:
            out.append(TcfEstimate(pair, method, np.full(3, np.nan),
                                   note=f"degenerate denominator for class {degenerate[0]}"))
        else:
            out.append(TcfEstimate(pair, method,
                                   _tcf_from_sums(suffix[i1], suffix[i2], totals)))
    return out


@dataclass(frozen=True)
class RocCurve:
    """A two-class projection of the surface: one (x, y) point per cut."""

    class_pair: tuple[int, int]
    cuts: np.ndarray     # (m,)
    points: np.ndarray   # (m, 2)


def roc_projection(method: Method, ds: Dataset, class_pair: tuple[int, int],
                   cuts: np.ndarray | None = None, rho=None, pi=None) -> RocCurve:
    """Project the estimated surface onto a pairwise ROC curve.

    * (1, 2): points (TCF1(c), TCF2(c, +inf)) - ignore the upper cut;
    * (2, 3): points (TCF2(-inf, c), TCF3(c)) - ignore the lower cut;
    * (1, 3): points (TCF1(c), TCF3(c)) - one cut plays both roles.
    """
    if tuple(class_pair) not in ((1, 2), (2, 3), (1, 3)):
        raise DataError(f"invalid class pair {class_pair}")
    if cuts is None:
        cuts = np.concatenate([[-np.inf], np.unique(ds.t), [np.inf]])
    cuts = np.asarray(cuts, dtype=float)
    dt = pseudo_disease(method, ds, rho, pi).dtilde
    order = np.argsort(ds.t, kind="stable")
    t_sorted = ds.t[order]
    suffix = np.vstack([np.cumsum(dt[order][::-1], axis=0)[::-1], np.zeros(3)])
    totals = suffix[0]  # summed in suffix order so sentinel cuts are exact
    _check_denominators(totals)
    idx = np.searchsorted(t_sorted, cuts, side="left")
    ge = suffix[idx]  # (m, 3)
    tcf1 = 1.0 - ge[:, 0] / totals[0]
    tcf2_low = ge[:, 1] / totals[1]          # TCF2(c, +inf)
    tcf2_high = 1.0 - ge[:, 1] / totals[1]   # TCF2(-inf, c)
    tcf3 = ge[:, 2] / totals[2]
    pair = tuple(class_pair)
    if pair == (1, 2):
        pts = np.column_stack([tcf1, tcf2_low])
    elif pair == (2, 3):
        pts = np.column_stack([tcf2_high, tcf3])
    else:
        pts = np.column_stack([tcf1, tcf3])
    return RocCurve(pair, cuts, pts)
