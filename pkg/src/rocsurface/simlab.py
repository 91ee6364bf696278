"""Simulation laboratory: data generators, true values, Monte Carlo runner.

Seven study designs are built in.  Studies s1/s2 draw a trinomial class
with prevalences (0.4, 0.35, 0.25) and a bivariate normal (T, A) around
class-specific means (2k, k); s1 verifies through a correct logistic
mechanism (rate ~0.65) while s2 verifies through indicator jumps at the
population 80th percentiles of T and A (rate ~0.48) and deliberately fits
a verification model without A.  Studies s3/s4 build the class from a
latent standard normal with thresholds at its 0.4 and 0.75 quantiles and
deliberately fit the disease model on T alone; s4 additionally feeds the
verification model |A|^(2/3) instead of A.  The vus1-vus3 designs mirror
s1 with different means/covariances and a logistic verification rule
tuned to a rate of ~0.52, and are used for volume estimation.

Every generator is a pure function of (config, replicate index), so any
table produced here is bit-reproducible from its seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.optimize import brentq
from scipy.stats import norm

from .asymptotics import estimate_tcf_with_sd
from .data import CutPair, Dataset
from .exceptions import RocSurfaceError
from .glm import DesignSpec
from .resampling import BootstrapPlan, bootstrap
from .tcf import Method, prepare_fits
from .vus import vus_with_sd

__all__ = [
    "StudyConfig",
    "generate",
    "true_tcf",
    "true_vus",
    "working_specs",
    "SimCell",
    "SimReport",
    "run_monte_carlo",
]

THETA = np.array([0.4, 0.35, 0.25])
CLASS_MEANS_SCALE = np.array([[2.0, 1.0], [4.0, 2.0], [6.0, 3.0]])  # (2k, k)

LAMBDAS = {
    1: np.array([[1.75, 0.1], [0.1, 2.5]]),
    2: np.array([[2.5, 1.5], [1.5, 2.5]]),
    3: np.array([[5.5, 3.0], [3.0, 2.5]]),
}

# (covariance, per-class mean step (mu_T, mu_A), verification coefficients)
VUS_SETTINGS = {
    "vus1": (np.array([[1.2, 1.0], [1.0, 1.0]]), (3.0, 2.0), (1.0, -2.87, 4.06)),
    "vus2": (np.array([[1.75, 0.1], [0.1, 2.5]]), (2.0, 1.0), (1.0, -2.2, 4.0)),
    "vus3": (np.array([[5.5, 3.0], [3.0, 2.5]]), (2.0, 1.0), (1.0, -2.2, 4.0)),
}

# latent thresholds putting 40% / 35% / 25% of mass in the three classes
H1 = norm.ppf(0.4)
H2 = norm.ppf(0.75)

TCF_STUDIES = ("s1", "s2", "s3", "s4")
VUS_STUDIES = ("vus1", "vus2", "vus3")

DEFAULT_CUTS = {
    "s1": ((2, 4), (2, 5), (2, 7), (4, 5), (4, 7), (5, 7)),
    "s3": ((-1, -0.5), (-1, 0.7), (-1, 1.3), (-0.5, 0.7), (-0.5, 1.3), (0.7, 1.3)),
}
DEFAULT_CUTS["s2"] = DEFAULT_CUTS["s1"]
DEFAULT_CUTS["s4"] = DEFAULT_CUTS["s3"]

# desk-scale replication defaults; the full-scale runs use 5000/1000
DEFAULT_REPS = {"s1": 500, "s2": 200, "s3": 200, "s4": 200,
                "vus1": 300, "vus2": 300, "vus3": 300}

DEFAULT_METHODS = (Method.FI, Method.MSI, Method.IPW, Method.SPE)


@dataclass(frozen=True)
class StudyConfig:
    """One simulation experiment: design, size, replication count, seed."""

    study: str
    n: int = 250
    reps: int | None = None
    seed: int = 0
    lambda_index: int = 1
    cuts: tuple[CutPair, ...] | None = None
    methods: tuple[Method, ...] = DEFAULT_METHODS
    boot: int = 0

    def __post_init__(self):
        if self.study not in TCF_STUDIES + VUS_STUDIES:
            raise ValueError(f"unknown study '{self.study}'")
        if self.study in ("s1", "s2") and self.lambda_index not in LAMBDAS:
            raise ValueError("lambda_index must be 1, 2 or 3")
        if self.reps is None:
            object.__setattr__(self, "reps", DEFAULT_REPS[self.study])
        if self.cuts is None and self.study in TCF_STUDIES:
            object.__setattr__(
                self, "cuts",
                tuple(CutPair(float(a), float(b)) for a, b in DEFAULT_CUTS[self.study]))

    @property
    def is_vus(self) -> bool:
        return self.study in VUS_STUDIES


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-x))


_PERCENTILE_CACHE: dict[tuple, tuple[float, float]] = {}


def population_80th_percentiles(lambda_index: int) -> tuple[float, float]:
    """80th percentiles of the marginal mixture distributions of T and A.

    Solved once per covariance by bisection on the three-component normal
    mixture CDF, so the s2 verification mechanism is the same across
    replicates (per-sample percentiles would change the true mechanism).
    """
    key = ("s2", lambda_index)
    if key not in _PERCENTILE_CACHE:
        lam = LAMBDAS[lambda_index]
        sd_t, sd_a = np.sqrt(lam[0, 0]), np.sqrt(lam[1, 1])

        def solve(means, sd):
            cdf = lambda x: float(THETA @ norm.cdf((x - means) / sd))
            lo = means.min() - 12 * sd
            hi = means.max() + 12 * sd
            return brentq(lambda x: cdf(x) - 0.8, lo, hi, xtol=1e-10)

        _PERCENTILE_CACHE[key] = (solve(CLASS_MEANS_SCALE[:, 0], sd_t),
                                  solve(CLASS_MEANS_SCALE[:, 1], sd_a))
    return _PERCENTILE_CACHE[key]


def generate(config: StudyConfig, rep_index: int) -> Dataset:
    """Draw one replicate dataset; identical (config, rep_index) give
    identical data."""
    rng = np.random.default_rng([config.seed, rep_index])
    n = config.n

    if config.study in ("s1", "s2") or config.is_vus:
        u_class = rng.random(n)
        k = np.searchsorted(np.cumsum(THETA)[:2], u_class)  # 0-based class
        noise = rng.standard_normal((n, 2))
        u_verify = rng.random(n)
        if config.is_vus:
            lam, mu_step, delta = VUS_SETTINGS[config.study]
            means = np.outer(np.arange(1, 4), mu_step)
        else:
            lam = LAMBDAS[config.lambda_index]
            means = CLASS_MEANS_SCALE
        chol = np.linalg.cholesky(lam)
        ta = means[k] + noise @ chol.T
        t, a = ta[:, 0], ta[:, 1]
        if config.study == "s2":
            t80, a80 = population_80th_percentiles(config.lambda_index)
            pi = 0.35 + 0.3 * (t > t80) + 0.35 * (a > a80)
        elif config.is_vus:
            pi = _sigmoid(delta[0] + delta[1] * t + delta[2] * a)
        else:
            pi = _sigmoid(0.5 - 0.3 * t + 0.75 * a)
        v = (u_verify < pi).astype(np.int64)
        d = np.where(v == 1, k + 1, 0)
        return Dataset.from_arrays(t, a, v, d)

    # s3 / s4: latent-normal classes, misspecifiable working models
    z = rng.standard_normal((n, 2)) * np.sqrt(0.5)
    eps = rng.standard_normal((n, 2)) * 0.5
    u_verify = rng.random(n)
    latent = z[:, 0] + z[:, 1]
    k = np.searchsorted(np.array([H1, H2]), latent)  # 0-based class
    t = 0.5 * latent + eps[:, 0]
    a = latent + eps[:, 1]
    pi = _sigmoid(0.1 - 1.53 * t + a)
    v = (u_verify < pi).astype(np.int64)
    d = np.where(v == 1, k + 1, 0)
    return Dataset.from_arrays(t, a, v, d)


def working_specs(study: str) -> tuple[DesignSpec, DesignSpec]:
    """(disease, verification) design specs, misspecified where the study
    demands it."""
    full = DesignSpec()
    t_only = DesignSpec(a_indices=())
    if study in ("s3", "s4"):
        disease = t_only  # drop A from the disease model
    else:
        disease = full
    if study == "s2":
        verification = t_only  # drop A from the verification model
    elif study == "s4":
        verification = DesignSpec(a_abs_exponent=2.0 / 3.0)
    else:
        verification = full
    return disease, verification


def true_tcf(config: StudyConfig, cut: CutPair) -> np.ndarray:
    """True class fractions for the TCF study designs."""
    if config.study in ("s1", "s2"):
        sigma = float(np.sqrt(LAMBDAS[config.lambda_index][0, 0]))
        return np.array([
            norm.cdf((cut.c1 - 2.0) / sigma),
            norm.cdf((cut.c2 - 4.0) / sigma) - norm.cdf((cut.c1 - 4.0) / sigma),
            1.0 - norm.cdf((cut.c2 - 6.0) / sigma),
        ])
    if config.study in ("s3", "s4"):
        def within(c, z):
            return norm.cdf((c - 0.5 * z) / 0.5)

        def part(f, lo, hi):
            val, _ = integrate.quad(lambda z: f(z) * norm.pdf(z), lo, hi,
                                    epsabs=1e-10, limit=200)
            return val

        f1 = part(lambda z: within(cut.c1, z), -np.inf, H1) / norm.cdf(H1)
        f2 = (part(lambda z: within(cut.c2, z) - within(cut.c1, z), H1, H2)
              / (norm.cdf(H2) - norm.cdf(H1)))
        f3 = 1.0 - part(lambda z: within(cut.c2, z), H2, np.inf) / (1.0 - norm.cdf(H2))
        return np.array([f1, f2, f3])
    raise ValueError(f"study '{config.study}' has no TCF truth")


def true_vus(config: StudyConfig) -> float:
    """True volume under the surface for the vus1-vus3 designs."""
    if not config.is_vus:
        raise ValueError(f"study '{config.study}' has no VUS truth")
    lam, mu_step, _ = VUS_SETTINGS[config.study]
    sigma = float(np.sqrt(lam[0, 0]))
    m1, m2, m3 = mu_step[0], 2 * mu_step[0], 3 * mu_step[0]
    val, _ = integrate.quad(
        lambda x: (norm.cdf((x - m1) / sigma) * (1.0 - norm.cdf((x - m3) / sigma))
                   * norm.pdf((x - m2) / sigma) / sigma),
        -np.inf, np.inf, epsabs=1e-12, limit=200)
    return float(val)


@dataclass(frozen=True)
class SimCell:
    """Monte Carlo summary for one (method, cut) combination."""

    method: Method
    cut: CutPair | None
    mean: np.ndarray
    mc_sd: np.ndarray
    asy_sd: np.ndarray
    boot_sd: np.ndarray | None
    true: np.ndarray | None


@dataclass(frozen=True)
class SimReport:
    """All cells of one study plus bookkeeping on failed replicates."""

    config: StudyConfig
    cells: tuple[SimCell, ...]
    reps_done: int
    failures: tuple[tuple[int, str], ...] = ()

    def cell(self, method: Method, cut: CutPair | None = None) -> SimCell:
        for c in self.cells:
            if c.method is method and c.cut == cut:
                return c
        raise KeyError((method, cut))

    def to_csv(self, path) -> None:
        k = self.cells[0].mean.shape[0]
        labels = [f"tcf{i+1}" for i in range(k)] if k == 3 else ["vus"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            header = ["study", "n", "method", "c1", "c2"]
            for group in ("true", "mean", "mc_sd", "asy_sd", "boot_sd"):
                header += [f"{group}_{lab}" for lab in labels]
            writer.writerow(header)
            for c in self.cells:
                row = [self.config.study, self.config.n, c.method.value]
                row += ["", ""] if c.cut is None else [format(c.cut.c1, ".17g"),
                                                       format(c.cut.c2, ".17g")]
                for group in (c.true, c.mean, c.mc_sd, c.asy_sd, c.boot_sd):
                    if group is None:
                        row += [""] * k
                    else:
                        row += [format(x, ".17g") for x in np.atleast_1d(group)]
                writer.writerow(row)


def _boot_seed(config: StudyConfig, rep: int) -> int:
    return int(np.random.SeedSequence([config.seed, rep, 7919]).generate_state(1)[0])


def run_monte_carlo(config: StudyConfig) -> SimReport:
    """Generate-fit-estimate over all replicates and summarise per cell."""
    disease_spec, verification_spec = working_specs(config.study)
    methods = config.methods
    cuts = () if config.is_vus else config.cuts
    keys = [(m, None) for m in methods] if config.is_vus else \
           [(m, cut) for m in methods for cut in cuts]
    values = {key: [] for key in keys}
    asy = {key: [] for key in keys}
    boot = {key: [] for key in keys}
    failures = []
    reps_done = 0

    for rep in range(config.reps):
        ds = generate(config, rep)
        try:
            fits = prepare_fits(ds, methods, "logit", disease_spec, verification_spec)
            rep_values = {}
            for m, cut in keys:
                if config.is_vus:
                    est = vus_with_sd(m, ds, fits)
                    rep_values[(m, cut)] = (np.array([est.mu]), np.array([est.asy_sd]))
                else:
                    est = estimate_tcf_with_sd(m, ds, cut, fits)
                    rep_values[(m, cut)] = (est.tcf, est.asy_sd)
            if config.boot:
                for m, cut in keys:
                    plan = BootstrapPlan(
                        m, "vus" if config.is_vus else "tcf", cut,
                        b=config.boot, seed=_boot_seed(config, rep), link="logit",
                        disease_spec=disease_spec, verification_spec=verification_spec)
                    boot[(m, cut)].append(bootstrap(plan, ds).sd)
        except RocSurfaceError as exc:
            failures.append((rep, str(exc)))
            continue
        for key, (val, sd) in rep_values.items():
            values[key].append(val)
            asy[key].append(sd)
        reps_done += 1

    cells = []
    for m, cut in keys:
        vals = np.array(values[(m, cut)])
        sds = np.array(asy[(m, cut)])
        if config.is_vus:
            true = np.array([true_vus(config)])
        else:
            true = true_tcf(config, cut)
        width = vals.shape[1] if vals.ndim == 2 else 1
        mc_sd = vals.std(axis=0, ddof=1) if vals.shape[0] > 1 else np.full(width, np.nan)
        cells.append(SimCell(
            method=m, cut=cut,
            mean=vals.mean(axis=0),
            mc_sd=mc_sd,
            asy_sd=sds.mean(axis=0),
            boot_sd=np.array(boot[(m, cut)]).mean(axis=0) if boot[(m, cut)] else None,
            true=true))
    return SimReport(config, tuple(cells), reps_done, tuple(failures))
