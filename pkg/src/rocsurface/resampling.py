"""Nonparametric bootstrap with model refitting inside each replicate.

Each replicate resamples whole subject rows with replacement, refits
whatever working models the method needs on the resample, and recomputes
the target statistic.  Replicate RNG streams derive from (master seed,
replicate index), so results are bit-identical regardless of execution
order or worker count; replicates that fail (separation, empty classes,
degenerate denominators) are counted, never silently dropped.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import CutPair, Dataset
from .exceptions import AllReplicatesFailed, RocSurfaceError
from .glm import DesignSpec
from .tcf import Method, estimate_tcf, prepare_fits
from .vus import vus_point

__all__ = ["BootstrapPlan", "BootstrapResult", "bootstrap"]

DEFAULT_REPLICATES = 250
FAILURE_WARN_FRACTION = 0.2


@dataclass(frozen=True)
class BootstrapPlan:
    """What to resample and how often.

    ``statistic`` is ``"tcf"`` (requires ``cut``) or ``"vus"``.
    """

    method: Method
    statistic: str = "tcf"
    cut: CutPair | None = None
    b: int = DEFAULT_REPLICATES
    seed: int = 0
    link: str = "logit"
    disease_spec: DesignSpec = field(default_factory=DesignSpec)
    verification_spec: DesignSpec = field(default_factory=DesignSpec)

    def __post_init__(self):
        if self.b < 2:
            raise ValueError("bootstrap needs at least 2 replicates")
        if self.statistic not in ("tcf", "vus"):
            raise ValueError(f"unknown statistic '{self.statistic}'")
        if self.statistic == "tcf" and self.cut is None:
            raise ValueError("the tcf statistic needs a cut pair")


@dataclass(frozen=True)
class BootstrapResult:
    """Standard deviations and percentile intervals over successful replicates."""

    sd: np.ndarray            # (k,)
    percentiles: np.ndarray   # (2, k): 2.5% and 97.5%
    n_failed: int
    b: int
    replicates: np.ndarray    # (b, k), NaN rows where a replicate failed

    @property
    def unstable(self) -> bool:
        """More than 20% of replicates failed."""
        return self.n_failed > FAILURE_WARN_FRACTION * self.b


def _statistic(plan: BootstrapPlan, ds: Dataset) -> np.ndarray:
    fits = prepare_fits(ds, plan.method, plan.link,
                        plan.disease_spec, plan.verification_spec)
    if plan.statistic == "tcf":
        return estimate_tcf(plan.method, ds, plan.cut, fits.rho, fits.pi).tcf
    return np.array([vus_point(plan.method, ds, fits.rho, fits.pi).mu])


def bootstrap(plan: BootstrapPlan, ds: Dataset, threads: int = 1) -> BootstrapResult:
    """Run the plan against ``ds`` and summarise the replicate distribution."""
    base = _statistic(plan, ds)  # also validates that the statistic is computable
    k = base.shape[0]
    values = np.full((plan.b, k), np.nan)

    def one(rep: int):
        rng = np.random.default_rng([plan.seed, rep])
        idx = rng.integers(0, ds.n, ds.n)
        try:
            values[rep] = _statistic(plan, ds.take(idx))
        except RocSurfaceError:
            pass  # row stays NaN and is counted below

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(one, range(plan.b)))
    else:
        for rep in range(plan.b):
            one(rep)

    ok = ~np.isnan(values).any(axis=1)
    n_failed = int(plan.b - ok.sum())
    if n_failed == plan.b:
        raise AllReplicatesFailed(f"all {plan.b} bootstrap replicates failed")
    good = values[ok]
    sd = good.std(axis=0, ddof=1)
    percentiles = np.percentile(good, [2.5, 97.5], axis=0)
    return BootstrapResult(sd, percentiles, n_failed, plan.b, values)
