"""Bias-corrected ROC surface and VUS estimation under partial verification.

Estimates three-class true class fractions, the ROC surface, and the
volume underneath from continuous test data in which disease status is
verified only for a (missing-at-random) subset of subjects.  Implements
the FULL, FI, MSI, IPW and doubly robust SPE estimators with sandwich
(M-estimation) and bootstrap uncertainty, plus a simulation laboratory.
"""

__version__ = "0.1.0"

from .data import CutPair, Dataset, Subject, load_csv, verification_rate, write_csv
from .exceptions import (AllReplicatesFailed, DataError, DegenerateDenominator,
                         DegenerateTheta, EstimationError, NonConvergence,
                         RocSurfaceError, SeparationError, SingularBread,
                         SingularCovariance)
from .glm import (DesignSpec, DiseaseProbs, GlmFit, VerificationProbs,
                  fit_disease, fit_verification, predict)
from .tcf import (FittedModels, Method, PseudoDisease, RocCurve, TcfEstimate,
                  ThetaBeta, default_grid, estimate_tcf, prepare_fits,
                  pseudo_disease, roc_projection, roc_surface, theta_beta)
from .asymptotics import (AlphaHat, Ellipse, SandwichCov, TcfCov, build_alpha,
                          chi2_quantile, confidence_region, estimate_tcf_with_sd,
                          estimating_stack, h_gradient, jacobian_stack, sandwich,
                          tcf_covariance, wald_intervals)
from .vus import VusEstimate, triple_kernel, vus_point, vus_variance, vus_with_sd
from .resampling import BootstrapPlan, BootstrapResult, bootstrap
from .simlab import (SimCell, SimReport, StudyConfig, generate, run_monte_carlo,
                     true_tcf, true_vus, working_specs)

__all__ = [
    "__version__",
    "Subject", "Dataset", "CutPair", "load_csv", "write_csv", "verification_rate",
    "RocSurfaceError", "DataError", "EstimationError", "SeparationError",
    "NonConvergence", "DegenerateDenominator", "DegenerateTheta", "SingularBread",
    "SingularCovariance", "AllReplicatesFailed",
    "DesignSpec", "GlmFit", "DiseaseProbs", "VerificationProbs",
    "fit_disease", "fit_verification", "predict",
    "Method", "FittedModels", "prepare_fits", "PseudoDisease", "pseudo_disease",
    "ThetaBeta", "theta_beta", "TcfEstimate", "estimate_tcf", "default_grid",
    "roc_surface", "RocCurve", "roc_projection",
    "AlphaHat", "build_alpha", "estimating_stack", "jacobian_stack",
    "SandwichCov", "sandwich", "h_gradient", "TcfCov", "tcf_covariance",
    "estimate_tcf_with_sd", "wald_intervals", "chi2_quantile",
    "Ellipse", "confidence_region",
    "triple_kernel", "VusEstimate", "vus_point", "vus_variance", "vus_with_sd",
    "BootstrapPlan", "BootstrapResult", "bootstrap",
    "StudyConfig", "generate", "true_tcf", "true_vus", "working_specs",
    "SimCell", "SimReport", "run_monte_carlo",
]
