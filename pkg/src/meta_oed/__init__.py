"""Transfer-aware sequential experimental design: acquisitions that separate
transferable from task-specific information, misjudgment diagnostics for
model-misspecification threats, and policies that act on them."""

from meta_oed.belief import (
    DegenerateCovarianceError,
    Gaussian,
    GaussianBelief,
    UnivariateGaussian,
    condition_on_theta,
    kl_gaussian,
    log_pdf,
    marginal_theta,
)

__all__ = [
    "DegenerateCovarianceError",
    "Gaussian",
    "GaussianBelief",
    "UnivariateGaussian",
    "condition_on_theta",
    "kl_gaussian",
    "log_pdf",
    "marginal_theta",
]

__version__ = "0.1.0"
