"""Task models: outcome likelihoods, design generators, and ground-truth environments.

Three models are provided.  ``PathAnalysis`` is linear-Gaussian with a 4-d design
vector whose first coefficient multiplies the transferable parameter.  ``Preference``
is a binary channel y ~ Bernoulli(sigmoid(theta - psi * x)) over a fixed scalar
design grid.  ``Toy`` is a 2-d linear-Gaussian model whose outcome depends on the
parameters only through c * (psi - theta), so designs along (1, 1) are pure
confounding probes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from meta_oed.belief import Gaussian, GaussianBelief, UnivariateGaussian

PATH_DESIGN_COUNT = 100
PATH_DESIGN_SEED = 5
PREFERENCE_GRID_COUNT = 100


@dataclass(frozen=True)
class Design:
    """A single experimental design; ``x`` is a 1-d coefficient vector."""

    x: np.ndarray

    def __post_init__(self):
        x = np.atleast_1d(np.asarray(self.x, dtype=float))
        if x.ndim != 1 or not np.all(np.isfinite(x)):
            raise ValueError("design must be a finite 1-d vector")
        x.setflags(write=False)
        object.__setattr__(self, "x", x)


@dataclass(frozen=True)
class TaskEnvironment:
    """Ground-truth generating parameters for one task."""

    theta_star: np.ndarray
    psi_star: np.ndarray

    def __post_init__(self):
        for name in ("theta_star", "psi_star"):
            arr = np.atleast_1d(np.asarray(getattr(self, name), dtype=float))
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} must be finite")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def joint(self):
        return np.concatenate([self.theta_star, self.psi_star])


def sigmoid(z):
    """Numerically safe logistic function."""
    return 1.0 / (1.0 + np.exp(-np.clip(z, -700.0, 700.0)))


def log_sigmoid(z):
    return -np.logaddexp(0.0, -np.asarray(z, dtype=float))


def _check_model(designs, sigma2=1.0):
    if len(designs) == 0:
        raise ValueError("a task model needs at least one design")
    if sigma2 <= 0.0:
        raise ValueError("sigma2 must be > 0")


@dataclass(frozen=True)
class PathAnalysis:
    """Linear-Gaussian path model: y ~ N(x . (theta, psi1, psi2, psi3), sigma2)."""

    sigma2: float
    designs: tuple[Design, ...]

    is_linear_gaussian = True

    def __post_init__(self):
        _check_model(self.designs, self.sigma2)
        object.__setattr__(self, "designs", tuple(self.designs))

    def coefficients(self, design: Design) -> np.ndarray:
        return design.x

    def outcome_law(self, design, theta, psi) -> UnivariateGaussian:
        params = np.concatenate([np.atleast_1d(theta), np.atleast_1d(psi)])
        return UnivariateGaussian(float(design.x @ params), self.sigma2)


@dataclass(frozen=True)
class Preference:
    """Binary preference model: y ~ Bernoulli(sigmoid(theta - psi * x))."""

    designs: tuple[Design, ...]

    is_linear_gaussian = False

    def __post_init__(self):
        _check_model(self.designs)
        object.__setattr__(self, "designs", tuple(self.designs))

    def success_prob(self, design: Design, theta, psi):
        x = float(design.x[0])
        return sigmoid(np.asarray(theta, dtype=float) - np.asarray(psi, dtype=float) * x)

    def log_prob(self, design: Design, theta, psi, y):
        z = np.asarray(theta, dtype=float) - np.asarray(psi, dtype=float) * float(design.x[0])
        return log_sigmoid(z) if y == 1 else log_sigmoid(-z)


@dataclass(frozen=True)
class Toy:
    """Confounded toy model: y ~ N(c * (psi - theta), sigma2).

    The outcome depends on the parameters only through their difference, so no
    amount of data separates theta from psi; the design list exists for the
    companion closed-form acquisition table, not for the likelihood.
    """

    designs: tuple[Design, ...]
    c: float = 1.0
    sigma2: float = 1.0

    is_linear_gaussian = True

    def __post_init__(self):
        _check_model(self.designs, self.sigma2)
        object.__setattr__(self, "designs", tuple(self.designs))

    def coefficients(self, design: Design) -> np.ndarray:
        return np.array([-self.c, self.c])

    def outcome_law(self, design, theta, psi) -> UnivariateGaussian:
        mean = self.c * (float(np.asarray(psi).ravel()[0]) - float(np.asarray(theta).ravel()[0]))
        return UnivariateGaussian(mean, self.sigma2)


TaskModel = PathAnalysis | Preference | Toy


def generate_path_analysis_designs(count=PATH_DESIGN_COUNT, rng_seed=PATH_DESIGN_SEED):
    """Draw the path-analysis design pool.

    Each design takes a latent scale z ~ N(10, 0.25); components 2-4 are drawn
    around z and the first around -1/z (all with variance 0.25), so the pool mixes
    one small negatively-centred coefficient with three large positive ones.
    """
    if count < 1:
        raise ValueError("need at least one design")
    rng = np.random.default_rng(rng_seed)
    z = rng.normal(10.0, 0.5, size=count)
    x1 = rng.normal(-1.0 / z, 0.5)
    x2 = rng.normal(z, 0.5)
    x3 = rng.normal(z, 0.5)
    x4 = rng.normal(z, 0.5)
    return tuple(Design(np.array(row)) for row in np.column_stack([x1, x2, x3, x4]))


def preference_design_grid(count=PREFERENCE_GRID_COUNT):
    """Evenly spaced scalar designs on [-79, 81]; the offset keeps 0 off the grid."""
    if count < 2:
        raise ValueError("need at least two designs")
    return tuple(Design(np.array([v])) for v in np.linspace(-79.0, 81.0, count))


def default_path_model(count=PATH_DESIGN_COUNT, rng_seed=PATH_DESIGN_SEED, sigma2=1.0):
    return PathAnalysis(sigma2=sigma2, designs=generate_path_analysis_designs(count, rng_seed))


def default_preference_model(count=PREFERENCE_GRID_COUNT):
    return Preference(designs=preference_design_grid(count))


def default_path_prior() -> GaussianBelief:
    return GaussianBelief(
        mean=np.zeros(4), cov=np.diag([10.0, 10.0, 10.0, 10.0]), transferable_dims=(0,)
    )


def default_preference_prior() -> GaussianBelief:
    return GaussianBelief(mean=np.zeros(2), cov=np.diag([16.0, 1.0]), transferable_dims=(0,))


def default_toy_prior(var_theta=10.0, var_psi=10.0) -> GaussianBelief:
    return GaussianBelief(
        mean=np.zeros(2), cov=np.diag([var_theta, var_psi]), transferable_dims=(0,)
    )


def likelihood(model: TaskModel, design: Design, theta, psi, y) -> float:
    """P(y | design, theta, psi): a density for Gaussian outcomes, a pmf otherwise."""
    if isinstance(model, Preference):
        p = float(model.success_prob(design, np.asarray(theta).item(), np.asarray(psi).item()))
        if y not in (0, 1):
            raise ValueError("preference outcomes are 0 or 1")
        return p if y == 1 else 1.0 - p
    law = model.outcome_law(design, theta, psi)
    return float(math.exp(law.log_pdf(float(y))))


def sample_outcome(model: TaskModel, design: Design, theta, psi, rng):
    """Draw one outcome; bit-for-bit reproducible given the generator state."""
    if isinstance(model, Preference):
        p = float(model.success_prob(design, np.asarray(theta).item(), np.asarray(psi).item()))
        return int(rng.random() < p)
    law = model.outcome_law(design, theta, psi)
    return float(law.mean + math.sqrt(law.variance) * rng.standard_normal())
