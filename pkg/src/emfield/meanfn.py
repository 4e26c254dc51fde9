"""Physics-informed mean for the field model.

The mean is a weighted sum of fixed inverse-square-distance bumps, one per
candidate transmitter position: g(x) = 1/(1 + d(x, c)^2) peaks at 1 on its
centre and decays like the free-space power law.  Weights carry a Gaussian
prior N(a, A); marginalizing them augments the covariance by G^T A G, and
conditioning on data yields the posterior weight mean used at prediction.

The candidate centres default to the 16 canonical source positions, since
the true transmitter is unknown at prediction time; the data then selects
or blends candidates through the weight posterior.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import linalg

from .errors import ConfigurationError, ContractError, NumericalError
from .geometry import CANONICAL_SOURCES, pairwise_dist


@dataclass(frozen=True, eq=False)
class MeanSpec:
    """Mean-function configuration: zero mean, or basis bumps with a prior."""

    mode: str
    centers: np.ndarray | None = None
    prior_mean: np.ndarray | None = None
    prior_cov: np.ndarray | None = None

    def __post_init__(self):
        if self.mode not in ("zero", "basis"):
            raise ConfigurationError(f"mean mode must be zero or basis, got {self.mode!r}")
        if self.mode == "zero":
            return
        centers = np.atleast_2d(np.asarray(self.centers, dtype=float))
        k = len(centers)
        if k == 0:
            raise ConfigurationError("basis mean needs at least one centre")
        a = np.zeros(k) if self.prior_mean is None else np.asarray(self.prior_mean, dtype=float)
        A = 100.0 * np.eye(k) if self.prior_cov is None else np.asarray(self.prior_cov, dtype=float)
        if a.shape != (k,):
            raise ConfigurationError(f"prior_mean must have length {k}")
        if A.shape != (k, k):
            raise ConfigurationError(f"prior_cov must be {k}x{k}")
        if not np.allclose(A, A.T, atol=1e-10):
            raise ConfigurationError("prior_cov must be symmetric")
        object.__setattr__(self, "centers", centers)
        object.__setattr__(self, "prior_mean", a)
        object.__setattr__(self, "prior_cov", A)

    @property
    def n_centers(self) -> int:
        return 0 if self.mode == "zero" else len(self.centers)


def zero_mean() -> MeanSpec:
    return MeanSpec(mode="zero")


def basis_mean(centers=None, prior_mean=None, prior_cov=None) -> MeanSpec:
    """Basis mean with defaults: canonical centres, a = 0, A = 100 I."""
    if centers is None:
        centers = np.asarray(CANONICAL_SOURCES, dtype=float)
    return MeanSpec(mode="basis", centers=centers, prior_mean=prior_mean, prior_cov=prior_cov)


def basis_eval(center, x) -> float:
    """Bump value 1/(1 + d^2); equals 1 exactly on the centre."""
    d2 = float((x[0] - center[0]) ** 2 + (x[1] - center[1]) ** 2)
    return 1.0 / (1.0 + d2)


def design_matrix(spec: MeanSpec, X) -> np.ndarray:
    """K x n matrix G with G[k, i] = bump k evaluated at point i."""
    if spec.mode != "basis":
        raise ContractError("design_matrix requires a basis-mode mean")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    d = pairwise_dist(spec.centers, X)
    return 1.0 / (1.0 + d**2)


@dataclass(eq=False)
class WeightPosterior:
    """Posterior over basis weights: mean omega_bar, precision W."""

    omega_bar: np.ndarray
    precision: np.ndarray


def weight_posterior(spec: MeanSpec, G: np.ndarray, K_inv_action, Y) -> WeightPosterior:
    """Condition the weight prior on data.

    K_inv_action must apply the inverse of the noisy training gram (through
    its cached Cholesky factor) to a vector or matrix.  The posterior mean
    solves W omega = A^-1 a + G K^-1 Y with W = A^-1 + G K^-1 G^T, trading
    the prior against the data.
    """
    Y = np.asarray(Y, dtype=float)
    try:
        cA = linalg.cho_factor(spec.prior_cov, lower=True)
    except linalg.LinAlgError:
        raise ConfigurationError("weight prior covariance is not positive definite")
    k = spec.n_centers
    A_inv = linalg.cho_solve(cA, np.eye(k))
    W = A_inv + G @ K_inv_action(G.T)
    W = 0.5 * (W + W.T)
    try:
        cW = linalg.cho_factor(W, lower=True)
    except linalg.LinAlgError:
        raise NumericalError("weight-posterior precision is not positive definite")
    rhs = linalg.cho_solve(cA, spec.prior_mean) + G @ K_inv_action(Y)
    omega = linalg.cho_solve(cW, rhs)
    return WeightPosterior(omega_bar=omega, precision=W)
