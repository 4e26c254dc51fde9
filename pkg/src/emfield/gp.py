"""Exact GP inference on noisy observations.

One Cholesky factorization of the noisy training gram K = K_hh + sigma_eta^2 I
per fit; no explicit inverse is ever formed.  With a basis mean the effective
prior covariance is V = K + G^T A G, and all quantities are evaluated through
the matrix-inversion-lemma expansion, so only the n x n factor of K and the
small K x K factor of W = A^-1 + G K^-1 G^T are ever built.

A useful identity used throughout: the cached vector alpha = K^-1 (Y - G^T
omega_bar) equals V^-1 (Y - G^T a), so the same alpha drives the predictive
mean, the marginal likelihood quadratic and its gradient in both mean modes
(zero mean is the special case G absent, V = K).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from . import kernels
from .errors import DataError, DuplicateInputError
from .kernels import KernelSpec
from .meanfn import MeanSpec, WeightPosterior, design_matrix, weight_posterior


@dataclass(eq=False)
class TrainedModel:
    """Immutable-after-fit bundle of data, specs and solve caches."""

    X: np.ndarray
    Y: np.ndarray
    kernel: KernelSpec
    mean: MeanSpec
    chol_K: np.ndarray
    jitter: float
    alpha: np.ndarray
    lml: float
    weights: WeightPosterior | None = None
    G: np.ndarray | None = None
    chol_W: np.ndarray | None = None
    logdet_A: float = 0.0

    @property
    def n(self) -> int:
        return len(self.Y)


@dataclass(eq=False)
class Prediction:
    """Posterior predictive over query points.

    variance is clamped at 0 (clamp events counted); covariance, when
    requested, is the raw latent-function covariance without clamping or
    observation noise.
    """

    mean: np.ndarray
    variance: np.ndarray
    covariance: np.ndarray | None = None
    clamped: int = 0


@dataclass(eq=False)
class LmlTerms:
    """Marginal-likelihood decomposition: data fit + complexity + constant."""

    data_fit: float
    complexity: float
    constant: float

    @property
    def total(self) -> float:
        return self.data_fit + self.complexity + self.constant


def _k_inv_action(chol_K):
    return lambda B: linalg.cho_solve((chol_K, True), B)


def fit(X, Y, kernel: KernelSpec, mean: MeanSpec) -> TrainedModel:
    """Factorize the training system and cache everything predict needs."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.asarray(Y, dtype=float).reshape(-1)
    if len(X) != len(Y) or len(Y) < 1:
        raise DataError(f"need matching X, Y with n >= 1; got {len(X)} and {len(Y)}")
    if not np.all(np.isfinite(Y)):
        raise DataError("training values must be finite")
    if len({tuple(p) for p in X}) != len(X):
        raise DuplicateInputError("training points must be distinct")

    gm, L = kernels.noisy_cholesky(kernel, X)
    k_inv = _k_inv_action(L)

    if mean.mode == "basis":
        G = design_matrix(mean, X)
        wp = weight_posterior(mean, G, k_inv, Y)
        chol_W = np.linalg.cholesky(wp.precision)
        chol_A = np.linalg.cholesky(mean.prior_cov)
        logdet_A = 2.0 * float(np.sum(np.log(np.diag(chol_A))))
        alpha = k_inv(Y - G.T @ wp.omega_bar)
    else:
        G, wp, chol_W, logdet_A = None, None, None, 0.0
        alpha = k_inv(Y)

    model = TrainedModel(
        X=X,
        Y=Y,
        kernel=kernel,
        mean=mean,
        chol_K=L,
        jitter=gm.jitter_applied,
        alpha=alpha,
        lml=0.0,
        weights=wp,
        G=G,
        chol_W=chol_W,
        logdet_A=logdet_A,
    )
    model.lml = log_marginal(model)
    return model


def lml_terms(model: TrainedModel) -> LmlTerms:
    """Split the log marginal likelihood into its three named terms."""
    n = model.n
    if model.mean.mode == "basis":
        resid0 = model.Y - model.G.T @ model.mean.prior_mean
        logdet_V = (
            2.0 * float(np.sum(np.log(np.diag(model.chol_K))))
            + model.logdet_A
            + 2.0 * float(np.sum(np.log(np.diag(model.chol_W))))
        )
    else:
        resid0 = model.Y
        logdet_V = 2.0 * float(np.sum(np.log(np.diag(model.chol_K))))
    data_fit = -0.5 * float(resid0 @ model.alpha)
    return LmlTerms(
        data_fit=data_fit,
        complexity=-0.5 * logdet_V,
        constant=-0.5 * n * math.log(2.0 * math.pi),
    )


def log_marginal(model: TrainedModel) -> float:
    """Log evidence of the observations under the model's effective prior."""
    return lml_terms(model).total


def lml_gradient(model: TrainedModel) -> np.ndarray:
    """Gradient of log_marginal over the kernel's log-domain parameters.

    Per parameter: 1/2 alpha^T dK alpha - 1/2 tr(K^-1 dK), plus, in basis
    mode, +1/2 tr(W^-1 G K^-1 dK K^-1 G^T) from the determinant of W.  Mean
    prior parameters a, A are held fixed.
    """
    grads = kernels.gram_grads(model.kernel, model.X)
    L = model.chol_K
    n = model.n
    K_inv = linalg.cho_solve((L, True), np.eye(n))
    alpha = model.alpha
    basis = model.mean.mode == "basis"
    if basis:
        M = linalg.cho_solve((L, True), model.G.T)
        W_inv = linalg.cho_solve((model.chol_W, True), np.eye(len(model.chol_W)))
    out = np.empty(len(grads))
    for i, dK in enumerate(grads):
        val = 0.5 * float(alpha @ dK @ alpha) - 0.5 * float(np.sum(K_inv * dK))
        if basis:
            val += 0.5 * float(np.sum(W_inv * (M.T @ dK @ M)))
        out[i] = val
    return out


def predict(model: TrainedModel, Xq, include_noise: bool = False, full_cov: bool = False) -> Prediction:
    """Posterior predictive mean and variance (optionally full covariance)."""
    Xq = np.atleast_2d(np.asarray(Xq, dtype=float))
    L = model.chol_K
    Ks = kernels.gram(model.kernel, model.X, Xq).values
    mean = Ks.T @ model.alpha
    basis = model.mean.mode == "basis"
    if basis:
        Gs = design_matrix(model.mean, Xq)
        mean = mean + Gs.T @ model.weights.omega_bar
        R = Gs - model.G @ linalg.cho_solve((L, True), Ks)
        R_half = linalg.solve_triangular(model.chol_W, R, lower=True)
    half = linalg.solve_triangular(L, Ks, lower=True)
    if full_cov:
        Kss = kernels.gram(model.kernel, Xq, Xq).values
        cov = Kss - half.T @ half
        if basis:
            cov = cov + R_half.T @ R_half
        cov = 0.5 * (cov + cov.T)
        var = np.diag(cov).copy()
    else:
        cov = None
        var = kernels.self_variance(model.kernel, Xq) - np.sum(half**2, axis=0)
        if basis:
            var = var + np.sum(R_half**2, axis=0)
    clamped = int(np.sum(var < 0.0))
    var = np.clip(var, 0.0, None)
    if include_noise:
        var = var + model.kernel.noise_var
    return Prediction(mean=mean, variance=var, covariance=cov, clamped=clamped)


def sample_predictive(model: TrainedModel, Xq, n_draws: int, seed: int) -> np.ndarray:
    """Seeded draws from the posterior predictive as an (n_draws, q) array."""
    pred = predict(model, Xq, include_noise=False, full_cov=True)
    L, _ = kernels.stabilized_cholesky(pred.covariance, model.kernel.signal_var)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((len(pred.mean), n_draws))
    return (pred.mean[:, None] + L @ z).T
