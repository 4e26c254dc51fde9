import numpy as np
import pytest
from scipy import linalg

from emfield.errors import ConfigurationError, ContractError
from emfield.geometry import CANONICAL_SOURCES
from emfield.kernels import default_spec, noisy_cholesky
from emfield.meanfn import (
    MeanSpec,
    basis_eval,
    basis_mean,
    design_matrix,
    weight_posterior,
    zero_mean,
)


# -- basis function ----------------------------------------------------------


def test_basis_eval():
    assert basis_eval((1.0, 1.0), (1.0, 1.0)) == 1.0
    # 1/(1 + d^2) at d = 2
    assert abs(basis_eval((0.0, 0.0), (2.0, 0.0)) - 0.2) < 1e-15
    assert abs(basis_eval((1.0, 2.0), (4.0, 6.0)) - 1.0 / 26.0) < 1e-15


def test_basis_decays_with_distance():
    center = (2.5, 2.5)
    ds = np.linspace(0.0, 3.0, 20)
    values = [basis_eval(center, (2.5 + d, 2.5)) for d in ds]
    assert np.all(np.diff(values) < 0)
    assert all(0.0 < v <= 1.0 for v in values)


def test_design_matrix_matches_scalar():
    rng = np.random.default_rng(30)
    centers = rng.uniform(0, 5, size=(4, 2))
    X = rng.uniform(0, 5, size=(6, 2))
    spec = basis_mean(centers=centers)
    G = design_matrix(spec, X)
    assert G.shape == (4, 6)
    for k in range(4):
        for i in range(6):
            assert abs(G[k, i] - basis_eval(centers[k], X[i])) < 1e-13


def test_design_matrix_requires_basis_mode():
    with pytest.raises(ContractError):
        design_matrix(zero_mean(), np.zeros((2, 2)))


# -- spec construction -------------------------------------------------------


def test_basis_mean_defaults():
    spec = basis_mean()
    assert spec.mode == "basis"
    assert spec.n_centers == 16
    assert np.array_equal(spec.centers, np.asarray(CANONICAL_SOURCES, dtype=float))
    assert np.array_equal(spec.prior_mean, np.zeros(16))
    assert np.array_equal(spec.prior_cov, 100.0 * np.eye(16))


def test_zero_mean():
    spec = zero_mean()
    assert spec.mode == "zero"
    assert spec.n_centers == 0


def test_mean_spec_validation():
    with pytest.raises(ConfigurationError):
        MeanSpec(mode="linear")
    with pytest.raises(ConfigurationError):
        basis_mean(centers=np.zeros((0, 2)))
    centers = np.array([[1.0, 1.0], [2.0, 2.0]])
    with pytest.raises(ConfigurationError):
        basis_mean(centers=centers, prior_mean=np.zeros(3))
    with pytest.raises(ConfigurationError):
        basis_mean(centers=centers, prior_cov=np.eye(3))
    with pytest.raises(ConfigurationError):
        basis_mean(centers=centers, prior_cov=np.array([[1.0, 0.5], [0.4, 1.0]]))


# -- weight posterior --------------------------------------------------------


def test_weight_posterior_dense_oracle():
    # small problem solved with explicit inverses, no cholesky plumbing
    rng = np.random.default_rng(31)
    centers = np.array([[1.0, 1.0], [4.0, 4.0]])
    a = np.array([0.3, -0.2])
    A = np.array([[2.0, 0.3], [0.3, 1.5]])
    spec = basis_mean(centers=centers, prior_mean=a, prior_cov=A)
    X = rng.uniform(0, 5, size=(6, 2))
    Y = rng.standard_normal(6)
    kernel = default_spec("se")
    gm, L = noisy_cholesky(kernel, X)
    G = design_matrix(spec, X)

    wp = weight_posterior(spec, G, lambda B: linalg.cho_solve((L, True), B), Y)

    K_inv = np.linalg.inv(gm.values)
    W = np.linalg.inv(A) + G @ K_inv @ G.T
    omega = np.linalg.solve(W, np.linalg.inv(A) @ a + G @ K_inv @ Y)
    assert np.abs(wp.precision - W).max() < 1e-10
    assert np.abs(wp.omega_bar - omega).max() < 1e-10


def test_weight_posterior_prior_dominates_without_data_signal():
    # huge noise makes K^-1 terms negligible; posterior collapses to prior
    centers = np.array([[1.0, 1.0], [4.0, 4.0]])
    a = np.array([1.0, -2.0])
    spec = basis_mean(centers=centers, prior_mean=a, prior_cov=0.5 * np.eye(2))
    X = np.array([[0.5, 0.5], [2.0, 3.0], [4.5, 1.0]])
    Y = np.array([5.0, -3.0, 2.0])
    kernel = default_spec("se").with_vector([0.0, 0.0, 0.0, 20.0])  # noise e^20
    _, L = noisy_cholesky(kernel, X)
    G = design_matrix(spec, X)
    wp = weight_posterior(spec, G, lambda B: linalg.cho_solve((L, True), B), Y)
    assert np.abs(wp.omega_bar - a).max() < 1e-4


def test_weight_posterior_indefinite_prior_rejected():
    centers = np.array([[1.0, 1.0], [4.0, 4.0]])
    spec = basis_mean(centers=centers, prior_cov=np.array([[1.0, 2.0], [2.0, 1.0]]))
    X = np.array([[0.5, 0.5], [2.0, 3.0]])
    kernel = default_spec("se")
    _, L = noisy_cholesky(kernel, X)
    G = design_matrix(spec, X)
    with pytest.raises(ConfigurationError):
        weight_posterior(spec, G, lambda B: linalg.cho_solve((L, True), B), np.zeros(2))
