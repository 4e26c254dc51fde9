import numpy as np
import pytest
from scipy import stats

from conftest import rand_points
from emfield import gp
from emfield.errors import DuplicateInputError, EmfieldError, OptimizationError
from emfield.hyperopt import (
    HyperPrior,
    OptResult,
    RestartTrace,
    diagnostics_lines,
    map_objective,
    optimize,
)
from emfield.kernels import default_spec, gram, stabilized_cholesky
from emfield.meanfn import zero_mean


# -- hyperprior --------------------------------------------------------------


def test_prior_logpdf_matches_scipy():
    prior = HyperPrior(mean=0.5, std=2.0)
    names = ("signal_var", "len1", "noise_var")
    vec = np.array([0.1, -1.2, 2.3])
    expected = stats.norm.logpdf(vec, loc=0.5, scale=2.0).sum()
    assert abs(prior.logpdf(names, vec) - expected) < 1e-12


def test_prior_overrides():
    prior = HyperPrior(mean=0.0, std=3.0, overrides={"noise_var": (-2.0, 0.5)})
    names = ("signal_var", "noise_var")
    mu, sd = prior.moments(names)
    assert np.array_equal(mu, [0.0, -2.0])
    assert np.array_equal(sd, [3.0, 0.5])
    vec = np.array([1.0, -1.0])
    expected = stats.norm.logpdf(1.0, 0.0, 3.0) + stats.norm.logpdf(-1.0, -2.0, 0.5)
    assert abs(prior.logpdf(names, vec) - expected) < 1e-12


def test_prior_grad_matches_fd():
    prior = HyperPrior(mean=0.2, std=1.7, overrides={"len1": (0.0, 0.4)})
    names = ("signal_var", "len1", "noise_var")
    vec = np.array([0.3, -0.6, 1.1])
    g = prior.grad(names, vec)
    h = 1e-6
    for i in range(3):
        up, dn = vec.copy(), vec.copy()
        up[i] += h
        dn[i] -= h
        fd = (prior.logpdf(names, up) - prior.logpdf(names, dn)) / (2 * h)
        assert abs(g[i] - fd) < 1e-6


def test_prior_validation():
    with pytest.raises(EmfieldError):
        HyperPrior(std=0.0)
    with pytest.raises(EmfieldError):
        HyperPrior(overrides={"len1": (0.0, -1.0)})


# -- MAP objective -----------------------------------------------------------


def small_problem(seed=60, n=8):
    rng = np.random.default_rng(seed)
    X = rand_points(rng, n)
    spec = default_spec("matern32").with_vector(np.log([2.0, 1.2, 0.8, 0.1]))
    L, _ = stabilized_cholesky(
        gram(spec, X, X).values + spec.noise_var * np.eye(n), spec.signal_var
    )
    Y = L @ rng.standard_normal(n)
    return X, Y


def test_map_objective_value():
    X, Y = small_problem()
    spec = default_spec("matern32")
    prior = HyperPrior()
    value, grad = map_objective(X, Y, spec, zero_mean(), prior)
    model = gp.fit(X, Y, spec, zero_mean())
    expected = -(model.lml + prior.logpdf(spec.param_names(), spec.param_vector()))
    assert abs(value - expected) < 1e-10
    assert grad.shape == (4,)


def test_map_objective_grad_fd():
    X, Y = small_problem(seed=61)
    spec = default_spec("se").with_vector([0.2, -0.1, 0.3, -0.5])
    prior = HyperPrior(std=2.0)
    _, grad = map_objective(X, Y, spec, zero_mean(), prior)
    h = 1e-6
    vec = spec.param_vector()
    for i in range(len(vec)):
        up, dn = vec.copy(), vec.copy()
        up[i] += h
        dn[i] -= h
        vu, _ = map_objective(X, Y, spec.with_vector(up), zero_mean(), prior)
        vd, _ = map_objective(X, Y, spec.with_vector(dn), zero_mean(), prior)
        fd = (vu - vd) / (2 * h)
        assert abs(grad[i] - fd) < max(1e-5, 1e-5 * abs(fd))


# -- optimizer ---------------------------------------------------------------


def test_optimize_deterministic():
    X, Y = small_problem(seed=62, n=12)
    a = optimize(X, Y, "matern32", zero_mean(), HyperPrior(), restarts=2, seed=3)
    b = optimize(X, Y, "matern32", zero_mean(), HyperPrior(), restarts=2, seed=3)
    assert np.array_equal(a.kernel.param_vector(), b.kernel.param_vector())
    assert a.best_objective == b.best_objective


def test_optimize_restart_prefix():
    # with the same seed the first restart's start point is shared by any
    # restart count
    X, Y = small_problem(seed=63, n=10)
    one = optimize(X, Y, "se", zero_mean(), HyperPrior(), restarts=1, seed=5)
    three = optimize(X, Y, "se", zero_mean(), HyperPrior(), restarts=3, seed=5)
    assert np.array_equal(one.restarts[0].x0, three.restarts[0].x0)
    assert three.best_objective <= one.best_objective + 1e-12


def test_optimize_improves_on_start():
    X, Y = small_problem(seed=64, n=12)
    prior = HyperPrior()
    result = optimize(X, Y, "matern32", zero_mean(), prior, restarts=2, seed=7)
    for trace in result.restarts:
        if trace.failed:
            continue
        start, _ = map_objective(
            X, Y, default_spec("matern32").with_vector(trace.x0), zero_mean(), prior
        )
        assert trace.objective <= start + 1e-9
    assert result.best_objective == min(t.objective for t in result.restarts if not t.failed)


def test_optimize_converges_on_easy_problem():
    X, Y = small_problem(seed=65, n=20)
    result = optimize(X, Y, "matern32", zero_mean(), HyperPrior(), restarts=2, seed=1)
    best = min((t for t in result.restarts if not t.failed), key=lambda t: t.objective)
    assert best.final_grad_norm < 1e-3
    assert result.kernel.family == "matern32"
    assert np.array_equal(result.kernel.param_vector(), best.x)
    assert result.best_params == result.kernel.hyper


def test_optimize_propagates_data_errors():
    X = np.array([[1.0, 1.0], [1.0, 1.0], [2.0, 2.0]])
    with pytest.raises(DuplicateInputError):
        optimize(X, np.zeros(3), "se", zero_mean(), HyperPrior(), restarts=1, seed=0)


def test_optimize_validation():
    X, Y = small_problem()
    with pytest.raises(EmfieldError):
        optimize(X, Y, "se", zero_mean(), HyperPrior(), restarts=0, seed=0)


def test_optimization_error_carries_traces():
    traces = [RestartTrace(restart=0, x0=np.zeros(2), failed=True, message="boom")]
    err = OptimizationError("all failed", traces=traces)
    assert err.traces[0].message == "boom"


# -- diagnostics -------------------------------------------------------------


def test_diagnostics_lines():
    X, Y = small_problem(seed=66, n=10)
    result = optimize(X, Y, "se", zero_mean(), HyperPrior(), restarts=2, seed=2)
    lines = diagnostics_lines(result)
    assert any(line.startswith("restart=0 iter=1 ") for line in lines)
    assert any("done iterations=" in line for line in lines)
    assert all(("objective=" in line) or ("failed" in line) for line in lines)
    done = [line for line in lines if " done " in line]
    assert len(done) == 2


def test_diagnostics_lines_failed_restart():
    trace = RestartTrace(restart=1, x0=np.zeros(2), failed=True, message="cholesky failed")
    result = OptResult(
        kernel=default_spec("se"),
        best_params=default_spec("se").hyper,
        best_objective=0.0,
        restarts=[trace],
        seed=0,
    )
    lines = diagnostics_lines(result)
    assert lines == ["restart=1 failed: cholesky failed"]
