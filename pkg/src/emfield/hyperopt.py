"""MAP hyperparameter learning.

The objective is the negative log hyper-posterior: -log_marginal minus a
Gaussian log-prior over the log-domain parameters (mean 0, std 3 unless
overridden per parameter).  Minimization uses a deterministic gradient-based
quasi-Newton routine with restarts; each restart starts from the prior mean
plus seeded unit-normal jitter, and the best restart by objective wins.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize as sciopt

from . import gp
from .errors import EmfieldError, NumericalError, OptimizationError
from .kernels import HyperParams, KernelSpec, default_spec
from .meanfn import MeanSpec

GRAD_TOL = 1e-6
MAX_ITER = 200


@dataclass(frozen=True)
class HyperPrior:
    """Independent Gaussian prior on each log-domain hyperparameter."""

    mean: float = 0.0
    std: float = 3.0
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.std <= 0 or any(s <= 0 for _, s in self.overrides.values()):
            raise EmfieldError("prior std must be positive")

    def moments(self, names) -> tuple[np.ndarray, np.ndarray]:
        mu = np.array([self.overrides.get(n, (self.mean, self.std))[0] for n in names])
        sd = np.array([self.overrides.get(n, (self.mean, self.std))[1] for n in names])
        return mu, sd

    def logpdf(self, names, vec) -> float:
        mu, sd = self.moments(names)
        z = (np.asarray(vec) - mu) / sd
        return float(np.sum(-0.5 * z**2 - np.log(sd) - 0.5 * np.log(2.0 * np.pi)))

    def grad(self, names, vec) -> np.ndarray:
        mu, sd = self.moments(names)
        return -(np.asarray(vec) - mu) / sd**2


def map_objective(X, Y, kernel: KernelSpec, mean: MeanSpec, prior: HyperPrior):
    """Negative log hyper-posterior and its gradient at kernel's parameters."""
    names = kernel.param_names()
    vec = kernel.param_vector()
    try:
        model = gp.fit(X, Y, kernel, mean)
        grad_lml = gp.lml_gradient(model)
    except EmfieldError as err:
        err.params = vec
        raise
    value = -(model.lml + prior.logpdf(names, vec))
    grad = -(grad_lml + prior.grad(names, vec))
    return value, grad


@dataclass(eq=False)
class RestartTrace:
    """Per-restart diagnostics, including the per-iteration history."""

    restart: int
    x0: np.ndarray
    x: np.ndarray | None = None
    iterations: int = 0
    objective: float = np.inf
    final_grad_norm: float = np.inf
    converged: bool = False
    failed: bool = False
    message: str = ""
    history: list = field(default_factory=list)  # (iter, objective, grad_norm)


@dataclass(eq=False)
class OptResult:
    """Winner of the restart tournament plus all traces."""

    kernel: KernelSpec
    best_params: HyperParams
    best_objective: float
    restarts: list
    seed: int


def optimize(
    X,
    Y,
    family: str,
    mean: MeanSpec,
    prior: HyperPrior,
    restarts: int,
    seed: int,
    max_iter: int = MAX_ITER,
    grad_tol: float = GRAD_TOL,
) -> OptResult:
    """Minimize the MAP objective from `restarts` seeded starting points.

    Deterministic for a fixed seed: starting points are drawn sequentially
    from one generator, so restarts=k reruns the same first k starts as any
    larger restart count with the same seed.
    """
    if restarts < 1:
        raise EmfieldError("restarts must be >= 1")
    X = np.atleast_2d(np.asarray(X, dtype=float))
    base = default_spec(family, n_dims=X.shape[1])
    names = base.param_names()
    mu, _ = prior.moments(names)
    rng = np.random.default_rng(seed)

    traces = []
    for r in range(restarts):
        x0 = mu + rng.standard_normal(len(names))
        trace = RestartTrace(restart=r, x0=x0)
        traces.append(trace)

        def objective(vec):
            value, grad = map_objective(X, Y, base.with_vector(vec), mean, prior)
            return value, grad

        def callback(xk):
            value, grad = objective(xk)
            trace.history.append((len(trace.history) + 1, value, float(np.abs(grad).max())))

        try:
            res = sciopt.minimize(
                objective,
                x0,
                jac=True,
                method="L-BFGS-B",
                callback=callback,
                options={"maxiter": max_iter, "ftol": 1e-14, "gtol": grad_tol},
            )
        except (NumericalError, np.linalg.LinAlgError) as err:
            trace.failed = True
            trace.message = str(err)
            continue
        trace.iterations = int(res.nit)
        trace.objective = float(res.fun)
        trace.final_grad_norm = float(np.abs(res.jac).max())
        trace.converged = trace.final_grad_norm < grad_tol
        trace.message = res.message if isinstance(res.message, str) else str(res.message)
        trace.x = np.asarray(res.x, dtype=float)

    ok = [t for t in traces if not t.failed]
    if not ok:
        raise OptimizationError("all optimizer restarts failed", traces=traces)
    best = min(ok, key=lambda t: t.objective)
    spec = base.with_vector(best.x)
    return OptResult(
        kernel=spec,
        best_params=spec.hyper,
        best_objective=best.objective,
        restarts=traces,
        seed=seed,
    )


def diagnostics_lines(result: OptResult) -> list[str]:
    """One text line per optimizer iteration, for the train diagnostics log."""
    lines = []
    for t in result.restarts:
        if t.failed:
            lines.append(f"restart={t.restart} failed: {t.message}")
            continue
        for it, value, gnorm in t.history:
            lines.append(
                f"restart={t.restart} iter={it} objective={value:.9g} grad_norm={gnorm:.3e}"
            )
        lines.append(
            f"restart={t.restart} done iterations={t.iterations} "
            f"objective={t.objective:.9g} grad_norm={t.final_grad_norm:.3e} "
            f"converged={t.converged}"
        )
    return lines
