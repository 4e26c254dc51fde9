"""Covariance-function library and gram-matrix construction.

Seven families: squared exponential (se), the Matern 1/2, 3/2 and 5/2
subfamilies, rational quadratic (rq), periodic, and the arcsine neural-net
kernel (nn).  se and the Materns carry one length scale per input dimension;
rq and periodic carry a single scale; nn has no length scale at all, its
weight variances (one per augmented input coordinate) play that role.

All positive hyperparameters are stored in log domain, so every finite
parameter vector is valid and optimizers can run unconstrained.  Analytic
derivatives of the noisy gram matrix with respect to every log parameter are
provided for the marginal-likelihood gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ConfigurationError, NumericalError

FAMILIES = ("se", "matern12", "matern32", "matern52", "rq", "periodic", "nn")

# Families whose value depends only on the pair separation a - b.
STATIONARY = ("se", "matern12", "matern32", "matern52", "rq", "periodic")


@dataclass(frozen=True)
class HyperParams:
    """Log-domain hyperparameters; unused extras stay None per family.

    log_len holds one entry per input dimension for se/matern, exactly one
    for rq/periodic, and is empty for nn.
    """

    log_signal_var: float = 0.0
    log_len: tuple[float, ...] = (0.0, 0.0)
    log_noise_var: float = 0.0
    log_alpha: float | None = None
    log_period: float | None = None
    log_weight_vars: tuple[float, ...] | None = None


@dataclass(frozen=True)
class KernelSpec:
    """A family name plus a fully-populated HyperParams for that family."""

    family: str
    hyper: HyperParams

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigurationError(f"unknown kernel family {self.family!r}")
        h = self.hyper
        if not all(np.isfinite(v) for v in self.param_vector()):
            raise ConfigurationError("hyperparameters must be finite")
        if self.family in ("se", "matern12", "matern32", "matern52"):
            ok = len(h.log_len) >= 1 and h.log_alpha is None and h.log_period is None and h.log_weight_vars is None
        elif self.family == "rq":
            ok = len(h.log_len) == 1 and h.log_alpha is not None and h.log_period is None and h.log_weight_vars is None
        elif self.family == "periodic":
            ok = len(h.log_len) == 1 and h.log_period is not None and h.log_alpha is None and h.log_weight_vars is None
        else:  # nn
            ok = len(h.log_len) == 0 and h.log_weight_vars is not None and len(h.log_weight_vars) >= 2 and h.log_alpha is None and h.log_period is None
        if not ok:
            raise ConfigurationError(f"parameter set does not match family {self.family!r}")

    # -- parameter-vector plumbing ------------------------------------------

    def param_names(self) -> tuple[str, ...]:
        h = self.hyper
        if self.family in ("se", "matern12", "matern32", "matern52"):
            lens = tuple(f"len{i + 1}" for i in range(len(h.log_len)))
            return ("signal_var",) + lens + ("noise_var",)
        if self.family == "rq":
            return ("signal_var", "len", "alpha", "noise_var")
        if self.family == "periodic":
            return ("signal_var", "len", "period", "noise_var")
        weights = tuple(f"weight_var{i}" for i in range(len(h.log_weight_vars)))
        return ("signal_var",) + weights + ("noise_var",)

    def param_vector(self) -> np.ndarray:
        h = self.hyper
        if self.family in ("se", "matern12", "matern32", "matern52"):
            mid = list(h.log_len)
        elif self.family == "rq":
            mid = [h.log_len[0], h.log_alpha]
        elif self.family == "periodic":
            mid = [h.log_len[0], h.log_period]
        else:
            mid = list(h.log_weight_vars)
        return np.array([h.log_signal_var] + mid + [h.log_noise_var], dtype=float)

    def with_vector(self, vec) -> "KernelSpec":
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (self.n_params,):
            raise ConfigurationError(
                f"expected {self.n_params} parameters for {self.family}, got {vec.shape}"
            )
        sv, mid, nv = float(vec[0]), vec[1:-1], float(vec[-1])
        if self.family in ("se", "matern12", "matern32", "matern52"):
            h = replace(self.hyper, log_signal_var=sv, log_len=tuple(mid), log_noise_var=nv)
        elif self.family == "rq":
            h = replace(self.hyper, log_signal_var=sv, log_len=(float(mid[0]),), log_alpha=float(mid[1]), log_noise_var=nv)
        elif self.family == "periodic":
            h = replace(self.hyper, log_signal_var=sv, log_len=(float(mid[0]),), log_period=float(mid[1]), log_noise_var=nv)
        else:
            h = replace(self.hyper, log_signal_var=sv, log_weight_vars=tuple(mid), log_noise_var=nv)
        return KernelSpec(family=self.family, hyper=h)

    @property
    def n_params(self) -> int:
        return len(self.param_names())

    @property
    def signal_var(self) -> float:
        return math.exp(self.hyper.log_signal_var)

    @property
    def noise_var(self) -> float:
        return math.exp(self.hyper.log_noise_var)

    def natural_params(self) -> dict[str, float]:
        """Name -> value map in the natural (exponentiated) domain."""
        return {n: math.exp(v) for n, v in zip(self.param_names(), self.param_vector())}


def default_spec(family: str, n_dims: int = 2, **log_overrides) -> KernelSpec:
    """A valid all-zeros (log domain) spec for the family.

    Keyword overrides use HyperParams field names, already in log domain.
    """
    if family in ("se", "matern12", "matern32", "matern52"):
        h = HyperParams(log_len=(0.0,) * n_dims)
    elif family == "rq":
        h = HyperParams(log_len=(0.0,), log_alpha=0.0)
    elif family == "periodic":
        h = HyperParams(log_len=(0.0,), log_period=0.0)
    elif family == "nn":
        h = HyperParams(log_len=(), log_weight_vars=(0.0,) * (n_dims + 1))
    else:
        raise ConfigurationError(f"unknown kernel family {family!r}")
    if log_overrides:
        h = replace(h, **log_overrides)
    return KernelSpec(family=family, hyper=h)


def spec_from_natural(family: str, params: dict[str, float]) -> KernelSpec:
    """Inverse of natural_params: build a spec from name -> natural value."""
    probe = default_spec(family, n_dims=sum(1 for k in params if k.startswith("len")) or 2)
    if family == "nn":
        n_w = sum(1 for k in params if k.startswith("weight_var"))
        probe = default_spec(family, n_dims=max(n_w - 1, 1))
    names = probe.param_names()
    missing = set(names) - set(params)
    extra = set(params) - set(names)
    if missing or extra:
        raise ConfigurationError(
            f"parameter names for {family} must be {names}; missing {sorted(missing)}, extra {sorted(extra)}"
        )
    for n, v in params.items():
        if v <= 0:
            raise ConfigurationError(f"natural-domain parameter {n} must be positive, got {v}")
    return probe.with_vector([math.log(params[n]) for n in names])


@dataclass
class GramMatrix:
    """Kernel matrix plus the diagonal jitter that was actually added."""

    values: np.ndarray
    jitter_applied: float = 0.0


# -- family formulas ---------------------------------------------------------


def _scaled_sq_dists(A, B, lens):
    """Per-dimension squared differences divided by their length scales."""
    return [
        np.subtract.outer(A[:, d], B[:, d]) ** 2 / lens[d] ** 2
        for d in range(A.shape[1])
    ]


def _nn_features(A):
    return np.hstack([np.ones((len(A), 1)), A])


def _nn_z(spec, A, B):
    w = np.exp(np.asarray(spec.hyper.log_weight_vars))
    FA, FB = _nn_features(A), _nn_features(B)
    if A.shape[1] + 1 != len(w):
        raise ConfigurationError(
            f"nn kernel configured for {len(w) - 1} input dims, points have {A.shape[1]}"
        )
    cross = 2.0 * (FA * w) @ FB.T
    pa = 1.0 + 2.0 * np.sum(FA**2 * w, axis=1)
    pb = 1.0 + 2.0 * np.sum(FB**2 * w, axis=1)
    z = cross / np.sqrt(np.outer(pa, pb))
    return np.clip(z, -1.0 + 1e-15, 1.0 - 1e-15), FA, FB, pa, pb


def _base_gram(spec: KernelSpec, A: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Noise-free kernel matrix between point sets A (n,d) and B (m,d)."""
    h = spec.hyper
    sv = spec.signal_var
    fam = spec.family
    if fam in ("se", "matern12", "matern32", "matern52"):
        lens = np.exp(np.asarray(h.log_len))
        if A.shape[1] != len(lens):
            raise ConfigurationError(
                f"{fam} kernel configured for {len(lens)} dims, points have {A.shape[1]}"
            )
        s2 = sum(_scaled_sq_dists(A, B, lens))
        if fam == "se":
            return sv * np.exp(-0.5 * s2)
        r = np.sqrt(np.maximum(s2, 0.0))
        if fam == "matern12":
            return sv * np.exp(-r)
        if fam == "matern32":
            t = math.sqrt(3.0) * r
            return sv * (1.0 + t) * np.exp(-t)
        t = math.sqrt(5.0) * r
        return sv * (1.0 + t + t**2 / 3.0) * np.exp(-t)
    if fam == "rq":
        ell = math.exp(h.log_len[0])
        alpha = math.exp(h.log_alpha)
        s = cdist(A, B, metric="sqeuclidean") / (2.0 * alpha * ell**2)
        return sv * (1.0 + s) ** (-alpha)
    if fam == "periodic":
        ell = math.exp(h.log_len[0])
        period = math.exp(h.log_period)
        theta = math.pi * cdist(A, B) / period
        return sv * np.exp(-2.0 * np.sin(theta) ** 2 / ell**2)
    z, *_ = _nn_z(spec, A, B)
    return sv * (2.0 / math.pi) * np.arcsin(z)


def _as_points(X) -> np.ndarray:
    return np.atleast_2d(np.asarray(X, dtype=float))


def kernel_eval(spec: KernelSpec, a, b) -> float:
    """Covariance between function values at two points."""
    return float(_base_gram(spec, _as_points(a), _as_points(b))[0, 0])


def gram(spec: KernelSpec, A, B) -> GramMatrix:
    """Kernel matrix; exact symmetry enforced when A and B are equal."""
    A = _as_points(A)
    B = _as_points(B)
    K = _base_gram(spec, A, B)
    if A.shape == B.shape and np.array_equal(A, B):
        K = 0.5 * (K + K.T)
    return GramMatrix(values=K)


def self_variance(spec: KernelSpec, X) -> np.ndarray:
    """Diagonal of gram(X, X) without building the full matrix."""
    X = _as_points(X)
    if spec.family in STATIONARY:
        return np.full(len(X), spec.signal_var)
    w = np.exp(np.asarray(spec.hyper.log_weight_vars))
    F = _nn_features(X)
    p = 1.0 + 2.0 * np.sum(F**2 * w, axis=1)
    z = np.clip((p - 1.0) / p, -1.0 + 1e-15, 1.0 - 1e-15)
    return spec.signal_var * (2.0 / math.pi) * np.arcsin(z)


def stabilized_cholesky(M: np.ndarray, scale: float):
    """Lower Cholesky factor of M with an escalating diagonal jitter.

    Tries jitter 0 first, then scale*1e-10 growing tenfold up to scale*1e-4.
    Returns (L, jitter_used); raises NumericalError with a condition estimate
    when even the largest jitter fails.
    """
    n = len(M)
    ladder = [0.0] + [scale * 10.0**e for e in range(-10, -3)]
    for jitter in ladder:
        candidate = M + jitter * np.eye(n) if jitter else M
        try:
            return np.linalg.cholesky(candidate), jitter
        except np.linalg.LinAlgError:
            continue
    cond = float(np.linalg.cond(M))
    raise NumericalError(
        f"cholesky failed at max jitter {ladder[-1]:.3e}; condition estimate {cond:.3e}"
    )


def gram_noisy(spec: KernelSpec, A) -> GramMatrix:
    """Self gram plus noise variance on the diagonal, jittered until SPD."""
    gm, _ = noisy_cholesky(spec, A)
    return gm


def noisy_cholesky(spec: KernelSpec, A):
    """gram_noisy together with its lower Cholesky factor."""
    A = _as_points(A)
    K = gram(spec, A, A).values + spec.noise_var * np.eye(len(A))
    L, jitter = stabilized_cholesky(K, spec.signal_var)
    if jitter:
        K = K + jitter * np.eye(len(A))
    return GramMatrix(values=K, jitter_applied=jitter), L


def gram_grads(spec: KernelSpec, A) -> list[np.ndarray]:
    """d(gram_noisy)/d(log parameter) for each parameter, in vector order.

    Derivatives are with respect to the log-domain parameters (chain rule
    already applied), evaluated on the self gram of A.  Jitter is treated as
    a constant and contributes nothing.
    """
    A = _as_points(A)
    h = spec.hyper
    sv = spec.signal_var
    fam = spec.family
    n = len(A)
    K0 = gram(spec, A, A).values  # noise-free, symmetrized
    out = [K0]  # d/d log_signal_var = K_hh

    if fam in ("se", "matern12", "matern32", "matern52"):
        lens = np.exp(np.asarray(h.log_len))
        D2 = _scaled_sq_dists(A, A, lens)  # already divided by len^2
        s2 = sum(D2)
        r = np.sqrt(np.maximum(s2, 0.0))
        if fam == "se":
            base = K0  # sv*exp(-s2/2)
            for d in range(len(lens)):
                out.append(base * D2[d])
        elif fam == "matern12":
            e = sv * np.exp(-r)
            inv_r = np.zeros_like(r)
            np.divide(1.0, r, out=inv_r, where=r > 0)  # derivative limit 0 at r=0
            for d in range(len(lens)):
                out.append(e * D2[d] * inv_r)
        elif fam == "matern32":
            e = np.exp(-math.sqrt(3.0) * r)
            for d in range(len(lens)):
                out.append(3.0 * sv * e * D2[d])
        else:  # matern52
            e = np.exp(-math.sqrt(5.0) * r)
            f = (5.0 * sv / 3.0) * (1.0 + math.sqrt(5.0) * r) * e
            for d in range(len(lens)):
                out.append(f * D2[d])
    elif fam == "rq":
        ell = math.exp(h.log_len[0])
        alpha = math.exp(h.log_alpha)
        s = cdist(A, A, metric="sqeuclidean") / (2.0 * alpha * ell**2)
        s = 0.5 * (s + s.T)
        base = (1.0 + s) ** (-alpha)
        out.append(2.0 * alpha * sv * s * (1.0 + s) ** (-alpha - 1.0))
        out.append(alpha * sv * base * (-np.log1p(s) + s / (1.0 + s)))
    elif fam == "periodic":
        ell = math.exp(h.log_len[0])
        period = math.exp(h.log_period)
        theta = math.pi * cdist(A, A) / period
        theta = 0.5 * (theta + theta.T)
        sin2 = np.sin(theta) ** 2
        base = sv * np.exp(-2.0 * sin2 / ell**2)
        out.append(base * 4.0 * sin2 / ell**2)
        out.append(base * (2.0 * theta / ell**2) * np.sin(2.0 * theta))
    else:  # nn
        z, FA, _, pa, _ = _nn_z(spec, A, A)
        z = 0.5 * (z + z.T)
        w = np.exp(np.asarray(h.log_weight_vars))
        pref = sv * (2.0 / math.pi) / np.sqrt(1.0 - z**2)
        for b in range(len(w)):
            S = np.outer(FA[:, b], FA[:, b])
            frac = FA[:, b] ** 2 / pa
            dz = 2.0 * S / np.sqrt(np.outer(pa, pa)) - z * (frac[:, None] + frac[None, :])
            dK = pref * dz * w[b]
            out.append(0.5 * (dK + dK.T))

    out.append(spec.noise_var * np.eye(n))  # d/d log_noise_var
    return out


def sample_gp(spec: KernelSpec, mean, X, n_draws: int, seed: int) -> np.ndarray:
    """Draws from the GP prior at X as an (n_draws, n) array.

    The factor is the Cholesky of the noise-free gram (jitter only), so draws
    are function values, not noisy observations.
    """
    if n_draws < 1:
        raise ConfigurationError("n_draws must be >= 1")
    X = _as_points(X)
    mean = np.broadcast_to(np.asarray(mean, dtype=float), (len(X),))
    K = gram(spec, X, X).values
    L, _ = stabilized_cholesky(K, spec.signal_var)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((len(X), n_draws))
    return (mean[:, None] + L @ z).T
