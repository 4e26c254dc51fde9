"""Shared helpers for the test suite.

Plain functions, not fixtures, so tests can call them inside seeded loops.
"""

import numpy as np

from emfield.kernels import FAMILIES, default_spec


def rand_points(rng, n, n_dims=2, lo=0.0, hi=5.0):
    return rng.uniform(lo, hi, size=(n, n_dims))


def random_spec(family, rng, n_dims=2, spread=0.6):
    """A valid spec with log parameters jittered around zero.

    Noise is kept off the floor so gram matrices stay comfortably positive
    definite and no jitter enters the comparisons.
    """
    base = default_spec(family, n_dims=n_dims)
    vec = spread * rng.standard_normal(base.n_params)
    vec[-1] = np.abs(vec[-1]) - 1.0  # log noise in [-1, ...): sigma^2 >= e^-1 * ...
    return base.with_vector(vec)


def every_family():
    return list(FAMILIES)
