"""Shared helpers for the test suite: compact scenario builders."""

import numpy as np

from filterlab.model import (CoefficientSet, Dimensions, GaussianInitialLaw,
                             ScenarioSpec)


def scalar_scenario(f=0.0, g=0.0, g_bar=0.0, h1=0.0, h2=0.0, k=0.0,
                    x0_mean=0.0, x0_std=0.0, horizon=1.0, dt=1e-2,
                    n_particles=100, seed=0, name="adhoc", y_free=True):
    """One-dimensional scenario from scalars or callables of the signal coordinate.

    f, g, g_bar, h2 may be scalars or functions of x (1-D array); h1 and k
    are scalars.
    """
    dims = Dimensions(1, 1, 1, 1)

    def lift_vec(c):
        if callable(c):
            return lambda t, x, y: np.asarray(c(x[:, 0]), dtype=float)[:, None]
        return lambda t, x, y: np.full((len(x), 1), float(c))

    def lift_mat(c):
        if callable(c):
            return lambda t, x, y: np.asarray(c(x[:, 0]), dtype=float)[:, None, None]
        return lambda t, x, y: np.full((len(x), 1, 1), float(c))

    h1_arr = np.array([float(h1)])
    k_arr = np.array([[float(k)]])
    coeffs = CoefficientSet(
        dims=dims,
        f=lift_vec(f),
        g=lift_mat(g),
        g_bar=lift_mat(g_bar),
        h1=lambda t, y: h1_arr,
        h2=lift_vec(h2),
        k=lambda t, y: k_arr,
        y_free=y_free,
    )
    law = GaussianInitialLaw(mean=np.array([float(x0_mean)]),
                             std=np.array([float(x0_std)]), y0=np.zeros(1))
    return ScenarioSpec(name, dims, coeffs, law, horizon=horizon, dt=dt,
                        n_particles=n_particles, n_replicas=10, seed=seed)
