"""Independent reference routes used to validate the main solvers.

Each oracle solves the same problem as some primary code path by a different
method: closed-form moments, Runge-Kutta moment ODEs, a Crank-Nicolson
density solver, and plain Monte Carlo. They share problem *constants* with
the scenarios but none of the solver code.
"""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np
from scipy.linalg import solve_banded

from .model import CoefficientSet, Dimensions
from .sde import TimeGrid


def rk4(f: Callable, y0, t0: float, t1: float, n_steps: int) -> np.ndarray:
    """Classical fourth-order Runge-Kutta for dy/dt = f(t, y)."""
    y = np.asarray(y0, dtype=float).copy()
    h = (t1 - t0) / n_steps
    t = t0
    for _ in range(n_steps):
        k1 = np.asarray(f(t, y))
        k2 = np.asarray(f(t + h / 2, y + h / 2 * k1))
        k3 = np.asarray(f(t + h / 2, y + h / 2 * k2))
        k4 = np.asarray(f(t + h, y + h * k3))
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        t += h
    return y


def ou_moments(F: float, f0: float, sigma2: float, m0: float, p0: float,
               t: float) -> tuple[float, float]:
    """Mean and variance of dX = (F X + f0) dt + sigma dB at time t (F != 0)."""
    e = np.exp(F * t)
    mean = (m0 + f0 / F) * e - f0 / F
    var = (p0 + sigma2 / (2 * F)) * e**2 - sigma2 / (2 * F)
    return float(mean), float(var)


def kalman_bucy_path(params: dict, grid: TimeGrid, y_path: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Conditional mean/variance ODEs for the scalar affine scenario.

    For dX = (F X + f0) dt + g dV + gbar dW and
    dY = (h1 + k (H X + h20)) dt + k dW the conditional law is Gaussian with

        dm = (F m + f0) dt + (gbar + H P) / k * (dY - (h1 + k(H m + h20)) dt)
        dP/dt = 2 F P + g^2 + gbar^2 - (gbar + H P)^2

    (the gain carries the signal/observation noise correlation gbar k^T).
    The variance path is integrated with RK4; the mean consumes the observed
    increments.
    """
    F, f0 = params["F"], params["f0"]
    g, gbar, k = params["g"], params["g_bar"], params["k"]
    H, h20, h1 = params["H"], params["h20"], params["h1"]
    m0, s0 = params["m0"], params["s0"]

    n, dt = grid.n_steps, grid.dt
    y = np.asarray(y_path, dtype=float).reshape(n + 1)

    def riccati(t, p):
        return 2 * F * p + g**2 + gbar**2 - (gbar + H * p) ** 2

    m = np.empty(n + 1)
    p = np.empty(n + 1)
    m[0], p[0] = m0, s0**2
    for i in range(n):
        gain = (gbar + H * p[i]) / k
        innov = y[i + 1] - y[i] - (h1 + k * (H * m[i] + h20)) * dt
        m[i + 1] = m[i] + (F * m[i] + f0) * dt + gain * innov
        p[i + 1] = rk4(riccati, p[i], i * dt, (i + 1) * dt, 1)
    return m, p


def fokker_planck_cn(coeffs: CoefficientSet, nodes: np.ndarray, grid: TimeGrid,
                     y_path: np.ndarray, p0: np.ndarray) -> np.ndarray:
    """Crank-Nicolson density solver for d p = [-(f p)' + ((a p)'')/2] dt (d = 1).

    Independent of the explicit stochastic grid stepper: different scheme,
    different code. Homogeneous Dirichlet boundaries. Returns the density
    path, shape (n_steps+1, len(nodes)).
    """
    nodes = np.asarray(nodes, dtype=float)
    nx = nodes.size
    h = nodes[1] - nodes[0]
    n, dt = grid.n_steps, grid.dt
    times = grid.times
    y_path = np.asarray(y_path, dtype=float)

    def tridiag(t, y):
        x = nodes[:, None]
        f = coeffs.eval_f(t, x, np.broadcast_to(y, (nx, coeffs.dims.d_obs)))[:, 0]
        a = coeffs.diffusion(t, x, np.broadcast_to(y, (nx, coeffs.dims.d_obs)))[:, 0, 0]
        lower = f / (2 * h) + a / (2 * h**2)          # multiplies p_{i-1}, index i-1
        diag = -a / h**2
        upper = -f / (2 * h) + a / (2 * h**2)         # multiplies p_{i+1}, index i+1
        return lower, diag, upper

    p = np.empty((n + 1, nx))
    p[0] = p0
    p[0, 0] = p[0, -1] = 0.0
    for i in range(n):
        lo0, di0, up0 = tridiag(times[i], y_path[i])
        lo1, di1, up1 = tridiag(times[i + 1], y_path[i + 1])
        # rhs = (I + dt/2 L_n) p_n on the interior
        cur = p[i]
        rhs = cur + 0.5 * dt * (np.concatenate(([0.0], lo0[:-1])) * np.concatenate(([0.0], cur[:-1]))
                                + di0 * cur
                                + np.concatenate((up0[1:], [0.0])) * np.concatenate((cur[1:], [0.0])))
        # banded (I - dt/2 L_{n+1}) restricted to the interior
        m = nx - 2
        ab = np.zeros((3, m))
        ab[0, 1:] = -0.5 * dt * up1[2:-1]
        ab[1, :] = 1.0 - 0.5 * dt * di1[1:-1]
        ab[2, :-1] = -0.5 * dt * lo1[1:-2]
        sol = solve_banded((1, 1), ab, rhs[1:-1])
        p[i + 1] = 0.0
        p[i + 1, 1:-1] = sol
    return p


def backward_kolmogorov_mc(coeffs: CoefficientSet, dims: Dimensions, x0: np.ndarray,
                           horizon: float, n_steps: int, n_paths: int,
                           rng: np.random.Generator, phi: Callable,
                           y_fixed: Optional[np.ndarray] = None
                           ) -> tuple[float, float]:
    """Monte Carlo estimate of E[phi(X_T) | X_0 = x0] under the full generator.

    X follows d X = f dt + g dV + gbar dW with y frozen at ``y_fixed`` (zero
    by default; only meaningful for y-free coefficient sets). Returns
    (estimate, standard error).
    """
    y = np.zeros(dims.d_obs) if y_fixed is None else np.asarray(y_fixed, dtype=float)
    dt = horizon / n_steps
    sdt = np.sqrt(dt)
    x = np.tile(np.asarray(x0, dtype=float).reshape(1, dims.d), (n_paths, 1))
    for i in range(n_steps):
        t = i * dt
        f = coeffs.eval_f(t, x, y)
        g = coeffs.eval_g(t, x, y)
        gb = coeffs.eval_g_bar(t, x, y)
        dv = sdt * rng.standard_normal((n_paths, dims.l))
        dw = sdt * rng.standard_normal((n_paths, dims.l_obs))
        x = x + f * dt + np.einsum("nij,nj->ni", g, dv) + np.einsum("nij,nj->ni", gb, dw)
    vals = np.asarray(phi(x), dtype=float)
    return float(vals.mean()), float(vals.std(ddof=1) / np.sqrt(n_paths))
