"""Weighted-particle filters for the correlated-noise filtering problem.

``run_filter`` propagates conditional-signal particles under the reference
measure and attaches the exponential reweighting

    log Zt_i = sum_j int h2^j(s, X_i, Y) dWtilde_i^j - 1/2 int |h2|^2 ds

(left-point discretized), so that the ensemble with weights Zt_i / N
estimates the mass-carrying conditional measure pi_t, and its normalization
estimates the conditional law. The weak-form defects of both evolution
equations, the scalar total-mass process, and the mass-based reconstruction
are provided as diagnostics of the measure dynamics:

    pi_t(phi) = pi_0(phi) + int pi_s(A phi) ds
                + int pi_s(grad phi gbar + phi h2^T) k+ (dY - h1 ds),

    dj_t = j_t sigma_t(h2^T) k+ (dY - h1 dt),   j_0 = 1,

with sigma the normalized law; j_t * sigma_t reproduces pi_t.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import (DegenerateMeasureError, ExplosionError, InvalidInputError,
                     PositivityLossError)
from .measure import WeightedEnsemble, weights_from_log
from .model import CoefficientSet, ScenarioSpec, apply_generator
from .rng import ROLE_INITIAL, ROLE_ORTHO, ROLE_SIGNAL, substream
from .sde import EXPLOSION_BOUND, TimeGrid
from .testfunctions import TestFunction


def girsanov_log_weights(coeffs: CoefficientSet, grid: TimeGrid, x_path: np.ndarray,
                         y_path: np.ndarray, w_tilde: np.ndarray) -> np.ndarray:
    """Per-particle log reweighting path, shape (n_steps+1, N).

    x_path: (n_steps+1, N, d); y_path: (n_steps+1, d') for a shared
    observation or (n_steps+1, N, d') for per-particle paths; w_tilde:
    (n_steps, N, l') holding the innovation increments each particle
    consumed. Both integrals use left-point evaluation, and log Zt_0 = 0.
    """
    n, dt = grid.n_steps, grid.dt
    n_particles = x_path.shape[1]
    out = np.zeros((n + 1, n_particles))
    times = grid.times
    for i in range(n):
        h2 = coeffs.eval_h2(times[i], x_path[i], y_path[i])          # (N, l')
        incr = np.einsum("nj,nj->n", h2, w_tilde[i]) - 0.5 * dt * np.sum(h2**2, axis=1)
        if not np.all(np.isfinite(incr)):
            raise InvalidInputError(f"non-finite weight increment at step {i}")
        out[i + 1] = out[i] + incr
    return out


@dataclass
class FilterRun:
    """One particle-filter pass along a fixed observation path.

    x_path has shape (n_steps+1, N, d) and log_weights (n_steps+1, N);
    weights at time index i are prefactor[i] * exp(log_weights[i]) / N. The
    prefactor stays 1 unless resampling is enabled. mass[i] estimates the
    total mass pi_t(1).
    """

    spec: ScenarioSpec
    grid: TimeGrid
    y_path: np.ndarray
    w_proj: np.ndarray            # (n_steps, l') observation-determined innovations
    x_path: np.ndarray
    log_weights: np.ndarray
    prefactor: np.ndarray         # (n_steps+1,)
    mass: np.ndarray              # (n_steps+1,)
    ess: np.ndarray               # (n_steps+1,)
    diagnostics: dict = field(default_factory=dict)

    @property
    def n_particles(self) -> int:
        return self.x_path.shape[1]

    def weights(self, i: int) -> np.ndarray:
        w, log_scale = weights_from_log(self.log_weights[i])
        return w * (self.prefactor[i] * np.exp(log_scale) / self.n_particles)

    def ensemble(self, i: int) -> WeightedEnsemble:
        return WeightedEnsemble(self.x_path[i], self.weights(i), t=self.grid.times[i])

    def normalized_weights(self, i: int) -> np.ndarray:
        w = self.weights(i)
        total = w.sum()
        if total <= 0:
            raise DegenerateMeasureError(f"zero mass at step {i}")
        w = w / total
        s = w.sum()
        return w / s if s != 1.0 else w

    def normalized_ensemble(self, i: int) -> WeightedEnsemble:
        return WeightedEnsemble(self.x_path[i], self.normalized_weights(i),
                                t=self.grid.times[i])

    def estimate(self, phi: TestFunction, i: int, normalized: bool = True) -> float:
        w = self.normalized_weights(i) if normalized else self.weights(i)
        return float(w @ phi.value(self.x_path[i]))


def run_filter(spec: ScenarioSpec, y_path: np.ndarray,
               rng: Optional[np.random.Generator] = None,
               n_particles: Optional[int] = None, grid: Optional[TimeGrid] = None,
               seed: Optional[int] = None, replica: int = 0,
               resample: bool = False, resample_fraction: float = 0.1) -> FilterRun:
    """Propagate the weighted conditional-particle system along y_path.

    The initial ensemble is an exact probability (uniform weights 1/N).
    Multinomial resampling is off by default: it perturbs the unnormalized
    mass the equivalence diagnostics reason about; when enabled, the mass is
    preserved through a scalar prefactor.
    """
    grid = grid or TimeGrid.for_spec(spec)
    n_particles = n_particles or spec.n_particles
    dims = spec.dims
    coeffs = spec.coeffs
    y_path = np.asarray(y_path, dtype=float)
    if y_path.shape != (grid.n_steps + 1, dims.d_obs):
        raise InvalidInputError(
            f"y_path shape {y_path.shape} does not match grid "
            f"({grid.n_steps + 1}, {dims.d_obs})")

    base = spec.seed if seed is None else seed
    if rng is not None:
        rng_init = rng_v = rng_o = rng_resample = rng
    else:
        rng_init = substream(base, replica, ROLE_INITIAL)
        rng_v = substream(base, replica, ROLE_SIGNAL)
        rng_o = substream(base, replica, ROLE_ORTHO)
        rng_resample = substream(base, replica, ROLE_ORTHO, 1)

    n, dt = grid.n_steps, grid.dt
    sdt = np.sqrt(dt)
    times = grid.times
    eye = np.eye(dims.l_obs)

    x = np.empty((n + 1, n_particles, dims.d))
    log_w = np.zeros((n + 1, n_particles))
    w_proj = np.empty((n, dims.l_obs))
    prefactor = np.ones(n + 1)
    mass = np.empty(n + 1)
    ess = np.empty(n + 1)
    resampled_at = []

    x[0] = spec.initial_law.sample(rng_init, n_particles)
    mass[0] = 1.0
    ess[0] = float(n_particles)

    for i in range(n):
        t, xi, yi = times[i], x[i], y_path[i]
        _, kp, proj = coeffs.k_projection(t, yi)
        h1 = coeffs.eval_h1(t, yi[None, :])[0]
        dn = y_path[i + 1] - yi - h1 * dt
        dw_obs = kp @ dn
        w_proj[i] = dw_obs

        fresh = sdt * rng_o.standard_normal((n_particles, dims.l_obs))
        dwt = dw_obs[None, :] + fresh @ (eye - proj).T

        f = coeffs.eval_f(t, xi, yi)
        g = coeffs.eval_g(t, xi, yi)
        gb = coeffs.eval_g_bar(t, xi, yi)
        h2 = coeffs.eval_h2(t, xi, yi)

        log_w[i + 1] = log_w[i] + np.einsum("nj,nj->n", h2, dwt) \
            - 0.5 * dt * np.sum(h2**2, axis=1)

        dv = sdt * rng_v.standard_normal((n_particles, dims.l))
        x[i + 1] = xi + (f - np.einsum("nij,nj->ni", gb, h2)) * dt \
            + np.einsum("nij,nj->ni", g, dv) + np.einsum("nij,nj->ni", gb, dwt)
        if not np.all(np.abs(x[i + 1]) < EXPLOSION_BOUND):
            raise ExplosionError(i, EXPLOSION_BOUND)

        prefactor[i + 1] = prefactor[i]
        w, log_scale = weights_from_log(log_w[i + 1])
        total = float(np.sum(w))
        if total <= 0.0 or not np.isfinite(total):
            raise DegenerateMeasureError(f"particle mass vanished at step {i + 1}")
        mass[i + 1] = prefactor[i + 1] * np.exp(log_scale) * total / n_particles
        ess[i + 1] = total**2 / float(np.sum(w**2))

        if resample and ess[i + 1] < resample_fraction * n_particles:
            p = w / total
            idx = rng_resample.choice(n_particles, size=n_particles, p=p)
            x[i + 1] = x[i + 1][idx]
            # carry the current mean weight so pi_t(1) is preserved
            prefactor[i + 1] *= np.exp(log_scale) * total / n_particles
            log_w[i + 1] = 0.0
            resampled_at.append(i + 1)

    diagnostics = {
        "sup_mass": float(np.max(mass)),
        "resampled_at": resampled_at,
        "min_ess": float(np.min(ess)),
    }
    return FilterRun(spec=spec, grid=grid, y_path=y_path, w_proj=w_proj, x_path=x,
                     log_weights=log_w, prefactor=prefactor, mass=mass, ess=ess,
                     diagnostics=diagnostics)


# ---------------------------------------------------------------------------
# Weak-form residuals and the total-mass machinery
# ---------------------------------------------------------------------------

def _weight_path(run: FilterRun, weights) -> np.ndarray:
    if weights is not None:
        return np.asarray(weights, dtype=float)
    return np.stack([run.weights(i) for i in range(run.grid.n_steps + 1)])


def zakai_residuals(run: FilterRun, phis: list[TestFunction], weights=None,
                    return_parts: bool = False):
    """Defects of the unnormalized weak-form identity for several phi at once.

    For each phi,

    R(t_m) = pi_m(phi) - pi_0(phi)
             - sum_{n<m} [ pi_n(A phi) dt + pi_n(grad phi gbar + phi h2^T) k+ dN_n ]

    with dN_n = dY_n - h1 dt. Exact solutions make R vanish; the discrete
    defect shrinks with dt. Coefficient evaluations are shared across the
    phis. Returns an array (len(phis), n_steps+1); with return_parts, also
    the per-step dt and stochastic terms, shapes (len(phis), n_steps).
    Passing an explicit weight path overrides the run's weights (used by the
    mass-reconstruction checks).
    """
    grid, coeffs = run.grid, run.spec.coeffs
    n, dt = grid.n_steps, grid.dt
    times = grid.times
    w_path = _weight_path(run, weights)
    n_phi = len(phis)

    pi_phi = np.empty((n_phi, n + 1))
    for p, phi in enumerate(phis):
        pi_phi[p] = [w_path[i] @ phi.value(run.x_path[i]) for i in range(n + 1)]

    dt_terms = np.zeros((n_phi, n))
    sto_terms = np.zeros((n_phi, n))
    for i in range(n):
        t, xi, yi, w = times[i], run.x_path[i], run.y_path[i], w_path[i]
        f = coeffs.eval_f(t, xi, yi)
        a = coeffs.diffusion(t, xi, yi)
        gb = coeffs.eval_g_bar(t, xi, yi)
        h2 = coeffs.eval_h2(t, xi, yi)
        _, kp, _ = coeffs.k_projection(t, yi)
        h1 = coeffs.eval_h1(t, yi[None, :])[0]
        kp_dn = kp @ (run.y_path[i + 1] - yi - h1 * dt)
        for p, phi in enumerate(phis):
            grad = phi.gradient(xi)
            gen = np.einsum("ni,ni->n", f, grad) \
                + 0.5 * np.einsum("nij,nij->n", a, phi.hessian(xi))
            dt_terms[p, i] = (w @ gen) * dt
            row = np.einsum("ni,nij->nj", grad, gb) + phi.value(xi)[:, None] * h2
            if not np.all(np.isfinite(row)):
                raise InvalidInputError(f"non-finite stochastic integrand at step {i}")
            sto_terms[p, i] = (w @ row) @ kp_dn

    residual = pi_phi - pi_phi[:, :1]
    residual[:, 1:] -= np.cumsum(dt_terms + sto_terms, axis=1)
    if return_parts:
        return residual, dt_terms, sto_terms
    return residual


def zakai_residual(run: FilterRun, phi: TestFunction, weights=None,
                   return_parts: bool = False):
    """Single-phi wrapper around ``zakai_residuals``."""
    out = zakai_residuals(run, [phi], weights=weights, return_parts=return_parts)
    if return_parts:
        residual, dt_terms, sto_terms = out
        return residual[0], dt_terms[0], sto_terms[0]
    return out[0]


def ks_residual(run: FilterRun, phi: TestFunction, return_parts: bool = False):
    """Defect of the normalized weak-form identity along the run.

    Same structure as ``zakai_residual`` with the normalized law sigma, the
    correction term sigma(phi) sigma(h2^T), and the compensator sigma(h):

    R(t_m) = sigma_m(phi) - sigma_0(phi) - sum_{n<m} [ sigma_n(A phi) dt
             + (sigma_n(grad phi gbar + phi h2^T) - sigma_n(phi) sigma_n(h2^T))
               k+ (dY_n - sigma_n(h) dt) ].
    """
    grid, coeffs = run.grid, run.spec.coeffs
    n, dt = grid.n_steps, grid.dt
    times = grid.times

    sig_phi = np.array([run.estimate(phi, i) for i in range(n + 1)])
    dt_terms = np.zeros(n)
    sto_terms = np.zeros(n)
    for i in range(n):
        t, xi, yi = times[i], run.x_path[i], run.y_path[i]
        w = run.normalized_weights(i)
        dt_terms[i] = (w @ apply_generator(coeffs, t, xi, yi, phi)) * dt
        _, kp, _ = coeffs.k_projection(t, yi)
        h2 = coeffs.eval_h2(t, xi, yi)
        gb = coeffs.eval_g_bar(t, xi, yi)
        h = coeffs.eval_h(t, xi, yi)                            # (N, d')
        row = np.einsum("ni,nij->nj", phi.gradient(xi), gb) \
            + phi.value(xi)[:, None] * h2
        corrected = w @ row - sig_phi[i] * (w @ h2)             # (l',)
        dn = run.y_path[i + 1] - yi - (w @ h) * dt
        sto_terms[i] = corrected @ (kp @ dn)

    residual = sig_phi - sig_phi[0]
    residual[1:] -= np.cumsum(dt_terms + sto_terms)
    if return_parts:
        return residual, dt_terms, sto_terms
    return residual


def mass_process(run: FilterRun) -> np.ndarray:
    """Euler path of the scalar mass equation driven by the normalized law:

    j_{n+1} = j_n (1 + sigma_n(h2^T) k+(t_n, Y_n) dN_n),  j_0 = 1.

    Raises PositivityLossError if the discretization drives j through zero.
    """
    grid, coeffs = run.grid, run.spec.coeffs
    n, dt = grid.n_steps, grid.dt
    times = grid.times
    j = np.empty(n + 1)
    j[0] = 1.0
    for i in range(n):
        t, yi = times[i], run.y_path[i]
        w = run.normalized_weights(i)
        h2 = coeffs.eval_h2(t, run.x_path[i], yi)
        _, kp, _ = coeffs.k_projection(t, yi)
        h1 = coeffs.eval_h1(t, yi[None, :])[0]
        dn = run.y_path[i + 1] - yi - h1 * dt
        j[i + 1] = j[i] * (1.0 + (w @ h2) @ (kp @ dn))
        if j[i + 1] <= 0.0:
            raise PositivityLossError(
                f"mass process hit {j[i + 1]:.3e} at step {i + 1}; "
                "decrease dt or use a log-Euler variant")
    return j


def reconstruct_unnormalized(run: FilterRun, mass: np.ndarray) -> np.ndarray:
    """Weight path of the measure j_t * sigma_t, shape (n_steps+1, N).

    Feeding the result to ``zakai_residual(run, phi, weights=...)`` checks
    that the mass-scaled normalized law solves the unnormalized equation.
    """
    mass = np.asarray(mass, dtype=float)
    if mass.shape != (run.grid.n_steps + 1,):
        raise InvalidInputError("mass path length does not match the grid")
    return np.stack([mass[i] * run.normalized_weights(i)
                     for i in range(run.grid.n_steps + 1)])
