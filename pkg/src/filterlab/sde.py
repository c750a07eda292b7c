"""Euler-Maruyama path simulation for the coupled signal/observation system.

Two sampling measures are supported:

* ``physical``: V and W are the driving Brownian motions; X carries drift f
  and Y carries drift h = h1 + k h2. The reweighting innovation increments
  dWtilde = dW + h2 dt are recorded alongside.
* ``reference``: Wtilde is Brownian and independent of V; X carries drift
  f - gbar h2 and Y carries drift h1, both driven by (V, Wtilde). This is the
  measure the weighted-particle machinery lives under.

Conditional simulation of the signal given an observed path splits each
Wtilde increment into the part determined by the observation,
k+(t,Y) (dY - h1 dt), plus a fresh draw through the orthogonal projector
I - k+k. When k is square invertible the fresh part vanishes and Wtilde is
fully reconstructed from Y; when k = 0 the increments are entirely fresh.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import ExplosionError, InvalidInputError
from .model import ScenarioSpec
from .rng import ROLE_INITIAL, ROLE_OBS, ROLE_ORTHO, ROLE_SIGNAL, substream

EXPLOSION_BOUND = 1e12


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on [0, horizon] with n_steps steps (t0 = 0)."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.horizon <= 0 or self.n_steps < 1:
            raise InvalidInputError("horizon must be > 0 and n_steps >= 1")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.horizon, self.n_steps + 1)

    @classmethod
    def for_spec(cls, spec: ScenarioSpec) -> "TimeGrid":
        return cls(spec.horizon, spec.n_steps)

    def coarsen(self, factor: int) -> "TimeGrid":
        if self.n_steps % factor:
            raise InvalidInputError(f"cannot coarsen {self.n_steps} steps by {factor}")
        return TimeGrid(self.horizon, self.n_steps // factor)


@dataclass(frozen=True)
class BrownianPaths:
    """Increments of the two independent driving noises, N(0, dt I) each."""

    dv: np.ndarray   # (n_paths, n_steps, l)
    dw: np.ndarray   # (n_paths, n_steps, l')


@dataclass(frozen=True)
class PathBundle:
    """Simulated joint paths plus the noise that generated them.

    Arrays carry a leading replica axis: x_path is (n_paths, n_steps+1, d),
    y_path is (n_paths, n_steps+1, d'), w_tilde is (n_paths, n_steps, l').
    """

    grid: TimeGrid
    x_path: np.ndarray
    y_path: np.ndarray
    noise: BrownianPaths
    w_tilde: np.ndarray
    measure: str = "physical"

    @property
    def n_paths(self) -> int:
        return self.x_path.shape[0]

    def single(self, i: int = 0) -> tuple[np.ndarray, np.ndarray]:
        """(x_path, y_path) of replica i, shapes (n_steps+1, d) / (n_steps+1, d')."""
        return self.x_path[i], self.y_path[i]


def _guard(arr, step):
    if not np.all(np.abs(arr) < EXPLOSION_BOUND):
        raise ExplosionError(step, EXPLOSION_BOUND)


def simulate_joint(spec: ScenarioSpec, rng: Optional[np.random.Generator] = None,
                   n_paths: int = 1, measure: str = "physical",
                   grid: Optional[TimeGrid] = None, noise: Optional[BrownianPaths] = None,
                   seed: Optional[int] = None, replica: int = 0) -> PathBundle:
    """Simulate n_paths independent copies of (X, Y) on the scenario's grid.

    Either pass an explicit generator or let (seed, replica) select the
    documented substreams; the default uses the scenario seed. Supplying
    ``noise`` reuses a fixed set of Brownian increments (refinement studies).
    """
    if measure not in ("physical", "reference"):
        raise InvalidInputError(f"unknown measure {measure!r}")
    grid = grid or TimeGrid.for_spec(spec)
    dims = spec.dims
    base = spec.seed if seed is None else seed
    if rng is not None:
        rng_init = rng_v = rng_w = rng
    else:
        rng_init = substream(base, replica, ROLE_INITIAL)
        rng_v = substream(base, replica, ROLE_SIGNAL)
        rng_w = substream(base, replica, ROLE_OBS)

    n, dt = grid.n_steps, grid.dt
    sdt = np.sqrt(dt)
    if noise is not None:
        dv, dw = noise.dv, noise.dw
        if dv.shape != (n_paths, n, dims.l) or dw.shape != (n_paths, n, dims.l_obs):
            raise InvalidInputError("supplied noise does not match grid/dimensions")
    else:
        dv = sdt * rng_v.standard_normal((n_paths, n, dims.l))
        dw = sdt * rng_w.standard_normal((n_paths, n, dims.l_obs))

    x = np.empty((n_paths, n + 1, dims.d))
    y = np.empty((n_paths, n + 1, dims.d_obs))
    w_tilde = np.empty((n_paths, n, dims.l_obs))
    x[:, 0] = spec.initial_law.sample(rng_init, n_paths)
    y[:, 0] = np.broadcast_to(np.asarray(spec.initial_law.y0, dtype=float),
                              (n_paths, dims.d_obs))

    coeffs = spec.coeffs
    times = grid.times
    for i in range(n):
        t, xi, yi = times[i], x[:, i], y[:, i]
        f = coeffs.eval_f(t, xi, yi)
        g = coeffs.eval_g(t, xi, yi)
        gb = coeffs.eval_g_bar(t, xi, yi)
        h2 = coeffs.eval_h2(t, xi, yi)
        k = coeffs.eval_k(t, yi)
        gdv = np.einsum("nij,nj->ni", g, dv[:, i])
        if measure == "physical":
            h = coeffs.eval_h1(t, yi) + np.einsum("nij,nj->ni", k, h2)
            x[:, i + 1] = xi + f * dt + gdv + np.einsum("nij,nj->ni", gb, dw[:, i])
            y[:, i + 1] = yi + h * dt + np.einsum("nij,nj->ni", k, dw[:, i])
            w_tilde[:, i] = dw[:, i] + h2 * dt
        else:
            # dw plays the role of dWtilde
            x[:, i + 1] = xi + (f - np.einsum("nij,nj->ni", gb, h2)) * dt \
                + gdv + np.einsum("nij,nj->ni", gb, dw[:, i])
            y[:, i + 1] = yi + coeffs.eval_h1(t, yi) * dt \
                + np.einsum("nij,nj->ni", k, dw[:, i])
            w_tilde[:, i] = dw[:, i]
        _guard(x[:, i + 1], i)
        _guard(y[:, i + 1], i)

    return PathBundle(grid, x, y, BrownianPaths(dv, dw), w_tilde, measure)


def project_innovations(coeffs, grid: TimeGrid, y_path: np.ndarray) -> np.ndarray:
    """Observation-determined innovation components k+(t,Y)(dY - h1 dt).

    y_path has shape (n_steps+1, d'); the result (n_steps, l') equals
    k+k dWtilde along the path and depends on nothing but the observation.
    """
    y_path = np.asarray(y_path, dtype=float)
    n = grid.n_steps
    out = np.empty((n, coeffs.dims.l_obs))
    times = grid.times
    for i in range(n):
        t, yi = times[i], y_path[i]
        _, kp, _ = coeffs.k_projection(t, yi)
        h1 = coeffs.eval_h1(t, yi[None, :])[0]
        out[i] = kp @ (y_path[i + 1] - yi - h1 * grid.dt)
    return out


def simulate_signal_given_obs(spec: ScenarioSpec, y_path: np.ndarray,
                              rng: Optional[np.random.Generator] = None,
                              n_particles: Optional[int] = None,
                              grid: Optional[TimeGrid] = None,
                              seed: Optional[int] = None, replica: int = 0
                              ) -> tuple[np.ndarray, np.ndarray]:
    """Conditional signal particles given one observation path.

    Per step the innovation increment of particle i is assembled as

        dWtilde_i = k+(t,Y)(dY - h1 dt) + (I - k+k) xi_i,   xi_i ~ N(0, dt I),

    and X is advanced with drift f - gbar h2 and diffusion g dV + gbar dWtilde.
    Returns (x_path, w_tilde) with shapes (n_steps+1, N, d) and
    (n_steps, N, l'); the returned increments are the ones each particle
    consumed, which the weight computation needs. Memory grows like
    N * n_steps * l'.
    """
    grid = grid or TimeGrid.for_spec(spec)
    n_particles = n_particles or spec.n_particles
    y_path = np.asarray(y_path, dtype=float)
    if y_path.shape != (grid.n_steps + 1, spec.dims.d_obs):
        raise InvalidInputError(
            f"y_path shape {y_path.shape} does not match grid "
            f"({grid.n_steps + 1}, {spec.dims.d_obs})")
    base = spec.seed if seed is None else seed
    if rng is not None:
        rng_init = rng_v = rng_o = rng
    else:
        rng_init = substream(base, replica, ROLE_INITIAL)
        rng_v = substream(base, replica, ROLE_SIGNAL)
        rng_o = substream(base, replica, ROLE_ORTHO)

    dims = spec.dims
    n, dt = grid.n_steps, grid.dt
    sdt = np.sqrt(dt)
    coeffs = spec.coeffs
    times = grid.times

    x = np.empty((n + 1, n_particles, dims.d))
    w_tilde = np.empty((n, n_particles, dims.l_obs))
    x[0] = spec.initial_law.sample(rng_init, n_particles)

    eye = np.eye(dims.l_obs)
    for i in range(n):
        t, xi, yi = times[i], x[i], y_path[i]
        _, kp, proj = coeffs.k_projection(t, yi)
        h1 = coeffs.eval_h1(t, yi[None, :])[0]
        dw_obs = kp @ (y_path[i + 1] - yi - h1 * dt)          # (l',)
        xi_fresh = sdt * rng_o.standard_normal((n_particles, dims.l_obs))
        dwt = dw_obs[None, :] + xi_fresh @ (eye - proj).T
        w_tilde[i] = dwt

        f = coeffs.eval_f(t, xi, yi)
        gb = coeffs.eval_g_bar(t, xi, yi)
        h2 = coeffs.eval_h2(t, xi, yi)
        g = coeffs.eval_g(t, xi, yi)
        dv = sdt * rng_v.standard_normal((n_particles, dims.l))
        x[i + 1] = xi + (f - np.einsum("nij,nj->ni", gb, h2)) * dt \
            + np.einsum("nij,nj->ni", g, dv) + np.einsum("nij,nj->ni", gb, dwt)
        _guard(x[i + 1], i)

    return x, w_tilde


def export_paths_csv(bundle: PathBundle, out_dir) -> list[str]:
    """One CSV per replica, columns t, x_1..x_d, y_1..y_{d'}."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    d = bundle.x_path.shape[2]
    d_obs = bundle.y_path.shape[2]
    header = ["t"] + [f"x_{i+1}" for i in range(d)] + [f"y_{i+1}" for i in range(d_obs)]
    names = []
    times = bundle.grid.times
    for r in range(bundle.n_paths):
        name = f"paths_{r}.csv"
        with open(out_dir / name, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            for i, t in enumerate(times):
                row = [f"{t:.17g}"]
                row += [f"{v:.17g}" for v in bundle.x_path[r, i]]
                row += [f"{v:.17g}" for v in bundle.y_path[r, i]]
                writer.writerow(row)
        names.append(name)
    return names
