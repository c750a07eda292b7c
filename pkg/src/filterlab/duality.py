"""Duality diagnostics for the measure-valued evolution.

The probe family is the complex exponential weights

    theta_t = exp( i sum_j int r^j dWtilde^j + 1/2 int ||r||^2 ds ),

the closed-form solution of d theta = i theta r^j dWtilde^j with theta_0 = 1
(the closed form avoids any scheme error in the oscillatory factor; the SDE
form is tested against it separately). theta is a unit-mean complex
martingale whose modulus exp(1/2 int ||r||^2) is deterministic.

Pairing a bounded frequency path r and a terminal function phi with the
backward dual field u gives the testable identity

    E[ theta_T pi_T(phi) ] = E[ pi_0(u_0) ],

estimated over independent observation replicas, each carrying a small
conditional particle ensemble (the pairing is unbiased for any ensemble
size; accuracy comes from the replica average). The same machinery yields
interval martingale z-tests for theta_t pi_t(u_t)-type processes, a
conditional-orthogonality test for integrals against (I - k+k) dWtilde, and
a two-solver agreement table (particle vs grid) over the probe family.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import InvalidInputError, UnsupportedConfigurationError
from .gridpde import (DualSolution, Grid1D, dual_backward_solve, spline_eval,
                      zakai_fd_terminal_batch)
from .model import ScenarioSpec
from .rng import ROLE_INITIAL, ROLE_OBS, ROLE_ORTHO, ROLE_SIGNAL, parallel_map, substream
from .sde import TimeGrid
from .testfunctions import TestFunction


@dataclass(frozen=True)
class FrequencyChoice:
    """Bounded piecewise-constant frequency path on [0, horizon].

    levels has shape (n_pieces, l'); piece p is active on
    [breaks[p], breaks[p+1]).
    """

    label: str
    breaks: np.ndarray
    levels: np.ndarray

    def __post_init__(self):
        breaks = np.asarray(self.breaks, dtype=float)
        levels = np.atleast_2d(np.asarray(self.levels, dtype=float))
        if breaks.ndim != 1 or len(breaks) != len(levels) + 1:
            raise InvalidInputError("breaks must bracket the level pieces")
        if not np.all(np.diff(breaks) > 0):
            raise InvalidInputError("breaks must increase")
        if not np.all(np.isfinite(levels)):
            raise InvalidInputError("frequency levels must be bounded")
        object.__setattr__(self, "breaks", breaks)
        object.__setattr__(self, "levels", levels)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.linalg.norm(self.levels, axis=1)))

    def on_grid(self, time_grid: TimeGrid) -> np.ndarray:
        """Left-point sampling, shape (n_steps, l')."""
        t = time_grid.times[:-1]
        idx = np.clip(np.searchsorted(self.breaks, t, side="right") - 1, 0,
                      len(self.levels) - 1)
        return self.levels[idx]

    @classmethod
    def constant(cls, value, horizon: float, label: Optional[str] = None) -> "FrequencyChoice":
        value = np.atleast_1d(np.asarray(value, dtype=float))
        return cls(label or f"const{value.tolist()}", np.array([0.0, horizon]),
                   value[None, :])

    @classmethod
    def piecewise(cls, levels, horizon: float, label: Optional[str] = None) -> "FrequencyChoice":
        levels = np.atleast_2d(np.asarray(levels, dtype=float))
        breaks = np.linspace(0.0, horizon, len(levels) + 1)
        return cls(label or f"pw{levels.tolist()}", breaks, levels)


def standard_frequency_probes(l_obs: int, horizon: float) -> list[FrequencyChoice]:
    """The default probe family: levels in {-2..2}, at most 4 subintervals."""
    ones = np.ones(l_obs)
    return [
        FrequencyChoice.constant(0.0 * ones, horizon, "zero"),
        FrequencyChoice.constant(1.0 * ones, horizon, "plus_one"),
        FrequencyChoice.constant(-1.0 * ones, horizon, "minus_one"),
        FrequencyChoice.piecewise([2.0 * ones, -2.0 * ones], horizon, "step_two"),
        FrequencyChoice.piecewise([1.0 * ones, 0.0 * ones, -1.0 * ones, 1.0 * ones],
                                  horizon, "alternating"),
    ]


def exp_weight_path(freq_grid: np.ndarray, w_increments: np.ndarray, dt: float) -> np.ndarray:
    """theta along the grid from innovation increments (closed form).

    freq_grid: (n_steps, l'); w_increments: (..., n_steps, l').
    Returns complex theta of shape (..., n_steps+1), theta_0 = 1, with both
    integrals left-point discretized.
    """
    freq_grid = np.asarray(freq_grid, dtype=float)
    w = np.asarray(w_increments, dtype=float)
    phase = np.cumsum(np.einsum("...nj,nj->...n", w, freq_grid), axis=-1)
    comp = np.cumsum(0.5 * np.sum(freq_grid**2, axis=1) * dt)
    shape = w.shape[:-2] + (w.shape[-2] + 1,)
    theta = np.empty(shape, dtype=complex)
    theta[..., 0] = 1.0
    theta[..., 1:] = np.exp(comp + 1j * phase)
    return theta


def obs_exp_weight_path(freq_grid: np.ndarray, dn_increments: np.ndarray,
                        k_path: np.ndarray, dt: float) -> np.ndarray:
    """Observation-driven exponential for the conditional-orthogonality test.

    Driven by the observation martingale increments dN = dY - h1 dt (shape
    (..., n_steps, d')) with the modulus compensator ||k^T r||^2 / 2, so it is
    measurable with respect to the observation and exactly orthogonal to
    integrals against (I - k+k) dWtilde. k_path has shape (n_steps, d', l').
    """
    freq_grid = np.asarray(freq_grid, dtype=float)
    dn = np.asarray(dn_increments, dtype=float)
    phase = np.cumsum(np.einsum("...nj,nj->...n", dn, freq_grid), axis=-1)
    ktr = np.einsum("njl,nj->nl", np.asarray(k_path, dtype=float), freq_grid)
    comp = np.cumsum(0.5 * np.sum(ktr**2, axis=1) * dt)
    shape = dn.shape[:-2] + (dn.shape[-2] + 1,)
    theta = np.empty(shape, dtype=complex)
    theta[..., 0] = 1.0
    theta[..., 1:] = np.exp(comp + 1j * phase)
    return theta


# ---------------------------------------------------------------------------
# replica engine
# ---------------------------------------------------------------------------

@dataclass
class PairingSamples:
    """Per-replica samples shared by the duality diagnostics.

    lhs[f][p] and rhs[f][p] are complex arrays of length n_replicas holding
    theta_T pi_T(phi_p) and pi_0(u0_{f,p}); path_samples, when requested,
    holds theta_t pi_t(u_t) snapshots for (freq, phi) index (0, 0), shape
    (n_replicas, n_snaps). grid_lhs mirrors lhs with the density solver in
    place of the particles. w_proj optionally keeps the projected innovation
    paths so other solvers can consume the same replicas.
    """

    freq_labels: list
    phi_labels: list
    lhs: np.ndarray               # (n_f, n_p, R) complex
    rhs: np.ndarray               # (n_f, n_p, R) complex
    theta_T: Optional[np.ndarray] = None   # (n_f, R) complex
    snap_times: Optional[np.ndarray] = None
    path_samples: Optional[np.ndarray] = None
    mass_path_samples: Optional[np.ndarray] = None
    w_proj: Optional[np.ndarray] = None


def _dual_fields(spec: ScenarioSpec, grid: Grid1D, time_grid: TimeGrid,
                 freqs: Sequence[FrequencyChoice], phis: Sequence[TestFunction]
                 ) -> list[list[DualSolution]]:
    return [[dual_backward_solve(spec.coeffs, grid, time_grid, f.on_grid(time_grid), p)
             for p in phis] for f in freqs]


def replica_pairing(spec: ScenarioSpec, grid: Grid1D,
                    freqs: Sequence[FrequencyChoice], phis: Sequence[TestFunction],
                    n_replicas: int, n_particles: int = 8,
                    time_grid: Optional[TimeGrid] = None, seed: Optional[int] = None,
                    snap_indices: Optional[Sequence[int]] = None,
                    keep_w_proj: bool = False, workers: int = 1,
                    duals: Optional[list] = None) -> PairingSamples:
    """Simulate observation replicas and evaluate all pairing samples.

    Each replica draws one observation path under the reference measure and
    carries ``n_particles`` conditional signal particles with exponential
    weights; the frequency weights theta are accumulated from the replica's
    true innovation increments. Backward dual fields are solved once per
    (freq, phi) pair and evaluated on the replica initial ensembles.
    """
    if not spec.coeffs.y_free:
        raise UnsupportedConfigurationError("the pairing engine requires y-free coefficients")
    time_grid = time_grid or TimeGrid.for_spec(spec)
    seed = spec.seed if seed is None else seed
    dims = spec.dims
    n, dt = time_grid.n_steps, time_grid.dt
    if duals is None:
        duals = _dual_fields(spec, grid, time_grid, freqs, phis)

    freq_grids = [f.on_grid(time_grid) for f in freqs]
    comp_T = [float(np.sum(0.5 * np.sum(fg**2, axis=1) * dt)) for fg in freq_grids]
    snap = sorted(snap_indices) if snap_indices is not None else None

    chunk = max(1, min(n_replicas, 65536 // max(1, n_particles)))
    blocks = [(b, min(chunk, n_replicas - b * chunk))
              for b in range((n_replicas + chunk - 1) // chunk)]

    def run_block(args):
        block_id, r_here = args
        rng_init = substream(seed, block_id, ROLE_INITIAL)
        rng_v = substream(seed, block_id, ROLE_SIGNAL)
        rng_w = substream(seed, block_id, ROLE_OBS)
        rng_o = substream(seed, block_id, ROLE_ORTHO)
        m = r_here * n_particles
        sdt = np.sqrt(dt)

        x = spec.initial_law.sample(rng_init, m)                    # (m, d)
        x0 = x.copy()
        log_z = np.zeros(m)
        y = np.broadcast_to(np.asarray(spec.initial_law.y0, dtype=float),
                            (r_here, dims.d_obs)).copy()
        phases = np.zeros((len(freqs), r_here))
        w_proj_block = np.empty((r_here, n, dims.l_obs)) if keep_w_proj else None
        snap_vals = None
        snap_mass = None
        if snap is not None:
            snap_vals = np.empty((r_here, len(snap)), dtype=complex)
            snap_mass = np.empty((r_here, len(snap)))

        def record_snap(pos, step_idx):
            u_here = duals[0][0].u[step_idx]
            vals = spline_eval(grid, u_here, x[:, 0])
            z_here = np.exp(log_z)
            pu = (vals * z_here).reshape(r_here, n_particles).mean(axis=1)
            comp_t = float(np.sum(0.5 * np.sum(freq_grids[0][:step_idx]**2, axis=1) * dt))
            theta_t = np.exp(comp_t + 1j * phases[0])
            snap_vals[:, pos] = theta_t * pu
            snap_mass[:, pos] = z_here.reshape(r_here, n_particles).mean(axis=1)

        pos = 0
        if snap is not None and snap[0] == 0:
            record_snap(0, 0)
            pos = 1

        times = time_grid.times
        eye = np.eye(dims.l_obs)
        for i in range(n):
            t = times[i]
            dw = sdt * rng_w.standard_normal((r_here, dims.l_obs))   # true dWtilde
            _, kp, proj = spec.coeffs.k_projection(t, y[0])
            h1 = spec.coeffs.eval_h1(t, y[:1])[0]
            y_next = y + h1[None, :] * dt + dw @ spec.coeffs.eval_k(t, y[:1])[0].T

            dw_proj = dw @ proj.T
            if keep_w_proj:
                w_proj_block[:, i, :] = dw_proj
            fresh = sdt * rng_o.standard_normal((m, dims.l_obs))
            dwt = np.repeat(dw_proj, n_particles, axis=0) + fresh @ (eye - proj).T

            yb = np.repeat(y, n_particles, axis=0)
            f = spec.coeffs.eval_f(t, x, yb)
            g = spec.coeffs.eval_g(t, x, yb)
            gb = spec.coeffs.eval_g_bar(t, x, yb)
            h2 = spec.coeffs.eval_h2(t, x, yb)
            log_z += np.einsum("nj,nj->n", h2, dwt) - 0.5 * dt * np.sum(h2**2, axis=1)
            dv = sdt * rng_v.standard_normal((m, dims.l))
            x = x + (f - np.einsum("nij,nj->ni", gb, h2)) * dt \
                + np.einsum("nij,nj->ni", g, dv) + np.einsum("nij,nj->ni", gb, dwt)

            for fi, fg in enumerate(freq_grids):
                phases[fi] += dw @ fg[i]
            y = y_next
            if snap is not None and pos < len(snap) and snap[pos] == i + 1:
                record_snap(pos, i + 1)
                pos += 1

        z = np.exp(log_z).reshape(r_here, n_particles)
        theta_T = np.stack([np.exp(comp_T[fi] + 1j * phases[fi])
                            for fi in range(len(freqs))])
        lhs = np.empty((len(freqs), len(phis), r_here), dtype=complex)
        rhs = np.empty_like(lhs)
        for pi, phi in enumerate(phis):
            vals = phi.value(x).reshape(r_here, n_particles)
            pi_t = (z * vals).mean(axis=1)
            for fi in range(len(freqs)):
                lhs[fi, pi] = theta_T[fi] * pi_t
                u0 = spline_eval(grid, duals[fi][pi].u0, x0[:, 0])
                rhs[fi, pi] = u0.reshape(r_here, n_particles).mean(axis=1)
        return lhs, rhs, theta_T, snap_vals, snap_mass, w_proj_block

    results = parallel_map(run_block, blocks, workers)
    lhs = np.concatenate([r[0] for r in results], axis=2)
    rhs = np.concatenate([r[1] for r in results], axis=2)
    out = PairingSamples(
        freq_labels=[f.label for f in freqs],
        phi_labels=[p.name for p in phis],
        lhs=lhs, rhs=rhs,
        theta_T=np.concatenate([r[2] for r in results], axis=1))
    if snap is not None:
        out.snap_times = time_grid.times[np.asarray(snap)]
        out.path_samples = np.concatenate([r[3] for r in results], axis=0)
        out.mass_path_samples = np.concatenate([r[4] for r in results], axis=0)
    if keep_w_proj:
        out.w_proj = np.concatenate([r[5] for r in results], axis=0)
    return out


def _complex_se(samples: np.ndarray) -> float:
    r = samples.real.std(ddof=1)
    i = samples.imag.std(ddof=1)
    return float(np.sqrt(r**2 + i**2) / np.sqrt(samples.size))


@dataclass
class GapResult:
    freq_label: str
    phi_label: str
    n_replicas: int
    lhs_mean: complex
    rhs_mean: complex
    se_lhs: float
    se_rhs: float
    se_diff: float
    gap: float

    def passes(self, budget: float = 0.02, sigmas: float = 3.0) -> bool:
        return self.gap <= sigmas * self.se_diff + budget


def gap_from_samples(samples: PairingSamples, fi: int, pi: int) -> GapResult:
    lhs = samples.lhs[fi, pi]
    rhs = samples.rhs[fi, pi]
    diff = lhs - rhs
    return GapResult(
        freq_label=samples.freq_labels[fi],
        phi_label=samples.phi_labels[pi],
        n_replicas=lhs.size,
        lhs_mean=complex(lhs.mean()),
        rhs_mean=complex(rhs.mean()),
        se_lhs=_complex_se(lhs),
        se_rhs=_complex_se(rhs),
        se_diff=_complex_se(diff),
        gap=float(abs(diff.mean())),
    )


def duality_gap(spec: ScenarioSpec, freq: FrequencyChoice, phi_T: TestFunction,
                n_replicas: int, grid: Grid1D, n_particles: int = 8,
                seed: Optional[int] = None, time_grid: Optional[TimeGrid] = None,
                workers: int = 1) -> GapResult:
    """|E[theta_T pi_T(phi)] - E[pi_0(u_0)]| with Monte Carlo standard errors."""
    samples = replica_pairing(spec, grid, [freq], [phi_T], n_replicas,
                              n_particles=n_particles, seed=seed,
                              time_grid=time_grid, workers=workers)
    return gap_from_samples(samples, 0, 0)


def duality_report(spec: ScenarioSpec, freqs: Sequence[FrequencyChoice],
                   phis: Sequence[TestFunction], n_replicas: int, grid: Grid1D,
                   n_particles: int = 8, seed: Optional[int] = None,
                   time_grid: Optional[TimeGrid] = None, workers: int = 1
                   ) -> list[GapResult]:
    """All (freq, phi) gaps over a shared replica ensemble."""
    samples = replica_pairing(spec, grid, list(freqs), list(phis), n_replicas,
                              n_particles=n_particles, seed=seed,
                              time_grid=time_grid, workers=workers)
    return [gap_from_samples(samples, fi, pi)
            for fi in range(len(freqs)) for pi in range(len(phis))]


# ---------------------------------------------------------------------------
# martingale and orthogonality tests
# ---------------------------------------------------------------------------

@dataclass
class MartingaleReport:
    interval_starts: np.ndarray
    z_re: np.ndarray
    z_im: np.ndarray

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(self.z_re)), np.max(np.abs(self.z_im))))


def martingale_test(samples: np.ndarray, times: Optional[np.ndarray] = None,
                    n_intervals: int = 5) -> MartingaleReport:
    """Interval z-statistics of mean increments against zero.

    samples has shape (n_replicas, n_times); the time axis is split into
    n_intervals blocks and each block's mean increment is compared with 0
    using its cross-replica standard error (real and imaginary parts
    separately).
    """
    samples = np.asarray(samples)
    if samples.ndim != 2 or samples.shape[0] < 100:
        raise InvalidInputError("martingale_test needs (replicas >= 100, times) samples")
    n_rep, n_times = samples.shape
    edges = np.unique(np.linspace(0, n_times - 1, n_intervals + 1).astype(int))
    z_re, z_im, starts = [], [], []
    for a, b in zip(edges[:-1], edges[1:]):
        inc = samples[:, b] - samples[:, a]
        se_r = inc.real.std(ddof=1) / np.sqrt(n_rep)
        se_i = inc.imag.std(ddof=1) / np.sqrt(n_rep)
        z_re.append(inc.real.mean() / se_r if se_r > 0 else 0.0)
        z_im.append(inc.imag.mean() / se_i if se_i > 0 else 0.0)
        starts.append(a)
    if times is None:
        times = np.arange(n_times, dtype=float)
    return MartingaleReport(np.asarray(times)[np.asarray(starts)],
                            np.asarray(z_re), np.asarray(z_im))


@dataclass
class OrthogonalityResult:
    estimate: complex
    se_re: float
    se_im: float
    n_replicas: int

    @property
    def passed(self) -> bool:
        return (abs(self.estimate.real) <= 3 * self.se_re + 1e-12
                and abs(self.estimate.imag) <= 3 * self.se_im + 1e-12)


def orthogonality_test(spec: ScenarioSpec, kappa: Callable, freq: FrequencyChoice,
                       n_replicas: int, seed: Optional[int] = None,
                       time_grid: Optional[TimeGrid] = None, workers: int = 1
                       ) -> OrthogonalityResult:
    """Monte Carlo check that E[ theta_t int kappa (I - k+k) dWtilde ] = 0.

    theta here is the observation-driven exponential (frequency dimension d',
    paired with dN = dY - h1 dt), which is the form the conditional statement
    concerns; kappa(t, x, y) -> (N, l') is a bounded row-vector process
    evaluated along the true signal path. The statistic is informative only
    when k is rank-deficient (otherwise the integrand vanishes identically).
    """
    time_grid = time_grid or TimeGrid.for_spec(spec)
    seed = spec.seed if seed is None else seed
    dims = spec.dims
    n, dt = time_grid.n_steps, time_grid.dt
    freq_grid = freq.on_grid(time_grid)
    if freq_grid.shape[1] != dims.d_obs:
        raise InvalidInputError(
            "orthogonality frequencies pair with the observation (dimension d')")

    chunk = 4096
    blocks = [(b, min(chunk, n_replicas - b * chunk))
              for b in range((n_replicas + chunk - 1) // chunk)]

    def run_block(args):
        block_id, r_here = args
        rng_init = substream(seed, block_id, ROLE_INITIAL)
        rng_v = substream(seed, block_id, ROLE_SIGNAL)
        rng_w = substream(seed, block_id, ROLE_OBS)
        sdt = np.sqrt(dt)
        x = spec.initial_law.sample(rng_init, r_here)
        y = np.broadcast_to(np.asarray(spec.initial_law.y0, dtype=float),
                            (r_here, dims.d_obs)).copy()
        integral = np.zeros(r_here)
        phase = np.zeros(r_here)
        comp = 0.0
        times = time_grid.times
        for i in range(n):
            t = times[i]
            k, _, proj = spec.coeffs.k_projection(t, y[0])
            dw = sdt * rng_w.standard_normal((r_here, dims.l_obs))
            kap = np.asarray(kappa(t, x, y), dtype=float)
            integral += np.einsum("nj,nj->n", kap, dw - dw @ proj.T)
            dn = dw @ k.T
            phase += dn @ freq_grid[i]
            comp += 0.5 * float(np.sum((k.T @ freq_grid[i]) ** 2)) * dt

            f = spec.coeffs.eval_f(t, x, y)
            g = spec.coeffs.eval_g(t, x, y)
            gb = spec.coeffs.eval_g_bar(t, x, y)
            h2 = spec.coeffs.eval_h2(t, x, y)
            h1 = spec.coeffs.eval_h1(t, y)
            dv = sdt * rng_v.standard_normal((r_here, dims.l))
            x = x + (f - np.einsum("nij,nj->ni", gb, h2)) * dt \
                + np.einsum("nij,nj->ni", g, dv) + np.einsum("nij,nj->ni", gb, dw)
            y = y + h1 * dt + dn
        theta = np.exp(comp + 1j * phase)
        return theta * integral

    samples = np.concatenate(parallel_map(run_block, blocks, workers))
    return OrthogonalityResult(
        estimate=complex(samples.mean()),
        se_re=float(samples.real.std(ddof=1) / np.sqrt(n_replicas)),
        se_im=float(samples.imag.std(ddof=1) / np.sqrt(n_replicas)),
        n_replicas=n_replicas,
    )


# ---------------------------------------------------------------------------
# two-solver uniqueness probe
# ---------------------------------------------------------------------------

@dataclass
class ProbeRow:
    freq_label: str
    phi_label: str
    particle_mean: complex
    grid_mean: complex
    diff: float
    se_diff: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.diff <= self.tolerance


def uniqueness_probe(spec: ScenarioSpec, phis: Sequence[TestFunction],
                     freqs: Sequence[FrequencyChoice], n_replicas: int,
                     grid: Grid1D, n_particles: int = 16,
                     seed: Optional[int] = None, budget: float = 0.02,
                     time_grid: Optional[TimeGrid] = None, workers: int = 1
                     ) -> list[ProbeRow]:
    """Agreement table E[theta_T pi_T(phi)] between particle and grid solvers.

    Both solvers consume the same replica observations (the particle engine
    keeps the projected innovation paths and the density stepper re-runs
    them), so each (freq, phi) entry compares two constructions of the same
    measure path; paired differences give the standard error.
    """
    time_grid = time_grid or TimeGrid.for_spec(spec)
    samples = replica_pairing(spec, grid, list(freqs), list(phis), n_replicas,
                              n_particles=n_particles, seed=seed,
                              time_grid=time_grid, keep_w_proj=True, workers=workers)
    p0 = spec.initial_law.density(grid.nodes[:, None])
    p_T = zakai_fd_terminal_batch(spec.coeffs, grid, time_grid, samples.w_proj, p0)

    # both columns share the same theta samples, so the paired difference
    # isolates the solver disagreement
    rows = []
    h = grid.spacing
    for fi, f in enumerate(freqs):
        theta_T = samples.theta_T[fi]
        for pi_idx, phi in enumerate(phis):
            vals = phi.value(grid.nodes[:, None])
            pi_grid = np.trapezoid(p_T * vals[None, :], dx=h, axis=1)
            lhs_grid = theta_T * pi_grid
            lhs_part = samples.lhs[fi, pi_idx]
            diff = lhs_part - lhs_grid
            se = _complex_se(diff)
            rows.append(ProbeRow(
                freq_label=f.label, phi_label=phi.name,
                particle_mean=complex(lhs_part.mean()),
                grid_mean=complex(lhs_grid.mean()),
                diff=float(abs(diff.mean())),
                se_diff=se,
                tolerance=3 * se + budget,
            ))
    return rows
