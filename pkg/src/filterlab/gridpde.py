"""One-dimensional grid solvers for the measure evolution and its dual.

Forward: the unnormalized density p of the conditional measure, stepped
explicitly (Euler-Maruyama in time, central second-order differences in
space) in adjoint form

    dp = A* p dt + B^{j*} p dWtilde^j,
    A* p = -(f p)' + ((a p)'')/2,       a = g^2 + gbar gbar^T,
    B^{j*} p = -(p [gbar k+k]_j)' + [h2^T k+k]_j p,

driven by the observation-determined innovation components k+k dWtilde.
Homogeneous Dirichlet boundaries on a padded domain; the explicit scheme
requires dt <= spacing^2 / (2 max a) and refuses to run otherwise.

Backward: the complex dual equation with deterministic (y-free) coefficients,
where the martingale-representation term vanishes and

    du = -(A u + i r^j B^j u) dt,     u(T) = phi,

stepped backward with the diffusion implicit (banded solve) and the
first-order, zero-order and frequency-coupling terms explicit. The same
recursion is available as the equivalent two-real-field system (real and
imaginary parts coupled through r^j B^j) for a machine-precision
cross-check of the complex arithmetic.

The extended product-rule checker ``ito_check`` evaluates both sides of

    mu_t(u_t) = mu_0(u_0) + int mu_s(A u + Sigma + B^j Lam^j) ds
                + int mu_s(B^j u + Lam^j) dWtilde^j

for a measure path (particle run or grid density) against a supplied
decomposition u = u_0 + int Sigma ds + int Lam^j dWtilde^j.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import solve_banded

from .errors import (InvalidInputError, StabilityError, SupportCoverageError,
                     UnsupportedConfigurationError)
from .filters import FilterRun
from .model import CoefficientSet, ScenarioSpec
from .sde import TimeGrid
from .testfunctions import TestFunction


@dataclass(frozen=True)
class Grid1D:
    x_min: float
    x_max: float
    n_points: int

    def __post_init__(self):
        if self.n_points < 16:
            raise InvalidInputError("grid needs at least 16 points")
        if not self.x_max > self.x_min:
            raise InvalidInputError("x_max must exceed x_min")

    @property
    def spacing(self) -> float:
        return (self.x_max - self.x_min) / (self.n_points - 1)

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_points)


@dataclass(frozen=True)
class GridFunction:
    """One real- or complex-valued snapshot on a grid.

    Density-role functions are real and nonnegative; dual fields are complex
    with the imaginary part identically zero at the terminal time.
    """

    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.shape != (self.grid.n_points,):
            raise InvalidInputError("values must match the grid nodes")
        if not np.all(np.isfinite(values)):
            raise InvalidInputError("grid function has non-finite values")
        object.__setattr__(self, "values", values)

    @property
    def re(self) -> np.ndarray:
        return np.real(self.values)

    @property
    def im(self) -> np.ndarray:
        return np.imag(self.values)

    def check_density(self, tol: float = 0.0):
        if np.any(self.re < -tol) or np.any(np.abs(self.im) > tol):
            raise InvalidInputError("density-role functions are real and nonnegative")
        return self


@dataclass
class GridPath:
    """Function values over (time, space); values is (n_times, n_points)."""

    grid: Grid1D
    times: np.ndarray
    values: np.ndarray

    def snapshot(self, index: int) -> GridFunction:
        return GridFunction(self.grid, self.values[index])

    def quadrature(self, integrand: np.ndarray, index: int):
        """Trapezoid pairing int p(x) q(x) dx at one time index."""
        v = self.values[index] * integrand
        return np.trapezoid(v, dx=self.grid.spacing)


def export_grid_csv(grid: Grid1D, values: np.ndarray, path) -> str:
    """CSV snapshot with columns x, re, im."""
    import csv
    from pathlib import Path
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    values = np.asarray(values)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["x", "re", "im"])
        for x, v in zip(grid.nodes, values):
            writer.writerow([f"{x:.17g}", f"{np.real(v):.17g}", f"{np.imag(v):.17g}"])
    return str(path)


# ---------------------------------------------------------------------------
# coefficient sampling on the grid
# ---------------------------------------------------------------------------

def _nodes_coeffs(coeffs: CoefficientSet, t: float, nodes: np.ndarray, y: np.ndarray):
    x = nodes[:, None]
    f = coeffs.eval_f(t, x, y)[:, 0]
    a = coeffs.diffusion(t, x, y)[:, 0, 0]
    gb = coeffs.eval_g_bar(t, x, y)[:, 0, :]          # (nx, l')
    h2 = coeffs.eval_h2(t, x, y)                      # (nx, l')
    return f, a, gb, h2


def _d1(v: np.ndarray, h: float) -> np.ndarray:
    """Central first difference with zero ghost values outside the domain."""
    out = np.zeros_like(v)
    out[..., 1:-1] = (v[..., 2:] - v[..., :-2]) / (2 * h)
    out[..., 0] = v[..., 1] / (2 * h)
    out[..., -1] = -v[..., -2] / (2 * h)
    return out


def _d2(v: np.ndarray, h: float) -> np.ndarray:
    out = np.zeros_like(v)
    out[..., 1:-1] = (v[..., 2:] - 2 * v[..., 1:-1] + v[..., :-2]) / h**2
    out[..., 0] = (v[..., 1] - 2 * v[..., 0]) / h**2
    out[..., -1] = (v[..., -2] - 2 * v[..., -1]) / h**2
    return out


def apply_generator_fd(coeffs: CoefficientSet, t: float, y: np.ndarray,
                       grid: Grid1D, values: np.ndarray) -> np.ndarray:
    """Discrete generator on grid values: f D1 v + (a/2) D2 v."""
    f, a, _, _ = _nodes_coeffs(coeffs, t, grid.nodes, y)
    h = grid.spacing
    return f * _d1(values, h) + 0.5 * a * _d2(values, h)


def apply_adjoint_fd(coeffs: CoefficientSet, t: float, y: np.ndarray,
                     grid: Grid1D, values: np.ndarray) -> np.ndarray:
    """Discrete adjoint on grid values: -D1(f v) + D2(a v)/2.

    With the shared central differences this is the exact transpose of
    ``apply_generator_fd`` under the h-weighted dot product, for vectors
    vanishing at the boundary.
    """
    f, a, _, _ = _nodes_coeffs(coeffs, t, grid.nodes, y)
    h = grid.spacing
    return -_d1(f * values, h) + 0.5 * _d2(a * values, h)


def noise_adjoint_increment(gb: np.ndarray, h2: np.ndarray, proj: np.ndarray,
                            dw: np.ndarray, p: np.ndarray, h: float) -> np.ndarray:
    """sum_j B^{j*} p dw_j = -(p (gbar k+k dw))' + (h2^T k+k dw) p."""
    c1 = (gb @ proj) @ dw          # (nx,)
    c0 = (h2 @ proj) @ dw
    return -_d1(p * c1, h) + c0 * p


@dataclass
class ForwardGridResult:
    path: GridPath
    mass: np.ndarray              # trapezoid mass per time
    boundary_max: float           # max |p| at the first interior nodes


def max_diffusion(spec: ScenarioSpec, grid: Grid1D, y_path: np.ndarray,
                  n_time_samples: int = 9) -> float:
    """Sampled sup of a over the grid and the given observation path."""
    y_path = np.atleast_2d(np.asarray(y_path, dtype=float))
    idx = np.unique(np.linspace(0, len(y_path) - 1, n_time_samples).astype(int))
    worst = 0.0
    for i in idx:
        t = i * spec.dt if len(y_path) > 1 else 0.0
        a = spec.coeffs.diffusion(t, grid.nodes[:, None], y_path[i])[:, 0, 0]
        worst = max(worst, float(a.max()))
    return worst


def zakai_fd_solve(spec: ScenarioSpec, y_path: np.ndarray, w_proj: np.ndarray,
                   grid: Grid1D, time_grid: Optional[TimeGrid] = None,
                   p0: Optional[np.ndarray] = None) -> ForwardGridResult:
    """Explicit stepping of the unnormalized density along one observation path.

    ``w_proj`` holds the observation-determined innovation components
    k+(t,Y)(dY - h1 dt) (see sde.project_innovations). The initial density
    defaults to the scenario's initial law on the nodes, normalized to unit
    trapezoid mass.
    """
    if spec.dims.d != 1:
        raise UnsupportedConfigurationError("grid solvers support d = 1 only")
    time_grid = time_grid or TimeGrid.for_spec(spec)
    n, dt = time_grid.n_steps, time_grid.dt
    y_path = np.asarray(y_path, dtype=float)
    w_proj = np.asarray(w_proj, dtype=float)
    if y_path.shape != (n + 1, spec.dims.d_obs):
        raise InvalidInputError("y_path does not match the time grid")
    if w_proj.shape != (n, spec.dims.l_obs):
        raise InvalidInputError("w_proj does not match the time grid")

    h = grid.spacing
    a_max = max_diffusion(spec, grid, y_path)
    if dt > h**2 / (2 * a_max):
        raise StabilityError(
            f"dt={dt:g} violates the diffusive bound {h**2 / (2 * a_max):g} "
            f"(spacing {h:g}, max a {a_max:g}); no silent sub-stepping")

    nodes = grid.nodes
    if p0 is None:
        p0 = spec.initial_law.density(nodes[:, None])
    p = np.asarray(p0, dtype=float).copy()
    p[0] = p[-1] = 0.0
    p /= np.trapezoid(p, dx=h)

    values = np.empty((n + 1, grid.n_points))
    values[0] = p
    mass = np.empty(n + 1)
    mass[0] = np.trapezoid(p, dx=h)
    boundary_max = 0.0
    times = time_grid.times
    for i in range(n):
        t, yi = times[i], y_path[i]
        f, a, gb, h2 = _nodes_coeffs(spec.coeffs, t, nodes, yi)
        _, _, proj = spec.coeffs.k_projection(t, yi)
        drift = -_d1(f * p, h) + 0.5 * _d2(a * p, h)
        noise = noise_adjoint_increment(gb, h2, proj, w_proj[i], p, h)
        p = p + dt * drift + noise
        p[0] = p[-1] = 0.0
        values[i + 1] = p
        mass[i + 1] = np.trapezoid(p, dx=h)
        boundary_max = max(boundary_max, abs(p[1]), abs(p[-2]))

    return ForwardGridResult(GridPath(grid, times, values), mass, boundary_max)


def zakai_fd_terminal_batch(coeffs: CoefficientSet, grid: Grid1D, time_grid: TimeGrid,
                            w_proj: np.ndarray, p0: np.ndarray) -> np.ndarray:
    """Terminal densities for a batch of innovation paths (y-free coefficients).

    w_proj has shape (n_paths, n_steps, l'); returns (n_paths, n_points).
    Coefficient arrays are shared across the batch, which is what makes the
    replica ensembles of the duality probes affordable.
    """
    if not coeffs.y_free:
        raise UnsupportedConfigurationError("batched grid stepping needs y-free coefficients")
    n, dt = time_grid.n_steps, time_grid.dt
    h = grid.spacing
    nodes = grid.nodes
    y0 = np.zeros(coeffs.dims.d_obs)
    p = np.broadcast_to(p0, (w_proj.shape[0], grid.n_points)).copy()
    p[:, 0] = p[:, -1] = 0.0
    p /= np.trapezoid(p, dx=h, axis=1)[:, None]
    times = time_grid.times
    for i in range(n):
        t = times[i]
        f, a, gb, h2 = _nodes_coeffs(coeffs, t, nodes, y0)
        _, _, proj = coeffs.k_projection(t, y0)
        dw = w_proj[:, i, :]                          # (R, l')
        c1 = dw @ (gb @ proj).T                       # (R, nx)
        c0 = dw @ (h2 @ proj).T
        drift = -_d1(f * p, h) + 0.5 * _d2(a * p, h)
        p = p + dt * drift - _d1(p * c1, h) + c0 * p
        p[:, 0] = p[:, -1] = 0.0
    return p


# ---------------------------------------------------------------------------
# backward dual solver
# ---------------------------------------------------------------------------

@dataclass
class DualSolution:
    """Backward dual field u (complex) with its discrete drift decomposition.

    sigma[i] = (u[i+1] - u[i]) / dt, so u_m = u_0 + sum_{i<m} sigma_i dt holds
    exactly on the grid and the identity-decomposition defect is zero by
    construction; sigma approximates -(A u + i r B u).
    """

    grid: Grid1D
    times: np.ndarray
    u: np.ndarray                # (n_steps+1, n_points) complex
    sigma: np.ndarray            # (n_steps,   n_points) complex
    h0_norm: np.ndarray          # discrete L2 norms over time
    h1_norm: np.ndarray          # discrete H1 seminorm over time

    @property
    def u0(self) -> np.ndarray:
        return self.u[0]


def _check_dual_inputs(coeffs: CoefficientSet, freq_grid: np.ndarray,
                       time_grid: TimeGrid):
    if coeffs.dims.d != 1:
        raise UnsupportedConfigurationError("grid solvers support d = 1 only")
    if not coeffs.y_free:
        raise UnsupportedConfigurationError(
            "the backward dual solver requires coefficients independent of y")
    if freq_grid.shape != (time_grid.n_steps, coeffs.dims.l_obs):
        raise InvalidInputError("frequency path does not match the time grid")


def _coercivity_min(coeffs: CoefficientSet, grid: Grid1D, horizon: float) -> float:
    y0 = np.zeros(coeffs.dims.d_obs)
    worst = np.inf
    for t in np.linspace(0.0, horizon, 5):
        g = coeffs.eval_g(t, grid.nodes[:, None], y0)
        gg = np.einsum("nik,njk->nij", g, g)[:, 0, 0]
        worst = min(worst, float(gg.min()))
    return worst


def _implicit_diffusion_matrix(a: np.ndarray, dt: float, h: float) -> np.ndarray:
    """Banded (I - dt/2 a D2) on the interior nodes, lower/diag/upper layout."""
    m = a.size - 2
    ab = np.zeros((3, m))
    r = 0.5 * dt * a[1:-1] / h**2
    ab[0, 1:] = -r[:-1]          # superdiagonal (row i couples to i+1)
    ab[1, :] = 1.0 + 2.0 * r
    ab[2, :-1] = -r[1:]          # subdiagonal
    return ab


def _noise_operator_grid(u: np.ndarray, gb: np.ndarray, h2: np.ndarray,
                         proj: np.ndarray, h: float) -> np.ndarray:
    """All B^j u on the grid, shape (nx, l'): (u' gbar + u h2^T) k+k."""
    du = _d1(u, h)
    row = du[:, None] * gb + u[:, None] * h2
    return row @ proj


def dual_backward_solve(coeffs: CoefficientSet, grid: Grid1D, time_grid: TimeGrid,
                        freq_grid: np.ndarray, phi_T,
                        check_coercivity: bool = True) -> DualSolution:
    """Backward solve of du = -(A u + i r^j B^j u) dt, u(T) = phi.

    freq_grid is the piecewise-constant frequency path sampled on the time
    grid, shape (n_steps, l'). phi_T is a TestFunction or a callable on a
    batch of points; its values seed the (real) terminal condition, so the
    imaginary part at T is zero and fills in backward when r is nonzero.
    Diffusion is implicit (banded solve), everything else explicit.
    """
    freq_grid = np.asarray(freq_grid, dtype=float)
    _check_dual_inputs(coeffs, freq_grid, time_grid)
    if check_coercivity:
        kappa = _coercivity_min(coeffs, grid, time_grid.horizon)
        if kappa <= 0:
            raise UnsupportedConfigurationError(
                f"dual solver requires uniformly elliptic g g^T; sampled min {kappa:g}")

    n, dt = time_grid.n_steps, time_grid.dt
    h = grid.spacing
    nodes = grid.nodes
    y0 = np.zeros(coeffs.dims.d_obs)

    phi_vals = phi_T.value(nodes[:, None]) if isinstance(phi_T, TestFunction) \
        else np.asarray(phi_T(nodes[:, None]), dtype=float)
    u = np.empty((n + 1, grid.n_points), dtype=complex)
    u[n] = phi_vals.astype(complex)
    u[n, 0] = u[n, -1] = 0.0

    times = time_grid.times
    for i in range(n - 1, -1, -1):
        t = times[i]
        f, a, gb, h2 = _nodes_coeffs(coeffs, t, nodes, y0)
        _, _, proj = coeffs.k_projection(t, y0)
        cur = u[i + 1]
        b_all = _noise_operator_grid(cur, gb, h2, proj, h)       # (nx, l') complex
        explicit = f * _d1(cur, h) + 1j * (b_all @ freq_grid[i])
        rhs = cur + dt * explicit
        ab = _implicit_diffusion_matrix(a, dt, h)
        nxt = np.zeros_like(cur)
        nxt[1:-1] = solve_banded((1, 1), ab, rhs[1:-1])
        u[i] = nxt

    sigma = (u[1:] - u[:-1]) / dt
    h0 = np.sqrt(np.sum(np.abs(u) ** 2, axis=1) * h)
    du = (u[:, 2:] - u[:, :-2]) / (2 * h)
    h1 = np.sqrt(np.sum(np.abs(du) ** 2, axis=1) * h)
    return DualSolution(grid, times, u, sigma, h0, h1)


def dual_backward_solve_split(coeffs: CoefficientSet, grid: Grid1D,
                              time_grid: TimeGrid, freq_grid: np.ndarray, phi_T,
                              check_coercivity: bool = True
                              ) -> tuple[np.ndarray, np.ndarray]:
    """The equivalent two-real-field recursion (real/imaginary split):

        du1 = -(A u1 - r^j B^j u2) dt,    u1(T) = phi,
        du2 = -(A u2 + r^j B^j u1) dt,    u2(T) = 0.

    Returns (u1, u2) paths; algebraically identical to the complex route.
    """
    freq_grid = np.asarray(freq_grid, dtype=float)
    _check_dual_inputs(coeffs, freq_grid, time_grid)
    if check_coercivity and _coercivity_min(coeffs, grid, time_grid.horizon) <= 0:
        raise UnsupportedConfigurationError("dual solver requires uniformly elliptic g g^T")

    n, dt = time_grid.n_steps, time_grid.dt
    h = grid.spacing
    nodes = grid.nodes
    y0 = np.zeros(coeffs.dims.d_obs)

    phi_vals = phi_T.value(nodes[:, None]) if isinstance(phi_T, TestFunction) \
        else np.asarray(phi_T(nodes[:, None]), dtype=float)
    u1 = np.empty((n + 1, grid.n_points))
    u2 = np.empty((n + 1, grid.n_points))
    u1[n] = phi_vals
    u1[n, 0] = u1[n, -1] = 0.0
    u2[n] = 0.0

    times = time_grid.times
    for i in range(n - 1, -1, -1):
        t = times[i]
        f, a, gb, h2 = _nodes_coeffs(coeffs, t, nodes, y0)
        _, _, proj = coeffs.k_projection(t, y0)
        b1 = _noise_operator_grid(u1[i + 1], gb, h2, proj, h) @ freq_grid[i]
        b2 = _noise_operator_grid(u2[i + 1], gb, h2, proj, h) @ freq_grid[i]
        rhs1 = u1[i + 1] + dt * (f * _d1(u1[i + 1], h) - b2)
        rhs2 = u2[i + 1] + dt * (f * _d1(u2[i + 1], h) + b1)
        ab = _implicit_diffusion_matrix(a, dt, h)
        u1[i] = 0.0
        u2[i] = 0.0
        u1[i, 1:-1] = solve_banded((1, 1), ab, rhs1[1:-1])
        u2[i, 1:-1] = solve_banded((1, 1), ab, rhs2[1:-1])

    return u1, u2


# ---------------------------------------------------------------------------
# extended product-rule check
# ---------------------------------------------------------------------------

@dataclass
class ItoIntegrands:
    """A decomposition u_t = u_0 + int Sigma ds + int Lam^j dWtilde^j.

    Two construction modes:

    * ``separable(phi, c, c_dot)``: u_t = c(t) phi with analytic derivatives
      (Lam = 0, Sigma = c'(t) phi). Pairings reuse the exact TestFunction
      machinery, so a static u reproduces the weak-form residual bitwise.
    * ``from_dual(sol)`` / ``on_grid(...)``: grid-sampled u (complex allowed)
      with Sigma given by the scheme's own increments, interpolated at
      particle locations by cubic splines.
    """

    mode: str
    phi: Optional[TestFunction] = None
    c: Optional[np.ndarray] = None        # (n_steps+1,)
    c_dot: Optional[np.ndarray] = None    # (n_steps,) left-point derivative
    grid: Optional[Grid1D] = None
    u_vals: Optional[np.ndarray] = None   # (n_steps+1, nx)
    sigma_vals: Optional[np.ndarray] = None   # (n_steps, nx)
    lam_vals: Optional[np.ndarray] = None     # (l', n_steps, nx) or None

    @classmethod
    def separable(cls, phi: TestFunction, c: np.ndarray, c_dot: np.ndarray) -> "ItoIntegrands":
        c = np.asarray(c, dtype=float)
        c_dot = np.asarray(c_dot, dtype=float)
        if c_dot.shape[0] != c.shape[0] - 1:
            raise InvalidInputError("c_dot must hold one value per step")
        return cls(mode="separable", phi=phi, c=c, c_dot=c_dot)

    @classmethod
    def static(cls, phi: TestFunction, n_steps: int) -> "ItoIntegrands":
        return cls.separable(phi, np.ones(n_steps + 1), np.zeros(n_steps))

    @classmethod
    def on_grid(cls, grid: Grid1D, u_vals: np.ndarray, sigma_vals: np.ndarray,
                lam_vals: Optional[np.ndarray] = None) -> "ItoIntegrands":
        return cls(mode="grid", grid=grid, u_vals=np.asarray(u_vals),
                   sigma_vals=np.asarray(sigma_vals), lam_vals=lam_vals)

    @classmethod
    def from_dual(cls, sol: DualSolution) -> "ItoIntegrands":
        return cls.on_grid(sol.grid, sol.u, sol.sigma)

    def consistency_defect(self, dt: float, w_tilde: Optional[np.ndarray] = None) -> float:
        """Max defect of u_m = u_0 + sum sigma dt + sum lam dWtilde on its support."""
        if self.mode == "separable":
            rebuilt = self.c[0] + dt * np.concatenate(([0.0], np.cumsum(self.c_dot)))
            return float(np.max(np.abs(self.c - rebuilt)))
        rebuilt = np.concatenate(
            [self.u_vals[:1],
             self.u_vals[0][None, :] + dt * np.cumsum(self.sigma_vals, axis=0)], axis=0)
        if self.lam_vals is not None:
            if w_tilde is None:
                raise InvalidInputError("lam integrands need the innovation increments")
            sto = np.einsum("jns,nj->ns", self.lam_vals, w_tilde)
            rebuilt[1:] += np.cumsum(sto, axis=0)
        return float(np.max(np.abs(self.u_vals - rebuilt)))


def spline_eval(grid: Grid1D, vals: np.ndarray, points: np.ndarray, deriv: int = 0):
    """Cubic-spline (re, im separately) evaluation with support checking."""
    if points.min() < grid.x_min or points.max() > grid.x_max:
        raise SupportCoverageError(
            f"points in [{points.min():g}, {points.max():g}] leave the grid "
            f"[{grid.x_min:g}, {grid.x_max:g}]")
    if np.iscomplexobj(vals):
        sre = CubicSpline(grid.nodes, vals.real)
        sim = CubicSpline(grid.nodes, vals.imag)
        if deriv:
            sre, sim = sre.derivative(deriv), sim.derivative(deriv)
        return sre(points) + 1j * sim(points)
    s = CubicSpline(grid.nodes, vals)
    if deriv:
        s = s.derivative(deriv)
    return s(points)


def ito_check(mu: Union[FilterRun, GridPath], integrands: ItoIntegrands,
              w_tilde: np.ndarray, coeffs: CoefficientSet,
              y_path: Optional[np.ndarray] = None) -> np.ndarray:
    """Residual path of the extended product-rule identity (complex):

    lhs(t) = mu_t(u_t) - mu_0(u_0),
    rhs(t) = sum_n [ mu_n(A u + Sigma + B^j Lam^j) dt
                     + mu_n(B^j u + Lam^j) dWtilde^j_n ],

    returned as lhs - rhs over the grid. ``w_tilde`` holds the innovation
    increments, shape (n_steps, l'); the observation-determined components
    suffice when all Lam^j = 0 (the operators B^j carry the projector k+k),
    and must be the full increments otherwise. For a particle run, y_path
    defaults to the run's own observation path.
    """
    if isinstance(mu, FilterRun):
        n = mu.grid.n_steps
        dt = mu.grid.dt
        times = mu.grid.times
        y_path = mu.y_path if y_path is None else y_path

        def pair(i, vals):
            return mu.weights(i) @ vals

        def points(i):
            return mu.x_path[i]
    elif isinstance(mu, GridPath):
        n = mu.values.shape[0] - 1
        dt = float(mu.times[1] - mu.times[0])
        times = mu.times
        if y_path is None:
            y_path = np.zeros((n + 1, coeffs.dims.d_obs))

        def pair(i, vals):
            return np.trapezoid(mu.values[i] * vals, dx=mu.grid.spacing)

        def points(i):
            return mu.grid.nodes[:, None]
    else:
        raise InvalidInputError("mu must be a FilterRun or a GridPath")

    w_tilde = np.asarray(w_tilde, dtype=float)
    if w_tilde.shape != (n, coeffs.dims.l_obs):
        raise InvalidInputError("w_tilde does not match the time grid")

    sep = integrands.mode == "separable"
    l_obs = coeffs.dims.l_obs

    def u_grad_hess(i, x):
        if sep:
            phi = integrands.phi
            return (integrands.c[i] * phi.value(x),
                    integrands.c[i] * phi.gradient(x),
                    integrands.c[i] * phi.hessian(x))
        u_val = spline_eval(integrands.grid, integrands.u_vals[i], x[:, 0])
        du = spline_eval(integrands.grid, integrands.u_vals[i], x[:, 0], deriv=1)
        ddu = spline_eval(integrands.grid, integrands.u_vals[i], x[:, 0], deriv=2)
        return u_val, du[:, None], ddu[:, None, None]

    lhs = np.empty(n + 1, dtype=complex)
    for i in range(n + 1):
        u_val, _, _ = u_grad_hess(i, points(i))
        lhs[i] = pair(i, u_val)

    incr = np.empty(n, dtype=complex)
    for i in range(n):
        x = points(i)
        t, yi = times[i], y_path[i]
        f = coeffs.eval_f(t, x, yi)
        a = coeffs.diffusion(t, x, yi)
        gb = coeffs.eval_g_bar(t, x, yi)
        h2 = coeffs.eval_h2(t, x, yi)
        _, _, proj = coeffs.k_projection(t, yi)

        u_val, grad, hess = u_grad_hess(i, x)
        gen = np.einsum("ni,ni->n", f.astype(complex), grad) \
            + 0.5 * np.einsum("nij,nij->n", a.astype(complex), hess)
        b_rows = (np.einsum("ni,nij->nj", grad, gb.astype(complex))
                  + u_val[:, None] * h2) @ proj                     # (N, l')

        if sep:
            sigma_val = integrands.c_dot[i] * integrands.phi.value(x)
            lam_rows = None
        else:
            sigma_val = spline_eval(integrands.grid, integrands.sigma_vals[i], x[:, 0])
            lam_rows = None
            if integrands.lam_vals is not None:
                lam_rows = np.stack(
                    [spline_eval(integrands.grid, integrands.lam_vals[j, i], x[:, 0])
                     for j in range(l_obs)], axis=1)                # (N, l')

        drift = gen + sigma_val
        sto_rows = b_rows
        if lam_rows is not None:
            dlam = np.stack(
                [spline_eval(integrands.grid, integrands.lam_vals[j, i], x[:, 0], deriv=1)
                 for j in range(l_obs)], axis=1)                    # (N, l')
            # sum_j B^j Lam^j: each Lam^j is a scalar field, so build its
            # operator row and keep the j-th component
            b_lam = np.zeros(len(x), dtype=complex)
            gb1 = gb[:, 0, :]                                       # d = 1
            for j in range(l_obs):
                row_j = (dlam[:, j][:, None] * gb1 + lam_rows[:, j][:, None] * h2) @ proj
                b_lam += row_j[:, j]
            drift = drift + b_lam
            sto_rows = sto_rows + lam_rows

        incr[i] = pair(i, drift) * dt + pair(i, sto_rows @ w_tilde[i])

    residual = lhs - lhs[0]
    residual[1:] -= np.cumsum(incr)
    return residual
