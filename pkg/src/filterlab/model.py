"""Filtering problem definitions.

A problem instance couples a hidden signal X in R^d with an observation Y in
R^{d'} through

    dX = f(t,X,Y) dt + g(t,X,Y) dV + gbar(t,X,Y) dW
    dY = h(t,X,Y) dt + k(t,Y) dW,      h = h1(t,Y) + k(t,Y) h2(t,X,Y)

with independent Brownian motions V (dim l) and W (dim l'). The observation
diffusion k may be rectangular and rank-deficient; its Moore-Penrose
pseudo-inverse k+ enters every filtering formula through the projector k+k.

Coefficient evaluables are vectorized over a batch of N points: x has shape
(N, d), y has shape (N, d') (rows paired with x), and

    f -> (N, d)        g -> (N, d, l)        gbar -> (N, d, l')
    h2 -> (N, l')      h1(t, y) -> (N, d')   k(t, y) -> (N, d', l')

Constant (unbatched) return values are broadcast automatically. When a single
observation point is shared by the whole batch (the usual case inside the
filters), a 1-D y of shape (d',) is accepted and broadcast.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .errors import InvalidInputError, ModelEvaluationError
from .pinv import pinv_svd
from .testfunctions import TestFunction


@dataclass(frozen=True)
class Dimensions:
    d: int        # signal
    d_obs: int    # observation
    l: int        # signal-noise
    l_obs: int    # observation-noise

    def __post_init__(self):
        for name in ("d", "d_obs", "l", "l_obs"):
            if getattr(self, name) < 1:
                raise InvalidInputError(f"dimension {name} must be >= 1 "
                                        "(degeneracy is expressed through k = 0)")


def _broadcast(arr, n, suffix, name, t, x=None, y=None):
    arr = np.asarray(arr, dtype=float)
    target = (n,) + suffix
    if arr.shape != target:
        try:
            arr = np.broadcast_to(arr, target)
        except ValueError:
            raise InvalidInputError(
                f"coefficient {name!r} returned shape {arr.shape}, expected {target} or {suffix}"
            ) from None
    if not np.all(np.isfinite(arr)):
        bad = np.nonzero(~np.isfinite(arr.reshape(n, -1)).all(axis=1))[0]
        x0 = None
        if x is not None and len(bad):
            x0 = np.asarray(x)[int(bad[0])]
        y0 = None
        if y is not None and len(bad):
            yarr = np.asarray(y)
            y0 = yarr[int(bad[0])] if yarr.ndim == 2 else yarr
        raise ModelEvaluationError(name, t, x0, y0)
    return np.asarray(arr, dtype=float)


def _y_rows(y, n: int, d_obs: int) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim == 1:
        return np.broadcast_to(y, (n, d_obs))
    return y


@dataclass(frozen=True)
class CoefficientSet:
    """The model functions (f, g, gbar, h1, h2, k) for one filtering problem.

    The composite observation drift h = h1 + k h2 is always derived, never
    stored, so the structural constraint on h cannot be violated.
    ``y_free`` declares that no coefficient reads its y argument; the grid
    duality machinery requires it.
    """

    dims: Dimensions
    f: Callable
    g: Callable
    g_bar: Callable
    h1: Callable
    h2: Callable
    k: Callable
    y_free: bool = False

    # -- batched, validated evaluation ------------------------------------
    def eval_f(self, t, x, y):
        y = _y_rows(y, len(x), self.dims.d_obs)
        return _broadcast(self.f(t, x, y), len(x), (self.dims.d,), "f", t, x, y)

    def eval_g(self, t, x, y):
        y = _y_rows(y, len(x), self.dims.d_obs)
        return _broadcast(self.g(t, x, y), len(x), (self.dims.d, self.dims.l), "g", t, x, y)

    def eval_g_bar(self, t, x, y):
        y = _y_rows(y, len(x), self.dims.d_obs)
        return _broadcast(self.g_bar(t, x, y), len(x), (self.dims.d, self.dims.l_obs),
                          "g_bar", t, x, y)

    def eval_h2(self, t, x, y):
        y = _y_rows(y, len(x), self.dims.d_obs)
        return _broadcast(self.h2(t, x, y), len(x), (self.dims.l_obs,), "h2", t, x, y)

    def eval_h1(self, t, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return _broadcast(self.h1(t, y), len(y), (self.dims.d_obs,), "h1", t, None, y)

    def eval_k(self, t, y):
        y = np.atleast_2d(np.asarray(y, dtype=float))
        return _broadcast(self.k(t, y), len(y), (self.dims.d_obs, self.dims.l_obs),
                          "k", t, None, y)

    def eval_h(self, t, x, y):
        """h(t,x,y) = h1(t,y) + k(t,y) h2(t,x,y), shape (N, d')."""
        yb = _y_rows(y, len(x), self.dims.d_obs)
        h2 = self.eval_h2(t, x, yb)
        k = self.eval_k(t, yb)
        return self.eval_h1(t, yb) + np.einsum("nij,nj->ni", k, h2)

    def diffusion(self, t, x, y):
        """a = g g^T + gbar gbar^T, shape (N, d, d); assembled on the fly."""
        g = self.eval_g(t, x, y)
        gb = self.eval_g_bar(t, x, y)
        return np.einsum("nik,njk->nij", g, g) + np.einsum("nik,njk->nij", gb, gb)

    def k_projection(self, t, y_point):
        """(k, k+, k+k) at a single observation point y of shape (d',)."""
        y_point = np.asarray(y_point, dtype=float).reshape(-1)
        k = self.eval_k(t, y_point[None, :])[0]
        kp = pinv_svd(k)
        return k, kp, kp @ k


def apply_generator(coeffs: CoefficientSet, t: float, x: np.ndarray, y: np.ndarray,
                    phi: TestFunction) -> np.ndarray:
    """The second-order generator applied to phi at a batch of points:

    (A phi)(x) = sum_i f^i d_i phi + 1/2 sum_ij a^ij d_i d_j phi,
    a = g g^T + gbar gbar^T.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    f = coeffs.eval_f(t, x, y)
    a = coeffs.diffusion(t, x, y)
    drift = np.einsum("ni,ni->n", f, phi.gradient(x))
    diff = 0.5 * np.einsum("nij,nij->n", a, phi.hessian(x))
    return drift + diff


def noise_operator_matrix(coeffs: CoefficientSet, t: float, x: np.ndarray, y_point: np.ndarray,
                          phi: TestFunction) -> np.ndarray:
    """All l' first-order noise operators at once, shape (N, l').

    Component j is the operator multiplying the j-th innovation increment in
    the measure evolution:

        B^j phi = (grad phi . [gbar k+k])_j + ([h2^T k+k])_j phi .

    y_point is the single observation point shared by the batch.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    _, _, proj = coeffs.k_projection(t, y_point)
    gb = coeffs.eval_g_bar(t, x, y_point)    # (N, d, l')
    h2 = coeffs.eval_h2(t, x, y_point)       # (N, l')
    grad = phi.gradient(x)                   # (N, d)
    row = np.einsum("ni,nij->nj", grad, gb) + phi.value(x)[:, None] * h2
    return row @ proj


def apply_noise_operator(coeffs: CoefficientSet, j: int, t: float, x: np.ndarray,
                         y_point: np.ndarray, phi: TestFunction) -> np.ndarray:
    """(B^j phi)(x) for one noise component j (0-based, 0 <= j < l')."""
    if not 0 <= j < coeffs.dims.l_obs:
        raise InvalidInputError(f"noise index {j} out of range [0, {coeffs.dims.l_obs})")
    return noise_operator_matrix(coeffs, t, x, y_point, phi)[:, j]


# ---------------------------------------------------------------------------
# Initial laws and scenarios
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GaussianInitialLaw:
    """Gaussian X0 with a deterministic observation start Y0."""

    mean: np.ndarray          # (d,)
    std: np.ndarray           # (d,) independent components
    y0: np.ndarray            # (d_obs,)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        return mean[None, :] + std[None, :] * rng.standard_normal((n, mean.size))

    def density(self, x: np.ndarray) -> np.ndarray:
        """Density at points x of shape (N, d) (independent components)."""
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        std = np.atleast_1d(np.asarray(self.std, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        z = (x - mean[None, :]) / std[None, :]
        return np.exp(-0.5 * np.sum(z**2, axis=1)) / np.prod(np.sqrt(2 * np.pi) * std)


@dataclass(frozen=True)
class ScenarioSpec:
    """A named, fully specified filtering experiment."""

    name: str
    dims: Dimensions
    coeffs: CoefficientSet
    initial_law: GaussianInitialLaw
    horizon: float
    dt: float
    n_particles: int
    n_replicas: int
    seed: int
    declared_bound: Optional[float] = None   # declared sup bound for coefficients/derivatives
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dt <= 0:
            raise InvalidInputError("dt must be positive")
        steps = self.horizon / self.dt
        if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
            raise InvalidInputError(f"dt={self.dt} does not divide horizon={self.horizon}")
        if self.n_particles < 1:
            raise InvalidInputError("n_particles must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.horizon / self.dt))

    def with_updates(self, **kwargs) -> "ScenarioSpec":
        from dataclasses import replace
        return replace(self, **kwargs)


def _x0(x):
    # first signal coordinate of a batch
    return x[:, 0]


def linear_gaussian_params() -> dict:
    """Constants of the affine scenario; shared with the moment-ODE oracle."""
    return {
        "F": -0.6, "f0": 0.2,          # drift f = F x + f0
        "g": 0.7, "g_bar": 0.4,        # constant diffusions
        "k": 1.0,                      # invertible observation diffusion
        "H": 0.9, "h20": 0.1,          # h2 = H x + h20
        "h1": 0.1,                     # constant observation drift offset
        "m0": 0.3, "s0": 0.2,          # X0 ~ N(m0, s0^2)
    }


def _linear_gaussian() -> ScenarioSpec:
    p = linear_gaussian_params()
    dims = Dimensions(1, 1, 1, 1)
    coeffs = CoefficientSet(
        dims=dims,
        f=lambda t, x, y: (p["F"] * _x0(x) + p["f0"])[:, None],
        g=lambda t, x, y: np.full((1, 1), p["g"]),
        g_bar=lambda t, x, y: np.full((1, 1), p["g_bar"]),
        h1=lambda t, y: np.array([p["h1"]]),
        h2=lambda t, x, y: (p["H"] * _x0(x) + p["h20"])[:, None],
        k=lambda t, y: np.array([[p["k"]]]),
        y_free=True,
    )
    law = GaussianInitialLaw(mean=np.array([p["m0"]]), std=np.array([p["s0"]]),
                             y0=np.zeros(1))
    return ScenarioSpec("linear_gaussian", dims, coeffs, law, horizon=1.0, dt=1e-3,
                        n_particles=10_000, n_replicas=100, seed=0, meta=p)


def _degenerate_k0() -> ScenarioSpec:
    # k = 0: the observation is the deterministic flow of h1 and carries no
    # information; the filter must coincide with the prior law of X.
    dims = Dimensions(1, 1, 1, 1)
    coeffs = CoefficientSet(
        dims=dims,
        f=lambda t, x, y: (-0.5 * _x0(x) + 0.3 * np.sin(_x0(x)))[:, None],
        g=lambda t, x, y: np.full((1, 1), 0.6),
        g_bar=lambda t, x, y: np.full((1, 1), 0.4),
        h1=lambda t, y: np.array([0.3]),
        h2=lambda t, x, y: (0.5 * np.cos(_x0(x)))[:, None],
        k=lambda t, y: np.zeros((1, 1)),
        y_free=True,
    )
    law = GaussianInitialLaw(mean=np.array([0.2]), std=np.array([0.3]), y0=np.zeros(1))
    return ScenarioSpec("degenerate_k0", dims, coeffs, law, horizon=1.0, dt=1e-3,
                        n_particles=10_000, n_replicas=100, seed=0)


def _correlated_bounded() -> ScenarioSpec:
    # Everything bounded and smooth (sin/cos/tanh/sech); k is rectangular
    # (2 x 3) with rank 1, so the projector k+k is a genuine projection and
    # I - k+k has rank 2.
    dims = Dimensions(d=1, d_obs=2, l=1, l_obs=3)

    def f(t, x, y):
        x0 = _x0(x)
        return (0.4 * np.sin(x0) + 0.2 * np.cos(y[:, 0]) / np.cosh(x0))[:, None]

    def g(t, x, y):
        return (0.6 + 0.1 * np.cos(_x0(x)))[:, None, None]

    def g_bar(t, x, y):
        x0 = _x0(x)
        out = np.empty((len(x), 1, 3))
        out[:, 0, 0] = 0.3 * np.cos(x0)
        out[:, 0, 1] = 0.2 / np.cosh(x0)
        out[:, 0, 2] = 0.15
        return out

    def h2(t, x, y):
        x0 = _x0(x)
        out = np.empty((len(x), 3))
        out[:, 0] = 0.5 * np.sin(x0)
        out[:, 1] = 0.4 * np.cos(x0 + 0.5 * y[:, 0])
        out[:, 2] = 0.3 * np.tanh(x0)
        return out

    def h1(t, y):
        out = np.empty((len(y), 2))
        out[:, 0] = 0.1
        out[:, 1] = -0.1 + 0.05 * np.tanh(y[:, 1])
        return out

    coeffs = CoefficientSet(
        dims=dims,
        f=f, g=g, g_bar=g_bar,
        h1=h1,
        h2=h2,
        k=lambda t, y: np.array([[0.8, 0.4, 0.0], [0.4, 0.2, 0.0]]),
    )
    law = GaussianInitialLaw(mean=np.array([0.0]), std=np.array([0.5]), y0=np.zeros(2))
    return ScenarioSpec("correlated_bounded", dims, coeffs, law, horizon=1.0, dt=1e-3,
                        n_particles=10_000, n_replicas=100, seed=0, declared_bound=3.0)


def _refinement_study() -> ScenarioSpec:
    # Tuned so time-discretization error dominates particle noise in the
    # weak-form defects: k square invertible makes every innovation increment
    # shared across particles (no private orthogonal draws) and g is small,
    # leaving the shared quadratic-variation fluctuations as the dominant,
    # sqrt(dt)-sized defect. Used by the dt-refinement diagnostics.
    dims = Dimensions(1, 1, 1, 1)

    def f(t, x, y):
        x0 = _x0(x)
        return (0.4 * np.sin(x0) + 0.2 * np.cos(y[:, 0]) / np.cosh(x0))[:, None]

    coeffs = CoefficientSet(
        dims=dims,
        f=f,
        g=lambda t, x, y: np.full((len(x), 1, 1), 0.1),
        g_bar=lambda t, x, y: (0.45 * np.cos(_x0(x)))[:, None, None],
        h1=lambda t, y: np.full((len(y), 1), 0.1),
        h2=lambda t, x, y: (0.9 * np.sin(_x0(x) + 0.3 * y[:, 0]))[:, None],
        k=lambda t, y: np.array([[0.9]]),
    )
    law = GaussianInitialLaw(mean=np.array([0.0]), std=np.array([0.5]), y0=np.zeros(1))
    return ScenarioSpec("refinement_study", dims, coeffs, law, horizon=1.0, dt=1e-3,
                        n_particles=10_000, n_replicas=100, seed=0, declared_bound=3.0)


def _decoupled_classical() -> ScenarioSpec:
    # Coefficients independent of y and uniformly elliptic (g = 1), k square
    # invertible: the configuration the backward dual solver supports.
    dims = Dimensions(1, 1, 1, 1)
    coeffs = CoefficientSet(
        dims=dims,
        f=lambda t, x, y: (-0.8 * np.tanh(0.7 * _x0(x)))[:, None],
        g=lambda t, x, y: np.full((1, 1), 1.0),
        g_bar=lambda t, x, y: np.full((1, 1), 0.3),
        h1=lambda t, y: np.zeros(1),
        h2=lambda t, x, y: (0.6 * np.sin(_x0(x)))[:, None],
        k=lambda t, y: np.array([[1.0]]),
        y_free=True,
    )
    law = GaussianInitialLaw(mean=np.array([0.0]), std=np.array([0.5]), y0=np.zeros(1))
    return ScenarioSpec("decoupled_classical", dims, coeffs, law, horizon=1.0, dt=1e-3,
                        n_particles=10_000, n_replicas=100, seed=0, declared_bound=3.0)


def builtin_scenarios() -> dict[str, ScenarioSpec]:
    """The named benchmark scenarios; look up with .get (unknown name -> None)."""
    scenarios = [_linear_gaussian(), _degenerate_k0(), _correlated_bounded(),
                 _decoupled_classical(), _refinement_study()]
    return {s.name: s for s in scenarios}


# ---------------------------------------------------------------------------
# Sampled assumption checks
# ---------------------------------------------------------------------------

@dataclass
class AssumptionReport:
    """Heuristic, sample-based report; a detector, not a proof.

    For each coefficient: the max local Lipschitz ratio over sampled nearby
    pairs, the max linear-growth ratio ||c(t,x,y)|| / (1+||x||+||y||), and sup
    |c| over an inner and an outer box. A function is flagged unbounded when
    its sup keeps growing with the box, and growth-violating when the growth
    ratio does.
    """

    inner_radius: float
    outer_radius: float
    lipschitz: dict
    growth: dict
    sup: dict
    derivative_sup: Optional[float]
    declared_bound: Optional[float]
    flags: dict

    @property
    def bounded_ok(self) -> bool:
        return not any(v for k, v in self.flags.items() if k.endswith("unbounded"))

    @property
    def growth_ok(self) -> bool:
        return not any(v for k, v in self.flags.items() if k.endswith("superlinear"))


def _coeff_samplers(coeffs: CoefficientSet):
    d_obs, l_obs = coeffs.dims.d_obs, coeffs.dims.l_obs
    return {
        "f": lambda t, x, y: coeffs.eval_f(t, x, y),
        "g": lambda t, x, y: coeffs.eval_g(t, x, y).reshape(len(x), -1),
        "g_bar": lambda t, x, y: coeffs.eval_g_bar(t, x, y).reshape(len(x), -1),
        "h2": lambda t, x, y: coeffs.eval_h2(t, x, y),
        "h": lambda t, x, y: coeffs.eval_h(t, x, y),
        "h1": lambda t, x, y: coeffs.eval_h1(t, _y_rows(y, len(x), d_obs)),
        "k": lambda t, x, y: coeffs.eval_k(t, _y_rows(y, len(x), d_obs)).reshape(len(x), -1),
    }


def check_assumptions(spec: ScenarioSpec, n_samples: int = 256,
                      rng: Optional[np.random.Generator] = None,
                      inner_radius: float = 5.0, outer_radius: float = 50.0) -> AssumptionReport:
    """Sampled existence/uniqueness assumption checks for a scenario.

    Samples points in boxes of two radii and estimates Lipschitz ratios,
    linear-growth ratios and sups. Flags are raised when the outer-box
    statistic exceeds 1.5x the inner-box one (the signature of an unbounded
    or superlinear function). Purely diagnostic.
    """
    if n_samples < 2:
        raise InvalidInputError("n_samples must be >= 2")
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    dims = spec.dims
    samplers = _coeff_samplers(spec.coeffs)
    times = rng.uniform(0.0, spec.horizon, size=4)

    def draw(radius):
        x = rng.uniform(-radius, radius, size=(n_samples, dims.d))
        y = rng.uniform(-radius, radius, size=(n_samples, dims.d_obs))
        return x, y

    lipschitz, growth, sup, flags = {}, {}, {}, {}
    for name, fn in samplers.items():
        lip_max = 0.0
        stats = {}
        for label, radius in (("inner", inner_radius), ("outer", outer_radius)):
            g_max = 0.0
            s_max = 0.0
            for t in times:
                x, y = draw(radius)
                vals = fn(t, x, y)
                norms = np.linalg.norm(vals, axis=1)
                s_max = max(s_max, float(norms.max()))
                g_max = max(g_max, float(np.max(
                    norms / (1.0 + np.linalg.norm(x, axis=1) + np.linalg.norm(y, axis=1)))))
                # local Lipschitz ratio against a perturbed copy
                dx = rng.uniform(-0.1, 0.1, size=x.shape)
                dy = rng.uniform(-0.1, 0.1, size=y.shape)
                vals2 = fn(t, x + dx, y + dy)
                denom = np.linalg.norm(dx, axis=1) + np.linalg.norm(dy, axis=1)
                lip_max = max(lip_max, float(np.max(
                    np.linalg.norm(vals2 - vals, axis=1) / denom)))
            stats[label] = (g_max, s_max)
        lipschitz[name] = lip_max
        growth[name] = (stats["inner"][0], stats["outer"][0])
        sup[name] = (stats["inner"][1], stats["outer"][1])
        flags[f"{name}_unbounded"] = stats["outer"][1] > 1.5 * stats["inner"][1] + 1e-12
        flags[f"{name}_superlinear"] = stats["outer"][0] > 1.5 * stats["inner"][0] + 1e-12

    deriv_sup = None
    if spec.declared_bound is not None:
        deriv_sup = sampled_derivative_sup(spec, n_samples=n_samples, rng=rng,
                                           radius=inner_radius)
        flags["derivative_bound_exceeded"] = deriv_sup > spec.declared_bound

    return AssumptionReport(
        inner_radius=inner_radius, outer_radius=outer_radius,
        lipschitz=lipschitz, growth=growth, sup=sup,
        derivative_sup=deriv_sup, declared_bound=spec.declared_bound, flags=flags,
    )


def sampled_derivative_sup(spec: ScenarioSpec, n_samples: int = 256,
                           rng: Optional[np.random.Generator] = None,
                           radius: float = 5.0, step: float = 1e-5) -> float:
    """Max sampled magnitude of f, g, gbar, h2 and their first x/y derivatives.

    Central finite differences at random points; the user's declared
    smoothness order is recorded, not verified beyond this sampling.
    """
    if rng is None:
        rng = np.random.default_rng(spec.seed + 1)
    dims = spec.dims
    samplers = {k: v for k, v in _coeff_samplers(spec.coeffs).items()
                if k in ("f", "g", "g_bar", "h2")}
    worst = 0.0
    for name, fn in samplers.items():
        for t in rng.uniform(0.0, spec.horizon, size=2):
            x = rng.uniform(-radius, radius, size=(n_samples, dims.d))
            y = rng.uniform(-radius, radius, size=(n_samples, dims.d_obs))
            worst = max(worst, float(np.max(np.abs(fn(t, x, y)))))
            for i in range(dims.d):
                e = np.zeros(dims.d)
                e[i] = step
                fd = (fn(t, x + e, y) - fn(t, x - e, y)) / (2 * step)
                worst = max(worst, float(np.max(np.abs(fd))))
            for i in range(dims.d_obs):
                e = np.zeros(dims.d_obs)
                e[i] = step
                fd = (fn(t, x, y + e) - fn(t, x, y - e)) / (2 * step)
                worst = max(worst, float(np.max(np.abs(fd))))
    return worst
