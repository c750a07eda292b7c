"""Test functions phi with analytic gradient and hessian.

All evaluables are vectorized over a batch of points: value maps (N, d) to
(N,), gradient to (N, d), hessian to (N, d, d). The built-in bounded family
(Gaussian bumps, tanh ramps, sech) is smooth with bounded derivatives of all
orders, as the weak-form pairings require; coordinate/square monomials are
provided for moment diagnostics and are flagged unbounded.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class TestFunction:
    name: str
    value: Callable[[np.ndarray], np.ndarray]
    gradient: Callable[[np.ndarray], np.ndarray]
    hessian: Callable[[np.ndarray], np.ndarray]
    bounded: bool = True

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.value(x)

    def check_derivatives(self, points: np.ndarray, tol: float = 1e-5, step: float = 1e-6) -> float:
        """Max discrepancy between analytic and central finite-difference derivatives.

        Raises AssertionError when it exceeds ``tol``; returns the discrepancy.
        """
        points = np.atleast_2d(np.asarray(points, dtype=float))
        n, d = points.shape
        worst = 0.0
        grad = self.gradient(points)
        hess = self.hessian(points)
        for i in range(d):
            e = np.zeros(d)
            e[i] = step
            fd_g = (self.value(points + e) - self.value(points - e)) / (2 * step)
            worst = max(worst, float(np.max(np.abs(fd_g - grad[:, i]))))
            fd_h = (self.gradient(points + e) - self.gradient(points - e)) / (2 * step)
            worst = max(worst, float(np.max(np.abs(fd_h - hess[:, :, i]))))
        if worst > tol:
            raise AssertionError(f"{self.name}: derivative mismatch {worst:.3e} > {tol:.1e}")
        return worst


def _batch(x):
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    return x


def constant_one() -> TestFunction:
    """phi = 1; pairs a measure with its total mass."""
    return TestFunction(
        name="one",
        value=lambda x: np.ones(_batch(x).shape[0]),
        gradient=lambda x: np.zeros_like(_batch(x)),
        hessian=lambda x: np.zeros(_batch(x).shape + (_batch(x).shape[1],)),
    )


def coordinate(i: int = 0) -> TestFunction:
    def grad(x):
        x = _batch(x)
        g = np.zeros_like(x)
        g[:, i] = 1.0
        return g

    return TestFunction(
        name=f"x{i}",
        value=lambda x: _batch(x)[:, i],
        gradient=grad,
        hessian=lambda x: np.zeros(_batch(x).shape + (_batch(x).shape[1],)),
        bounded=False,
    )


def coordinate_square(i: int = 0) -> TestFunction:
    def grad(x):
        x = _batch(x)
        g = np.zeros_like(x)
        g[:, i] = 2.0 * x[:, i]
        return g

    def hess(x):
        x = _batch(x)
        h = np.zeros(x.shape + (x.shape[1],))
        h[:, i, i] = 2.0
        return h

    return TestFunction(
        name=f"x{i}_sq",
        value=lambda x: _batch(x)[:, i] ** 2,
        gradient=grad,
        hessian=hess,
        bounded=False,
    )


def gaussian_bump(center: float = 0.0, width: float = 1.0, axis: int = 0) -> TestFunction:
    """exp(-(x_axis - center)^2 / (2 width^2)) on the chosen coordinate."""

    def z(x):
        return (_batch(x)[:, axis] - center) / width

    def value(x):
        return np.exp(-0.5 * z(x) ** 2)

    def grad(x):
        xb = _batch(x)
        g = np.zeros_like(xb)
        g[:, axis] = -z(x) / width * value(x)
        return g

    def hess(x):
        xb = _batch(x)
        h = np.zeros(xb.shape + (xb.shape[1],))
        h[:, axis, axis] = (z(x) ** 2 - 1.0) / width**2 * value(x)
        return h

    return TestFunction(name=f"gauss[{center:g},{width:g}]", value=value, gradient=grad, hessian=hess)


def tanh_ramp(scale: float = 1.0, axis: int = 0) -> TestFunction:
    def value(x):
        return np.tanh(scale * _batch(x)[:, axis])

    def grad(x):
        xb = _batch(x)
        g = np.zeros_like(xb)
        g[:, axis] = scale / np.cosh(scale * xb[:, axis]) ** 2
        return g

    def hess(x):
        xb = _batch(x)
        h = np.zeros(xb.shape + (xb.shape[1],))
        s = scale * xb[:, axis]
        h[:, axis, axis] = -2.0 * scale**2 * np.tanh(s) / np.cosh(s) ** 2
        return h

    return TestFunction(name=f"tanh[{scale:g}]", value=value, gradient=grad, hessian=hess)


def sech_bump(scale: float = 1.0, axis: int = 0) -> TestFunction:
    """1/cosh(scale * x_axis); bounded, integrable, exponentially decaying."""

    def value(x):
        return 1.0 / np.cosh(scale * _batch(x)[:, axis])

    def grad(x):
        xb = _batch(x)
        s = scale * xb[:, axis]
        g = np.zeros_like(xb)
        g[:, axis] = -scale * np.tanh(s) / np.cosh(s)
        return g

    def hess(x):
        xb = _batch(x)
        s = scale * xb[:, axis]
        h = np.zeros(xb.shape + (xb.shape[1],))
        h[:, axis, axis] = scale**2 * (np.tanh(s) ** 2 - 1.0 / np.cosh(s) ** 2) / np.cosh(s)
        return h

    return TestFunction(name=f"sech[{scale:g}]", value=value, gradient=grad, hessian=hess)


def sin_wave(freq: float = 1.0, axis: int = 0) -> TestFunction:
    def value(x):
        return np.sin(freq * _batch(x)[:, axis])

    def grad(x):
        xb = _batch(x)
        g = np.zeros_like(xb)
        g[:, axis] = freq * np.cos(freq * xb[:, axis])
        return g

    def hess(x):
        xb = _batch(x)
        h = np.zeros(xb.shape + (xb.shape[1],))
        h[:, axis, axis] = -(freq**2) * np.sin(freq * xb[:, axis])
        return h

    return TestFunction(name=f"sin[{freq:g}]", value=value, gradient=grad, hessian=hess)


def shifted_gaussian_moment(center: float = 0.0, width: float = 1.0, axis: int = 0) -> TestFunction:
    """(x - center) * exp(-(x-center)^2/(2 width^2)): odd bump, bounded."""
    base = gaussian_bump(center, width, axis)

    def value(x):
        xb = _batch(x)
        return (xb[:, axis] - center) * base.value(x)

    def grad(x):
        xb = _batch(x)
        g = (xb[:, axis] - center)[:, None] * base.gradient(x)
        g[:, axis] += base.value(x)
        return g

    def hess(x):
        xb = _batch(x)
        u = xb[:, axis] - center
        h = u[:, None, None] * base.hessian(x)
        gb = base.gradient(x)
        h[:, axis, :] += gb
        h[:, :, axis] += gb
        return h

    return TestFunction(name=f"xgauss[{center:g},{width:g}]", value=value, gradient=grad, hessian=hess)


def standard_probe_set() -> list[TestFunction]:
    """Default bounded smooth probes used by the weak-form diagnostics."""
    return [
        gaussian_bump(0.0, 1.0),
        tanh_ramp(1.0),
        sech_bump(1.0),
        shifted_gaussian_moment(0.0, 1.5),
        gaussian_bump(0.8, 0.7),
    ]


REGISTRY: dict[str, Callable[[], TestFunction]] = {
    "one": constant_one,
    "gauss_bump": lambda: gaussian_bump(0.0, 1.0),
    "gauss_off": lambda: gaussian_bump(0.8, 0.7),
    "xgauss": lambda: shifted_gaussian_moment(0.0, 1.5),
    "tanh": lambda: tanh_ramp(1.0),
    "sech": lambda: sech_bump(1.0),
    "sin": lambda: sin_wave(1.0),
    "x": coordinate,
    "x_sq": coordinate_square,
}


def by_name(name: str) -> TestFunction:
    try:
        return REGISTRY[name]()
    except KeyError:
        raise KeyError(f"unknown test function {name!r}; known: {sorted(REGISTRY)}") from None
