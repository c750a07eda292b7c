"""Finite measures as weighted particle ensembles.

An ensemble (points x_i, weights w_i >= 0) represents the measure
sum_i w_i delta_{x_i}; the pairing mu(phi) = sum_i w_i phi(x_i) is the only
way the rest of the package reads a measure. Normalized ensembles (total
mass exactly 1) represent conditional laws, unnormalized ones their
mass-carrying versions.

Weights are kept in linear scale; the filter layer works in log scale and
converts through ``weights_from_log``, which rescales before exponentiating
once any log-weight leaves [-575, 575] (about 1e+-250) and returns the scale
factor separately.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import DegenerateMeasureError, InvalidInputError
from .testfunctions import TestFunction

LOG_GUARD = 575.0   # exp(575) ~ 2.6e249


@dataclass(frozen=True)
class WeightedEnsemble:
    points: np.ndarray    # (N, d)
    weights: np.ndarray   # (N,), nonnegative
    t: float = 0.0

    def __post_init__(self):
        points = np.atleast_2d(np.asarray(self.points, dtype=float))
        weights = np.asarray(self.weights, dtype=float)
        if points.shape[0] != weights.shape[0]:
            raise InvalidInputError("points and weights must have equal length")
        if not np.all(np.isfinite(points)) or not np.all(np.isfinite(weights)):
            raise InvalidInputError("ensemble has non-finite entries")
        if np.any(weights < 0):
            raise InvalidInputError("weights must be nonnegative")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def mass(self) -> float:
        # fsum: correctly rounded, so "mass exactly 1" is a stable statement
        return math.fsum(self.weights)


def integrate(mu: WeightedEnsemble, phi: TestFunction) -> float:
    """mu(phi) = sum_i w_i phi(x_i)."""
    vals = np.asarray(phi.value(mu.points), dtype=float)
    if not np.all(np.isfinite(vals)):
        raise InvalidInputError(f"test function {phi.name!r} returned non-finite values")
    return float(mu.weights @ vals)


def integrate_values(mu: WeightedEnsemble, values: np.ndarray):
    """Pairing against precomputed (possibly complex) per-point values."""
    values = np.asarray(values)
    if values.shape[0] != mu.n:
        raise InvalidInputError("values length does not match ensemble size")
    return mu.weights @ values


def normalize(mu: WeightedEnsemble) -> WeightedEnsemble:
    """Scale weights to total mass exactly 1; points unchanged.

    The rounding defect of the division is folded into the largest weight so
    the mass is exactly 1.0 and renormalizing is a bitwise no-op.
    """
    total = mu.mass
    if total <= 0.0:
        raise DegenerateMeasureError("cannot normalize an ensemble with zero mass")
    w = mu.weights / total
    for _ in range(8):
        defect = 1.0 - math.fsum(w)
        if defect == 0.0:
            break
        w = w.copy()
        w[int(np.argmax(w))] += defect
    return replace(mu, weights=w)


def effective_sample_size(mu: WeightedEnsemble) -> float:
    """(sum w)^2 / sum w^2, between 1 and N."""
    total = mu.mass
    if total <= 0.0:
        raise DegenerateMeasureError("effective sample size needs positive mass")
    return float(total**2 / np.sum(mu.weights**2))


def weights_from_log(log_w: np.ndarray) -> tuple[np.ndarray, float]:
    """(weights, log_scale) with weights = exp(log_w - log_scale).

    log_scale is 0 while all log-weights are inside the guard band, so the
    linear weights are exact; otherwise the max log-weight is factored out.
    """
    log_w = np.asarray(log_w, dtype=float)
    m = float(np.max(log_w)) if log_w.size else 0.0
    if abs(m) <= LOG_GUARD and float(np.min(log_w)) >= -LOG_GUARD:
        return np.exp(log_w), 0.0
    return np.exp(log_w - m), m


def export_ensemble_csv(mu: WeightedEnsemble, path) -> str:
    """CSV snapshot with columns x_1..x_d, weight."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    d = mu.points.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([f"x_{i+1}" for i in range(d)] + ["weight"])
        for xi, wi in zip(mu.points, mu.weights):
            writer.writerow([f"{v:.17g}" for v in xi] + [f"{wi:.17g}"])
    return str(path)
