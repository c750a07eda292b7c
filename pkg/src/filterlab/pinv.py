"""Moore-Penrose pseudo-inverse, two ways.

``pinv_svd`` is the numerically robust route (singular value decomposition
with a relative rank cutoff).  ``pinv_minor`` realizes the explicit
construction through a full-rank factorization A = F G selected by minor
enumeration,

    A+ = G^T (F^T A G^T)^{-1} F^T,

which exists mainly to validate that construction; its cost is combinatorial
and dimensions are capped.  Both satisfy the four defining identities

    A A+ A = A,   A+ A A+ = A+,   (A+ A)^T = A+ A,   (A A+)^T = A A+,

and A+ A is an orthogonal projector with spectral norm at most 1.

Matrices are plain 2-D float arrays.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from itertools import combinations

import numpy as np

from .errors import DegenerateSelectionError, InvalidInputError

# The minor enumeration grows like C(d+l, d); cap the explicit route.
MINOR_DIM_CAP = 8

DEFAULT_RANK_TOL = 1e-12
DEFAULT_DET_TOL = 1e-10


def _as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise InvalidInputError(f"expected a 2-D matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInputError("matrix has non-finite entries")
    return a


@dataclass(frozen=True)
class FullRankFactorization:
    """Record of the minor-selected factorization A = F G.

    ``minor_index`` is the 1-based position of the selected minor in the fixed
    enumeration (index 1 is the conventional order-0 minor whose determinant
    is defined to be 0, so the zero matrix reports minor_index 1).
    ``column_selection`` holds the r column indices defining the permutation
    submatrix P1 with F = A P1.
    """

    rank: int
    F: np.ndarray
    G: np.ndarray
    minor_index: int
    column_selection: tuple[int, ...]
    row_selection: tuple[int, ...]


@lru_cache(maxsize=64)
def minor_enumeration(rows: int, cols: int) -> tuple[tuple[int, tuple[int, ...], tuple[int, ...]], ...]:
    """Fixed enumeration of all minors of a rows x cols matrix.

    Entry 0 is the conventional order-0 minor. Orders increase, and within an
    order (row-set, column-set) pairs are in lexicographic order. The
    enumeration only depends on the shape, so the same minor_index always
    refers to the same submatrix.
    """
    out = [(0, (), ())]
    for order in range(1, min(rows, cols) + 1):
        for rsel in combinations(range(rows), order):
            for csel in combinations(range(cols), order):
                out.append((order, rsel, csel))
    return tuple(out)


def minor_determinants(a) -> np.ndarray:
    """Determinants of every enumerated minor of ``a`` (entry 0 is 0)."""
    a = _as_matrix(a)
    d, l = a.shape
    dets = [0.0]
    for order in range(1, min(d, l) + 1):
        rsel = np.array(list(combinations(range(d), order)))      # (nr, order)
        csel = np.array(list(combinations(range(l), order)))      # (nc, order)
        sub = a[rsel[:, None, :, None], csel[None, :, None, :]]   # (nr, nc, order, order)
        dets.append(np.linalg.det(sub).reshape(-1))
    return np.concatenate([np.atleast_1d(np.asarray(v, dtype=float)) for v in dets])


def _minor_scales(a: np.ndarray) -> np.ndarray:
    """Hadamard bounds matching the enumeration: product of submatrix row norms.

    Used to decide "non-zero" scale-relatively; |det|/scale is invariant under
    rescaling of the matrix, which keeps the rank decision consistent with the
    SVD route for both tiny and large entries.
    """
    d, l = a.shape
    scales = [1.0]
    for order in range(1, min(d, l) + 1):
        rsel = np.array(list(combinations(range(d), order)))
        csel = np.array(list(combinations(range(l), order)))
        sub = a[rsel[:, None, :, None], csel[None, :, None, :]]
        rownorms = np.linalg.norm(sub, axis=-1)                   # (nr, nc, order)
        scales.append(np.prod(rownorms, axis=-1).reshape(-1))
    return np.concatenate([np.atleast_1d(np.asarray(v, dtype=float)) for v in scales])


def pinv_svd(a, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """Pseudo-inverse via SVD.

    Singular values are kept when they exceed
    rank_tol * (largest singular value) * max(rows, cols).
    """
    a = _as_matrix(a)
    if rank_tol <= 0:
        raise InvalidInputError("rank_tol must be positive")
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    cutoff = rank_tol * (s[0] if s.size else 0.0) * max(a.shape)
    keep = s > cutoff
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (vt.T * inv_s) @ u.T


def pinv_minor(a, det_tol: float = DEFAULT_DET_TOL) -> tuple[np.ndarray, FullRankFactorization]:
    """Pseudo-inverse via the minor-selected full-rank factorization.

    All minors are enumerated in the fixed order of ``minor_enumeration``; the
    selected minor is the highest-indexed one whose determinant is non-zero,
    where non-zero means |det| > det_tol * hadamard_bound(minor). Its order is
    the rank r, its columns give F = A P1, G is the unique solution of A = FG,
    and A+ = G^T (F^T A G^T)^{-1} F^T. Rank 0 returns the zero matrix and the
    conventional minor_index 1.
    """
    a = _as_matrix(a)
    if det_tol <= 0:
        raise InvalidInputError("det_tol must be positive")
    d, l = a.shape
    if max(d, l) > MINOR_DIM_CAP:
        raise InvalidInputError(
            f"pinv_minor is capped at {MINOR_DIM_CAP}x{MINOR_DIM_CAP}; use pinv_svd"
        )

    dets = minor_determinants(a)
    scales = _minor_scales(a)
    nonzero = np.abs(dets) > det_tol * scales
    if not nonzero.any():
        fact = FullRankFactorization(
            rank=0,
            F=np.zeros((d, 0)),
            G=np.zeros((0, l)),
            minor_index=1,
            column_selection=(),
            row_selection=(),
        )
        return np.zeros((l, d)), fact

    idx0 = int(np.nonzero(nonzero)[0][-1])        # 0-based position in the enumeration
    order, rsel, csel = minor_enumeration(d, l)[idx0]
    minor_index = idx0 + 1

    f = a[:, csel]                                # A P1, shape (d, r)
    # G is the coefficient matrix expressing the columns of A in the basis
    # given by the columns of F; F has full column rank so F^T F is invertible.
    gram = f.T @ f
    try:
        g = np.linalg.solve(gram, f.T @ a)        # (r, l)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSelectionError(minor_index, str(exc)) from None

    core = f.T @ a @ g.T                          # (r, r)
    try:
        core_inv = np.linalg.inv(core)
    except np.linalg.LinAlgError as exc:
        raise DegenerateSelectionError(minor_index, str(exc)) from None
    if not np.all(np.isfinite(core_inv)):
        raise DegenerateSelectionError(minor_index, "non-finite inverse")

    pinv = g.T @ core_inv @ f.T
    # One Newton step X <- 2X - XAX polishes the rounding of the explicit
    # inversion (quadratic local convergence toward the unique pseudo-inverse;
    # rank and factorization stay as constructed). Without it, matrices with
    # condition ~1e4 keep ~u*kappa^2 errors from the (F^T A G^T)^{-1} solve.
    pinv = 2 * pinv - pinv @ a @ pinv
    fact = FullRankFactorization(
        rank=order,
        F=f,
        G=g,
        minor_index=minor_index,
        column_selection=tuple(int(c) for c in csel),
        row_selection=tuple(int(r) for r in rsel),
    )
    return pinv, fact


def projector(a, rank_tol: float = DEFAULT_RANK_TOL) -> np.ndarray:
    """The orthogonal projector A+ A (symmetric, idempotent, spectral norm <= 1).

    Computed as V_r V_r^T from the right singular vectors of the retained
    rank, which is the same matrix as A+ A but keeps the norm within rounding
    of 1 even for badly conditioned inputs (the explicit product loses
    u * kappa(A)).
    """
    a = _as_matrix(a)
    if rank_tol <= 0:
        raise InvalidInputError("rank_tol must be positive")
    _, s, vt = np.linalg.svd(a, full_matrices=False)
    cutoff = rank_tol * (s[0] if s.size else 0.0) * max(a.shape)
    vr = vt[s > cutoff]
    return vr.T @ vr


def penrose_residuals(a, a_pinv) -> dict[str, float]:
    """Relative residuals of the four defining identities for a candidate A+."""
    a = _as_matrix(a)
    p = np.asarray(a_pinv, dtype=float)
    scale_a = max(np.linalg.norm(a), 1e-300)
    scale_p = max(np.linalg.norm(p), 1e-300)
    ap = a @ p
    pa = p @ a
    return {
        "a_ap_a": np.linalg.norm(ap @ a - a) / scale_a,
        "ap_a_ap": np.linalg.norm(pa @ p - p) / scale_p,
        "pa_symmetric": np.linalg.norm(pa - pa.T) / max(np.linalg.norm(pa), 1.0),
        "ap_symmetric": np.linalg.norm(ap - ap.T) / max(np.linalg.norm(ap), 1.0),
    }
