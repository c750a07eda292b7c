"""Two routes to the Moore-Penrose pseudo-inverse.

The SVD route is the workhorse; the minor-enumeration route builds the
full-rank factorization A = FG from the highest-indexed invertible minor and
applies A+ = G^T (F^T A G^T)^{-1} F^T. Both must satisfy the four defining
identities, agree with each other, and produce a contraction projector A+A.
The map A -> A+ is famously discontinuous at rank drops, which the last block
makes visible.
"""

import numpy as np

from filterlab.pinv import (minor_enumeration, penrose_residuals, pinv_minor,
                            pinv_svd, projector)

rng = np.random.default_rng(7)

print("=== a rank-deficient rectangular example ===")
a = rng.uniform(-1, 1, (4, 2)) @ rng.uniform(-1, 1, (2, 5))   # rank 2, 4 x 5
p_svd = pinv_svd(a)
p_minor, fact = pinv_minor(a)
print(f"shape {a.shape}, factorization rank {fact.rank}, "
      f"selected minor index {fact.minor_index} of {len(minor_enumeration(4, 5))}")
print(f"columns picked for F: {fact.column_selection}")
print(f"route agreement (max abs diff): {np.abs(p_svd - p_minor).max():.2e}")
print("Penrose residuals (SVD route):")
for name, val in penrose_residuals(a, p_svd).items():
    print(f"  {name:14s} {val:.2e}")

print("\n=== the projector A+A ===")
p = projector(a)
print(f"symmetric: {np.abs(p - p.T).max():.2e}, "
      f"idempotent: {np.abs(p @ p - p).max():.2e}, "
      f"spectral norm: {np.linalg.norm(p, 2):.15f}  (never exceeds 1)")

print("\n=== degenerate and trivial cases ===")
print("zero 2x3 matrix ->", pinv_svd(np.zeros((2, 3))).shape, "zero matrix;",
      "minor route reports rank", pinv_minor(np.zeros((2, 3)))[1].rank,
      "and the conventional minor index",
      pinv_minor(np.zeros((2, 3)))[1].minor_index)
print("diag(2, 0)      -> diag(0.5, 0):",
      np.allclose(pinv_svd(np.diag([2.0, 0.0])), np.diag([0.5, 0.0])))

print("\n=== discontinuity at rank drops ===")
for eps in (1e-2, 1e-6, 0.0):
    val = pinv_svd(np.array([[eps]]))[0, 0]
    print(f"  pinv([[{eps:g}]]) = [[{val:g}]]")
print("the pseudo-inverse blows up along eps -> 0 yet jumps to 0 in the limit,")
print("which is why the rank decision carries explicit tolerances.")
