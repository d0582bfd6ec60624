"""Proximal solvers on a toy problem.

Run with ``python3 demos/01_solvers.py``.
"""
import numpy as np

from kinverify.optim import (fit_l1_logistic, fit_trace_norm_bilinear, prox_trace_norm,
                             soft_threshold, trace_norm)

rng = np.random.default_rng(0)

# Soft-thresholding shrinks every entry toward zero by tau.
print(soft_threshold(np.array([-2.0, -0.3, 0.0, 0.4, 3.0]), 0.5))

# The trace-norm prox does the same to singular values, so it lowers rank.
M = rng.standard_normal((6, 6))
for tau in (0.0, 1.0, 2.0):
    P = prox_trace_norm(M, tau)
    print("tau=%.1f  rank=%d  ||P||_*=%.3f" % (tau, np.linalg.matrix_rank(P, 1e-10),
                                              trace_norm(P)))

# A rank-1 bilinear rule: y = sign(x^T a b^T z).
a, b = rng.standard_normal((2, 8))
X, Z = rng.standard_normal((2, 400, 8))
y = np.sign((X @ a) * (Z @ b)).astype(int)

fit = fit_trace_norm_bilinear(X, Z, y, lam=2.0)
s = np.linalg.svd(fit.W, compute_uv=False)
print("iterations", fit.n_iter, "converged", fit.converged)
print("leading singular values", np.round(s[:3], 3))
print("objective never rises:", bool(np.all(np.diff(fit.objective_trace) <= 1e-9)))

# L1 logistic regression keeps only the informative coordinates.
A = rng.standard_normal((300, 20))
labels = np.where(A[:, 3] - A[:, 11] > 0, 1, -1)
l1 = fit_l1_logistic(A, labels, gamma=5.0)
print("non-zero weights at", np.flatnonzero(np.abs(l1.u) > 1e-8))
