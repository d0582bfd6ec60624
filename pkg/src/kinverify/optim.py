"""Regularized logistic-regression solvers.

Two composite problems share one accelerated proximal-gradient loop:

* trace-norm regularized bilinear logistic regression, used to learn the
  parent/child similarity matrices;
* L1 regularized linear logistic regression, used for feature voting.

A small L2-regularized logistic fit (score combiners, calibration, the
concatenation baseline) is also provided; it is smooth, so it goes through
L-BFGS instead.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize, special


@dataclass(frozen=True)
class SolverConfig:
    """Stopping and step-size settings for the proximal solvers."""

    max_iterations: int = 500
    step_size_init: float = 1.0
    tolerance: float = 1e-7
    seed: int = 0

    def __post_init__(self):
        if int(self.max_iterations) < 1:
            raise ValueError("max_iterations must be >= 1")
        if not self.step_size_init > 0:
            raise ValueError("step_size_init must be positive")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in an unsigned 64-bit integer")


@dataclass
class TraceNormFit:
    W: np.ndarray
    b: float
    objective_trace: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


@dataclass
class L1Fit:
    u: np.ndarray
    objective_trace: list = field(default_factory=list)
    n_iter: int = 0
    converged: bool = False


def sigmoid(x):
    """Logistic function ``1 / (1 + exp(-x))``, overflow free."""
    return special.expit(x)


def soft_threshold(v, tau):
    """Elementwise ``sign(v) * max(|v| - tau, 0)``."""
    if tau < 0:
        raise ValueError("threshold must be non-negative, got %r" % (tau,))
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - tau, 0.0)


def prox_trace_norm(M, tau):
    """Proximal operator of ``tau * ||.||_*`` (singular value thresholding).

    Parameters
    ----------
    M : ndarray, shape (p, q)
    tau : float
        Non-negative threshold applied to the singular values.

    Returns
    -------
    ndarray, shape (p, q)
    """
    M = np.asarray(M, dtype=float)
    if tau < 0:
        raise ValueError("threshold must be non-negative, got %r" % (tau,))
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    if M.size == 0:
        return M.copy()
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]


def trace_norm(M):
    return float(np.linalg.svd(M, compute_uv=False).sum()) if M.size else 0.0


def _logloss(margins):
    # sum_i log(1 + exp(-m_i))
    return float(np.logaddexp(0.0, -margins).sum())


def _check_labels(labels, n):
    y = np.asarray(labels, dtype=float).ravel()
    if y.shape[0] != n:
        raise ValueError("got %d labels for %d samples" % (y.shape[0], n))
    if not np.all((y == 1) | (y == -1)):
        raise ValueError("labels must be +1 or -1")
    if not (np.any(y > 0) and np.any(y < 0)):
        raise ValueError("labels must contain both classes")
    return y


class BilinearLogisticProblem:
    """Smooth part ``sum_i log(1 + exp(-y_i (l_i^T W r_i + b)))``.

    Parameters are packed into a flat vector ``[vec(W), b]``.
    """

    def __init__(self, left, right, labels):
        self.left = np.atleast_2d(np.asarray(left, dtype=float))
        self.right = np.atleast_2d(np.asarray(right, dtype=float))
        if self.left.shape[0] != self.right.shape[0]:
            raise ValueError(
                "left has %d rows but right has %d"
                % (self.left.shape[0], self.right.shape[0])
            )
        if self.left.shape[0] < 2:
            raise ValueError("need at least two samples")
        self.y = _check_labels(labels, self.left.shape[0])
        self.shape = (self.left.shape[1], self.right.shape[1])

    @property
    def n_params(self):
        return self.shape[0] * self.shape[1] + 1

    def unpack(self, x):
        return x[:-1].reshape(self.shape), x[-1]

    def scores(self, W, b):
        return np.einsum("ij,ij->i", self.left @ W, self.right) + b

    def value(self, x):
        W, b = self.unpack(x)
        return _logloss(self.y * self.scores(W, b))

    def value_and_grad(self, x):
        W, b = self.unpack(x)
        m = self.y * self.scores(W, b)
        # d/dz log(1 + exp(-y z)) = -y * sigmoid(-y z)
        g = -self.y * sigmoid(-m)
        gW = self.left.T @ (g[:, None] * self.right)
        return _logloss(m), np.concatenate([gW.ravel(), [g.sum()]])


class LinearLogisticProblem:
    """Smooth part ``sum_i log(1 + exp(-y_i <u, a_i>))``; no intercept."""

    def __init__(self, samples, labels):
        self.A = np.atleast_2d(np.asarray(samples, dtype=float))
        if self.A.shape[0] < 2:
            raise ValueError("need at least two samples")
        self.y = _check_labels(labels, self.A.shape[0])

    @property
    def n_params(self):
        return self.A.shape[1]

    def value(self, u):
        return _logloss(self.y * (self.A @ u))

    def value_and_grad(self, u):
        m = self.y * (self.A @ u)
        g = -self.y * sigmoid(-m)
        return _logloss(m), self.A.T @ g


def logistic_gradient_check(problem, point, h=1e-5):
    """Compare the analytic gradient of ``problem`` with central differences.

    Returns the relative error ``||g_analytic - g_fd||_inf / max(||g_analytic||_inf,
    ||g_fd||_inf)``; 0.0 when both gradients vanish.
    """
    x = np.array(point, dtype=float)
    _, g = problem.value_and_grad(x)
    fd = np.empty_like(x)
    for j in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[j] += h
        xm[j] -= h
        fd[j] = (problem.value(xp) - problem.value(xm)) / (2 * h)
    scale = max(np.abs(g).max(), np.abs(fd).max())
    if scale == 0:
        return 0.0
    return float(np.abs(g - fd).max() / scale)


def _fista(problem, prox, penalty, x0, cfg):
    """Accelerated proximal gradient with backtracking and monotone restart.

    ``prox(v, t)`` evaluates the proximal map of ``t * penalty`` at ``v``.
    Returns ``(x, objective_trace, n_iter, converged)``; the trace holds the
    composite objective of the accepted iterate, starting with ``x0``.
    """
    x = x0.copy()
    fx = problem.value(x)
    Fx = fx + penalty(x)
    trace = [Fx]
    L = 1.0 / cfg.step_size_init
    y, t = x.copy(), 1.0
    converged = False
    it = 0
    for it in range(1, int(cfg.max_iterations) + 1):
        fy, gy = problem.value_and_grad(y)
        while True:
            z = prox(y - gy / L, 1.0 / L)
            fz = problem.value(z)
            dz = z - y
            bound = fy + gy @ dz + 0.5 * L * (dz @ dz)
            if fz <= bound + 1e-12 * max(1.0, abs(bound)) or L > 1e300:
                break
            L *= 2.0
        Fz = fz + penalty(z)
        if Fz > Fx:
            if t == 1.0 and np.array_equal(y, x):
                # a plain step from x failed to descend; numerically stalled
                converged = True
                trace.append(Fx)
                break
            y, t = x.copy(), 1.0
            trace.append(Fx)
            continue
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        y = z + ((t - 1.0) / t_next) * (z - x)
        x, t = z, t_next
        change = abs(Fx - Fz)
        Fx = Fz
        trace.append(Fx)
        if change <= cfg.tolerance * max(abs(trace[-2]), 1e-300):
            converged = True
            break
    return x, trace, it, converged


def fit_trace_norm_bilinear(left, right, labels, lam, cfg=None):
    """Minimize ``sum_i log(1 + exp(-y_i (l_i^T W r_i + b))) + lam * ||W||_*``.

    The bias is unpenalized. Starts from ``W = 0`` with ``b`` at the
    base-rate logit, the optimum of the intercept-only model.

    Parameters
    ----------
    left : array_like, shape (n, p)
    right : array_like, shape (n, q)
    labels : array_like of {+1, -1}, shape (n,)
    lam : float
        Trace-norm weight, must be positive.
    cfg : SolverConfig, optional

    Returns
    -------
    TraceNormFit
    """
    if not lam > 0:
        raise ValueError("lam must be positive")
    cfg = cfg or SolverConfig()
    problem = BilinearLogisticProblem(left, right, labels)
    p, q = problem.shape

    def prox(v, step):
        out = v.copy()
        out[:-1] = prox_trace_norm(v[:-1].reshape(p, q), step * lam).ravel()
        return out

    def penalty(v):
        return lam * trace_norm(v[:-1].reshape(p, q))

    x0 = np.zeros(problem.n_params)
    rate = np.mean(np.asarray(labels) > 0)
    if 0 < rate < 1:
        x0[-1] = np.log(rate / (1 - rate))
    x, trace, n_iter, converged = _fista(problem, prox, penalty, x0, cfg)
    W, b = problem.unpack(x)
    return TraceNormFit(W.copy(), float(b), trace, n_iter, converged)


def fit_l1_logistic(samples, labels, gamma, cfg=None):
    """Minimize ``sum_i log(1 + exp(-y_i <u, a_i>)) + gamma * ||u||_1`` from ``u = 0``."""
    if not gamma > 0:
        raise ValueError("gamma must be positive")
    cfg = cfg or SolverConfig()
    problem = LinearLogisticProblem(samples, labels)
    x, trace, n_iter, converged = _fista(
        problem,
        lambda v, step: soft_threshold(v, step * gamma),
        lambda v: gamma * float(np.abs(v).sum()),
        np.zeros(problem.n_params),
        cfg,
    )
    return L1Fit(x, trace, n_iter, converged)


def trace_norm_kkt_residual(fit, left, right, labels, lam):
    """Operator-norm distance of ``fit.W`` from the prox fixed point.

    Uses ``||W - prox(W - grad, lam)||_2``, which vanishes exactly at a
    minimizer (unit step).
    """
    problem = BilinearLogisticProblem(left, right, labels)
    x = np.concatenate([fit.W.ravel(), [fit.b]])
    _, g = problem.value_and_grad(x)
    gW, gb = problem.unpack(g)
    R = fit.W - prox_trace_norm(fit.W - gW, lam)
    return max(float(np.linalg.norm(R, 2)), abs(float(gb)))


def fit_l2_logistic(X, labels, reg=1e-3, fit_intercept=True):
    """L2-regularized logistic regression, ``sum logloss + reg/2 * ||w||^2``.

    The intercept is not penalized. Returns ``(w, b)``.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = _check_labels(labels, X.shape[0])
    n, d = X.shape

    def fun(theta):
        w = theta[:d]
        b = theta[d] if fit_intercept else 0.0
        m = y * (X @ w + b)
        g = -y * sigmoid(-m)
        grad = np.empty_like(theta)
        grad[:d] = X.T @ g + reg * w
        if fit_intercept:
            grad[d] = g.sum()
        return _logloss(m) + 0.5 * reg * (w @ w), grad

    theta0 = np.zeros(d + int(fit_intercept))
    res = optimize.minimize(
        fun, theta0, jac=True, method="L-BFGS-B",
        options={"maxiter": 2000, "gtol": 1e-10, "ftol": 1e-15},
    )
    w = res.x[:d].copy()
    b = float(res.x[d]) if fit_intercept else 0.0
    return w, b
