"""Linear SVM with per-sample costs and an unregularized bias.

Solves::

    min_{w,b}  0.5 * ||w||^2 + sum_i C_i * max(0, 1 - y_i (w.x_i + b))

through its dual (box constraints ``0 <= a_i <= C_i`` plus ``sum_i y_i a_i = 0``)
with a pairwise coordinate method (SMO, second-order working set
selection).  Given ``w`` the bias is always set to the exact minimizer of
the primal, so termination on the duality gap certifies the primal
objective.  ``qp_oracle`` solves the same problem by a different route
(accelerated projected gradient plus active-set polishing) and is only
meant for tests.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

from .core import LinearModel


class DegenerateProblemWarning(UserWarning):
    """Every sample with positive cost carries the same label."""


class ConvergenceWarning(UserWarning):
    pass


@dataclass(frozen=True)
class WeightedSample:
    features: np.ndarray
    label: int
    cost: float

    def __post_init__(self):
        if self.label not in (-1, 1):
            raise ValueError("label must be -1 or +1")
        if not self.cost >= 0:
            raise ValueError("cost must be >= 0")


def sample_costs(labels: np.ndarray, v: np.ndarray, c_plus: float, c_minus: float) -> np.ndarray:
    """Effective per-sample cost ``v_i * (C+ if y_i = +1 else C-)``."""
    return np.asarray(v, dtype=float) * np.where(np.asarray(labels) > 0, c_plus, c_minus)


def hinge_loss(label, decision):
    """``max(0, 1 - label * decision)``; works elementwise on arrays."""
    out = np.maximum(0.0, 1.0 - np.multiply(label, decision))
    return float(out) if np.ndim(out) == 0 else out


def decision(model: LinearModel, x: np.ndarray) -> float | np.ndarray:
    """``w.x + b`` for one vector or row-wise for a matrix."""
    x = np.asarray(x, dtype=float)
    if x.shape[-1] != model.w.shape[0]:
        raise ValueError(f"feature length {x.shape[-1]} != model dimension {model.w.shape[0]}")
    out = x @ model.w + model.b
    return float(out) if np.ndim(out) == 0 else out


# --------------------------------------------------------------------------
# shared numerics


@njit(cache=True)
def _optimal_bias(s, y, C):
    """Exact minimizer over b of sum_i C_i max(0, 1 - y_i (s_i + b)).

    The objective is convex piecewise linear with kinks at ``y_i - s_i``; its
    slope starts at ``-sum(C_i, y_i=+1)`` and rises by ``C_i`` at each kink.
    A flat optimal stretch resolves to its midpoint.
    """
    n = s.shape[0]
    kinks = y - s
    order = np.argsort(kinks, kind="mergesort")
    slope = 0.0
    total = 0.0
    for i in range(n):
        total += C[i]
        if y[i] > 0:
            slope -= C[i]
    eps = 1e-12 * max(total, 1e-300)
    for k in range(n):
        i = order[k]
        slope += C[i]
        if slope > eps:
            return kinks[i]
        if slope >= -eps:
            # flat stretch up to the next kink
            if k + 1 < n:
                return 0.5 * (kinks[i] + kinks[order[k + 1]])
            return kinks[i]
    return kinks[order[n - 1]]


@njit(cache=True)
def _primal(w, b, s, y, C):
    loss = 0.0
    for i in range(s.shape[0]):
        m = 1.0 - y[i] * (s[i] + b)
        if m > 0:
            loss += C[i] * m
    return 0.5 * np.dot(w, w) + loss


@njit(cache=True)
def _smo(X, y, C, tol, max_steps):
    n, c = X.shape
    alpha = np.zeros(n)
    w = np.zeros(c)
    G = -np.ones(n)  # gradient of the dual objective: y_i w.x_i - 1
    Kdiag = np.empty(n)
    for i in range(n):
        Kdiag[i] = np.dot(X[i], X[i])
    check_every = max(10, n // 5)
    steps = 0
    gap = np.inf
    b = 0.0
    primal = np.inf
    converged = False
    stalled = False
    while True:
        if stalled or steps % check_every == 0:
            # refresh against drift, then measure the gap
            w[:] = 0.0
            for i in range(n):
                if alpha[i] != 0.0:
                    w += (alpha[i] * y[i]) * X[i]
            s = X @ w
            G = y * s - 1.0
            b = _optimal_bias(s, y, C)
            primal = _primal(w, b, s, y, C)
            dual = np.sum(alpha) - 0.5 * np.dot(w, w)
            gap = (primal - dual) / max(abs(dual), 1e-300)
            if gap <= tol:
                converged = True
                break
            if stalled or steps >= max_steps:
                break
        # maximal violating pair, second-order choice of j
        gmax = -np.inf
        i_sel = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] < C[t] and -G[t] >= gmax:
                    gmax = -G[t]
                    i_sel = t
            else:
                if alpha[t] > 0 and G[t] >= gmax:
                    gmax = G[t]
                    i_sel = t
        if i_sel < 0:
            stalled = True
            continue
        i = i_sel
        Ki = X @ X[i]
        gmin = np.inf
        obj_min = np.inf
        j = -1
        for t in range(n):
            if y[t] > 0:
                if alpha[t] > 0:
                    gt = -G[t]
                    if gt < gmin:
                        gmin = gt
                    diff = gmax - gt
                    if diff > 0:
                        quad = Kdiag[i] + Kdiag[t] - 2.0 * Ki[t]
                        if quad <= 0:
                            quad = 1e-12
                        val = -diff * diff / quad
                        if val <= obj_min:
                            obj_min = val
                            j = t
            else:
                if alpha[t] < C[t]:
                    gt = G[t]
                    if gt < gmin:
                        gmin = gt
                    diff = gmax - gt
                    if diff > 0:
                        quad = Kdiag[i] + Kdiag[t] - 2.0 * Ki[t]
                        if quad <= 0:
                            quad = 1e-12
                        val = -diff * diff / quad
                        if val <= obj_min:
                            obj_min = val
                            j = t
        if j < 0 or gmax - gmin < 1e-15:
            # KKT holds to machine precision: measure once more and stop
            stalled = True
            continue
        old_i = alpha[i]
        old_j = alpha[j]
        Kij = Ki[j]
        if y[i] != y[j]:
            quad = Kdiag[i] + Kdiag[j] - 2.0 * Kij
            if quad <= 0:
                quad = 1e-12
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = -diff
            if diff > C[i] - C[j]:
                if alpha[i] > C[i]:
                    alpha[i] = C[i]
                    alpha[j] = C[i] - diff
            else:
                if alpha[j] > C[j]:
                    alpha[j] = C[j]
                    alpha[i] = C[j] + diff
        else:
            quad = Kdiag[i] + Kdiag[j] - 2.0 * Kij
            if quad <= 0:
                quad = 1e-12
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C[i]:
                if alpha[i] > C[i]:
                    alpha[i] = C[i]
                    alpha[j] = total - C[i]
            else:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = total
            if total > C[j]:
                if alpha[j] > C[j]:
                    alpha[j] = C[j]
                    alpha[i] = total - C[j]
            else:
                if alpha[i] < 0:
                    alpha[i] = 0.0
                    alpha[j] = total
        di = (alpha[i] - old_i) * y[i]
        dj = (alpha[j] - old_j) * y[j]
        dw = di * X[i] + dj * X[j]
        w += dw
        G += y * (X @ dw)
        steps += 1
    return alpha, w, b, primal, gap, steps, converged


def _as_arrays(samples: Sequence[WeightedSample]):
    X = np.array([np.asarray(s.features, dtype=float) for s in samples], dtype=float)
    y = np.array([s.label for s in samples], dtype=float)
    C = np.array([s.cost for s in samples], dtype=float)
    return X, y, C


def primal_objective(model: LinearModel, X: np.ndarray, y: np.ndarray, C: np.ndarray) -> float:
    """``0.5 ||w||^2 + sum_i C_i hinge(y_i, w.x_i + b)``."""
    s = np.asarray(X, dtype=float) @ model.w
    return float(_primal(model.w, float(model.b), s, np.asarray(y, float), np.asarray(C, float)))


def _degenerate_or_none(X, y, C):
    active = C > 0
    if not active.any():
        raise ValueError("no samples with positive cost")
    labels = np.unique(y[active])
    if len(labels) == 1:
        warnings.warn(
            f"all active samples have label {int(labels[0]):+d}; returning w=0",
            DegenerateProblemWarning,
            stacklevel=3,
        )
        return LinearModel(np.zeros(X.shape[1]), float(labels[0]), degenerate=True,
                           stats={"converged": True, "gap": 0.0, "steps": 0})
    return None


def train_arrays(X, y, C, tol: float = 1e-6, max_passes: int = 1000) -> LinearModel:
    """Array form of :func:`train_weighted_svm`."""
    X = np.ascontiguousarray(X, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    C = np.ascontiguousarray(C, dtype=float)
    if not tol > 0:
        raise ValueError("tol must be > 0")
    model = _degenerate_or_none(X, y, C)
    if model is not None:
        return model
    active = np.flatnonzero(C > 0)
    Xa, ya, Ca = X[active], y[active], C[active]
    max_steps = max_passes * len(active)
    alpha_a, w, b, primal, gap, steps, converged = _smo(Xa, ya, Ca, tol, max_steps)
    alpha = np.zeros(len(y))
    alpha[active] = alpha_a
    if not converged:
        warnings.warn(f"SVM stopped after {steps} steps with relative gap {gap:.3g}",
                      ConvergenceWarning, stacklevel=2)
    return LinearModel(w.copy(), float(b), stats={
        "converged": bool(converged), "gap": float(gap), "steps": int(steps),
        "objective": float(primal), "alpha": alpha,
    })


def train_weighted_svm(samples: Sequence[WeightedSample], tol: float = 1e-6,
                       max_passes: int = 1000) -> LinearModel:
    """Fit ``(w, b)`` to weighted samples until the relative duality gap is <= ``tol``.

    Samples with cost 0 are dropped before solving.  If every remaining
    sample has the same label the exact optimum is ``w = 0, b = label``;
    that model is returned with ``degenerate=True`` and a warning.
    """
    return train_arrays(*_as_arrays(samples), tol=tol, max_passes=max_passes)


# --------------------------------------------------------------------------
# test oracle

ORACLE_MAX_SAMPLES = 200


def _project(z, y, C):
    """Euclidean projection onto {0 <= a <= C, y.a = 0}.

    ``a(mu) = clip(z - mu*y, 0, C)`` and ``y.a(mu)`` is non-increasing in mu,
    so the multiplier is found by bisection.
    """
    def resid(mu):
        return y @ np.clip(z - mu * y, 0.0, C)

    lo, hi = -1.0, 1.0
    while resid(lo) < 0:
        lo *= 2
    while resid(hi) > 0:
        hi *= 2
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if resid(mid) > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, abs(mid)):
            break
    return np.clip(z - 0.5 * (lo + hi) * y, 0.0, C)


def _polish(X, y, C, alpha, thresh):
    """Solve the KKT system for the support partition read off ``alpha``."""
    free = (alpha > thresh) & (alpha < C - thresh)
    upper = alpha >= C - thresh
    w_up = X[upper].T @ (C[upper] * y[upper])
    Xf, yf = X[free], y[free]
    k = len(yf)
    # unknowns: alpha_free (k), b ;  rows: margin equalities (k), balance (1)
    A = np.zeros((k + 1, k + 1))
    rhs = np.zeros(k + 1)
    A[:k, :k] = (yf[:, None] * yf[None, :]) * (Xf @ Xf.T)
    A[:k, k] = yf
    rhs[:k] = 1.0 - yf * (Xf @ w_up)
    A[k, :k] = yf
    rhs[k] = -np.dot(C[upper], y[upper])
    sol = np.linalg.lstsq(A, rhs, rcond=None)[0]
    a = np.where(upper, C, 0.0)
    a[free] = np.clip(sol[:k], 0.0, C[free])
    return a


def qp_oracle(samples: Sequence[WeightedSample], tol: float = 1e-12,
              max_iter: int = 200_000) -> LinearModel:
    """Reference solver for small problems (tests only).

    FISTA with adaptive restart on the dual, exact projection onto the
    feasible set, then an active-set polish; the better primal candidate
    wins.  ``stats["gap"]`` is the relative duality gap certificate.
    """
    if len(samples) > ORACLE_MAX_SAMPLES:
        raise ValueError(f"qp_oracle handles at most {ORACLE_MAX_SAMPLES} samples")
    X, y, C = _as_arrays(samples)
    model = _degenerate_or_none(X, y, C)
    if model is not None:
        return model
    keep = C > 0
    X, y, C = X[keep], y[keep], C[keep]
    Z = X * y[:, None]
    Q = Z @ Z.T
    L = max(np.linalg.eigvalsh(Q)[-1], 1e-12)

    def dual(a):
        return a.sum() - 0.5 * a @ Q @ a

    def candidate(a):
        w = Z.T @ a
        s = X @ w
        b = _optimal_bias(s, y, C)
        return w, b, _primal(w, b, s, y, C)

    a = np.zeros(len(y))
    mom, t = a.copy(), 1.0
    best_dual = 0.0
    best = candidate(a)
    gap = np.inf
    for it in range(max_iter):
        a_next = _project(mom + (1.0 - Q @ mom) / L, y, C)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * t * t))
        if (1.0 - Q @ mom) @ (a_next - a) < 0:  # restart on non-ascent
            t_next = 1.0
            mom = a_next.copy()
        else:
            mom = a_next + ((t - 1.0) / t_next) * (a_next - a)
        a, t = a_next, t_next
        if it % 50 == 0 or it == max_iter - 1:
            best_dual = max(best_dual, dual(a))
            cands = [candidate(a)]
            for thresh in (1e-9 * C.max(), 1e-6 * C.max()):
                cands.append(candidate(_polish(X, y, C, a, thresh)))
            for cand in cands:
                if cand[2] < best[2]:
                    best = cand
            gap = (best[2] - best_dual) / max(abs(best_dual), 1e-300)
            if gap <= tol:
                break
    w, b, primal = best
    return LinearModel(np.asarray(w), float(b), stats={
        "converged": bool(gap <= tol), "gap": float(gap), "objective": float(primal),
        "iterations": it + 1,
    })
