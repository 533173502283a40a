"""Primal norms, dual norms, maximisers and projections for the three weight balls.

Weight matrices are p x T with column t holding w_t.
"""

from __future__ import annotations

import math

import numpy as np
from scipy.optimize import brentq

from .core import GROUP, SCHATTEN, HypothesisFamily, InvalidInput


def lp_norm(a: np.ndarray, p: float, axis: int = -1) -> np.ndarray:
    """Scaled l_p norm of non-negative entries along an axis (p may be inf)."""
    a = np.asarray(a, dtype=float)
    m = a.max(axis=axis, keepdims=True)
    if math.isinf(p):
        return np.squeeze(m, axis=axis)
    safe = np.where(m > 0, m, 1.0)
    s = ((a / safe) ** p).sum(axis=axis, keepdims=True) ** (1.0 / p)
    return np.squeeze(np.where(m > 0, m * s, 0.0), axis=axis)


def family_norm(W: np.ndarray, family: HypothesisFamily) -> float:
    W = np.asarray(W, dtype=float)
    if family.kind == GROUP:
        return float(lp_norm(np.linalg.norm(W, axis=0), family.q))
    if family.kind == SCHATTEN:
        return float(lp_norm(np.linalg.svd(W, compute_uv=False), family.q))
    return float(np.linalg.norm(W @ family.graph_op.sqrt_D()))


def in_ball(W, family: HypothesisFamily, rel_tol: float = 1e-8) -> bool:
    return family_norm(W, family) <= family.rho * (1.0 + rel_tol)


def dual_norm(V: np.ndarray, family: HypothesisFamily) -> np.ndarray:
    """Dual norm of V; a leading batch axis (m, p, T) is allowed."""
    V = np.asarray(V, dtype=float)
    if family.kind == GROUP:
        return lp_norm(np.linalg.norm(V, axis=-2), family.q_star)
    if family.kind == SCHATTEN:
        return lp_norm(np.linalg.svd(V, compute_uv=False), family.q_star)
    Vd = V @ family.graph_op.inv_sqrt_D()
    return np.sqrt((Vd ** 2).sum(axis=(-2, -1)))


def _unit_weights(x: np.ndarray, q: float) -> np.ndarray:
    """Non-negative u with ||u||_q = 1 and <u, x> = ||x||_{q*} for non-negative x."""
    qs = 1.0 if math.isinf(q) else (math.inf if q == 1.0 else q / (q - 1.0))
    if q == 1.0:
        u = np.zeros_like(x)
        u[int(np.argmax(x))] = 1.0
        return u
    if math.isinf(q):
        return (x > 0).astype(float)
    m = x.max()
    u = (x / m) ** (qs - 1.0)
    return u / lp_norm(u, q)


def lmo(G: np.ndarray, family: HypothesisFamily) -> np.ndarray:
    """argmin of <W, G> over the ball of radius rho; equals -rho times a dual maximiser."""
    G = np.asarray(G, dtype=float)
    rho = family.rho
    if not np.any(G):
        return np.zeros_like(G)
    if family.kind == GROUP:
        norms = np.linalg.norm(G, axis=0)
        u = _unit_weights(norms, family.q)
        safe = np.where(norms > 0, norms, 1.0)
        return -rho * G * (u / safe)[None, :]
    if family.kind == SCHATTEN:
        U, s, Vt = np.linalg.svd(G, full_matrices=False)
        u = _unit_weights(s, family.q)
        return -rho * (U * u) @ Vt
    op = family.graph_op
    GDi = G @ op.D_inv
    return -rho * GDi / math.sqrt(float(np.sum(GDi * G)))


def ball_maximizer(V: np.ndarray, family: HypothesisFamily) -> np.ndarray:
    return lmo(-np.asarray(V, dtype=float), family)


# -- Euclidean projections ----------------------------------------------------


def project_simplex_ball(v: np.ndarray, radius: float) -> np.ndarray:
    """Project a non-negative vector onto {u >= 0, sum u <= radius}."""
    if v.sum() <= radius:
        return v.copy()
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - radius
    idx = np.arange(1, len(u) + 1)
    k = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[k] / (k + 1.0)
    return np.maximum(v - theta, 0.0)


def _project_quadratic(x: np.ndarray, weights: np.ndarray, level: float) -> np.ndarray:
    """Project coordinates x onto {y : sum w_i y_i^2 <= level}, w >= 0, diagonal form."""
    val = float(np.sum(weights * x * x))
    if val <= level:
        return x.copy()
    if level <= 0:
        return np.where(weights > 0, 0.0, x)
    g = lambda lam: float(np.sum(weights * (x / (1.0 + lam * weights)) ** 2)) - level
    hi = 1.0
    while g(hi) > 0:
        hi *= 4.0
    lam = brentq(g, 0.0, hi, xtol=1e-14, rtol=1e-14, maxiter=500)
    return x / (1.0 + lam * weights)


def project_ball(W: np.ndarray, family: HypothesisFamily) -> np.ndarray:
    """Euclidean projection onto the family's ball (q in {1, 2} or graph)."""
    rho = family.rho
    if family.kind == GROUP:
        norms = np.linalg.norm(W, axis=0)
        if family.q == 2.0:
            nrm = np.linalg.norm(norms)
            return W if nrm <= rho else W * (rho / nrm)
        if family.q == 1.0:
            new = project_simplex_ball(norms, rho)
            safe = np.where(norms > 0, norms, 1.0)
            return W * (new / safe)[None, :]
    elif family.kind == SCHATTEN:
        if family.q == 2.0:
            nrm = np.linalg.norm(W)
            return W if nrm <= rho else W * (rho / nrm)
        if family.q == 1.0:
            U, s, Vt = np.linalg.svd(W, full_matrices=False)
            return (U * project_simplex_ball(s, rho)) @ Vt
    else:
        vals, Q = np.linalg.eigh(family.graph_op.D)
        Y = W @ Q
        # ||W D^1/2||_F^2 = sum_k d_k ||Y[:, k]||^2
        weights = np.broadcast_to(vals, Y.shape).ravel()
        Yp = _project_quadratic(Y.ravel(), weights, rho ** 2).reshape(Y.shape)
        return Yp @ Q.T
    raise InvalidInput("projection implemented for q in {1, 2} and the graph family only")
