"""Per-draw suprema for the empirical local Rademacher complexity.

Each solver maximises <W, V> / T over the family ball intersected with the
empirical variance ellipsoid (1/T) sum_t (w_t - c_t)' J_t (w_t - c_t) <= r.
Every returned value comes from a feasible point, so it never exceeds the
unconstrained supremum rho * dual_norm(V) / T.
"""

from __future__ import annotations

import math
import warnings

import numpy as np

from .core import GRAPH, GROUP, SCHATTEN, HypothesisFamily, InvalidInput
from .norms import ball_maximizer, dual_norm, family_norm, project_ball

BISECT_STEPS = 64
THETA_FLOOR = 1e-13
CONIC_TOL = 1e-9
DYKSTRA_MAX_ITERS = 2000


def _supported(family: HypothesisFamily) -> bool:
    return family.kind == GRAPH or family.q in (1.0, 2.0)


def _euclidean(family: HypothesisFamily) -> bool:
    return family.kind == GRAPH or family.q == 2.0


class _Problem:
    """Shared data: second moments, ellipsoid level s = r T, centre W0."""

    def __init__(self, sample, family, r, center):
        if not _supported(family):
            raise InvalidInput("empirical local complexity supports q in {1, 2} and the graph family")
        self.sample = sample
        self.family = family
        self.T, self.p = sample.T, sample.p
        self.J = sample.second_moments()
        self.level = r * self.T
        W0 = np.zeros((self.p, self.T)) if center is None else np.asarray(center, dtype=float)
        if W0.shape != (self.p, self.T):
            raise InvalidInput("center must be a p x T weight matrix")
        if family_norm(W0, family) > family.rho * (1 + 1e-12):
            raise InvalidInput("center must lie inside the ball")
        self.W0 = W0

    def ell(self, W) -> float:
        D = W - self.W0
        return float(np.einsum("it,tij,jt->", D, self.J, D))

    def feasible(self, W, slack=0.0) -> bool:
        return (family_norm(W, self.family) <= self.family.rho * (1 + slack)
                and self.ell(W) <= self.level * (1 + slack))

    def pull_inside(self, W):
        """Largest t in [0, 1] with W0 + t (W - W0) in both sets (bisection on t)."""
        if self.feasible(W):
            return W
        D = W - self.W0
        lo, hi = 0.0, 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if self.feasible(self.W0 + mid * D):
                lo = mid
            else:
                hi = mid
        return self.W0 + lo * D

    def shortcut(self, V):
        """Return the unconstrained supremum when the ball maximiser already satisfies the variance cap."""
        Wb = ball_maximizer(V, self.family)
        if self.ell(Wb) <= self.level:
            return float(self.family.rho * dual_norm(V, self.family) / self.T)
        return None


# -- exact solver for Euclidean balls -----------------------------------------


class ExactEuclidean:
    """Two-multiplier dual solve after simultaneous diagonalisation.

    With A = D (x) I_p (identity for Frobenius balls) and B = blockdiag(J_t),
    z = S' A^{1/2} w turns the ball into ||z|| <= rho and the ellipsoid into
    (z - z0)' Theta (z - z0) <= s, where A^{-1/2} B A^{-1/2} = S Theta S'.
    """

    def __init__(self, prob: _Problem):
        self.prob = prob
        fam = prob.family
        T, p = prob.T, prob.p
        if fam.kind == GRAPH:
            Dh, Dih = fam.graph_op.sqrt_D(), fam.graph_op.inv_sqrt_D()
        else:
            Dh = Dih = np.eye(T)
        self.Ah = np.kron(Dh, np.eye(p))
        self.Aih = np.kron(Dih, np.eye(p))
        Bm = np.zeros((p * T, p * T))
        for t in range(T):
            Bm[t * p:(t + 1) * p, t * p:(t + 1) * p] = prob.J[t]
        M = self.Aih @ Bm @ self.Aih
        theta, S = np.linalg.eigh(0.5 * (M + M.T))
        theta = np.where(theta > THETA_FLOOR * max(theta.max(), 1e-300), theta, 0.0)
        self.theta, self.S = theta, S
        self.z0 = S.T @ (self.Ah @ prob.W0.T.ravel())

    def _z(self, C, mu, nu):
        th, z0 = self.theta, self.z0
        return (C + 2.0 * nu[:, None] * th * z0) / (2.0 * (mu[:, None] + nu[:, None] * th))

    def _mu(self, C, nu):
        """Ball multiplier for each draw: smallest mu with ||z(mu, nu)|| <= rho."""
        rho = self.prob.family.rho
        A = C + 2.0 * nu[:, None] * self.theta * self.z0
        hi = np.linalg.norm(A, axis=1) / (2.0 * rho)
        lo = hi * 1e-30
        for _ in range(BISECT_STEPS):
            mid = np.sqrt(lo * hi)
            big = np.linalg.norm(self._z(C, mid, nu), axis=1) > rho
            lo = np.where(big, mid, lo)
            hi = np.where(big, hi, mid)
        return hi

    def _excess(self, C, nu):
        z = self._z(C, self._mu(C, nu), nu)
        d = z - self.z0
        return (d * d * self.theta).sum(axis=1) - self.prob.level, z

    def solve_z(self, C):
        """Maximisers z for a batch of transformed increments C (m, pT)."""
        rho, s = self.prob.family.rho, self.prob.level
        cn = np.linalg.norm(C, axis=1)
        safe = np.where(cn > 0, cn, 1.0)
        Z = rho * C / safe[:, None]
        d = Z - self.z0
        todo = np.nonzero((cn > 0) & ((d * d * self.theta).sum(axis=1) > s))[0]
        if len(todo):
            Ct = C[todo]
            hi = np.maximum(cn[todo], 1.0) / s
            for _ in range(400):
                bad = self._excess(Ct, hi)[0] > 0
                if not np.any(bad):
                    break
                hi = np.where(bad, hi * 4.0, hi)
            lo = hi * 1e-30
            for _ in range(BISECT_STEPS):
                mid = np.sqrt(lo * hi)
                bad = self._excess(Ct, mid)[0] > 0
                lo = np.where(bad, mid, lo)
                hi = np.where(bad, hi, mid)
            Zt = self._excess(Ct, hi)[1]
            # pull back onto the feasible side of both constraints
            Z[todo] = self._shrink(Zt)
        Z[cn == 0] = 0.0
        return Z

    def _shrink(self, Z):
        rho, s, z0, th = self.prob.family.rho, self.prob.level, self.z0, self.theta
        D = Z - z0
        lo = np.zeros(len(Z))
        hi = np.ones(len(Z))

        def ok(t):
            P = z0 + t[:, None] * D
            E = P - z0
            return (np.linalg.norm(P, axis=1) <= rho) & ((E * E * th).sum(axis=1) <= s)

        good = ok(hi)
        lo[good] = 1.0
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            m_ok = ok(mid)
            lo = np.where(good, lo, np.where(m_ok, mid, lo))
            hi = np.where(good, hi, np.where(m_ok, hi, mid))
        return z0 + lo[:, None] * D

    def __call__(self, Vs):
        prob = self.prob
        Vs = np.asarray(Vs, dtype=float)
        v = Vs.transpose(0, 2, 1).reshape(len(Vs), -1)
        C = (v @ self.Aih) @ self.S
        Z = self.solve_z(C)
        return (C * Z).sum(axis=1) / prob.T, False


# -- conic solver -------------------------------------------------------------


class Conic:
    """Parametrised second-order-cone program solved by Clarabel through cvxpy."""

    def __init__(self, prob: _Problem):
        import cvxpy as cp

        self.prob = prob
        fam = prob.family
        p, T = prob.p, prob.T
        W = cp.Variable((p, T))
        self.V = cp.Parameter((p, T))
        if fam.kind == GROUP:
            norm = cp.sum(cp.norm(W, 2, axis=0)) if fam.q == 1.0 else cp.norm(W, "fro")
        elif fam.kind == SCHATTEN:
            norm = cp.normNuc(W) if fam.q == 1.0 else cp.norm(W, "fro")
        else:
            norm = cp.norm(W @ fam.graph_op.sqrt_D(), "fro")
        X = prob.sample.features
        n = prob.sample.n
        quad = sum(cp.sum_squares(X[t] @ (W[:, t] - prob.W0[:, t])) for t in range(T)) / n
        self.W = W
        self.problem = cp.Problem(cp.Maximize(cp.sum(cp.multiply(self.V, W))),
                                  [norm <= fam.rho, quad <= prob.level])

    def __call__(self, Vs):
        import cvxpy as cp

        prob = self.prob
        vals = np.empty(len(Vs))
        flagged = False
        for k, V in enumerate(Vs):
            short = prob.shortcut(V)
            if short is not None:
                vals[k] = short
                continue
            self.V.value = V
            try:
                with warnings.catch_warnings():
                    # inaccurate solves are reported through the flag instead
                    warnings.simplefilter("ignore", UserWarning)
                    self.problem.solve(solver=cp.CLARABEL, tol_gap_abs=CONIC_TOL, tol_gap_rel=CONIC_TOL,
                                       tol_feas=CONIC_TOL)
                ok = self.problem.status in ("optimal", "optimal_inaccurate") and self.W.value is not None
            except cp.error.SolverError:
                ok = False
            if not ok:
                flagged = True
                vals[k] = 0.0
                continue
            flagged |= self.problem.status != "optimal"
            W = prob.pull_inside(np.asarray(self.W.value))
            vals[k] = float(np.sum(W * V)) / prob.T
        return vals, flagged


# -- projected ascent with Dykstra projections --------------------------------


class DykstraAscent:
    """Accelerated projected gradient ascent; projections onto the intersection by Dykstra."""

    def __init__(self, prob: _Problem, max_iters=DYKSTRA_MAX_ITERS, tol=1e-6, inner_iters=500):
        self.prob = prob
        self.max_iters, self.tol, self.inner_iters = max_iters, tol, inner_iters
        self.eig = [np.linalg.eigh(J) for J in prob.J]

    def _project_ellipsoid(self, W):
        prob = self.prob
        D = W - prob.W0
        if prob.ell(W) <= prob.level:
            return W
        ys = [Q.T @ D[:, t] for t, (vals, Q) in enumerate(self.eig)]
        x = np.concatenate(ys)
        w = np.concatenate([np.clip(vals, 0.0, None) for vals, _ in self.eig])
        from .norms import _project_quadratic

        y = _project_quadratic(x, w, prob.level)
        out = np.empty_like(D)
        p = prob.p
        for t, (_, Q) in enumerate(self.eig):
            out[:, t] = Q @ y[t * p:(t + 1) * p]
        return prob.W0 + out

    def _project(self, W):
        fam = self.prob.family
        x = W.copy()
        pa = np.zeros_like(W)
        qa = np.zeros_like(W)
        for _ in range(self.inner_iters):
            y = project_ball(x + pa, fam)
            pa = x + pa - y
            x_new = self._project_ellipsoid(y + qa)
            qa = y + qa - x_new
            if np.linalg.norm(x_new - x) <= 1e-13 * (1.0 + np.linalg.norm(x)):
                x = x_new
                break
            x = x_new
        return x

    def _solve_one(self, V):
        prob = self.prob
        vn = np.linalg.norm(V)
        step = prob.family.rho / vn
        W = prob.W0.copy()
        Y = W.copy()
        tk = 1.0
        prev = -math.inf
        converged = False
        for it in range(self.max_iters):
            W_new = self._project(Y + step * V)
            t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * tk * tk))
            Y = W_new + ((tk - 1.0) / t_new) * (W_new - W)
            W, tk = W_new, t_new
            val = float(np.sum(W * V))
            if abs(val - prev) <= self.tol * 1e-3 * abs(val) and it > 10:
                converged = True
                break
            prev = val
            step *= 1.05
        return prob.pull_inside(W), converged

    def __call__(self, Vs):
        prob = self.prob
        vals = np.empty(len(Vs))
        flagged = False
        for k, V in enumerate(Vs):
            short = prob.shortcut(V)
            if short is not None:
                vals[k] = short
                continue
            if not np.any(V):
                vals[k] = 0.0
                continue
            W, ok = self._solve_one(V)
            flagged |= not ok
            vals[k] = float(np.sum(W * V)) / prob.T
        return vals, flagged


def make_local_solver(sample, family: HypothesisFamily, r: float, solver: str = "auto", center=None):
    prob = _Problem(sample, family, r, center)
    if solver == "auto":
        solver = "exact" if _euclidean(family) else "conic"
    if solver == "exact":
        if not _euclidean(family):
            raise InvalidInput("the exact solver needs a Euclidean ball (q = 2 or graph)")
        return ExactEuclidean(prob)
    if solver == "conic":
        return Conic(prob)
    if solver == "dykstra":
        return DykstraAscent(prob)
    raise InvalidInput(f"unknown solver {solver!r}")
