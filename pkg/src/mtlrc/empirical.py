"""Monte Carlo and exact Rademacher estimates, Gram spectra and identity checks.

Random signs for draw i always come from ``np.random.default_rng([seed, i])``,
so estimates do not depend on chunking or thread count.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

from .core import (
    HypothesisFamily,
    InvalidInput,
    ProblemParams,
    TaskSpectra,
    parallel_map,
)
from .fixedpoint import talagrand_rhs
from .norms import dual_norm, family_norm

CHUNK = 2048
BRUTE_FORCE_LIMIT = 20


@dataclass(frozen=True, eq=False)
class MultiTaskSample:
    """Features (T, n, p) and labels (T, n); every task has the same n and p."""

    features: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        if X.ndim != 3:
            raise InvalidInput("features must have shape (T, n, p)")
        if not np.all(np.isfinite(X)):
            raise InvalidInput("features must be finite")
        X.setflags(write=False)
        object.__setattr__(self, "features", X)
        if self.labels is not None:
            y = np.array(self.labels, dtype=float)
            if y.shape != X.shape[:2] or not np.all(np.isfinite(y)):
                raise InvalidInput("labels must be finite with shape (T, n)")
            y.setflags(write=False)
            object.__setattr__(self, "labels", y)

    @property
    def T(self) -> int:
        return self.features.shape[0]

    @property
    def n(self) -> int:
        return self.features.shape[1]

    @property
    def p(self) -> int:
        return self.features.shape[2]

    def second_moments(self) -> np.ndarray:
        """Empirical J_t = X_t^T X_t / n, shape (T, p, p)."""
        X = self.features
        return np.einsum("tni,tnj->tij", X, X) / self.n


@dataclass(frozen=True, eq=False)
class EigenSystem:
    """Orthonormal U_t (T, p, p) with columns u_t^j, and eigenvalues (T, p) sorted descending."""

    U: np.ndarray
    eigenvalues: np.ndarray

    def __post_init__(self):
        U = np.array(self.U, dtype=float)
        lam = np.array(self.eigenvalues, dtype=float)
        if U.ndim != 3 or U.shape[1] != U.shape[2] or lam.shape != U.shape[:2]:
            raise InvalidInput("U must be (T, p, p) and eigenvalues (T, p)")
        eye = np.eye(U.shape[1])
        if np.max(np.abs(np.einsum("tji,tjk->tik", U, U) - eye)) > 1e-10:
            raise InvalidInput("eigenvectors must be orthonormal")
        if np.any(lam < 0) or np.any(np.diff(lam, axis=1) > 0):
            raise InvalidInput("eigenvalues must be non-negative and non-increasing")
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "eigenvalues", lam)

    @property
    def T(self) -> int:
        return self.U.shape[0]

    @property
    def p(self) -> int:
        return self.U.shape[1]

    def covariances(self) -> np.ndarray:
        return np.einsum("tij,tj,tkj->tik", self.U, self.eigenvalues, self.U)

    def spectra(self) -> TaskSpectra:
        return TaskSpectra(self.eigenvalues)

    @classmethod
    def from_covariances(cls, covs) -> "EigenSystem":
        covs = np.asarray(covs, dtype=float)
        vals, vecs = np.linalg.eigh(covs)
        vals, vecs = vals[:, ::-1], vecs[:, :, ::-1]
        return cls(vecs, np.clip(vals, 0.0, None))

    @classmethod
    def random(cls, T: int, p: int, rng, decay: float = 1.0) -> "EigenSystem":
        """Random rotations with eigenvalues j^-decay scaled by a random factor per task."""
        Us, lams = [], []
        for _ in range(T):
            Q, R = np.linalg.qr(rng.standard_normal((p, p)))
            Us.append(Q * np.sign(np.diag(R)))
            lams.append(rng.uniform(0.5, 2.0) * np.arange(1, p + 1, dtype=float) ** -decay)
        return cls(np.array(Us), np.array(lams))

    def sample(self, n: int, rng) -> np.ndarray:
        """Zero-mean Gaussian features with covariance J_t; shape (T, n, p)."""
        Z = rng.standard_normal((self.T, n, self.p))
        return np.einsum("tnj,tj,tij->tni", Z, np.sqrt(self.eigenvalues), self.U)


@dataclass(frozen=True, eq=False)
class MCEstimate:
    estimate: float
    std_error: float
    draws: int
    seed: int | None
    flagged: bool = False
    values: np.ndarray | None = field(default=None, repr=False)

    def as_dict(self) -> dict:
        return {"estimate": self.estimate, "std_error": self.std_error, "draws": self.draws, "seed": self.seed}


def _summarise(values: np.ndarray, seed, flagged=False) -> MCEstimate:
    m = len(values)
    se = float(values.std(ddof=1) / math.sqrt(m)) if m > 1 else 0.0
    return MCEstimate(float(values.mean()), se, m, seed, flagged, values)


# -- signs and dual increments ------------------------------------------------


def sign_draws(seed: int, start: int, stop: int, T: int, n: int) -> np.ndarray:
    """Rademacher signs for draws start..stop-1, shape (stop - start, T, n)."""
    out = np.empty((stop - start, T, n))
    for k, i in enumerate(range(start, stop)):
        rng = np.random.default_rng([int(seed), i])
        out[k] = 2.0 * rng.integers(0, 2, size=(T, n)) - 1.0
    return out


def all_sign_patterns(T: int, n: int) -> np.ndarray:
    if n * T > BRUTE_FORCE_LIMIT:
        raise InvalidInput(f"exhaustive enumeration refused for nT = {n * T} > {BRUTE_FORCE_LIMIT}")
    pats = np.array(list(itertools.product((-1.0, 1.0), repeat=n * T)))
    return pats.reshape(-1, T, n)


def dual_increment(sample: MultiTaskSample, sigma: np.ndarray, eigensystem: EigenSystem | None = None,
                   h=None) -> np.ndarray:
    """V with column t = (1/n) sum_i sigma_t^i phi(X_t^i); batch axis allowed on sigma.

    With an eigensystem and truncation h, column t keeps only the components
    along u_t^j for j > h_t.
    """
    sigma = np.asarray(sigma, dtype=float)
    V = np.einsum("...tn,tnp->...pt", sigma, sample.features) / sample.n
    if eigensystem is None:
        return V
    h = np.broadcast_to(np.asarray(h if h is not None else 0, int), (sample.T,))
    out = np.empty_like(V)
    for t in range(sample.T):
        Ut = eigensystem.U[t][:, h[t]:]
        out[..., :, t] = (V[..., :, t] @ Ut) @ Ut.T
    return out


# -- global complexity --------------------------------------------------------


def _grc_sup_values(sample: MultiTaskSample, family: HypothesisFamily, sigmas: np.ndarray) -> np.ndarray:
    V = dual_increment(sample, sigmas)
    return family.rho * dual_norm(V, family) / sample.T


def _enumerated_mean(sample, family) -> float:
    pats = all_sign_patterns(sample.T, sample.n)
    return float(np.mean(_grc_sup_values(sample, family, pats)))


def empirical_grc(sample: MultiTaskSample, family: HypothesisFamily, mc_draws: int = 10_000, seed: int = 0,
                  enumerate: bool = False) -> MCEstimate:
    """Empirical global Rademacher complexity; sup per draw is rho * dual_norm(V) / T."""
    if enumerate:
        pats = all_sign_patterns(sample.T, sample.n)
        vals = _grc_sup_values(sample, family, pats)
        return MCEstimate(float(np.mean(vals)), 0.0, len(vals), None, False, vals)
    if mc_draws < 1:
        raise InvalidInput("mc_draws must be >= 1")
    starts = range(0, mc_draws, CHUNK)
    chunks = parallel_map(
        lambda a: _grc_sup_values(sample, family, sign_draws(seed, a, min(a + CHUNK, mc_draws), sample.T, sample.n)),
        starts,
    )
    return _summarise(np.concatenate(chunks), seed)


def brute_force_rc(sample: MultiTaskSample, family: HypothesisFamily) -> float:
    """Exact empirical complexity by averaging over all 2^(nT) sign patterns."""
    return _enumerated_mean(sample, family)


def empirical_local_rc(sample: MultiTaskSample, family: HypothesisFamily, r: float, mc_draws: int = 200,
                       seed: int = 0, solver: str = "auto", center: np.ndarray | None = None) -> MCEstimate:
    """Empirical local complexity under (1/T) sum_t (w_t - c_t)' J_t (w_t - c_t) <= r.

    ``solver``: "exact" (Euclidean balls), "conic" (cvxpy), "dykstra"
    (projected ascent with alternating projections) or "auto".
    """
    from .localrc import make_local_solver

    if not r > 0:
        raise InvalidInput("r must be positive")
    if mc_draws < 1:
        raise InvalidInput("mc_draws must be >= 1")
    solve = make_local_solver(sample, family, r, solver=solver, center=center)
    starts = range(0, mc_draws, CHUNK)

    def run(a):
        sig = sign_draws(seed, a, min(a + CHUNK, mc_draws), sample.T, sample.n)
        return solve(dual_increment(sample, sig))

    parts = parallel_map(run, starts)
    vals = np.concatenate([p[0] for p in parts])
    flagged = any(p[1] for p in parts)
    return _summarise(vals, seed, flagged)


# -- Gram spectra -------------------------------------------------------------


@dataclass(frozen=True)
class Kernel:
    kind: str = "linear"
    gamma: float = 1.0
    degree: int = 2
    coef0: float = 1.0

    def matrix(self, X: np.ndarray) -> np.ndarray:
        G = X @ X.T
        if self.kind == "linear":
            return G
        if self.kind == "polynomial":
            return (G + self.coef0) ** self.degree
        if self.kind == "gaussian":
            sq = np.diag(G)
            d2 = np.maximum(sq[:, None] + sq[None, :] - 2.0 * G, 0.0)
            return np.exp(-self.gamma * d2)
        raise InvalidInput(f"unknown kernel {self.kind!r}")


def gram_spectra(sample: MultiTaskSample, kernel: Kernel | str = "linear") -> TaskSpectra:
    """Eigenvalues of (1/n) K_t per task, sorted and clipped at zero."""
    if isinstance(kernel, str):
        kernel = Kernel(kernel)
    out = []
    for X in sample.features:
        K = kernel.matrix(X) / sample.n
        if not np.all(np.isfinite(K)):
            raise InvalidInput("kernel produced non-finite values")
        out.append(np.linalg.eigvalsh(0.5 * (K + K.T)))
    return TaskSpectra.sorted_from(out)


def kernel_trace(sample: MultiTaskSample, kernel: Kernel | str = "linear") -> np.ndarray:
    if isinstance(kernel, str):
        kernel = Kernel(kernel)
    return np.array([np.trace(kernel.matrix(X)) / sample.n for X in sample.features])


# -- identity checks ----------------------------------------------------------


def lemma_c1_a_check(W: np.ndarray, eigensystem: EigenSystem, tol: float = 1e-10) -> dict:
    """P f^2 = (1/T) sum_t w_t' J_t w_t against (1/T) sum_t sum_j lambda_t^j <w_t, u_t^j>^2."""
    W = np.asarray(W, dtype=float)
    T = eigensystem.T
    J = eigensystem.covariances()
    left = float(np.einsum("it,tij,jt->", W, J, W)) / T
    proj = np.einsum("tij,it->tj", eigensystem.U, W)
    right = float(np.sum(eigensystem.eigenvalues * proj ** 2)) / T
    err = abs(left - right)
    return {"left": left, "right": right, "abs_error": err, "passed": err <= tol * max(1.0, abs(left))}


def lemma_c1_b_check(eigensystem: EigenSystem, n: int, mc_draws: int = 200_000, seed: int = 0,
                     distribution=None, top: int | None = None) -> dict:
    """MC estimate of E <(1/n) sum_i sigma_i phi(X_i), u_t^j>^2 against lambda_t^j / n.

    ``distribution(rng, size)`` may return features of shape (size, T, n, p);
    the default draws zero-mean Gaussians with covariance J_t.
    """
    T, p = eigensystem.T, eigensystem.p
    chunk = max(1, min(CHUNK * 4, mc_draws))

    def run(k):
        a = k * chunk
        m = min(chunk, mc_draws - a)
        rng = np.random.default_rng([int(seed), k])
        if distribution is None:
            Z = rng.standard_normal((m, T, n, p))
            X = np.einsum("mtnj,tj,tij->mtni", Z, np.sqrt(eigensystem.eigenvalues), eigensystem.U)
        else:
            X = np.asarray(distribution(rng, m), dtype=float)
        sig = 2.0 * rng.integers(0, 2, size=(m, T, n)) - 1.0
        V = np.einsum("mtn,mtni->mti", sig, X) / n
        proj = np.einsum("mti,tij->mtj", V, eigensystem.U)
        return (proj ** 2).sum(axis=0), (proj ** 4).sum(axis=0)

    parts = parallel_map(run, range(math.ceil(mc_draws / chunk)))
    s1 = sum(p[0] for p in parts)
    s2 = sum(p[1] for p in parts)
    est = s1 / mc_draws
    var = np.maximum(s2 / mc_draws - est ** 2, 0.0)
    target = eigensystem.eigenvalues / n
    with np.errstate(divide="ignore", invalid="ignore"):
        rel = np.where(target > 0, np.abs(est - target) / target, np.nan)
    k = p if top is None else top
    return {
        "estimates": est,
        "std_errors": np.sqrt(var / mc_draws),
        "targets": target,
        "rel_errors": rel,
        "max_rel_error_top": float(np.nanmax(rel[:, :k])) if np.any(target[:, :k] > 0) else 0.0,
    }


def khintchine_check(vectors, p_exponent: float, mc_draws: int = 100_000, seed: int = 0) -> dict:
    """E ||sum_i sigma_i v_i||^p against (c sum_i ||v_i||^2)^(p/2) with c = max(1, p - 1)."""
    if not p_exponent >= 1:
        raise InvalidInput("p must be >= 1")
    v = np.atleast_2d(np.asarray(vectors, dtype=float))
    rng = np.random.default_rng(seed)
    sig = 2.0 * rng.integers(0, 2, size=(mc_draws, v.shape[0])) - 1.0
    vals = np.linalg.norm(sig @ v, axis=1) ** p_exponent
    lhs = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(mc_draws)) if mc_draws > 1 else 0.0
    c = max(1.0, p_exponent - 1.0)
    rhs = (c * float(np.sum(v * v))) ** (p_exponent / 2.0)
    return {"lhs": lhs, "std_error": se, "rhs": rhs, "passed": lhs <= rhs + 3.0 * se + 1e-12 * rhs}


# -- Talagrand-type concentration experiment ----------------------------------


def clipped_normal_moments(m, s, b):
    """First and second moments of clip(Y, -b, b) for Y ~ N(m, s^2); s = 0 allowed."""
    m = np.asarray(m, dtype=float)
    s = np.asarray(s, dtype=float)
    m, s = np.broadcast_arrays(m, s)
    pos = s > 0
    ss = np.where(pos, s, 1.0)
    a = (-b - m) / ss
    c = (b - m) / ss
    Pa, Pc = ndtr(a), ndtr(c)
    pa, pc = np.exp(-0.5 * a * a) / math.sqrt(2 * math.pi), np.exp(-0.5 * c * c) / math.sqrt(2 * math.pi)
    mid = Pc - Pa
    e1_mid = m * mid + ss * (pa - pc)
    e2_mid = (m * m + ss * ss) * mid + 2.0 * m * ss * (pa - pc) + ss * ss * (a * pa - c * pc)
    e1 = -b * Pa + b * (1.0 - Pc) + e1_mid
    e2 = b * b * (Pa + 1.0 - Pc) + e2_mid
    cm = np.clip(m, -b, b)
    return np.where(pos, e1, cm), np.where(pos, e2, cm * cm)


@dataclass(frozen=True, eq=False)
class TalagrandConfig:
    """Finite class of linear functions f_t(x) = clip(<w_t, x>, -b, b) on Gaussian tasks.

    weights: (M, p, T); means: (T, p); covariances: (T, p, p).
    """

    weights: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    n: int
    x: float
    family: HypothesisFamily
    b: float = 1.0
    redraws: int = 10_000
    seed: int = 0
    rademacher_draws: int = 4_000

    @classmethod
    def random(cls, M=50, T=3, n=20, p=4, x=1.0, family=None, b=1.0, redraws=10_000, seed=0,
               rademacher_draws=4_000):
        rng = np.random.default_rng([int(seed), 7919])
        family = family or HypothesisFamily.group(2, 1.0)
        W = []
        for _ in range(M):
            Wm = rng.standard_normal((p, T))
            Wm *= family.rho * rng.uniform(0.2, 1.0) / family_norm(Wm, family)
            W.append(Wm)
        means = 0.3 * rng.standard_normal((T, p))
        covs = np.array([EigenSystem.random(1, p, rng).covariances()[0] for _ in range(T)])
        return cls(np.array(W), means, covs, n, x, family, b, redraws, seed, rademacher_draws)


@dataclass(frozen=True)
class TalagrandResult:
    violation_frequency: float
    std_error: float
    violations: int
    redraws: int
    rhs: float
    rademacher: float
    rademacher_std_error: float
    r: float
    expected_bound: float

    def as_dict(self):
        return dict(self.__dict__)


def _class_values(W, X, b):
    """clip(<w_t, x>) for all functions, draws and samples: (m, M, T, n)."""
    return np.clip(np.einsum("mtni,Mit->mMtn", X, W), -b, b)


def _gaussian_tasks(rng, means, chol, m, n):
    Z = rng.standard_normal((m, means.shape[0], n, means.shape[1]))
    return means[None, :, None, :] + np.einsum("mtnj,tij->mtni", Z, chol)


def talagrand_experiment(config: TalagrandConfig) -> TalagrandResult:
    W = np.asarray(config.weights, float)
    M, p, T = W.shape
    fam = config.family
    for Wm in W:
        if family_norm(Wm, fam) > fam.rho * (1 + 1e-10):
            raise InvalidInput("class member lies outside the hypothesis ball")
    means = np.asarray(config.means, float)
    covs = np.asarray(config.covariances, float)
    n, b, x = config.n, config.b, config.x
    params = ProblemParams(n, T)

    mu = np.einsum("Mit,ti->Mt", W, means)
    sd = np.sqrt(np.maximum(np.einsum("Mit,tij,Mjt->Mt", W, covs, W), 0.0))
    e1, e2 = clipped_normal_moments(mu, sd, b)
    Pf = e1.mean(axis=1)
    r = float(e2.mean(axis=1).max())

    vals, ev = np.linalg.eigh(covs)
    chol = np.einsum("tij,tj->tij", ev, np.sqrt(np.clip(vals, 0.0, None)))
    chunk = 256

    def rad_chunk(k):
        a = k * chunk
        m = min(chunk, config.rademacher_draws - a)
        rng = np.random.default_rng([int(config.seed), 1, k])
        F = _class_values(W, _gaussian_tasks(rng, means, chol, m, n), b)
        sig = 2.0 * rng.integers(0, 2, size=(m, 1, T, n)) - 1.0
        return (sig * F).sum(axis=(2, 3)).max(axis=1) / (n * T)

    rad_vals = np.concatenate(parallel_map(rad_chunk, range(math.ceil(config.rademacher_draws / chunk))))
    rad = float(rad_vals.mean())
    rad_se = float(rad_vals.std(ddof=1) / math.sqrt(len(rad_vals))) if len(rad_vals) > 1 else 0.0
    rhs = talagrand_rhs(rad, r, x, params, b)

    def z_chunk(k):
        a = k * chunk
        m = min(chunk, config.redraws - a)
        rng = np.random.default_rng([int(config.seed), 2, k])
        F = _class_values(W, _gaussian_tasks(rng, means, chol, m, n), b)
        Pn = F.mean(axis=(2, 3))
        return (Pf[None, :] - Pn).max(axis=1)

    Z = np.concatenate(parallel_map(z_chunk, range(math.ceil(config.redraws / chunk))))
    v = int(np.sum(Z > rhs))
    freq = v / len(Z)
    return TalagrandResult(
        violation_frequency=freq,
        std_error=math.sqrt(max(freq * (1 - freq), 0.0) / len(Z)),
        violations=v,
        redraws=len(Z),
        rhs=rhs,
        rademacher=rad,
        rademacher_std_error=rad_se,
        r=r,
        expected_bound=math.exp(-x),
    )
