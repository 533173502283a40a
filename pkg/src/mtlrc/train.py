"""Synthetic multi-task regression and ball-constrained least squares by Frank-Wolfe.

The training objective is the empirical squared loss averaged over all n T
points. Clipping of |f - y| to [0, 1] only enters evaluation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .core import GRAPH, HypothesisFamily, InvalidInput, build_graph_operator, complete_graph
from .empirical import EigenSystem, MultiTaskSample, clipped_normal_moments
from .norms import dual_norm, family_norm, in_ball, lmo

__all__ = [
    "SyntheticTaskConfig",
    "TaskDistribution",
    "TrainedModel",
    "generate_tasks",
    "lmo",
    "train_frank_wolfe",
    "graph_quadratic_oracle",
    "least_squares_oracle",
    "risk_report",
    "bernstein_check",
    "in_ball_all",
]

STRUCTURES = ("shared_low_rank", "group_sparse", "graph_smooth")
FEATURES = ("gaussian", "uniform")
TRUTH_FRACTION = 0.8


@dataclass(frozen=True)
class SyntheticTaskConfig:
    """Generator settings.

    ``group_sparse`` keeps ``support`` shared feature rows active in every task;
    ``graph_smooth`` draws W = Z D^(-1/2) so neighbouring tasks stay close.
    Uniform features live on [-feature_bound, feature_bound]^p.
    """

    T: int
    n: int
    p: int
    family: HypothesisFamily
    structure: str = "shared_low_rank"
    rank: int = 1
    support: int = 2
    noise_std: float = 0.0
    features: str = "gaussian"
    feature_decay: float = 1.0
    feature_bound: float = 1.0
    clip: bool = False

    def __post_init__(self):
        if min(self.T, self.n, self.p) < 1:
            raise InvalidInput("T, n and p must be positive")
        if self.structure not in STRUCTURES:
            raise InvalidInput(f"structure must be one of {STRUCTURES}")
        if self.features not in FEATURES:
            raise InvalidInput(f"features must be one of {FEATURES}")
        if not 1 <= self.rank <= min(self.p, self.T):
            raise InvalidInput("rank must lie in [1, min(p, T)]")
        if not 1 <= self.support <= self.p:
            raise InvalidInput("support must lie in [1, p]")
        if self.noise_std < 0 or self.feature_bound <= 0:
            raise InvalidInput("noise_std must be >= 0 and feature_bound > 0")
        if self.family.kind == GRAPH and self.family.graph_op.T != self.T:
            raise InvalidInput("graph operator size does not match T")

    @property
    def kernel_bound(self) -> float:
        """sup ||x||^2 for bounded features; inf for Gaussian ones."""
        return self.p * self.feature_bound ** 2 if self.features == "uniform" else math.inf


@dataclass(frozen=True, eq=False)
class TaskDistribution:
    """Analytic handle on the generating distribution of every task."""

    W_true: np.ndarray
    covariances: np.ndarray
    noise_std: float
    features: str
    feature_bound: float
    clip: bool
    eigensystem: EigenSystem | None = None

    @property
    def T(self) -> int:
        return self.W_true.shape[1]

    @property
    def p(self) -> int:
        return self.W_true.shape[0]

    def sample(self, n: int, rng) -> MultiTaskSample:
        if self.features == "gaussian":
            X = self.eigensystem.sample(n, rng)
        else:
            a = self.feature_bound
            X = rng.uniform(-a, a, size=(self.T, n, self.p))
        y = np.einsum("tni,it->tn", X, self.W_true)
        if self.noise_std > 0:
            y = y + self.noise_std * rng.standard_normal(y.shape)
        return MultiTaskSample(X, y)

    def label_second_moments(self) -> np.ndarray:
        """E y_t^2 = w_t' Sigma_t w_t + noise^2 per task."""
        W = self.W_true
        return np.einsum("it,tij,jt->t", W, self.covariances, W) + self.noise_std ** 2

    def clip_inactive(self, W) -> bool:
        """True when |f - y| <= 1 almost surely, so clipping never changes the loss."""
        if self.features != "uniform" or self.noise_std > 0:
            return False
        delta = np.asarray(W, float) - self.W_true
        return bool(np.all(self.feature_bound * np.abs(delta).sum(axis=0) <= 1.0))

    def risk(self, W) -> float:
        """Exact P loss of f(x) = <w_t, x> for the (optionally clipped) squared loss."""
        delta = np.asarray(W, float) - self.W_true
        var = np.einsum("it,tij,jt->t", delta, self.covariances, delta) + self.noise_std ** 2
        if not self.clip or self.clip_inactive(W):
            return float(var.mean())
        if self.features == "gaussian":
            _, e2 = clipped_normal_moments(0.0, np.sqrt(var), 1.0)
            return float(np.mean(e2))
        raise InvalidInput("clipped risk has no closed form for uniform features once the clip is active")


def _truth(config: SyntheticTaskConfig, rng) -> np.ndarray:
    T, p = config.T, config.p
    if config.structure == "shared_low_rank":
        W = rng.standard_normal((p, config.rank)) @ rng.standard_normal((config.rank, T))
    elif config.structure == "group_sparse":
        W = np.zeros((p, T))
        rows = rng.choice(p, size=config.support, replace=False)
        W[rows] = rng.standard_normal((config.support, T))
    else:
        op = config.family.graph_op if config.family.kind == GRAPH else build_graph_operator(complete_graph(T), 1.0)
        W = rng.standard_normal((p, T)) @ op.inv_sqrt_D()
    return W * (TRUTH_FRACTION * config.family.rho / family_norm(W, config.family))


def generate_tasks(config: SyntheticTaskConfig, seed: int):
    """Draw (training sample, W_true, distribution handle) reproducibly from ``seed``."""
    rng = np.random.default_rng([int(seed), 31])
    W = _truth(config, rng)
    if config.features == "gaussian":
        eig = EigenSystem.random(config.T, config.p, rng, config.feature_decay)
        covs = eig.covariances()
    else:
        eig = None
        covs = np.broadcast_to(np.eye(config.p) * config.feature_bound ** 2 / 3.0,
                               (config.T, config.p, config.p)).copy()
    handle = TaskDistribution(W, covs, config.noise_std, config.features, config.feature_bound,
                              config.clip, eig)
    return handle.sample(config.n, rng), W, handle


# -- least squares over a ball ------------------------------------------------


class _Quadratic:
    """F(W) = (1/nT) sum_t ||X_t w_t - y_t||^2 through per-task moments."""

    def __init__(self, sample: MultiTaskSample):
        if sample.labels is None:
            raise InvalidInput("training needs labels")
        X, y = sample.features, sample.labels
        self.nT = sample.n * sample.T
        self.H = np.einsum("tni,tnj->tij", X, X)
        self.c = np.einsum("tni,tn->it", X, y)
        self.yy = float(np.sum(y * y))

    def value(self, W) -> float:
        quad = np.einsum("it,tij,jt->", W, self.H, W)
        return float(quad - 2.0 * np.sum(W * self.c) + self.yy) / self.nT

    def grad(self, W) -> np.ndarray:
        return 2.0 * (np.einsum("tij,jt->it", self.H, W) - self.c) / self.nT

    def curvature(self, D) -> float:
        return float(np.einsum("it,tij,jt->", D, self.H, D)) / self.nT


@dataclass(frozen=True, eq=False)
class TrainedModel:
    W: np.ndarray
    family: HypothesisFamily
    objective_trace: list
    duality_gap_trace: list
    iterations: int
    converged: bool
    iterates: list | None = field(default=None, repr=False)

    @property
    def objective(self) -> float:
        return self.objective_trace[-1]

    def predict(self, X) -> np.ndarray:
        return np.einsum("tni,it->tn", np.asarray(X, float), self.W)


def train_frank_wolfe(sample: MultiTaskSample, family: HypothesisFamily, max_iters: int = 10_000,
                      tol: float = 1e-6, keep_iterates: bool = False) -> TrainedModel:
    """Frank-Wolfe from W = 0 with exact line search; stops once the duality gap is <= tol."""
    if max_iters < 0:
        raise InvalidInput("max_iters must be non-negative")
    F = _Quadratic(sample)
    W = np.zeros((sample.p, sample.T))
    objs, gaps = [F.value(W)], []
    iterates = [W.copy()] if keep_iterates else None
    converged = False
    it = 0
    for it in range(1, max_iters + 1):
        G = F.grad(W)
        S = lmo(G, family)
        D = S - W
        gap = float(-np.sum(D * G))
        gaps.append(gap)
        if gap <= tol:
            converged = True
            it -= 1
            break
        curv = F.curvature(D)
        step = 1.0 if curv <= 0 else min(1.0, gap / (2.0 * curv))
        W = W + step * D
        objs.append(F.value(W))
        if keep_iterates:
            iterates.append(W.copy())
    else:
        G = F.grad(W)
        gaps.append(float(np.sum(W * G) + family.rho * float(dual_norm(G, family))))
        converged = gaps[-1] <= tol
    return TrainedModel(W, family, objs, gaps, it, converged, iterates)


def least_squares_oracle(sample: MultiTaskSample) -> np.ndarray:
    """Per-task minimum-norm least squares, column by column."""
    X, y = sample.features, sample.labels
    return np.stack([np.linalg.lstsq(X[t], y[t], rcond=None)[0] for t in range(sample.T)], axis=1)


def graph_quadratic_oracle(sample: MultiTaskSample, family: HypothesisFamily):
    """Exact minimiser of the squared loss over the graph ball, via its KKT multiplier.

    Returns (W, objective).
    """
    if family.kind != GRAPH:
        raise InvalidInput("graph oracle needs the graph family")
    F = _Quadratic(sample)
    p, T = sample.p, sample.T
    # vec(W) stacks columns, so the Hessian is block diagonal in t
    H = np.zeros((p * T, p * T))
    for t in range(T):
        H[t * p:(t + 1) * p, t * p:(t + 1) * p] = F.H[t]
    Dk = np.kron(family.graph_op.D, np.eye(p))
    b = F.c.T.ravel()

    def solve(lam):
        return np.linalg.solve(H + lam * Dk, b) if lam > 0 else np.linalg.lstsq(H, b, rcond=None)[0]

    def excess(lam):
        w = solve(lam)
        return float(w @ Dk @ w) - family.rho ** 2

    lam = 0.0
    if excess(0.0) > 0:
        scale = float(np.trace(H)) / (p * T) or 1.0
        hi = scale
        while excess(hi) > 0:
            hi *= 4.0
        lam = brentq(excess, 0.0, hi, xtol=1e-16 * scale, rtol=1e-15, maxiter=500)
    W = solve(lam).reshape(T, p).T
    return W, F.value(W)


# -- evaluation ---------------------------------------------------------------


def _weights(model):
    return model.W if isinstance(model, TrainedModel) else np.asarray(model, float)


def _empirical_loss(W, sample: MultiTaskSample, clip: bool) -> float:
    res = np.einsum("tni,it->tn", sample.features, W) - sample.labels
    if clip:
        res = np.clip(np.abs(res), 0.0, 1.0)
    return float(np.mean(res * res))


def risk_report(model, source, f_star_proxy=None, train_sample: MultiTaskSample | None = None,
                clip: bool | None = None, seed: int = 0, proxy_factor: int = 50,
                proxy_tol: float = 1e-7) -> dict:
    """Empirical loss, population loss and excess over a proxy for the class optimum.

    ``source`` is a TaskDistribution (exact risk) or a holdout MultiTaskSample.
    Without an explicit proxy one is trained on ``proxy_factor`` times the
    training size drawn from the distribution. The excess is not clamped.
    """
    W = _weights(model)
    if isinstance(source, TaskDistribution):
        clip = source.clip if clip is None else clip
        risk = source.risk
    elif isinstance(source, MultiTaskSample):
        clip = bool(clip)
        risk = lambda V: _empirical_loss(V, source, clip)
    else:
        raise InvalidInput("source must be a TaskDistribution or a holdout sample")

    if f_star_proxy is None:
        if not isinstance(source, TaskDistribution) or not isinstance(model, TrainedModel):
            raise InvalidInput("a proxy can only be trained from a distribution handle and a trained model")
        n = train_sample.n if train_sample is not None else 1
        big = source.sample(proxy_factor * n, np.random.default_rng([int(seed), 53]))
        f_star_proxy = train_frank_wolfe(big, model.family, tol=proxy_tol)
    W_star = _weights(f_star_proxy)

    out = {"population_loss": risk(W), "proxy_population_loss": risk(W_star)}
    out["excess"] = out["population_loss"] - out["proxy_population_loss"]
    if train_sample is not None:
        out["empirical_loss"] = _empirical_loss(W, train_sample, clip)
    if isinstance(source, TaskDistribution):
        out["excess_vs_truth"] = out["population_loss"] - risk(source.W_true)
    return out


def bernstein_check(iterates, sample: MultiTaskSample, f_star, B_prime: float = 1.0,
                    slack: float = 1e-6) -> dict:
    """Check P_n (f - f*)^2 <= B' P_n (l_f - l_f*) with the clipped squared loss for each iterate."""
    W_star = _weights(f_star)
    X = sample.features
    base = np.einsum("tni,it->tn", X, W_star)
    l_star = _empirical_loss(W_star, sample, clip=True)
    worst = -math.inf
    for W in iterates:
        W = _weights(W)
        lhs = float(np.mean((np.einsum("tni,it->tn", X, W) - base) ** 2))
        rhs = B_prime * (_empirical_loss(W, sample, clip=True) - l_star)
        worst = max(worst, lhs - rhs)
    return {"max_violation": worst, "passed": worst <= slack, "count": len(iterates)}


def in_ball_all(iterates, family: HypothesisFamily, rel_tol: float = 1e-8) -> bool:
    return all(in_ball(W, family, rel_tol) for W in iterates)
