"""Closed-form local and global Rademacher complexity bounds.

Every local bound is an explicit function of the variance radius r. The
group bounds for q <= 2 take a minimum over an exponent grid (kappa in
[q, 2]); everything else is a single formula.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import (
    GRAPH,
    GROUP,
    SCHATTEN,
    GraphOperator,
    HypothesisFamily,
    InvalidInput,
    LossSpec,
    ProblemParams,
    TaskSpectra,
    dual_exponent,
    power_norm,
)

KAPPA_GRID_SIZE = 64
KAPPA_CAP = 64.0


class PreconditionWarning(UserWarning):
    """A theorem hypothesis does not hold; the value is still returned."""


@dataclass(frozen=True)
class BoundValue:
    """A bound value plus its named parts.

    Keys used in ``components``: ``A1`` (truncation term), ``A2`` (dual term),
    ``main`` (the square-root term of min-form bounds), ``additive`` and
    ``kappa_star`` when an exponent was optimised.
    """

    value: float
    components: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


@dataclass(frozen=True)
class StrongConvexityParams:
    mu: float

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidInput("strong convexity modulus must be positive")

    @classmethod
    def for_family(cls, family: HypothesisFamily) -> "StrongConvexityParams":
        # 1/q* for group norms, q - 1 for Schatten norms, 1 for the graph form
        if family.kind == GRAPH:
            return cls(1.0)
        if family.q <= 1.0:
            raise InvalidInput("q = 1 balls are not strongly convex")
        if family.kind == GROUP:
            return cls(1.0 / family.q_star)
        return cls(family.q - 1.0)


def _check_r(r):
    if not r > 0:
        raise InvalidInput(f"variance radius must be positive, got {r}")


def _min_sums(spectra: TaskSpectra, cap, scale) -> np.ndarray:
    """Per-task sum_j min(cap, scale_t * lambda_t^j)."""
    scale = np.broadcast_to(np.asarray(scale, float), (spectra.T,))
    return np.array(
        [np.minimum(cap, s * lam).sum() for lam, s in zip(spectra.per_task, scale)]
    )


def kappa_star_grid(q: float, T: int) -> np.ndarray:
    """Dual exponents kappa* in [2, q*] searched by the group q <= 2 bounds.

    q = 1 has q* = inf; the grid is then capped at max(64, log T). log T is
    added when T >= e^2 and it falls inside the range.
    """
    qs = dual_exponent(q)
    hi = qs if math.isfinite(qs) else max(KAPPA_CAP, math.log(T))
    if hi <= 2.0:
        return np.array([2.0])
    grid = np.geomspace(2.0, hi, KAPPA_GRID_SIZE)
    logT = math.log(T)
    if T >= math.e ** 2 and 2.0 <= logT <= hi:
        grid = np.unique(np.append(grid, logT))
    return grid


def _kappas(q, T, strategy):
    if strategy == "grid":
        return kappa_star_grid(q, T)
    qs = dual_exponent(q)
    if strategy == "fixed":
        if not math.isfinite(qs):
            raise InvalidInput("q = 1 needs the grid or log-T strategy")
        return np.array([qs])
    if strategy == "logT":
        hi = qs if math.isfinite(qs) else max(KAPPA_CAP, math.log(T))
        return np.array([min(max(math.log(T), 2.0), hi)])
    raise InvalidInput(f"unknown kappa strategy {strategy!r}")


def _check_low_q(q):
    if not 1.0 <= q <= 2.0:
        raise InvalidInput("this bound needs q in [1, 2]; use the q >= 2 variant")


def group_lrc_at_kappa(r, ks, spectra, params, radius):
    """Group bound at one dual exponent ks: (value, main, additive)."""
    T = params.T
    tau = T ** (1.0 - 2.0 / ks)
    sums = _min_sums(spectra, r * tau, 2.0 * math.e * ks ** 2 * radius ** 2 / T)
    main = math.sqrt(4.0 / params.nT * power_norm(sums, ks / 2.0))
    add = math.sqrt(2.0 * params.kernel_bound * math.e) * radius * ks * T ** (1.0 / ks) / params.nT
    return main + add, main, add


def lrc_group(r, q, spectra: TaskSpectra, params: ProblemParams, radius, kappa_strategy="grid") -> BoundValue:
    """Local bound for the L_{2,q} ball, q in [1, 2], minimised over kappa."""
    _check_r(r)
    _check_low_q(q)
    best = None
    for ks in _kappas(q, params.T, kappa_strategy):
        val, main, add = group_lrc_at_kappa(r, ks, spectra, params, radius)
        if best is None or val < best[0]:
            best = (val, main, add, ks)
    val, main, add, ks = best
    return BoundValue(val, {"main": main, "additive": add, "kappa_star": float(ks)})


def lrc_group_high_q(r, q, spectra: TaskSpectra, params: ProblemParams, radius) -> BoundValue:
    """Local bound for the L_{2,q} ball with q >= 2 (no additive term)."""
    _check_r(r)
    if not q >= 2.0:
        raise InvalidInput("this bound needs q >= 2")
    qs = dual_exponent(q)
    T = params.T
    tau = T ** (1.0 - 2.0 / qs)
    sums = _min_sums(spectra, r * tau, 2.0 * radius ** 2 / T)
    main = math.sqrt(4.0 / params.nT * power_norm(sums, qs / 2.0))
    return BoundValue(main, {"main": main, "additive": 0.0})


def schatten_prefactor(q: float) -> float:
    """2 q* for q in (1, 2], 2 for q >= 2; q = 1 uses 2 (the trace-norm convention q* = 1)."""
    if q == 1.0:
        return 2.0
    if q <= 2.0:
        return 2.0 * dual_exponent(q)
    return 2.0


def lrc_schatten(r, q, spectra: TaskSpectra, params: ProblemParams, radius) -> BoundValue:
    _check_r(r)
    if not q >= 1:
        raise InvalidInput("q must be >= 1")
    T = params.T
    sums = _min_sums(spectra, r, schatten_prefactor(q) * radius ** 2 / T)
    main = math.sqrt(4.0 / params.nT * sums.sum())
    return BoundValue(main, {"main": main, "additive": 0.0})


def lrc_graph(r, spectra: TaskSpectra, graph_op: GraphOperator, params: ProblemParams, radius) -> BoundValue:
    _check_r(r)
    if graph_op.T != params.T or spectra.T != params.T:
        raise InvalidInput("graph operator, spectra and params disagree on T")
    T = params.T
    sums = _min_sums(spectra, r, 2.0 * graph_op.d_inv_diag * radius ** 2 / T)
    main = math.sqrt(4.0 / params.nT * sums.sum())
    return BoundValue(main, {"main": main, "additive": 0.0})


def lrc_lower_group(r, q, spectra: TaskSpectra, params: ProblemParams, radius, c=1.0) -> float:
    """Lower bound driven by the first task's spectrum alone.

    Emits a PreconditionWarning when r < 1/n or lambda_1^1 < 1/(n R^2).
    """
    n, T = params.n, params.T
    lam = spectra.per_task[0]
    if r < 1.0 / n or lam[0] < 1.0 / (n * radius ** 2):
        warnings.warn(
            "lower bound hypotheses r >= 1/n and lambda_1 >= 1/(n R^2) do not hold",
            PreconditionWarning,
            stacklevel=2,
        )
    qs = dual_exponent(q)
    tau = T ** (1.0 - 2.0 / qs) if math.isfinite(qs) else float(T)
    s = np.minimum(r * tau, radius ** 2 / T * lam).sum()
    return math.sqrt(c / (n * tau) * s)


def lrc_family(r, family: HypothesisFamily, spectra: TaskSpectra, params: ProblemParams,
               kappa_strategy="grid") -> BoundValue:
    """Dispatch to the local bound matching the family (group q <= 2 uses the kappa form)."""
    R = family.radius
    if family.kind == GROUP:
        if family.q <= 2.0:
            return lrc_group(r, family.q, spectra, params, R, kappa_strategy)
        return lrc_group_high_q(r, family.q, spectra, params, R)
    if family.kind == SCHATTEN:
        return lrc_schatten(r, family.q, spectra, params, R)
    return lrc_graph(r, spectra, family.graph_op, params, R)


# -- global bounds ------------------------------------------------------------


def grc_group(q, spectra: TaskSpectra, params: ProblemParams, radius, kappa_strategy="grid") -> BoundValue:
    n, T = params.n, params.T
    tr = spectra.traces()
    if q > 2.0:
        qs = dual_exponent(q)
        main = math.sqrt(2.0 * radius ** 2 / (n * T ** 2) * power_norm(tr, qs / 2.0))
        return BoundValue(main, {"main": main, "additive": 0.0})
    _check_low_q(q)
    best = None
    for ks in _kappas(q, T, kappa_strategy):
        main = math.sqrt(2.0 * math.e * ks ** 2 * radius ** 2 / (n * T ** 2) * power_norm(tr, ks / 2.0))
        add = math.sqrt(2.0 * params.kernel_bound * math.e) * radius * ks * T ** (1.0 / ks) / params.nT
        if best is None or main + add < best[0]:
            best = (main + add, main, add, ks)
    val, main, add, ks = best
    return BoundValue(val, {"main": main, "additive": add, "kappa_star": float(ks)})


def grc_schatten(q, spectra: TaskSpectra, params: ProblemParams, radius) -> BoundValue:
    n, T = params.n, params.T
    main = math.sqrt(schatten_prefactor(q) * radius ** 2 / (n * T ** 2) * spectra.traces().sum())
    return BoundValue(main, {"main": main, "additive": 0.0})


def grc_graph(spectra: TaskSpectra, graph_op: GraphOperator, params: ProblemParams, radius) -> BoundValue:
    n, T = params.n, params.T
    weighted = graph_op.d_inv_diag * spectra.traces()
    main = math.sqrt(2.0 * radius ** 2 / (n * T ** 2) * weighted.sum())
    return BoundValue(main, {"main": main, "additive": 0.0})


def grc_family(family: HypothesisFamily, spectra: TaskSpectra, params: ProblemParams,
               kappa_strategy="grid") -> BoundValue:
    if family.kind == GROUP:
        return grc_group(family.q, spectra, params, family.radius, kappa_strategy)
    if family.kind == SCHATTEN:
        return grc_schatten(family.q, spectra, params, family.radius)
    return grc_graph(spectra, family.graph_op, params, family.radius)


def grc_trace_competitor(lambda_max_task_avg, params: ProblemParams, radius, loss: LossSpec, x) -> float:
    """Previously published global trace-norm excess-risk bound, for side-by-side comparison."""
    n, nT = params.n, params.nT
    L = loss.L
    lead = math.sqrt(lambda_max_task_avg / n) + 5.0 * math.sqrt((math.log(nT) + 1.0) / nT)
    return 2.0 * math.sqrt(2.0) * L * radius * lead + math.sqrt(loss.b * L * x / nT)


# -- generic bounds -----------------------------------------------------------


def _truncation_term(r, h, params):
    h = np.asarray(h, dtype=float)
    if np.any(h < 0):
        raise InvalidInput("truncation levels must be non-negative")
    return math.sqrt(r * h.sum() / params.nT)


def generic_lrc_strong_convex(r, h, mu, dual_sq_expectation, params: ProblemParams, radius) -> BoundValue:
    """Two-term bound from a mu-strongly convex regulariser at truncation h."""
    mu = mu.mu if isinstance(mu, StrongConvexityParams) else float(mu)
    if not mu > 0:
        raise InvalidInput("mu must be positive")
    a1 = _truncation_term(r, h, params)
    a2 = radius / params.T * math.sqrt(2.0 / mu * dual_sq_expectation)
    return BoundValue(a1 + a2, {"A1": a1, "A2": a2})


def generic_lrc_holder(r, h, dual_expectation, params: ProblemParams, radius) -> BoundValue:
    """Two-term bound from Hoelder's inequality at truncation h."""
    a1 = _truncation_term(r, h, params)
    a2 = math.sqrt(2.0) * radius / params.T * dual_expectation
    return BoundValue(a1 + a2, {"A1": a1, "A2": a2})
