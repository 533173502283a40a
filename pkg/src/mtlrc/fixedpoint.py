"""Sub-root fixed points and the excess-risk bounds assembled from them."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .bounds import kappa_star_grid, lrc_family, schatten_prefactor
from .core import (
    GRAPH,
    GROUP,
    SCHATTEN,
    ConfidenceParams,
    HypothesisFamily,
    InvalidInput,
    LossSpec,
    PowerLawDecay,
    ProblemParams,
    TaskSpectra,
    dual_exponent,
    power_norm,
)

# excess-risk coefficients: (r* factor, L b factor, B K factor)
CONVEX_COEFS = (32.0, 48.0, 16.0)
NONCONVEX_COEFS = (560.0, 48.0, 28.0)

BRACKET_GROWTH = 4.0
MAX_GROWTH_STEPS = 32  # 4**32 = 2**64
LO_START = 1e-15


class FixedPointDivergence(RuntimeError):
    """The predicate r > psi(r) never became true; psi is not sub-root."""


class ZeroFixedPoint(UserWarning):
    pass


@dataclass(frozen=True)
class SubRootBound:
    """A sub-root function r -> psi(r) with the smallest r it accepts."""

    evaluator: Callable[[float], float]
    domain_floor: float = 0.0

    def __call__(self, r: float) -> float:
        return float(self.evaluator(r))


@dataclass(frozen=True)
class FixedPointResult:
    r_star: float
    iterations: int
    residual: float
    method: str


@dataclass(frozen=True)
class DataDependentConstants:
    c1: float
    c2: float
    c3: float

    @classmethod
    def from_loss(cls, loss: LossSpec, K: float) -> "DataDependentConstants":
        L, b, B = loss.L, loss.b, loss.B
        c1 = 2.0 * L * max(B, 16.0 * L * b)
        c2 = 128.0 * L ** 2 * b ** 2 + 2.0 * b * c1
        c3 = 4.0 + 128.0 * K + 4.0 * B * (48.0 * L * b + 16.0 * B * K) / c2
        return cls(c1, c2, c3)


@dataclass(frozen=True)
class RiskBound:
    value: float
    confidence: float
    meta: dict = field(default_factory=dict)

    def __float__(self):
        return float(self.value)


# -- solving ------------------------------------------------------------------


def solve_fixed_point(psi, tol: float = 0.0, max_iter: int = 10_000) -> FixedPointResult:
    """Bisection on the monotone predicate r > psi(r).

    The upper end grows by a factor 4 until the predicate holds; the search
    stops once hi - lo <= tol (1 + hi), or when lo and hi are adjacent floats
    (the default), and returns hi.
    """
    if not tol >= 0:
        raise InvalidInput("tol must be non-negative")
    f = psi if callable(psi) else psi.evaluator
    floor = getattr(psi, "domain_floor", 0.0)
    above = lambda r: r > f(r)

    lo = max(LO_START, floor)
    it = 0
    if above(lo):
        # r* <= lo: walk down towards the domain floor
        hi = lo
        while True:
            nxt = max(lo / BRACKET_GROWTH, floor)
            if nxt >= lo or nxt < 1e-300:
                return FixedPointResult(lo, it, abs(f(lo) - lo), "bisection")
            it += 1
            if not above(nxt):
                lo = nxt
                break
            hi = lo = nxt
    else:
        hi = max(1.0, lo * BRACKET_GROWTH)
        it += 1
        if not above(hi):
            for _ in range(MAX_GROWTH_STEPS):
                lo, hi = hi, hi * BRACKET_GROWTH
                it += 1
                if above(hi):
                    break
            else:
                raise FixedPointDivergence("r > psi(r) never held; psi is not sub-root")
    # invariant: not above(lo), above(hi)
    while hi - lo > tol * (1.0 + hi) and it < max_iter:
        if lo > 0 and hi / lo > 4.0:
            mid = math.sqrt(lo * hi)
        else:
            mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if above(mid):
            hi = mid
        else:
            lo = mid
        it += 1
    return FixedPointResult(hi, it, abs(f(hi) - hi), "bisection")


def closed_form_quadratic(alpha: float, gamma: float):
    """Larger root of sqrt(alpha r) + gamma = r, and the simpler bound alpha + 2 gamma."""
    if alpha < 0 or gamma < 0:
        raise InvalidInput("alpha and gamma must be non-negative")
    if alpha == 0 and gamma == 0:
        warnings.warn("alpha = gamma = 0 gives the zero fixed point", ZeroFixedPoint, stacklevel=2)
        return 0.0, 0.0
    s = 0.5 * (math.sqrt(alpha) + math.sqrt(alpha + 4.0 * gamma))
    return s * s, alpha + 2.0 * gamma


def wrap_lrc(family: HypothesisFamily, spectra: TaskSpectra, params: ProblemParams, loss: LossSpec,
             kappa_strategy: str = "grid") -> SubRootBound:
    """psi(r) = 2 B L * LRC(r / 4L^2), the function whose fixed point drives the risk bounds."""
    B, L = loss.B, loss.L

    def psi(r):
        if r <= 0:
            return 0.0
        return 2.0 * B * L * lrc_family(r / (4.0 * L ** 2), family, spectra, params, kappa_strategy).value

    return SubRootBound(psi, 0.0)


def sub_root_check(psi, grid, slack: float = 1e-10) -> dict:
    """Largest relative violations of the three sub-root properties on a grid."""
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2 or np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise InvalidInput("grid must be strictly increasing and positive")
    f = psi if callable(psi) else psi.evaluator
    vals = np.array([f(r) for r in grid])
    scale = np.maximum(np.abs(vals), np.finfo(float).tiny)
    neg = float(np.max(np.maximum(-vals, 0.0) / scale))
    drop = np.maximum(vals[:-1] - vals[1:], 0.0) / scale[:-1]
    norm = vals / np.sqrt(grid)
    rise = np.maximum(norm[1:] - norm[:-1], 0.0) / np.maximum(np.abs(norm[:-1]), np.finfo(float).tiny)
    report = {
        "nonnegative": neg,
        "nondecreasing": float(drop.max(initial=0.0)),
        "sqrt_normalized_nonincreasing": float(rise.max(initial=0.0)),
    }
    report["passed"] = all(v <= slack for v in report.values())
    return report


# -- excess-risk assemblies ---------------------------------------------------


def _confidence_term(loss, conf, params, lb_coef, bk_coef):
    return (lb_coef * loss.L * loss.b + bk_coef * loss.B * conf.K) * conf.x / params.nT


def excess_risk_dist(r_star, loss: LossSpec, conf: ConfidenceParams, params: ProblemParams,
                     convex_class: bool = True) -> float:
    """Distribution-dependent excess risk from a fixed point r*."""
    if r_star < 0:
        raise InvalidInput("r* must be non-negative")
    a, lb, bk = CONVEX_COEFS if convex_class else NONCONVEX_COEFS
    return a * conf.K / loss.B * r_star + _confidence_term(loss, conf, params, lb, bk)


def excess_risk_data(r_hat_star, loss: LossSpec, conf: ConfidenceParams, params: ProblemParams) -> RiskBound:
    """Data-dependent excess risk; holds with probability 1 - 4 exp(-x)."""
    value = excess_risk_dist(r_hat_star, loss, conf, params, convex_class=True)
    return RiskBound(value, 1.0 - 4.0 * math.exp(-conf.x), {"r_hat_star": r_hat_star})


def talagrand_rhs(rademacher_value, r, conf_x, params: ProblemParams, b) -> float:
    nT = params.nT
    return 4.0 * rademacher_value + math.sqrt(8.0 * conf_x * r / nT) + 12.0 * b * conf_x / nT


def grc_excess_rhs(grc_value, loss: LossSpec, conf_x, params: ProblemParams) -> float:
    return 2.0 * loss.L * grc_value + math.sqrt(2.0 * loss.L * loss.b * conf_x / params.nT)


# -- truncation search --------------------------------------------------------


def _pnorm_replace(base: np.ndarray, t: int, cand: np.ndarray, p: float) -> np.ndarray:
    """power_norm of base with entry t replaced by each candidate value."""
    others = np.delete(base, t)
    m_other = others.max(initial=0.0)
    m = np.maximum(m_other, cand)
    safe = np.where(m > 0, m, 1.0)
    if math.isinf(p):
        return m
    s = ((others[None, :] / safe[:, None]) ** p).sum(axis=1) + (cand / safe) ** p
    return np.where(m > 0, m * s ** (1.0 / p), 0.0)


def minimize_truncation(head_coef: float, dual_coef: float, weights, tails_fn, h_max, p: float,
                        sweeps: int = 3):
    """Minimise head_coef * sum(h) + dual_coef * sqrt(||(w_t tail_t(h_t))||_p) over integer h.

    ``tails_fn(t, hs)`` returns the tail sums of task t at the integer levels hs.
    A common level is scanned first, then coordinate descent refines per task.
    Returns (value, h).
    """
    T = len(h_max)
    w = np.asarray(weights, float)
    tables = [w[t] * np.asarray(tails_fn(t, np.arange(h_max[t] + 1)), float) for t in range(T)]

    def objective(h):
        a = np.array([tables[t][h[t]] for t in range(T)])
        return head_coef * h.sum() + dual_coef * math.sqrt(power_norm(a, p))

    top = int(max(h_max))
    best_h, best = None, math.inf
    for c in range(top + 1):
        h = np.minimum(c, h_max)
        v = objective(h)
        if v < best:
            best, best_h = v, h.copy()
    h = best_h
    for _ in range(sweeps):
        changed = False
        for t in range(T):
            a = np.array([tables[s][h[s]] for s in range(T)])
            cand = tables[t]
            norms = _pnorm_replace(a, t, cand, p)
            vals = head_coef * (h.sum() - h[t] + np.arange(len(cand))) + dual_coef * np.sqrt(norms)
            k = int(np.argmin(vals))
            if vals[k] < best - 1e-15 * abs(best):
                best, changed = float(vals[k]), True
                h = h.copy()
                h[t] = k
        if not changed:
            break
    return objective(h), h


def _family_dual_forms(family: HypothesisFamily, T: int):
    """(coef, p, weights, kappa*) options for the dual term of the fixed-point bound."""
    if family.kind == GROUP:
        if family.q <= 2.0:
            return [(2.0 * math.e * ks ** 2, ks / 2.0, np.ones(T), ks) for ks in kappa_star_grid(family.q, T)]
        qs = dual_exponent(family.q)
        return [(2.0, qs / 2.0, np.ones(T), None)]
    if family.kind == SCHATTEN:
        return [(schatten_prefactor(family.q), 1.0, np.ones(T), None)]
    return [(2.0, 1.0, family.graph_op.d_inv_diag, None)]


def _tails_from(source, T):
    """(tails_fn, natural h_max or None) for finite spectra or a decay law."""
    if isinstance(source, TaskSpectra):
        cums = [np.concatenate([np.cumsum(lam[::-1])[::-1], [0.0]]) for lam in source.per_task]
        return (lambda t, hs: cums[t][hs]), np.array(source.lengths)
    if isinstance(source, PowerLawDecay):
        decay = source.with_tasks(T)
        d = np.array(decay.d)
        a = np.array(decay.alpha)
        full = decay.traces()

        def tails(t, hs):
            hs = np.asarray(hs, float)
            out = np.empty_like(hs)
            pos = hs > 0
            out[pos] = d[t] * hs[pos] ** (1.0 - a[t]) / (a[t] - 1.0)
            out[~pos] = full[t]
            return out

        return tails, None
    raise InvalidInput("expected TaskSpectra or PowerLawDecay")


def optimal_truncation(decay: PowerLawDecay, q: float, params: ProblemParams, radius, loss: LossSpec,
                       q_star: float | None = None) -> np.ndarray:
    """Continuous minimiser h_t of the power-law fixed-point bound."""
    decay = decay.with_tasks(params.T)
    qs = dual_exponent(q) if q_star is None else q_star
    if not math.isfinite(qs):
        raise InvalidInput("q = 1 has no finite optimum; pass q_star from the kappa grid")
    B, L, T, n = loss.B, loss.L, params.T, params.n
    base = 16.0 * math.e * qs ** 2 * radius ** 2 * B ** -2 * L ** 2 * T ** (2.0 / qs - 2.0) * n
    return np.array([(d * base) ** (1.0 / (1.0 + a)) for d, a in zip(decay.d, decay.alpha)])


def _h_caps(source: PowerLawDecay, T: int, head_coef: float, dual_coef: float, weights) -> np.ndarray:
    """4 * ceil(continuous optimum) + 8 per task for a decay-law search."""
    decay = source.with_tasks(T)
    caps = []
    for t, (d, a) in enumerate(zip(decay.d, decay.alpha)):
        k = dual_coef ** 2 * weights[t] * d * max(a - 1.0, 1.0) * T / (4.0 * head_coef ** 2)
        caps.append(4 * math.ceil(k ** (1.0 / (1.0 + a))) + 8)
    return np.array(caps, dtype=int)


def fixed_point_bound(family: HypothesisFamily, source, params: ProblemParams, loss: LossSpec,
                      h="auto", return_h: bool = False):
    """Closed-form upper bound on r*, minimised over integer truncation levels.

    ``source`` is either finite TaskSpectra (exact tails) or a PowerLawDecay
    (integral tail envelope, full trace d zeta(alpha) at h = 0).
    """
    T, n = params.T, params.n
    R, B, L = family.radius, loss.B, loss.L
    if family.kind == GRAPH and family.graph_op.T != T:
        raise InvalidInput("graph operator size does not match T")
    tails_fn, natural = _tails_from(source, T)
    head_coef = B ** 2 / (T * n)
    best = (math.inf, None)
    for coef, p, weights, ks in _family_dual_forms(family, T):
        dual_coef = 4.0 * B * L * math.sqrt(coef * R ** 2 / (n * T ** 2))
        additive = 0.0
        if ks is not None:
            additive = 4.0 * math.sqrt(2.0 * params.kernel_bound * math.e) * R * ks * B * L * T ** (1.0 / ks) / params.nT
        if isinstance(h, str):
            caps = natural if natural is not None else _h_caps(source, T, head_coef, dual_coef, weights)
            val, hv = minimize_truncation(head_coef, dual_coef, weights, tails_fn, caps, p)
        else:
            hv = np.broadcast_to(np.asarray(h, int), (T,)).copy()
            if natural is not None and np.any(hv > natural):
                raise InvalidInput("truncation beyond spectrum length")
            a = np.array([weights[t] * tails_fn(t, np.array([hv[t]]))[0] for t in range(T)])
            val = head_coef * hv.sum() + dual_coef * math.sqrt(power_norm(a, p))
        val += additive
        if val < best[0]:
            best = (val, hv)
    return best if return_h else best[0]


def fixed_point_power_law(decay: PowerLawDecay, q: float, params: ProblemParams, radius, loss: LossSpec,
                          kappa_strategy: str = "grid") -> float:
    """Closed-form power-law fixed-point bound for group norms with q in [1, 2]."""
    if not 1.0 <= q <= 2.0:
        raise InvalidInput("power-law fixed-point form needs q in [1, 2]")
    decay = decay.with_tasks(params.T)
    a, d = decay.alpha_min, decay.d_max
    B, L, T, n = loss.B, loss.L, params.T, params.n
    from .bounds import _kappas

    best = math.inf
    for ks in _kappas(q, T, kappa_strategy):
        inner = d * ks ** 2 * radius ** 2 * B ** -2 * L ** 2 * T ** (2.0 / ks - 2.0) * n
        val = 14.0 * B ** 2 / n * math.sqrt((a + 1) / (a - 1)) * inner ** (1.0 / (1.0 + a))
        val += 10.0 * math.sqrt(params.kernel_bound) * radius * B * L * ks * T ** (1.0 / ks) / params.nT
        best = min(best, val)
    return best


def excess_risk_family(family: HypothesisFamily, decay: PowerLawDecay, params: ProblemParams,
                       loss: LossSpec, conf: ConfidenceParams, kappa_strategy: str = "grid") -> float:
    """Closed-form power-law excess-risk bounds for the five family variants."""
    decay = decay.with_tasks(params.T)
    a, d = decay.alpha_min, decay.d_max
    R, L, B, K = family.radius, loss.L, loss.B, conf.K
    T, n = params.T, params.n
    shape = math.sqrt((a + 1) / (a - 1)) * B ** ((a - 1) / (a + 1)) * n ** (-a / (1 + a))
    tail = _confidence_term(loss, conf, params, 48.0, 16.0)
    e = 1.0 / (1.0 + a)

    if family.kind == GROUP and family.q <= 2.0:
        from .bounds import _kappas

        best = math.inf
        for ks in _kappas(family.q, T, kappa_strategy):
            kappa = ks / (ks - 1.0)
            lead = 448.0 * K * shape * (d * ks ** 2 * R ** 2 * L ** 2) ** e * (T ** (2.0 / kappa)) ** (-e)
            add = 320.0 * math.sqrt(params.kernel_bound) * R * K * L * ks * T ** (1.0 / ks) / params.nT
            best = min(best, lead + add)
        return best + tail
    if family.kind == GROUP:
        tq = T ** (2.0 / family.q) if math.isfinite(family.q) else 1.0
        return 256.0 * K * shape * (d * R ** 2 * L ** 2) ** e * tq ** (-e) + tail
    if family.kind == SCHATTEN:
        factor = schatten_prefactor(family.q) / 2.0
        return 256.0 * K * shape * (d * factor * R ** 2 * L ** 2) ** e * T ** (-e) + tail
    dmax = family.graph_op.d_inv_max
    return 256.0 * K * shape * (d * R ** 2 * L ** 2 * dmax) ** e * T ** (-e) + tail


def empirical_fixed_point_bound(gram_spectra: TaskSpectra, q: float, params: ProblemParams, radius,
                                loss: LossSpec, conf: ConfidenceParams, h="auto",
                                return_h: bool = False):
    """Bound on the empirical fixed point from normalised Gram spectra (group norms, q in [1, 2])."""
    if not 1.0 <= q <= 2.0:
        raise InvalidInput("data-dependent bound needs q in [1, 2]")
    if any(J != params.n for J in gram_spectra.lengths):
        raise InvalidInput("Gram spectra must have exactly n eigenvalues per task")
    T, n, L = params.T, params.n, loss.L
    cc = DataDependentConstants.from_loss(loss, conf.K)
    head_coef = cc.c1 ** 2 * cc.c3 / (n * T * L ** 2)
    tail = 2.0 * cc.c2 * conf.x / params.nT
    tails_fn, natural = _tails_from(gram_spectra, T)
    qs = dual_exponent(q)
    kss = kappa_star_grid(q, T) if not math.isfinite(qs) else [qs]
    best = (math.inf, None)
    for ks in kss:
        dual_coef = 4.0 * math.sqrt(2.0 * cc.c1 ** 2 * ks ** 2 * radius ** 2 / (n * T ** 2))
        if isinstance(h, str):
            val, hv = minimize_truncation(head_coef, dual_coef, np.ones(T), tails_fn, natural, ks / 2.0)
        else:
            hv = np.broadcast_to(np.asarray(h, int), (T,)).copy()
            a = np.array([tails_fn(t, np.array([hv[t]]))[0] for t in range(T)])
            val = head_coef * hv.sum() + dual_coef * math.sqrt(power_norm(a, ks / 2.0))
        if val < best[0]:
            best = (val, hv)
    val = best[0] + tail
    return (val, best[1]) if return_h else val
