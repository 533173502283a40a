"""Parameter sweeps and the trace-norm / graph comparisons, as plain tables.

Slopes are least-squares fits of log value against log grid value over the
upper half of each grid, where the additive O(1/n) terms have died out.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .bounds import grc_family, grc_trace_competitor, lrc_family
from .core import (
    ConfidenceParams,
    HypothesisFamily,
    InvalidInput,
    LossSpec,
    PowerLawDecay,
    ProblemParams,
    TaskSpectra,
    build_graph_operator,
    complete_graph,
    loglog_slope,
    parallel_map,
    path_graph,
    power_law_spectra,
)
from .fixedpoint import (
    excess_risk_family,
    fixed_point_bound,
    fixed_point_power_law,
    grc_excess_rhs,
)

VARY = ("n", "T", "r", "radius")
BOUNDS = ("lrc_excess", "grc_excess", "fixed_point", "lrc", "grc")


# -- config parsing -----------------------------------------------------------


def graph_from_dict(doc: dict, T: int):
    """Graph operator from {"weights": [[...]], "eta": .} or {"type": complete|path, "weight": ., "eta": .}."""
    eta = float(doc.get("eta", 1.0))
    if "weights" in doc:
        return build_graph_operator(doc["weights"], eta)
    kind = doc.get("type", "complete")
    w = float(doc.get("weight", 1.0))
    if kind == "complete":
        return build_graph_operator(complete_graph(T, w), eta)
    if kind == "path":
        return build_graph_operator(path_graph(T, w), eta)
    if kind == "empty":
        return build_graph_operator(np.zeros((T, T)), eta)
    raise InvalidInput(f"unknown graph type {kind!r}")


def family_from_dict(doc: dict, T: int, radius: float | None = None) -> HypothesisFamily:
    kind = doc.get("kind", "group")
    R = float(doc.get("radius", 1.0) if radius is None else radius)
    if kind == "group":
        return HypothesisFamily.group(float(doc.get("q", 2.0)), R)
    if kind == "schatten":
        return HypothesisFamily.schatten(float(doc.get("q", 2.0)), R)
    if kind == "graph":
        return HypothesisFamily.graph(graph_from_dict(doc.get("graph", {}), T), R)
    raise InvalidInput(f"unknown family kind {kind!r}")


def _grid(doc) -> np.ndarray:
    if isinstance(doc, dict):
        num = int(doc.get("num", 11))
        lo, hi = float(doc["start"]), float(doc["stop"])
        if doc.get("scale", "log") == "log":
            if "base" in doc:
                return float(doc["base"]) ** np.linspace(lo, hi, num)
            return np.geomspace(lo, hi, num)
        return np.linspace(lo, hi, num)
    return np.asarray(doc, dtype=float)


@dataclass(frozen=True)
class SweepConfig:
    """One varied parameter over a grid, everything else fixed.

    ``grid`` is a list of values or {"start", "stop", "num", "scale", "base"};
    with a ``base`` the endpoints are exponents.
    """

    vary: str
    grid: tuple
    family: dict = field(default_factory=lambda: {"kind": "schatten", "q": 1.0, "radius": 1.0})
    n: int = 1024
    T: int = 4
    r: float = 1e-2
    d: float = 1.0
    alpha: float = 3.0
    kernel_bound: float = 1.0
    L: float = 1.0
    b: float = 1.0
    B_prime: float = 1.0
    K: float = 2.0
    x: float = 1.0
    spectrum_length: int = 4096
    outputs: tuple = ("lrc_excess", "grc_excess")

    def __post_init__(self):
        if self.vary not in VARY:
            raise InvalidInput(f"vary must be one of {VARY}")
        grid = tuple(float(v) for v in _grid(self.grid))
        if len(grid) < 3:
            raise InvalidInput("grid needs at least 3 points")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise InvalidInput("grid must be strictly increasing")
        if any(v <= 0 for v in grid):
            raise InvalidInput("grid values must be positive")
        bad = [o for o in self.outputs if o not in BOUNDS]
        if bad:
            raise InvalidInput(f"unknown outputs {bad}; choose from {BOUNDS}")
        object.__setattr__(self, "grid", grid)
        object.__setattr__(self, "outputs", tuple(self.outputs))

    @classmethod
    def from_dict(cls, doc: dict) -> "SweepConfig":
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise InvalidInput(f"unknown sweep keys {sorted(extra)}")
        return cls(**doc)


def _point(cfg: SweepConfig, value: float) -> dict:
    n, T, r, R = cfg.n, cfg.T, cfg.r, None
    if cfg.vary == "n":
        n = int(round(value))
    elif cfg.vary == "T":
        T = int(round(value))
    elif cfg.vary == "r":
        r = value
    else:
        R = value
    family = family_from_dict(cfg.family, T, R)
    params = ProblemParams(n, T, cfg.kernel_bound)
    loss = LossSpec(cfg.L, cfg.b, cfg.B_prime)
    conf = ConfidenceParams(cfg.K, cfg.x)
    decay = PowerLawDecay(cfg.d, cfg.alpha).with_tasks(T)
    # global bounds only see traces, so one eigenvalue per task carries them exactly
    traces = TaskSpectra([[v] for v in decay.traces()])
    out = {}
    for name in cfg.outputs:
        if name == "lrc_excess":
            out[name] = excess_risk_family(family, decay, params, loss, conf)
        elif name == "grc":
            out[name] = float(grc_family(family, traces, params))
        elif name == "grc_excess":
            out[name] = grc_excess_rhs(float(grc_family(family, traces, params)), loss, cfg.x, params)
        elif name == "fixed_point":
            if family.kind == "group" and family.q <= 2.0:
                out[name] = fixed_point_power_law(decay, family.q, params, family.radius, loss)
            else:
                out[name] = fixed_point_bound(family, decay, params, loss)
        elif name == "lrc":
            spectra = power_law_spectra(decay, cfg.spectrum_length)
            out[name] = float(lrc_family(r, family, spectra, params))
    return out


def upper_half_slope(xs, ys) -> float:
    xs, ys = np.asarray(xs, float), np.asarray(ys, float)
    k = len(xs) // 2
    return loglog_slope(xs[k:], ys[k:])


@dataclass
class Table:
    """Rows plus fitted slopes; ``columns`` fixes the CSV header."""

    columns: tuple
    rows: list
    slopes: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def column(self, name):
        i = self.columns.index(name)
        return [row[i] for row in self.rows]

    def series(self, bound):
        """(grid, values) for one bound of a long-format table."""
        pairs = [(row[1], row[3]) for row in self.rows if row[2] == bound]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    def as_dict(self):
        return {"columns": list(self.columns), "rows": [list(r) for r in self.rows],
                "slopes": self.slopes, **self.meta}


def run_sweep(config: SweepConfig | dict) -> Table:
    cfg = config if isinstance(config, SweepConfig) else SweepConfig.from_dict(config)
    values = parallel_map(lambda v: _point(cfg, v), cfg.grid)
    rows = []
    for g, vals in zip(cfg.grid, values):
        for name in cfg.outputs:
            rows.append((cfg.vary, g, name, vals[name]))
    slopes = {}
    for name in cfg.outputs:
        ys = [v[name] for v in values]
        slopes[name] = upper_half_slope(cfg.grid, ys) if all(y > 0 for y in ys) else math.nan
    return Table(("parameter", "grid_value", "bound", "value"), rows, slopes)


def crossover(grid, local, global_) -> dict:
    """First grid point from which local < global holds to the end of the grid.

    ``unique`` is True when the sign of (local - global) changes exactly once.
    """
    diff = np.asarray(local, float) - np.asarray(global_, float)
    below = diff < 0
    changes = int(np.sum(below[1:] != below[:-1]))
    idx = None
    for i in range(len(below)):
        if below[i:].all():
            idx = i
            break
    return {
        "n0": None if idx is None else float(grid[idx]),
        "index": idx,
        "sign_changes": changes,
        "unique": changes == 1 and idx is not None and idx > 0,
    }


# -- trace-norm comparison ----------------------------------------------------


@dataclass(frozen=True)
class TraceComparisonConfig:
    """Trace-norm excess-risk curves: local, our global, and the published competitor.

    Tasks have rank-M covariances with top eigenvalue lambda_max; the local
    curve uses the envelope lambda_j <= d j^-alpha.
    """

    grid: tuple = field(default_factory=lambda: {"start": 8, "stop": 30, "num": 23, "base": 2.0})
    T: int = 10
    M: int = 5
    lambda_max: float = 1.0
    d: float = 1.0
    alpha: float = 3.0
    radius: float = 1.0
    L: float = 1.0
    b: float = 1.0
    B_prime: float = 1.0
    K: float = 2.0
    x: float = 1.0

    def __post_init__(self):
        grid = tuple(float(v) for v in _grid(self.grid))
        if len(grid) < 3 or any(b <= a for a, b in zip(grid, grid[1:])):
            raise InvalidInput("grid must be strictly increasing with at least 3 points")
        if self.M < 1 or self.lambda_max < 0:
            raise InvalidInput("need M >= 1 and lambda_max >= 0")
        object.__setattr__(self, "grid", grid)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


def _confidence_tail(loss, conf, nT):
    return (48.0 * loss.L * loss.b + 16.0 * loss.B * conf.K) * conf.x / nT


def local_trace_bound(n, T, d, alpha, radius, loss: LossSpec, conf: ConfidenceParams) -> float:
    a = alpha
    lead = 256.0 * conf.K * math.sqrt((a + 1) / (a - 1)) * (2.0 * d * radius ** 2 * loss.L ** 2) ** (1 / (1 + a))
    lead *= loss.B ** ((a - 1) / (a + 1)) * n ** (-a / (1 + a))
    return lead + _confidence_tail(loss, conf, n * T)


def global_trace_bound(n, T, M, lambda_max, radius, loss: LossSpec, x) -> float:
    return 4.0 * loss.L * radius * math.sqrt(M * lambda_max / n) + math.sqrt(loss.b * loss.L * x / (n * T))


def run_comparison_trace(config: TraceComparisonConfig | dict) -> Table:
    cfg = config if isinstance(config, TraceComparisonConfig) else TraceComparisonConfig.from_dict(config)
    loss = LossSpec(cfg.L, cfg.b, cfg.B_prime)
    conf = ConfidenceParams(cfg.K, cfg.x)
    rows = []
    for nv in cfg.grid:
        n = int(round(nv))
        params = ProblemParams(n, cfg.T)
        rows.append((
            float(n),
            local_trace_bound(n, cfg.T, cfg.d, cfg.alpha, cfg.radius, loss, conf),
            global_trace_bound(n, cfg.T, cfg.M, cfg.lambda_max, cfg.radius, loss, cfg.x),
            grc_trace_competitor(cfg.lambda_max, params, cfg.radius, loss, cfg.x),
        ))
    table = Table(("n", "local", "global", "competitor"), rows)
    grid = table.column("n")
    for name in ("local", "global", "competitor"):
        table.slopes[name] = upper_half_slope(grid, table.column(name))
    ordered = [l < g < c for _, l, g, c in rows]
    start = next((i for i in range(len(ordered)) if all(ordered[i:])), None)
    table.meta["ordering_threshold_n"] = None if start is None else grid[start]
    return table


# -- graph comparison ---------------------------------------------------------


@dataclass(frozen=True)
class GraphComparisonConfig:
    """Graph-regularised excess-risk curves over n (graph fixed) and over T.

    The T sweep holds the graph constants (delta_min, eta, max D^-1_tt) at
    their values for the configured operator and varies only the explicit T.
    """

    graph: dict = field(default_factory=lambda: {"type": "complete", "weight": 1.0, "eta": 0.5})
    T: int = 4
    n_grid: tuple = field(default_factory=lambda: {"start": 8, "stop": 30, "num": 23, "base": 2.0})
    T_grid: tuple = field(default_factory=lambda: {"start": 1, "stop": 16, "num": 16, "base": 2.0})
    n: int = 1024
    M: int = 5
    lambda_max: float = 1.0
    d: float = 1.0
    alpha: float = 3.0
    radius: float = 1.0
    L: float = 1.0
    b: float = 1.0
    B_prime: float = 1.0
    K: float = 2.0
    x: float = 1.0

    def __post_init__(self):
        for name in ("n_grid", "T_grid"):
            grid = tuple(float(v) for v in _grid(getattr(self, name)))
            if len(grid) < 3 or any(b <= a for a, b in zip(grid, grid[1:])):
                raise InvalidInput(f"{name} must be strictly increasing with at least 3 points")
            object.__setattr__(self, name, grid)

    @classmethod
    def from_dict(cls, doc):
        return cls(**doc)


def global_graph_bound(n, T, M, lambda_max, delta_min, eta, radius, loss: LossSpec, x) -> float:
    """Global graph bound with the eigenvalue route: 1/(delta_min + eta) + 1/(T eta)."""
    if eta <= 0 and delta_min <= 0:
        raise InvalidInput("delta_min = 0 together with eta = 0 is invalid")
    inner = 2.0 * M * lambda_max * (1.0 / (delta_min + eta) + 1.0 / (T * eta))
    return 2.0 * loss.L * radius / math.sqrt(n) * math.sqrt(inner) + math.sqrt(loss.b * loss.L * x / (n * T))


def global_graph_direct(n, graph_op, task_traces, radius, loss: LossSpec, x) -> float:
    """Global graph bound from sum_t D^-1_tt tr(J_t) directly."""
    T = graph_op.T
    weighted = float(np.sum(graph_op.d_inv_diag * np.asarray(task_traces, float)))
    return 2.0 * loss.L * radius / math.sqrt(n) * math.sqrt(2.0 * weighted / T) + math.sqrt(loss.b * loss.L * x / (n * T))


def local_graph_bound(n, T, d, alpha, radius, d_inv_max, loss: LossSpec, conf: ConfidenceParams) -> float:
    a = alpha
    lead = 256.0 * conf.K * math.sqrt((a + 1) / (a - 1)) * (d * radius ** 2 * loss.L ** 2 * d_inv_max) ** (1 / (1 + a))
    lead *= loss.B ** ((a - 1) / (a + 1)) * n ** (-a / (1 + a))
    return lead + _confidence_tail(loss, conf, n * T)


def run_comparison_graph(config: GraphComparisonConfig | dict) -> dict:
    """Two tables: an n sweep (graph fixed) and a T sweep of the distance to the T -> inf limit."""
    cfg = config if isinstance(config, GraphComparisonConfig) else GraphComparisonConfig.from_dict(config)
    op = graph_from_dict(cfg.graph, cfg.T)
    loss = LossSpec(cfg.L, cfg.b, cfg.B_prime)
    conf = ConfidenceParams(cfg.K, cfg.x)
    dmin, eta, dmax = op.delta_min, op.eta, op.d_inv_max
    traces = np.full(op.T, cfg.M * cfg.lambda_max)

    n_rows = []
    for nv in cfg.n_grid:
        n = int(round(nv))
        n_rows.append((
            float(n),
            global_graph_bound(n, op.T, cfg.M, cfg.lambda_max, dmin, eta, cfg.radius, loss, cfg.x),
            global_graph_direct(n, op, traces, cfg.radius, loss, cfg.x),
            local_graph_bound(n, op.T, cfg.d, cfg.alpha, cfg.radius, dmax, loss, conf),
        ))
    n_table = Table(("n", "global", "global_direct", "local"), n_rows)
    for name in ("global", "global_direct", "local"):
        n_table.slopes[name] = upper_half_slope(n_table.column("n"), n_table.column(name))

    g_inf = 2.0 * loss.L * cfg.radius / math.sqrt(cfg.n) * math.sqrt(2.0 * cfg.M * cfg.lambda_max / (dmin + eta))
    l_inf = local_graph_bound(cfg.n, math.inf, cfg.d, cfg.alpha, cfg.radius, dmax, loss, conf)
    T_rows = []
    for Tv in cfg.T_grid:
        T = int(round(Tv))
        g = global_graph_bound(cfg.n, T, cfg.M, cfg.lambda_max, dmin, eta, cfg.radius, loss, cfg.x)
        loc = local_graph_bound(cfg.n, T, cfg.d, cfg.alpha, cfg.radius, dmax, loss, conf)
        T_rows.append((float(T), g, loc, g - g_inf, loc - l_inf))
    T_table = Table(("T", "global", "local", "global_gap", "local_gap"), T_rows)
    for name in ("global_gap", "local_gap"):
        T_table.slopes[name] = upper_half_slope(T_table.column("T"), T_table.column(name))
    T_table.meta.update(global_limit=g_inf, local_limit=l_inf)
    meta = {"delta_min": dmin, "eta": eta, "d_inv_max": dmax, "laplacian_eigenvalues": op.laplacian_eigenvalues.tolist()}
    return {"n_sweep": n_table, "T_sweep": T_table, "graph": meta}
