"""Shared domain types: spectra, decay laws, hypothesis families, graph operators.

Everything here is an immutable value; the other modules only consume these.
"""

from __future__ import annotations

import json
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

GROUP = "group"
SCHATTEN = "schatten"
GRAPH = "graph"
FAMILY_KINDS = (GROUP, SCHATTEN, GRAPH)


class InvalidInput(ValueError):
    """Raised when an argument violates a documented precondition."""


def dual_exponent(q: float) -> float:
    """Conjugate exponent q* = q/(q-1), with q* = inf at q = 1 and 1 at q = inf."""
    q = float(q)
    if not q >= 1.0:
        raise InvalidInput(f"norm exponent must be >= 1, got {q}")
    if q == 1.0:
        return math.inf
    if math.isinf(q):
        return 1.0
    return q / (q - 1.0)


def power_norm(a, p: float) -> float:
    """(sum a_i^p)^(1/p) for non-negative a, evaluated as written even for p < 1.

    Scaled by max(a) so large p neither overflows nor underflows.
    """
    a = np.asarray(a, dtype=float)
    if a.size == 0:
        return 0.0
    m = float(a.max())
    if m <= 0.0:
        return 0.0
    if math.isinf(p):
        return m
    return m * float(np.sum((a / m) ** p)) ** (1.0 / p)


@dataclass(frozen=True)
class TaskSpectra:
    """Per-task non-increasing eigenvalue sequences."""

    per_task: tuple

    def __init__(self, per_task):
        seqs = []
        for lam in per_task:
            arr = np.array(lam, dtype=float).ravel()
            if arr.size < 1:
                raise InvalidInput("each task needs at least one eigenvalue")
            if not np.all(np.isfinite(arr)) or np.any(arr < 0):
                raise InvalidInput("eigenvalues must be finite and non-negative")
            if np.any(np.diff(arr) > 0):
                raise InvalidInput("eigenvalues must be non-increasing")
            arr.setflags(write=False)
            seqs.append(arr)
        if not seqs:
            raise InvalidInput("need at least one task")
        object.__setattr__(self, "per_task", tuple(seqs))

    @property
    def T(self) -> int:
        return len(self.per_task)

    @property
    def lengths(self) -> list[int]:
        return [len(lam) for lam in self.per_task]

    def traces(self) -> np.ndarray:
        return np.array([lam.sum() for lam in self.per_task])

    def lambda_max(self) -> float:
        return max(float(lam[0]) for lam in self.per_task)

    @classmethod
    def sorted_from(cls, per_task) -> "TaskSpectra":
        """Sort descending and clip round-off negatives before validating."""
        return cls([np.clip(np.sort(np.asarray(lam, float))[::-1], 0.0, None) for lam in per_task])


@dataclass(frozen=True)
class PowerLawDecay:
    """Envelope lambda_t^j <= d_t j^(-alpha_t)."""

    d: tuple
    alpha: tuple

    def __post_init__(self):
        d = tuple(float(v) for v in np.atleast_1d(self.d))
        a = tuple(float(v) for v in np.atleast_1d(self.alpha))
        if len(a) == 1 and len(d) > 1:
            a = a * len(d)
        if len(d) == 1 and len(a) > 1:
            d = d * len(a)
        if len(d) != len(a):
            raise InvalidInput("d and alpha must have one entry per task")
        if any(v <= 0 for v in d):
            raise InvalidInput("decay scales d_t must be positive")
        if any(not v > 1 for v in a):
            raise InvalidInput("decay exponents alpha_t must exceed 1")
        object.__setattr__(self, "d", d)
        object.__setattr__(self, "alpha", a)

    @property
    def T(self) -> int:
        return len(self.d)

    @property
    def alpha_min(self) -> float:
        return min(self.alpha)

    @property
    def d_max(self) -> float:
        return max(self.d)

    def with_tasks(self, T: int) -> "PowerLawDecay":
        """Broadcast a single-task decay to T identical tasks."""
        if self.T == T:
            return self
        if self.T != 1:
            raise InvalidInput("cannot broadcast a multi-task decay")
        return PowerLawDecay(self.d * T, self.alpha * T)

    def traces(self) -> np.ndarray:
        """Full sums d_t zeta(alpha_t) of the saturating spectrum."""
        from scipy.special import zeta

        return np.array([d * zeta(a) for d, a in zip(self.d, self.alpha)])


def tail_sum(spectra: TaskSpectra, h) -> np.ndarray:
    """Exact tails sum_{j > h_t} lambda_t^j."""
    h = _per_task_ints(h, spectra.T)
    out = np.empty(spectra.T)
    for t, (lam, ht) in enumerate(zip(spectra.per_task, h)):
        if ht < 0 or ht > len(lam):
            raise InvalidInput(f"truncation h_{t}={ht} outside [0, {len(lam)}]")
        out[t] = lam[ht:].sum()
    return out


def tail_sum_power_law_bound(decay: PowerLawDecay, h) -> np.ndarray:
    """Integral envelope d_t h_t^(1-alpha_t)/(alpha_t - 1) on the tail beyond h_t."""
    h = np.broadcast_to(np.asarray(h, dtype=float), (decay.T,))
    if np.any(h <= 0):
        raise InvalidInput("integral tail bound undefined at h = 0; use the full trace")
    d = np.array(decay.d)
    a = np.array(decay.alpha)
    return d * h ** (1.0 - a) / (a - 1.0)


def power_law_spectra(decay: PowerLawDecay, length: int) -> TaskSpectra:
    if length < 1:
        raise InvalidInput("length must be >= 1")
    j = np.arange(1, length + 1, dtype=float)
    return TaskSpectra([d * j ** (-a) for d, a in zip(decay.d, decay.alpha)])


def _per_task_ints(h, T):
    arr = np.asarray(h)
    if arr.ndim == 0:
        arr = np.full(T, int(arr))
    if arr.shape != (T,):
        raise InvalidInput(f"need {T} truncation levels, got shape {arr.shape}")
    if not np.all(np.equal(np.mod(arr, 1), 0)):
        raise InvalidInput("truncation levels must be integers")
    return arr.astype(int)


@dataclass(frozen=True, eq=False)
class GraphOperator:
    """D = Laplacian(omega) + eta I together with the diagonal of its inverse."""

    edge_weights: np.ndarray
    eta: float
    D: np.ndarray = field(init=False)
    D_inv: np.ndarray = field(init=False)
    laplacian_eigenvalues: np.ndarray = field(init=False)

    def __post_init__(self):
        w = np.array(self.edge_weights, dtype=float)
        if w.ndim != 2 or w.shape[0] != w.shape[1]:
            raise InvalidInput("edge weights must be a square matrix")
        if not np.allclose(w, w.T, rtol=0, atol=1e-12):
            raise InvalidInput("edge weights must be symmetric")
        if np.any(w < 0):
            raise InvalidInput("edge weights must be non-negative")
        if np.any(np.diag(w) != 0):
            raise InvalidInput("edge weights must have a zero diagonal")
        eta = float(self.eta)
        if not eta > 0:
            raise InvalidInput("eta must be positive")
        lap = np.diag(w.sum(axis=1)) - w
        D = lap + eta * np.eye(len(w))
        D_inv = np.linalg.solve(D, np.eye(len(w)))
        D_inv = 0.5 * (D_inv + D_inv.T)
        for name, val in (("edge_weights", w), ("D", D), ("D_inv", D_inv)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "eta", eta)
        lap_eig = np.linalg.eigvalsh(lap)
        # the Laplacian is PSD; snap round-off around zero
        lap_eig[np.abs(lap_eig) <= 1e-12 * max(1.0, float(np.abs(lap_eig).max()))] = 0.0
        lap_eig.setflags(write=False)
        object.__setattr__(self, "laplacian_eigenvalues", lap_eig)

    @property
    def T(self) -> int:
        return self.D.shape[0]

    @property
    def d_inv_diag(self) -> np.ndarray:
        return np.diag(self.D_inv).copy()

    @property
    def d_inv_max(self) -> float:
        return float(np.max(np.diag(self.D_inv)))

    @property
    def delta_min(self) -> float:
        """Smallest Laplacian eigenvalue (zero for every graph, up to round-off)."""
        return max(float(self.laplacian_eigenvalues[0]), 0.0)

    @cached_property
    def _eig_D(self):
        return np.linalg.eigh(self.D)

    def sqrt_D(self) -> np.ndarray:
        vals, vecs = self._eig_D
        return (vecs * np.sqrt(vals)) @ vecs.T

    def inv_sqrt_D(self) -> np.ndarray:
        vals, vecs = self._eig_D
        return (vecs / np.sqrt(vals)) @ vecs.T


def build_graph_operator(edge_weights, eta: float) -> GraphOperator:
    return GraphOperator(np.asarray(edge_weights, dtype=float), eta)


def complete_graph(T: int, weight: float = 1.0) -> np.ndarray:
    return weight * (np.ones((T, T)) - np.eye(T))


def path_graph(T: int, weight: float = 1.0) -> np.ndarray:
    w = np.zeros((T, T))
    idx = np.arange(T - 1)
    w[idx, idx + 1] = w[idx + 1, idx] = weight
    return w


@dataclass(frozen=True, eq=False)
class HypothesisFamily:
    """Norm ball {W : 0.5 ||W||^2 <= R^2}; the actual ball radius is rho = sqrt(2) R."""

    kind: str
    radius: float
    q: float | None = None
    graph_op: GraphOperator | None = None

    def __post_init__(self):
        if self.kind not in FAMILY_KINDS:
            raise InvalidInput(f"unknown family {self.kind!r}")
        if not self.radius > 0:
            raise InvalidInput("radius must be positive")
        if self.kind == GRAPH:
            if self.graph_op is None:
                raise InvalidInput("graph family needs a graph operator")
        else:
            if self.q is None or not self.q >= 1:
                raise InvalidInput("group and Schatten families need q >= 1")
            object.__setattr__(self, "q", float(self.q))
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def rho(self) -> float:
        return math.sqrt(2.0) * self.radius

    @property
    def q_star(self) -> float:
        return 2.0 if self.kind == GRAPH else dual_exponent(self.q)

    def with_radius(self, radius: float) -> "HypothesisFamily":
        return HypothesisFamily(self.kind, radius, self.q, self.graph_op)

    @classmethod
    def group(cls, q, radius):
        return cls(GROUP, radius, q)

    @classmethod
    def schatten(cls, q, radius):
        return cls(SCHATTEN, radius, q)

    @classmethod
    def graph(cls, graph_op, radius):
        return cls(GRAPH, radius, None, graph_op)


@dataclass(frozen=True)
class ProblemParams:
    n: int
    T: int
    kernel_bound: float = 1.0

    def __post_init__(self):
        if self.n < 1 or self.T < 1:
            raise InvalidInput("n and T must be positive")
        if not self.kernel_bound > 0:
            raise InvalidInput("kernel bound must be positive")

    @property
    def nT(self) -> float:
        return float(self.n) * float(self.T)

    def replace(self, **kw) -> "ProblemParams":
        d = dict(n=self.n, T=self.T, kernel_bound=self.kernel_bound)
        d.update(kw)
        return ProblemParams(**d)


@dataclass(frozen=True)
class LossSpec:
    """Lipschitz constant L, range bound b and Bernstein constant B'; B = B' L^2."""

    L: float = 1.0
    b: float = 1.0
    B_prime: float = 1.0

    def __post_init__(self):
        if not (self.L > 0 and self.b > 0):
            raise InvalidInput("L and b must be positive")
        if not self.B_prime >= 1:
            raise InvalidInput("B' must be >= 1")

    @property
    def B(self) -> float:
        return self.B_prime * self.L ** 2

    @classmethod
    def for_linear_class(cls, radius, kernel_bound, L=1.0, B_prime=1.0):
        """Default range bound b = sqrt(2) R sqrt(K) from Cauchy-Schwarz."""
        return cls(L=L, b=math.sqrt(2.0) * radius * math.sqrt(kernel_bound), B_prime=B_prime)


@dataclass(frozen=True)
class ConfidenceParams:
    K: float = 2.0
    x: float = 1.0

    def __post_init__(self):
        if not self.K > 1:
            raise InvalidInput("K must exceed 1")
        if not self.x > 0:
            raise InvalidInput("x must be positive")


# -- JSON I/O -----------------------------------------------------------------


def spectra_to_json(spectra: TaskSpectra | None = None, graph_op: GraphOperator | None = None) -> str:
    doc = {}
    if spectra is not None:
        doc["spectra"] = [lam.tolist() for lam in spectra.per_task]
    if graph_op is not None:
        doc["graph"] = {"weights": graph_op.edge_weights.tolist(), "eta": graph_op.eta}
    return json.dumps(doc)


def spectra_from_json(text: str | dict):
    """Return (TaskSpectra or None, GraphOperator or None)."""
    doc = json.loads(text) if isinstance(text, str) else text
    spectra = TaskSpectra(doc["spectra"]) if "spectra" in doc else None
    graph_op = None
    if "graph" in doc:
        graph_op = build_graph_operator(doc["graph"]["weights"], doc["graph"]["eta"])
    return spectra, graph_op


# -- parallel helper ----------------------------------------------------------


def thread_count() -> int:
    raw = os.environ.get("MTLRC_THREADS")
    if raw:
        try:
            return max(1, int(raw))
        except ValueError:
            pass
    return 1


def parallel_map(fn: Callable, items: Iterable) -> list:
    """Ordered map, threaded when MTLRC_THREADS > 1."""
    items = list(items)
    k = thread_count()
    if k <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=k) as ex:
        return list(ex.map(fn, items))


def as_float_seq(x, T: int, name: str = "value") -> np.ndarray:
    arr = np.broadcast_to(np.asarray(x, dtype=float), (T,)).copy()
    if arr.shape != (T,):
        raise InvalidInput(f"{name} needs {T} entries")
    return arr


def loglog_slope(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Least-squares slope of log y against log x."""
    lx = np.log(np.asarray(xs, float))
    ly = np.log(np.asarray(ys, float))
    return float(np.polyfit(lx, ly, 1)[0])
