"""The twelve acceptance checks, shared by the test-suite and ``mtlrc validate``.

Each check returns a CriterionResult; none of them raises on failure.
"""

from __future__ import annotations

import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np

from .bounds import (
    PreconditionWarning,
    grc_family,
    lrc_graph,
    lrc_group,
    lrc_group_high_q,
    lrc_lower_group,
    lrc_schatten,
)
from .core import (
    ConfidenceParams,
    HypothesisFamily,
    LossSpec,
    PowerLawDecay,
    ProblemParams,
    TaskSpectra,
    build_graph_operator,
    complete_graph,
    path_graph,
    power_law_spectra,
)
from .empirical import (
    EigenSystem,
    MultiTaskSample,
    TalagrandConfig,
    brute_force_rc,
    empirical_grc,
    empirical_local_rc,
    gram_spectra,
    lemma_c1_a_check,
    lemma_c1_b_check,
    talagrand_experiment,
)
from .experiments import crossover, run_sweep, upper_half_slope
from .fixedpoint import (
    DataDependentConstants,
    closed_form_quadratic,
    empirical_fixed_point_bound,
    excess_risk_data,
    excess_risk_dist,
    fixed_point_power_law,
    grc_excess_rhs,
    solve_fixed_point,
    sub_root_check,
)
from .norms import in_ball
from .train import (
    SyntheticTaskConfig,
    generate_tasks,
    graph_quadratic_oracle,
    risk_report,
    train_frank_wolfe,
)


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"[{status}] {self.number:2d}. {self.title} ({self.seconds:.1f}s)"


def _timed(number, title):
    def wrap(fn):
        def run(seed: int = 0) -> CriterionResult:
            t0 = time.perf_counter()
            passed, details = fn(seed)
            return CriterionResult(number, title, bool(passed), details, time.perf_counter() - t0)

        run.number = number
        run.title = title
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run

    return wrap


@_timed(1, "fixed-point exactness")
def fixed_point_exactness(seed):
    rng = np.random.default_rng([seed, 1])
    worst, above = 0.0, 0
    for _ in range(100):
        a = 10.0 ** rng.uniform(-6, 2)
        g = 10.0 ** rng.uniform(-8, 1)
        res = solve_fixed_point(lambda r, a=a, g=g: math.sqrt(a * r) + g)
        exact, cap = closed_form_quadratic(a, g)
        worst = max(worst, abs(res.r_star - exact) / (1.0 + exact))
        # r* and a + 2 gamma agree to O(gamma^2 / a), below one ulp for small gamma
        above += res.r_star > cap * (1.0 + 4.0 * np.finfo(float).eps)
    return worst <= 1e-8 and above == 0, {"max_scaled_error": worst, "above_cap": above}


def _subroot_cases():
    T = 4
    spectra = [
        power_law_spectra(PowerLawDecay([1.0, 0.5, 2.0, 1.0], [1.5, 2.0, 3.0, 5.0]), 64),
        TaskSpectra.sorted_from(np.random.default_rng(3).exponential(size=(T, 32))),
    ]
    params = ProblemParams(100, T)
    op = build_graph_operator(path_graph(T, 0.7), 0.3)
    cases = []
    for k, sp in enumerate(spectra):
        for q in (1.0, 4.0 / 3.0, 2.0):
            cases.append((f"group q={q:.4g} #{k}", lambda r, q=q, sp=sp: lrc_group(r, q, sp, params, 1.0).value))
        cases.append((f"group q=3 #{k}", lambda r, sp=sp: lrc_group_high_q(r, 3.0, sp, params, 1.0).value))
        for q in (1.0, 2.0, 4.0):
            cases.append((f"schatten q={q:g} #{k}", lambda r, q=q, sp=sp: lrc_schatten(r, q, sp, params, 1.0).value))
        cases.append((f"graph #{k}", lambda r, sp=sp: lrc_graph(r, sp, op, params, 1.0).value))
    return cases


@_timed(2, "sub-root certification")
def subroot_certification(seed):
    grid = np.geomspace(1e-8, 1e4, 100)
    failures = {}
    for name, fn in _subroot_cases():
        rep = sub_root_check(fn, grid, slack=1e-10)
        if not rep["passed"]:
            failures[name] = rep
    return not failures, {"failures": failures}


@_timed(3, "rate reproduction")
def rate_reproduction(seed):
    ns = 2.0 ** np.arange(8, 19)
    loss = LossSpec(1.0, 1.0, 1.0)
    family = HypothesisFamily.group(2.0, 1.0)
    slopes, ok = {}, True
    for a in (1.5, 3.0, 10.0):
        dec = PowerLawDecay(1.0, a)
        ys = [fixed_point_power_law(dec, 2.0, ProblemParams(int(n), 1), 1.0, loss) for n in ns]
        s = upper_half_slope(ns, ys)
        slopes[f"lrc alpha={a:g}"] = s
        ok &= abs(s + a / (1 + a)) <= 0.05
        traces = TaskSpectra([dec.traces()])
        ys = []
        for n in ns:
            params = ProblemParams(int(n), 1)
            ys.append(grc_excess_rhs(float(grc_family(family, traces, params)), loss, 1.0, params))
        s = upper_half_slope(ns, ys)
        slopes[f"grc alpha={a:g}"] = s
        ok &= abs(s + 0.5) <= 0.02
    return ok, {"slopes": slopes}


@_timed(4, "upper/lower sandwich")
def upper_lower_sandwich(seed):
    worst, violations = 0.0, 0
    T = 3
    for n in (100, 1000, 10_000):
        params = ProblemParams(n, T)
        for a in (1.5, 3.0, 10.0):
            sp = power_law_spectra(PowerLawDecay([1.0] * T, a), 200)
            for r in np.geomspace(1.0 / n, 100.0 * sp.lambda_max(), 60):
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore", PreconditionWarning)
                    up = lrc_group(r, 2.0, sp, params, 1.0).value
                    lo = lrc_lower_group(r, 2.0, sp, params, 1.0, c=1.0)
                ratio = up / lo
                worst = max(worst, ratio)
                violations += not (1.0 <= ratio <= 10.0)
    return violations == 0, {"max_ratio": worst, "violations": violations}


def _families(T):
    op = build_graph_operator(complete_graph(T, 0.5), 1.0)
    return [
        HypothesisFamily.group(1.0, 1.0),
        HypothesisFamily.group(2.0, 1.0),
        HypothesisFamily.group(4.0 / 3.0, 0.8),
        HypothesisFamily.schatten(1.0, 1.0),
        HypothesisFamily.schatten(2.0, 1.2),
        HypothesisFamily.graph(op, 1.0),
    ]


@_timed(5, "brute-force oracle equivalence")
def brute_force_equivalence(seed):
    rng = np.random.default_rng([seed, 5])
    shapes = [(1, 6), (2, 4), (3, 4), (2, 6), (4, 3), (3, 3), (1, 12), (6, 2)]
    mismatches, outliers, worst = 0, 0, 0.0
    for k in range(20):
        T, n = shapes[k % len(shapes)]
        p = int(rng.integers(1, 5))
        sample = MultiTaskSample(rng.standard_normal((T, n, p)) * rng.uniform(0.5, 2.0))
        fam = _families(T)[k % 6]
        exact = brute_force_rc(sample, fam)
        enum = empirical_grc(sample, fam, enumerate=True).estimate
        mismatches += enum != exact
        mc = empirical_grc(sample, fam, mc_draws=10_000, seed=seed + k)
        z = abs(mc.estimate - exact) / mc.std_error if mc.std_error > 0 else 0.0
        worst = max(worst, z)
        outliers += z > 3.0
    return mismatches == 0 and outliers == 0, {"bit_mismatches": mismatches, "mc_outliers": outliers, "max_z": worst}


@_timed(6, "local/global coupling")
def local_global_coupling(seed):
    T, n, p, draws = 3, 8, 4, 40
    problems = []
    for k in range(5):
        rng = np.random.default_rng([seed, 6, k])
        sample = MultiTaskSample(rng.standard_normal((T, n, p)))
        lam = float(max(np.linalg.eigvalsh(J).max() for J in sample.second_moments()))
        op = build_graph_operator(complete_graph(T), 1.0)
        fams = [HypothesisFamily.group(1, 1), HypothesisFamily.group(2, 1), HypothesisFamily.schatten(1, 1),
                HypothesisFamily.schatten(2, 1), HypothesisFamily.graph(op, 1)]
        for fam in fams:
            thr = fam.rho ** 2 * lam
            rs = np.geomspace(1e-4 * thr, 10.0 * thr, 12)
            g = empirical_grc(sample, fam, mc_draws=draws, seed=seed + k).estimate
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                v = np.array([empirical_local_rc(sample, fam, r, mc_draws=draws, seed=seed + k).estimate for r in rs])
            drop = float(np.max(v[:-1] - v[1:]))
            above = float(np.max(v - g))
            gap = float(np.max(np.abs(v[rs > thr] - g)))
            if drop > 0 or above > 1e-9 or gap > 1e-4:
                problems.append({"dataset": k, "family": f"{fam.kind} q={fam.q}", "drop": drop,
                                 "above_grc": above, "plateau_gap": gap})
    return not problems, {"problems": problems}


@_timed(7, "second-moment identities")
def moment_identities(seed):
    rng = np.random.default_rng([seed, 7])
    worst_a = 0.0
    ok_a = True
    for _ in range(50):
        T, p = int(rng.integers(1, 5)), int(rng.integers(2, 8))
        eig = EigenSystem.random(T, p, rng, decay=rng.uniform(0.5, 3.0))
        rep = lemma_c1_a_check(rng.standard_normal((p, T)), eig, tol=1e-10)
        ok_a &= rep["passed"]
        worst_a = max(worst_a, rep["abs_error"])
    eig = EigenSystem.random(2, 6, rng, decay=1.0)
    rep = lemma_c1_b_check(eig, n=5, mc_draws=200_000, seed=seed, top=3)
    ok_b = rep["max_rel_error_top"] <= 0.05
    return ok_a and ok_b, {"a_max_abs_error": worst_a, "b_max_rel_error_top3": rep["max_rel_error_top"]}


@_timed(8, "concentration validity")
def concentration_validity(seed):
    out, ok = {}, True
    for x in (1.0, 2.0):
        cfg = TalagrandConfig.random(M=50, T=3, n=20, p=4, x=x, redraws=10_000, seed=seed)
        res = talagrand_experiment(cfg)
        base = math.exp(-x)
        limit = base + 3.0 * math.sqrt(base * (1.0 - base) / res.redraws)
        out[f"x={x:g}"] = {"frequency": res.violation_frequency, "limit": limit}
        ok &= res.violation_frequency <= limit
    return ok, out


@_timed(9, "ERM oracle match")
def erm_oracle_match(seed):
    tol = 1e-6
    worst, problems = 0.0, []
    shapes = [(2, 5, 40), (3, 10, 80), (4, 20, 200), (5, 8, 60), (3, 15, 150)]
    for k in range(10):
        T, p, n = shapes[k % len(shapes)]
        op = build_graph_operator(complete_graph(T, 0.5) if k % 2 else path_graph(T, 1.0), 0.5)
        fam = HypothesisFamily.graph(op, 0.5 + 0.25 * (k % 4))
        cfg = SyntheticTaskConfig(T, n, p, fam, structure="graph_smooth", noise_std=0.5)
        sample, _, _ = generate_tasks(cfg, seed * 100 + k)
        model = train_frank_wolfe(sample, fam, max_iters=20_000, tol=tol, keep_iterates=True)
        _, best = graph_quadratic_oracle(sample, fam)
        diff = model.objective - best
        worst = max(worst, abs(diff))
        inside = all(in_ball(W, fam, 1e-8) for W in model.iterates)
        if abs(diff) > 1e-3 or model.duality_gap_trace[-1] > tol or not inside:
            problems.append({"instance": k, "diff": diff, "gap": model.duality_gap_trace[-1], "in_ball": inside})
    return not problems, {"max_objective_diff": worst, "problems": problems}


def bound_holds_run(seed, T=4, n=500, p=5, radius=1.0, x=3.0, K=2.0):
    """One realisable run: measured excess risk and the data-dependent bound."""
    fam = HypothesisFamily.group(2.0, radius)
    # |f - y| <= a ||w_t - w*_t||_1 <= a sqrt(p) 2 rho = 1: the clip never bites
    a = 1.0 / (2.0 * fam.rho * math.sqrt(p))
    cfg = SyntheticTaskConfig(T, n, p, fam, structure="shared_low_rank", features="uniform",
                              feature_bound=a, clip=True)
    sample, _, handle = generate_tasks(cfg, seed)
    model = train_frank_wolfe(sample, fam, tol=1e-9)
    report = risk_report(model, handle, train_sample=sample, seed=seed, proxy_tol=1e-10)
    params = ProblemParams(n, T, kernel_bound=cfg.kernel_bound)
    loss = LossSpec(L=1.0, b=1.0, B_prime=1.0)
    conf = ConfidenceParams(K=K, x=x)
    r_hat = empirical_fixed_point_bound(gram_spectra(sample), 2.0, params, radius, loss, conf)
    bound = excess_risk_data(r_hat, loss, conf, params).value
    return report["excess"], bound


@_timed(10, "bound-holds experiment")
def bound_holds(seed):
    held, worst_ratio = 0, 0.0
    for k in range(100):
        excess, bound = bound_holds_run(seed * 1000 + k)
        held += excess <= bound
        worst_ratio = max(worst_ratio, excess / bound)
    return held >= 95, {"held": held, "runs": 100, "max_excess_over_bound": worst_ratio}


@_timed(11, "constant integrity")
def constant_integrity(seed):
    loss = LossSpec(L=1.5, b=2.0, B_prime=1.0)
    conf = ConfidenceParams(K=2.0, x=1.0)
    params = ProblemParams(64, 4)
    r, h = 0.25, 0.125
    checks = {}
    for name, fn, coef in (
        ("dist convex", lambda v: excess_risk_dist(v, loss, conf, params, True), 32.0),
        ("dist non-convex", lambda v: excess_risk_dist(v, loss, conf, params, False), 560.0),
        ("data", lambda v: excess_risk_data(v, loss, conf, params).value, 32.0),
    ):
        slope = (fn(r + h) - fn(r)) / h
        target = coef * conf.K / loss.B
        checks[name] = {"slope": slope, "target": target}
        checks[name]["ok"] = abs(slope - target) <= 4.0 * np.finfo(float).eps * target * (1.0 + fn(r) / (target * h))
    cc = DataDependentConstants.from_loss(loss, conf.K)
    L, b, B, K = loss.L, loss.b, loss.B, conf.K
    c1 = 2.0 * L * max(B, 16.0 * L * b)
    c2 = 128.0 * L ** 2 * b ** 2 + 2.0 * b * c1
    c3 = 4.0 + 128.0 * K + 4.0 * B * (48.0 * L * b + 16.0 * B * K) / c2
    consts_ok = (cc.c1, cc.c2, cc.c3) == (c1, c2, c3)
    ok = consts_ok and all(c["ok"] for c in checks.values())
    return ok, {"slopes": checks, "constants_match": consts_ok}


STANDARD_CROSSOVER = {
    "vary": "n",
    "grid": {"start": 8, "stop": 50, "num": 43, "base": 2.0},
    "family": {"kind": "schatten", "q": 1.0, "radius": 1.0},
    "T": 4,
    "d": 1.0,
    "alpha": 3.0,
    "outputs": ["lrc_excess", "grc_excess"],
}


@_timed(12, "crossover existence")
def crossover_existence(seed):
    table = run_sweep(STANDARD_CROSSOVER)
    grid, local = table.series("lrc_excess")
    _, glob = table.series("grc_excess")
    info = crossover(grid, local, glob)
    return info["unique"], info


CRITERIA = (
    fixed_point_exactness,
    subroot_certification,
    rate_reproduction,
    upper_lower_sandwich,
    brute_force_equivalence,
    local_global_coupling,
    moment_identities,
    concentration_validity,
    erm_oracle_match,
    bound_holds,
    constant_integrity,
    crossover_existence,
)


def validate_all(seed: int = 0, only=None, echo=None) -> list[CriterionResult]:
    results = []
    for check in CRITERIA:
        if only and check.number not in only:
            continue
        try:
            res = check(seed)
        except Exception as exc:  # a crash counts as a failure, not an abort
            res = CriterionResult(check.number, check.title, False, {"error": repr(exc)})
        results.append(res)
        if echo:
            echo(res.line())
    return results
