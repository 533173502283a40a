import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtlrc import (
    ConfidenceParams,
    HypothesisFamily,
    LossSpec,
    PowerLawDecay,
    ProblemParams,
    TaskSpectra,
    build_graph_operator,
    power_law_spectra,
)
from mtlrc.core import InvalidInput
from mtlrc.fixedpoint import (
    DataDependentConstants,
    FixedPointDivergence,
    SubRootBound,
    ZeroFixedPoint,
    closed_form_quadratic,
    empirical_fixed_point_bound,
    excess_risk_data,
    excess_risk_dist,
    excess_risk_family,
    fixed_point_bound,
    fixed_point_power_law,
    grc_excess_rhs,
    optimal_truncation,
    solve_fixed_point,
    sub_root_check,
    talagrand_rhs,
    wrap_lrc,
)

UNIT = LossSpec(1.0, 1.0, 1.0)


def test_solve_simple_fixed_points():
    assert solve_fixed_point(lambda r: math.sqrt(0.04 * r)).r_star == pytest.approx(0.04, rel=1e-14)
    res = solve_fixed_point(lambda r: math.sqrt(r) + 2.0)
    assert res.r_star == pytest.approx(4.0, rel=1e-14)
    assert res.method == "bisection" and res.residual < 1e-12


def test_solve_rejects_non_sub_root():
    with pytest.raises(FixedPointDivergence):
        solve_fixed_point(lambda r: 2.0 * r + 1.0)
    with pytest.raises(InvalidInput):
        solve_fixed_point(lambda r: math.sqrt(r), tol=-1.0)


def test_solve_accepts_sub_root_bound_object():
    psi = SubRootBound(lambda r: math.sqrt(9.0 * r), 0.0)
    assert solve_fixed_point(psi).r_star == pytest.approx(9.0, rel=1e-14)


@settings(max_examples=100)
@given(st.floats(1e-6, 1e3), st.floats(0.0, 1e3))
def test_bisection_matches_closed_form(a, g):
    exact, cap = closed_form_quadratic(a, g)
    r = solve_fixed_point(lambda r: math.sqrt(a * r) + g).r_star
    assert abs(r - exact) <= 1e-8 * (1 + exact)
    assert exact <= cap * (1 + 4 * np.finfo(float).eps)


def test_closed_form_examples():
    assert closed_form_quadratic(1.0, 2.0) == pytest.approx((4.0, 5.0))
    assert closed_form_quadratic(3.0, 0.0) == pytest.approx((3.0, 3.0))
    assert closed_form_quadratic(0.0, 2.0) == pytest.approx((2.0, 4.0))
    with pytest.warns(ZeroFixedPoint):
        assert closed_form_quadratic(0.0, 0.0) == (0.0, 0.0)


def test_wrapped_lrc_fixed_point_is_fixed():
    sp = power_law_spectra(PowerLawDecay(1.0, 3.0).with_tasks(2), 500)
    params = ProblemParams(256, 2)
    psi = wrap_lrc(HypothesisFamily.group(2.0, 1.0), sp, params, UNIT)
    res = solve_fixed_point(psi)
    assert psi(res.r_star) == pytest.approx(res.r_star, rel=1e-10)


def test_sub_root_check():
    grid = np.logspace(-6, 3, 100)
    assert sub_root_check(math.sqrt, grid)["passed"]
    assert not sub_root_check(lambda r: r * r, grid)["passed"]
    with pytest.raises(InvalidInput):
        sub_root_check(math.sqrt, [1.0, 0.5, 2.0])


def test_fixed_point_bound_truncation_extremes():
    sp = TaskSpectra([[0.5, 0.25, 0.125], [0.4, 0.2, 0.1]])
    params = ProblemParams(50, 2)
    fam = HypothesisFamily.schatten(2.0, 1.0)
    full = fixed_point_bound(fam, sp, params, UNIT, h=[3, 3])
    assert full == pytest.approx(UNIT.B ** 2 * 6 / (2 * 50), rel=1e-12)
    zero = fixed_point_bound(fam, sp, params, UNIT, h=[0, 0])
    assert zero > 0
    best, h = fixed_point_bound(fam, sp, params, UNIT, return_h=True)
    assert best <= min(full, zero) and len(h) == 2
    with pytest.raises(InvalidInput):
        fixed_point_bound(fam, sp, params, UNIT, h=[4, 0])


def test_fixed_point_bound_matches_formula_at_fixed_h():
    sp = TaskSpectra([[0.5, 0.25, 0.125], [0.4, 0.2, 0.1]])
    params = ProblemParams(50, 2)
    fam = HypothesisFamily.schatten(2.0, 1.0)
    # Schatten q=2: head B^2 sum h / (nT), dual 4 B L sqrt(4 R^2 / (n T^2)) sqrt(sum tails)
    tails = 0.125 + 0.3
    expected = 3 / 100 + 4 * math.sqrt(4 / (50 * 4)) * math.sqrt(tails)
    assert fixed_point_bound(fam, sp, params, UNIT, h=[2, 1]) == pytest.approx(expected, rel=1e-12)


def test_power_law_fixed_point_rate():
    decay = PowerLawDecay(1.0, 3.0)
    ns = 2.0 ** np.arange(8, 19)
    vals = [fixed_point_power_law(decay, 2.0, ProblemParams(int(n), 1), 1.0, UNIT) for n in ns]
    half = len(ns) // 2
    slope = np.polyfit(np.log(ns[half:]), np.log(vals[half:]), 1)[0]
    assert slope == pytest.approx(-0.75, abs=0.05)


def test_optimal_truncation_examples():
    h = optimal_truncation(PowerLawDecay(1.0, 3.0), 2.0, ProblemParams(16, 1), 1.0, UNIT)
    assert h[0] == pytest.approx((1024 * math.e) ** 0.25, rel=1e-12)
    h2 = optimal_truncation(PowerLawDecay(1.0, 3.0), 2.0, ProblemParams(32, 1), 1.0, UNIT)
    assert h2[0] / h[0] == pytest.approx(2 ** 0.25, rel=1e-12)
    with pytest.raises(InvalidInput):
        optimal_truncation(PowerLawDecay(1.0, 3.0), 1.0, ProblemParams(16, 1), 1.0, UNIT)


def test_excess_risk_dist_examples():
    conf = ConfidenceParams(K=2.0, x=1.0)
    v = excess_risk_dist(0.01, UNIT, conf, ProblemParams(100, 5))
    assert v == pytest.approx(0.8, rel=1e-12)
    nc = excess_risk_dist(0.01, UNIT, conf, ProblemParams(100, 5), convex_class=False)
    assert nc > v
    tiny = excess_risk_dist(0.0, UNIT, ConfidenceParams(2.0, 1e-12), ProblemParams(100, 5))
    assert tiny < 1e-12
    with pytest.raises(InvalidInput):
        excess_risk_dist(-1.0, UNIT, conf, ProblemParams(100, 5))


def test_excess_risk_data_example():
    b = excess_risk_data(0.02, UNIT, ConfidenceParams(2.0, 1.0), ProblemParams(200, 2))
    assert b.value == pytest.approx(1.48, rel=1e-12)
    assert b.confidence == pytest.approx(1 - 4 * math.exp(-1.0))


def test_excess_risk_family_graph_identity_matches_schatten():
    decay = PowerLawDecay(1.0, 3.0)
    params = ProblemParams(500, 3)
    conf = ConfidenceParams(2.0, 1.0)
    eye = build_graph_operator(np.zeros((3, 3)), 1.0)
    g = excess_risk_family(HypothesisFamily.graph(eye, 1.0), decay, params, UNIT, conf)
    s = excess_risk_family(HypothesisFamily.schatten(4.0, 1.0), decay, params, UNIT, conf)
    assert g == pytest.approx(s, rel=1e-12)
    tiny = excess_risk_family(HypothesisFamily.schatten(4.0, 1.0), PowerLawDecay(1e-300, 3.0), params, UNIT, conf)
    assert tiny == pytest.approx((48 + 16 * 2) * 1.0 / params.nT, rel=1e-9)


def test_data_dependent_constants_and_full_truncation():
    loss, conf = LossSpec(1.0, 1.0, 1.0), ConfidenceParams(2.0, 1.0)
    cc = DataDependentConstants.from_loss(loss, conf.K)
    assert cc.c1 == 2 * max(1.0, 16.0)
    sp = TaskSpectra([[0.5, 0.5]])
    params = ProblemParams(2, 1)
    v = empirical_fixed_point_bound(sp, 2.0, params, 1.0, loss, conf, h=[2])
    expected = cc.c1 ** 2 * cc.c3 * 2 / (2 * 1 * loss.L ** 2) + 2 * cc.c2 * conf.x / params.nT
    assert v == pytest.approx(expected, rel=1e-12)
    small = empirical_fixed_point_bound(sp, 2.0, params, 0.5, loss, conf)
    large = empirical_fixed_point_bound(sp, 2.0, params, 1.0, loss, conf)
    assert small <= large
    with pytest.raises(InvalidInput):
        empirical_fixed_point_bound(sp, 2.0, ProblemParams(3, 1), 1.0, loss, conf)


def test_talagrand_and_grc_rhs():
    assert talagrand_rhs(0.1, 1.0, 1.0, ProblemParams(100, 1), 1.0) == pytest.approx(
        0.4 + math.sqrt(0.08) + 0.12, rel=1e-12)
    assert talagrand_rhs(0.1, 1.0, 0.0, ProblemParams(100, 1), 1.0) == pytest.approx(0.4)
    assert grc_excess_rhs(0.05, UNIT, 1.0, ProblemParams(100, 10)) == pytest.approx(0.1 + math.sqrt(0.002))
    assert grc_excess_rhs(0.05, UNIT, 0.0, ProblemParams(100, 10)) == pytest.approx(0.1)


def test_nonsubroot_warning_free_on_valid_configs():
    sp = power_law_spectra(PowerLawDecay(1.0, 2.0).with_tasks(2), 64)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        solve_fixed_point(wrap_lrc(HypothesisFamily.schatten(1.0, 1.0), sp, ProblemParams(64, 2), UNIT))
