import math

import numpy as np
import pytest
from scipy import stats
from scipy.integrate import trapezoid

from mtlrc import HypothesisFamily, build_graph_operator, complete_graph
from mtlrc.core import InvalidInput
from mtlrc.empirical import (
    EigenSystem,
    Kernel,
    MultiTaskSample,
    TalagrandConfig,
    brute_force_rc,
    clipped_normal_moments,
    dual_increment,
    empirical_grc,
    empirical_local_rc,
    gram_spectra,
    kernel_trace,
    khintchine_check,
    lemma_c1_a_check,
    lemma_c1_b_check,
    sign_draws,
    talagrand_experiment,
)
from mtlrc.norms import dual_norm


def _sample(T=2, n=3, p=2, seed=0):
    rng = np.random.default_rng(seed)
    return MultiTaskSample(rng.normal(size=(T, n, p)), rng.normal(size=(T, n)))


def test_sample_validation():
    with pytest.raises(InvalidInput):
        MultiTaskSample(np.zeros((2, 3)))
    with pytest.raises(InvalidInput):
        MultiTaskSample(np.full((1, 2, 2), np.nan))
    with pytest.raises(InvalidInput):
        MultiTaskSample(np.zeros((1, 2, 2)), np.zeros((1, 3)))


def test_eigensystem_validation_and_covariance():
    rng = np.random.default_rng(3)
    es = EigenSystem.random(3, 4, rng)
    back = EigenSystem.from_covariances(es.covariances())
    np.testing.assert_allclose(back.eigenvalues, es.eigenvalues, atol=1e-12)
    with pytest.raises(InvalidInput):
        EigenSystem(np.ones((1, 2, 2)), np.ones((1, 2)))


def test_dual_increment_in_task_span():
    s = _sample(T=2, n=2, p=5)
    V = dual_increment(s, np.ones((2, 2)))
    for t in range(2):
        coef, *_ = np.linalg.lstsq(s.features[t].T, V[:, t], rcond=None)
        np.testing.assert_allclose(s.features[t].T @ coef, V[:, t], atol=1e-12)


def test_grc_constant_feature():
    fam = HypothesisFamily.group(2.0, 1.0 / math.sqrt(2.0))  # rho = 1
    s = MultiTaskSample(np.full((1, 1, 1), 2.0))
    est = empirical_grc(s, fam, mc_draws=50, seed=1)
    assert est.estimate == pytest.approx(2.0) and est.std_error == 0.0


def test_grc_mc_vs_enumeration_and_linearity():
    s = _sample(T=2, n=2, p=3)
    fam = HypothesisFamily.schatten(1.0, 1.0)
    exact = brute_force_rc(s, fam)
    mc = empirical_grc(s, fam, mc_draws=10_000, seed=5)
    assert abs(mc.estimate - exact) <= 3 * mc.std_error
    doubled = empirical_grc(s, fam.with_radius(2.0), mc_draws=100, seed=5)
    base = empirical_grc(s, fam, mc_draws=100, seed=5)
    np.testing.assert_allclose(doubled.values, 2 * base.values, rtol=1e-14)


def test_enumeration_bit_exact():
    s = _sample(T=3, n=4, p=2)
    fam = HypothesisFamily.group(4.0 / 3.0, 1.0)
    assert empirical_grc(s, fam, enumerate=True).estimate == brute_force_rc(s, fam)


def test_brute_force_cases():
    fam = HypothesisFamily.group(2.0, 1.0)
    assert brute_force_rc(MultiTaskSample(np.zeros((2, 2, 3))), fam) == 0.0
    # single sample per task: the sign never changes |v_t|
    s = _sample(T=3, n=1, p=2)
    V = s.features[:, 0, :].T
    expected = fam.rho * float(dual_norm(V, fam)) / 3
    assert brute_force_rc(s, fam) == pytest.approx(expected, rel=1e-12)
    with pytest.raises(InvalidInput):
        brute_force_rc(_sample(T=3, n=8, p=1), fam)


def test_seed_determinism_across_threads(monkeypatch):
    s = _sample(T=2, n=5, p=3)
    fam = HypothesisFamily.group(2.0, 1.0)
    monkeypatch.setenv("MTLRC_THREADS", "1")
    a = empirical_grc(s, fam, mc_draws=3000, seed=9)
    b_local = empirical_local_rc(s, fam, 0.05, mc_draws=64, seed=9)
    monkeypatch.setenv("MTLRC_THREADS", "4")
    b = empirical_grc(s, fam, mc_draws=3000, seed=9)
    c_local = empirical_local_rc(s, fam, 0.05, mc_draws=64, seed=9)
    assert a.estimate == b.estimate
    assert b_local.estimate == c_local.estimate
    np.testing.assert_array_equal(sign_draws(9, 10, 20, 2, 5), sign_draws(9, 0, 30, 2, 5)[10:20])


@pytest.mark.parametrize("family", [
    HypothesisFamily.group(1.0, 1.0),
    HypothesisFamily.group(2.0, 1.0),
    HypothesisFamily.schatten(1.0, 1.0),
    HypothesisFamily.schatten(2.0, 1.0),
    HypothesisFamily.graph(build_graph_operator(complete_graph(2), 1.0), 1.0),
], ids=["g1", "g2", "s1", "s2", "graph"])
def test_local_rc_bracketed_by_zero_and_global(family):
    s = _sample(T=2, n=4, p=3, seed=2)
    lam = np.linalg.eigvalsh(s.second_moments()).max()
    big = 2 * family.rho ** 2 * lam
    g = empirical_grc(s, family, mc_draws=40, seed=0)
    loc_big = empirical_local_rc(s, family, big, mc_draws=40, seed=0)
    assert loc_big.estimate == pytest.approx(g.estimate, rel=1e-6)
    prev = 0.0
    for r in np.logspace(-8, math.log10(big), 8):
        loc = empirical_local_rc(s, family, r, mc_draws=40, seed=0)
        assert prev <= loc.estimate <= g.estimate + 1e-9
        prev = loc.estimate
    tiny = empirical_local_rc(s, family, 1e-10, mc_draws=40, seed=0).estimate
    assert tiny <= 1e-3


@pytest.mark.parametrize("solver", ["exact", "conic", "dykstra"])
def test_local_rc_one_dimensional_oracle(solver):
    g = build_graph_operator(np.zeros((1, 1)), 0.5)
    fam = HypothesisFamily.graph(g, 1.0)
    s = MultiTaskSample(np.array([[[1.0], [-0.5], [2.0]]]))
    lam_hat = float(s.second_moments()[0, 0, 0])
    rho_eff = fam.rho / math.sqrt(g.D[0, 0])
    r = 0.1
    est = empirical_local_rc(s, fam, r, mc_draws=8, seed=4, solver=solver)
    sig = sign_draws(4, 0, 8, 1, 3)
    V = np.abs(np.einsum("mtn,tnp->mp", sig, s.features) / 3)[:, 0]
    expected = np.mean(min(rho_eff, math.sqrt(r / lam_hat)) * V)
    assert est.estimate == pytest.approx(expected, rel=1e-6, abs=1e-12)


def test_local_rc_rejects_unsupported():
    s = _sample()
    with pytest.raises(InvalidInput):
        empirical_local_rc(s, HypothesisFamily.group(1.0, 1.0), 0.0)
    with pytest.raises(InvalidInput):
        empirical_local_rc(s, HypothesisFamily.group(4.0, 1.0), 0.1)


def test_gram_spectra_examples():
    s = MultiTaskSample(np.array([[[1.0, 0.0], [0.0, 1.0]]]))
    np.testing.assert_allclose(gram_spectra(s).per_task[0], [0.5, 0.5])
    rng = np.random.default_rng(0)
    s = MultiTaskSample(rng.normal(size=(2, 6, 3)))
    for k in (Kernel("linear"), Kernel("gaussian", gamma=0.7), Kernel("polynomial", degree=3, coef0=1.0)):
        sp = gram_spectra(s, k)
        np.testing.assert_allclose(sp.traces(), kernel_trace(s, k), rtol=1e-10)
    lim = gram_spectra(s, Kernel("gaussian", gamma=1e-12)).per_task[0]
    np.testing.assert_allclose(lim, [1.0] + [0.0] * 5, atol=1e-9)
    with pytest.raises(InvalidInput):
        gram_spectra(s, Kernel("cosine"))


def test_lemma_a_identity():
    rng = np.random.default_rng(1)
    es = EigenSystem.random(3, 4, rng)
    assert lemma_c1_a_check(rng.normal(size=(4, 3)), es)["passed"]
    zero = lemma_c1_a_check(np.zeros((4, 3)), es)
    assert zero["left"] == 0.0 and zero["right"] == 0.0
    W = np.stack([es.U[t][:, t] for t in range(3)], axis=1)
    rep = lemma_c1_a_check(W, es)
    assert rep["left"] == pytest.approx(np.mean([es.eigenvalues[t, t] for t in range(3)]), rel=1e-12)


def test_lemma_b_identity():
    es = EigenSystem(np.eye(2)[None], np.array([[1.0, 0.0]]))
    rep = lemma_c1_b_check(es, 4, mc_draws=200_000, seed=0)
    assert rep["estimates"][0, 0] == pytest.approx(0.25, rel=0.05)
    assert rep["estimates"][0, 1] <= 1e-3 * 1.0 / 4
    rep8 = lemma_c1_b_check(es, 8, mc_draws=200_000, seed=1)
    assert rep8["estimates"][0, 0] == pytest.approx(0.125, rel=0.05)


def test_khintchine():
    v = np.array([[3.0, 4.0]])
    for p in (1.0, 2.0, 5.0):
        assert khintchine_check(v, p, mc_draws=100)["passed"]
    rng = np.random.default_rng(0)
    vs = rng.normal(size=(6, 3))
    rep = khintchine_check(vs, 2.0, mc_draws=200_000)
    assert rep["lhs"] == pytest.approx(rep["rhs"], rel=0.02)
    rep4 = khintchine_check(rng.normal(size=(10, 4)), 4.0, mc_draws=50_000)
    assert rep4["passed"] and rep4["lhs"] < rep4["rhs"]
    with pytest.raises(InvalidInput):
        khintchine_check(vs, 0.5)


def test_clipped_normal_moments_against_quadrature():
    m, s, b = 0.3, 1.7, 1.0
    e1, e2 = clipped_normal_moments(m, s, b)
    y = np.linspace(-12, 12, 400_001) * s + m
    w = stats.norm.pdf(y, m, s)
    c = np.clip(y, -b, b)
    assert e1 == pytest.approx(trapezoid(c * w, y), abs=1e-8)
    assert e2 == pytest.approx(trapezoid(c * c * w, y), abs=1e-8)
    e1, e2 = clipped_normal_moments(2.0, 0.0, b)
    assert (e1, e2) == (1.0, 1.0)


def test_talagrand_single_function_and_point_mass():
    base = TalagrandConfig.random(M=1, T=2, n=10, p=3, x=1.0, redraws=4000, seed=3, rademacher_draws=1000)
    res = talagrand_experiment(base)
    assert res.violation_frequency <= math.exp(-1.0) + 3 * res.std_error
    assert res.rhs >= math.sqrt(8 * res.r / (10 * 2))
    pm = TalagrandConfig(base.weights, base.means, np.zeros_like(base.covariances), 10, 1.0,
                         base.family, redraws=500, rademacher_draws=200)
    assert talagrand_experiment(pm).violations == 0


def test_talagrand_rejects_outside_class():
    base = TalagrandConfig.random(M=2, T=2, n=5, p=3, redraws=10, rademacher_draws=10)
    bad = TalagrandConfig(base.weights * 10, base.means, base.covariances, 5, 1.0, base.family)
    with pytest.raises(InvalidInput):
        talagrand_experiment(bad)
