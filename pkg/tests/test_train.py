import math

import numpy as np
import pytest

from mtlrc import HypothesisFamily, build_graph_operator, complete_graph, path_graph
from mtlrc.core import InvalidInput
from mtlrc.norms import dual_norm, family_norm, lmo
from mtlrc.train import (
    SyntheticTaskConfig,
    bernstein_check,
    generate_tasks,
    graph_quadratic_oracle,
    in_ball_all,
    least_squares_oracle,
    risk_report,
    train_frank_wolfe,
)

QS = [1.0, 4.0 / 3.0, 2.0, 4.0, math.inf]


def _graph_family(T, radius=1.0):
    return HypothesisFamily.graph(build_graph_operator(path_graph(T, 0.8), 0.4), radius)


@pytest.mark.parametrize("structure", ["shared_low_rank", "group_sparse", "graph_smooth"])
def test_truth_strictly_inside_ball(structure):
    for fam in (HypothesisFamily.group(1.0, 1.0), HypothesisFamily.schatten(1.0, 1.0), _graph_family(3)):
        cfg = SyntheticTaskConfig(3, 20, 4, fam, structure=structure)
        _, W, _ = generate_tasks(cfg, 0)
        assert family_norm(W, fam) < fam.rho


def test_config_validation():
    fam = HypothesisFamily.group(2.0, 1.0)
    with pytest.raises(InvalidInput):
        SyntheticTaskConfig(2, 10, 3, fam, structure="banded")
    with pytest.raises(InvalidInput):
        SyntheticTaskConfig(2, 10, 3, fam, rank=5)
    with pytest.raises(InvalidInput):
        SyntheticTaskConfig(3, 10, 3, _graph_family(2))


def test_noise_free_truth_has_zero_risk_and_rank_one_norms():
    fam = HypothesisFamily.schatten(1.0, 1.0)
    _, W, handle = generate_tasks(SyntheticTaskConfig(4, 10, 5, fam, rank=1), 2)
    assert handle.risk(W) == 0.0
    s = np.linalg.svd(W, compute_uv=False)
    assert s[1] < 1e-12 * s[0]
    assert family_norm(W, fam) == pytest.approx(np.linalg.norm(W), rel=1e-12)


def test_label_second_moments():
    fam = HypothesisFamily.group(2.0, 1.0)
    cfg = SyntheticTaskConfig(3, 100_000, 4, fam, noise_std=0.3)
    sample, _, handle = generate_tasks(cfg, 1)
    emp = (sample.labels ** 2).mean(axis=1)
    np.testing.assert_allclose(emp, handle.label_second_moments(), rtol=0.03)


def test_uniform_features_and_clip():
    fam = HypothesisFamily.group(2.0, 1.0)
    a = 1.0 / (2 * fam.rho * math.sqrt(4))
    cfg = SyntheticTaskConfig(2, 50, 4, fam, features="uniform", feature_bound=a, clip=True)
    sample, W, handle = generate_tasks(cfg, 0)
    assert np.all(np.abs(sample.features) <= a)
    assert cfg.kernel_bound == pytest.approx(4 * a * a)
    assert handle.clip_inactive(np.zeros_like(W))
    assert handle.risk(np.zeros_like(W)) == pytest.approx(
        np.mean([W[:, t] @ W[:, t] * a * a / 3 for t in range(2)]))


@pytest.mark.parametrize("q", QS)
def test_lmo_identity_all_families(q):
    rng = np.random.default_rng(7)
    fams = [HypothesisFamily.group(q, 1.2), HypothesisFamily.schatten(q, 1.2), _graph_family(3, 1.2)]
    for fam in fams:
        for _ in range(100):
            G = rng.normal(size=(5, 3))
            val = float(np.sum(lmo(G, fam) * G))
            assert val + fam.rho * float(dual_norm(G, fam)) == pytest.approx(0.0, abs=1e-8 * fam.rho * float(dual_norm(G, fam)))


def test_lmo_examples():
    G = np.array([[1.0, 0.0, 3.0], [0.0, 2.0, 4.0]])
    S = lmo(G, HypothesisFamily.group(1.0, 1.0))
    assert np.count_nonzero(np.linalg.norm(S, axis=0)) == 1 and np.linalg.norm(S[:, 2]) > 0
    fam2 = HypothesisFamily.group(2.0, 1.0)
    np.testing.assert_allclose(lmo(G, fam2), -fam2.rho * G / np.linalg.norm(G))
    U, s, Vt = np.linalg.svd(G)
    fam_s = HypothesisFamily.schatten(1.0, 1.0)
    np.testing.assert_allclose(lmo(G, fam_s), -fam_s.rho * np.outer(U[:, 0], Vt[0]), atol=1e-12)
    assert not np.any(lmo(np.zeros((2, 3)), fam2))


def test_zero_iterations():
    fam = HypothesisFamily.group(2.0, 1.0)
    sample, _, _ = generate_tasks(SyntheticTaskConfig(3, 30, 4, fam, noise_std=0.1), 0)
    m = train_frank_wolfe(sample, fam, max_iters=0)
    assert not np.any(m.W)
    assert m.objective == pytest.approx(np.mean(sample.labels ** 2))


def test_frank_wolfe_matches_graph_oracle_and_invariants():
    T = 3
    fam = _graph_family(T, 0.3)
    sample, _, _ = generate_tasks(SyntheticTaskConfig(T, 40, 4, fam.with_radius(3.0), structure="graph_smooth",
                                                      noise_std=0.1), 4)
    model = train_frank_wolfe(sample, fam, tol=1e-9, keep_iterates=True)
    W_o, obj_o = graph_quadratic_oracle(sample, fam)
    assert model.objective - obj_o <= 1e-3
    assert model.objective >= obj_o - 1e-10
    assert np.all(np.diff(model.objective_trace) <= 1e-15)
    assert min(model.duality_gap_trace) >= -1e-12
    assert in_ball_all(model.iterates, fam)


def test_huge_radius_recovers_least_squares():
    fam = HypothesisFamily.group(2.0, 1e6)
    sample, _, _ = generate_tasks(SyntheticTaskConfig(2, 30, 3, HypothesisFamily.group(2.0, 1.0),
                                                      noise_std=0.2), 3)
    W_ls = least_squares_oracle(sample)
    W_o, _ = graph_quadratic_oracle(sample, HypothesisFamily.graph(
        build_graph_operator(np.zeros((2, 2)), 1.0), 1e6))
    np.testing.assert_allclose(W_o, W_ls, atol=1e-4)
    model = train_frank_wolfe(sample, fam, max_iters=20_000, tol=1e-12)
    assert model.objective == pytest.approx(np.mean((np.einsum("tni,it->tn", sample.features, W_ls)
                                                     - sample.labels) ** 2), abs=1e-6)


def test_risk_report_self_proxy_and_holdout():
    fam = HypothesisFamily.schatten(1.0, 1.0)
    cfg = SyntheticTaskConfig(3, 60, 4, fam, noise_std=0.2)
    sample, _, handle = generate_tasks(cfg, 0)
    model = train_frank_wolfe(sample, fam, tol=1e-8)
    rep = risk_report(model, handle, f_star_proxy=model, train_sample=sample)
    assert rep["excess"] == 0.0
    assert rep["empirical_loss"] == pytest.approx(model.objective, rel=1e-10)
    hold = handle.sample(200, np.random.default_rng(9))
    rep2 = risk_report(model, hold, f_star_proxy=np.zeros((4, 3)))
    assert rep2["population_loss"] < rep2["proxy_population_loss"]
    with pytest.raises(InvalidInput):
        risk_report(model, "nope", f_star_proxy=model)


def test_realizable_population_loss_shrinks_with_n():
    fam = HypothesisFamily.group(2.0, 1.0)
    losses = []
    for n in (2, 4, 50):
        sample, _, handle = generate_tasks(SyntheticTaskConfig(2, n, 5, fam), 11)
        losses.append(risk_report(train_frank_wolfe(sample, fam, tol=1e-10), handle,
                                  f_star_proxy=handle.W_true)["population_loss"])
    assert losses[0] > losses[1] > losses[2]
    assert losses[2] < 1e-8


def test_bernstein_condition_on_realizable_data():
    fam = HypothesisFamily.group(2.0, 1.0)
    a = 1.0 / (2 * fam.rho * math.sqrt(5))
    cfg = SyntheticTaskConfig(3, 80, 5, fam, features="uniform", feature_bound=a, clip=True)
    sample, W, _ = generate_tasks(cfg, 5)
    model = train_frank_wolfe(sample, fam, max_iters=200, tol=1e-9, keep_iterates=True)
    rep = bernstein_check(model.iterates, sample, W)
    assert rep["passed"], rep
    assert rep["count"] == len(model.iterates)


def test_graph_oracle_rejects_other_families():
    fam = HypothesisFamily.group(2.0, 1.0)
    sample, _, _ = generate_tasks(SyntheticTaskConfig(2, 10, 3, fam), 0)
    with pytest.raises(InvalidInput):
        graph_quadratic_oracle(sample, fam)
    W, _ = graph_quadratic_oracle(sample, HypothesisFamily.graph(build_graph_operator(complete_graph(2), 1.0), 0.1))
    assert family_norm(W, HypothesisFamily.graph(build_graph_operator(complete_graph(2), 1.0), 0.1)) \
        == pytest.approx(0.1 * math.sqrt(2), rel=1e-8)
