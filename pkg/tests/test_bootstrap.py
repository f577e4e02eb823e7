import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import random_graph
from lapcert import bootstrap as bs
from lapcert.functionals import Frobenius, FrobeniusSq, OperatorNorm, RegressionL2
from lapcert.graph import Graph, cut_value
from lapcert.harness import bootstrap_population, single_edge_graph
from lapcert.rng import stream
from lapcert.sampling import (SparsifiedSample, draw_sample, edge_weight_probs,
                              effective_resistance_probs)


def sample_of(g, N, seed, er=False):
    p = effective_resistance_probs(g) if er else edge_weight_probs(g)
    return draw_sample(g, p, N, seed)


def test_config_validation():
    cfg = bs.BootstrapConfig()
    assert (cfg.B_outer, cfg.B_inner, cfg.alpha) == (50, 30, 0.05)
    for kw in ({"B_outer": 1}, {"B_inner": 1}, {"alpha": 0.0}, {"alpha": 1.0}, {"workers": 0}):
        with pytest.raises(ValueError):
            bs.BootstrapConfig(**kw)


def test_empirical_quantile_examples():
    tenths = [k / 10 for k in range(1, 11)]
    assert bs.empirical_quantile(tenths, 0.9) == 0.9
    assert bs.empirical_quantile([3.5], 0.01) == 3.5
    assert bs.empirical_quantile([3.5], 0.99) == 3.5
    assert bs.empirical_quantile([1, 1, 1, 5], 0.75) == 1
    assert bs.empirical_quantile([1, 1, 1, 5], 0.76) == 5
    with pytest.raises(ValueError):
        bs.empirical_quantile([], 0.5)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=60), st.floats(0.01, 0.99))
def test_empirical_quantile_definition(values, level):
    q = bs.empirical_quantile(values, level)
    v = np.array(values)
    assert q in values
    assert np.mean(v <= q) >= level
    smaller = v[v < q]
    if smaller.size:
        assert np.mean(v <= smaller.max()) < level
    assert bs.empirical_quantile(values, min(0.99, level + 0.05)) >= q


def test_multinomial_weights_degenerate_and_support():
    rng = np.random.default_rng(0)
    assert np.array_equal(bs.multinomial_weights(np.array([0, 7, 0]), rng), [0, 7, 0])
    base = np.array([3, 0, 5, 2])
    for _ in range(50):
        w = bs.multinomial_weights(base, rng)
        assert w.sum() == 10 and w[1] == 0
    with pytest.raises(ValueError):
        bs.multinomial_weights(np.array([1, -1]), rng)


def test_multinomial_weights_moments():
    N = 10_000
    rng = np.random.default_rng(1)
    first = np.array([bs.multinomial_weights(np.array([N // 2, N // 2]), rng)[0]
                      for _ in range(2000)])
    var = N / 4
    assert abs(first.mean() - N / 2) <= 3 * math.sqrt(var / 2000)
    assert abs(first.var(ddof=1) / var - 1) <= 0.10


def test_outer_and_inner_streams():
    g = random_graph(20, 0.3, 1)
    s = sample_of(g, 80, 2)
    cfg = bs.BootstrapConfig(B_outer=6, B_inner=4, seed=11)
    W = bs.outer_weights(s, cfg)
    assert W.shape == (len(s.counts), 6) and np.all(W.sum(0) == 80)
    direct = bs.multinomial_weights(s.counts, stream(11, "outer", 3))
    assert np.array_equal(W[:, 3], direct)
    V = bs.inner_weights(W[:, 3], 3, cfg)
    assert np.all(V[W[:, 3] == 0] == 0) and np.all(V.sum(0) == 80)


def test_algorithm1_single_edge_exact_zero():
    g = single_edge_graph()
    s = sample_of(g, 9, 0)
    cfg = bs.BootstrapConfig(B_outer=10, B_inner=5, seed=3)
    for spec in (Frobenius(), FrobeniusSq(), OperatorNorm(), RegressionL2(np.array([1.0, 0.0]), 1.0)):
        est = bs.algorithm1_quantile(s, spec, cfg)
        assert (est.q_hat, est.mu_hat, est.sigma_hat) == (0.0, 0.0, 0.0)


def test_algorithm1_frobenius_pipeline_identity():
    g = random_graph(25, 0.3, 4)
    s = sample_of(g, 60, 5)
    cfg = bs.BootstrapConfig(B_outer=20, B_inner=10, alpha=0.1, seed=8)
    a = bs.algorithm1_quantile(s, Frobenius(), cfg)
    b = bs.algorithm1_quantile(s, FrobeniusSq(), cfg)
    assert a.q_hat == math.sqrt(b.q_hat)
    assert (a.mu_hat, a.sigma_hat) == (b.mu_hat, b.sigma_hat)


def test_algorithm1_shift_scale_and_monotone():
    g = random_graph(25, 0.3, 6)
    s = sample_of(g, 60, 7, er=True)
    cfg = bs.BootstrapConfig(B_outer=25, B_inner=10, seed=2)
    rep = bs.algorithm1_replicates(s, OperatorNorm(), cfg)
    vals = rep.studentized
    q = rep.quantile(0.95)
    assert vals.min() <= q <= vals.max()
    assert rep.quantile(0.95) >= rep.quantile(0.90)
    assert rep.sigma_hat >= 0 and np.all(rep.sigma_star >= 0)
    assert np.isclose(rep.mu_hat, rep.eps_star.mean(), rtol=1e-12)
    assert np.isclose(rep.sigma_hat, rep.eps_star.std(), rtol=1e-12)


def test_algorithm1_matches_loop_reference():
    """Replicates agree with a draw-by-draw loop over the same weight streams."""
    from lapcert.functionals import Sampled, eval_functional
    g = random_graph(12, 0.5, 3)
    s = sample_of(g, 30, 4)
    cfg = bs.BootstrapConfig(B_outer=5, B_inner=4, seed=1)
    rep = bs.algorithm1_replicates(s, FrobeniusSq(), cfg)
    W = bs.outer_weights(s, cfg)
    for b in range(cfg.B_outer):
        e_star = eval_functional(FrobeniusSq(), Sampled(s, W[:, b]), Sampled(s))
        assert np.isclose(rep.eps_star[b], e_star, rtol=1e-10, atol=1e-14)
        inner = bs.inner_weights(W[:, b], b, cfg)
        e = np.array([eval_functional(FrobeniusSq(), Sampled(s, inner[:, k]), Sampled(s, W[:, b]))
                      for k in range(cfg.B_inner)])
        mu, sd = e.mean(), e.std()
        assert np.isclose(rep.mu_star[b], mu, rtol=1e-10)
        assert np.isclose(rep.sigma_star[b], sd, rtol=1e-8)
        assert np.isclose(rep.zeta[b], (e_star - mu) / sd, rtol=1e-7)


@pytest.mark.parametrize("workers", [2, 3])
def test_algorithm1_determinism_across_workers(workers):
    g = random_graph(30, 0.3, 9)
    s = sample_of(g, 90, 1)
    y = np.random.default_rng(0).standard_normal(g.n)
    for spec in (Frobenius(), RegressionL2(y, 0.5)):
        a = bs.algorithm1_quantile(s, spec, bs.BootstrapConfig(B_outer=8, B_inner=5, seed=4))
        b = bs.algorithm1_quantile(s, spec, bs.BootstrapConfig(B_outer=8, B_inner=5, seed=4,
                                                               workers=workers))
        assert bs.to_csv(a) == bs.to_csv(b)


@pytest.mark.slow
def test_algorithm1_against_bootstrap_population():
    """Monte Carlo q_hat over many seeds brackets the exact bootstrap-population quantile."""
    g = Graph(4, [0, 1, 2], [1, 2, 3], [0.5, 0.3, 0.2])
    p = edge_weight_probs(g)
    # first seed whose two draws hit distinct edges, so the bootstrap is non-degenerate
    s = next(x for x in (draw_sample(g, p, 2, k) for k in range(100)) if len(x.counts) == 2)
    counts = np.zeros(g.m, dtype=np.int64)
    counts[s.edge_index] = s.counts
    assert np.count_nonzero(counts) == 2
    pop = bootstrap_population(g, p, counts, FrobeniusSq(), 0.9)
    q = np.array([bs.algorithm1_quantile(s, FrobeniusSq(), bs.BootstrapConfig(alpha=0.1, seed=k)).q_hat
                  for k in range(5000)])
    assert q.min() <= pop.quantile <= q.max()
    assert np.quantile(q, 0.05) <= pop.quantile <= np.quantile(q, 0.95)


def test_cut_statistics_examples():
    # three draws: one of an edge not crossing the cut, two of an edge crossing it
    s = SparsifiedSample(n=3, N=3, edge_index=np.array([0, 1]), counts=np.array([1, 2]),
                         src=np.array([0, 1]), dst=np.array([1, 2]), w=np.array([0.5, 0.5]),
                         p=np.array([0.5, 0.5]), seed=0)
    cut = np.array([0, 0, 1])
    stats = bs.cut_statistics(s, [cut])
    assert np.isclose(stats.C_hat[0], 2 / 3)
    assert np.isclose(stats.sigma_hat[0] ** 2, 2 / 9)
    none = bs.cut_statistics(s, [np.zeros(3)])
    assert (none.C_hat[0], none.sigma_hat[0]) == (0.0, 0.0)
    one = single_edge_graph()
    s1 = sample_of(one, 5, 2)
    st1 = bs.cut_statistics(s1, [[1, 0]])
    assert st1.C_hat[0] == cut_value(one, [1, 0]) and st1.sigma_hat[0] == 0.0


def test_cut_statistics_against_per_draw_loop():
    g = random_graph(20, 0.4, 3)
    s = sample_of(g, 70, 5, er=True)
    cuts = np.random.default_rng(0).random((6, g.n)) < 0.5
    stats = bs.cut_statistics(s, cuts)
    draws = np.repeat(np.arange(len(s.counts)), s.counts)
    for k, x in enumerate(cuts):
        per = np.array([s.values[e] * (x[s.src[e]] != x[s.dst[e]]) for e in draws])
        assert np.isclose(stats.C_hat[k], per.mean(), rtol=1e-12)
        assert np.isclose(stats.sigma_hat[k], per.std(), rtol=1e-10)


def test_algorithm2_properties():
    g = random_graph(30, 0.3, 2)
    s = sample_of(g, 100, 3)
    cuts = np.random.default_rng(4).random((15, g.n)) < 0.5
    cuts[0] = False
    cfg = bs.BootstrapConfig(B_outer=40, alpha=0.1, seed=5)
    res = bs.algorithm2_cut_cis(s, cuts, cfg)
    assert np.all(res.xi >= 0) and res.q_hat >= 0
    assert np.all(res.lo <= res.C_hat) and np.all(res.C_hat <= res.hi)
    assert np.allclose(res.hi - res.C_hat, res.sigma_hat * res.q_hat)
    assert np.allclose(res.C_hat - res.lo, res.sigma_hat * res.q_hat)
    assert (res.lo[0], res.hi[0]) == (0.0, 0.0)
    assert res.cmax_interval == (res.lo.max(), res.hi.max())
    assert res.cmin_interval == (res.lo.min(), res.hi.min())
    # xi against an explicit per-cut loop
    W = bs.outer_weights(s, cfg)
    stats = bs.cut_statistics(s, cuts)
    for b in range(3):
        ratios = [abs(np.sum((W[:, b] - s.counts) * s.values * stats.crossing[:, k])) / (s.N * stats.sigma_hat[k])
                  for k in range(len(cuts)) if stats.sigma_hat[k] > 0]
        assert np.isclose(res.xi[b], max(ratios), rtol=1e-12)
    text = bs.to_csv(res)
    assert text.splitlines()[0] == "row,C_hat,sigma_hat,lo,hi,q_hat"
    assert len(text.splitlines()) == 1 + len(cuts) + 2


def test_algorithm2_single_cut_degenerate():
    s = sample_of(single_edge_graph(), 7, 1)
    res = bs.algorithm2_cut_cis(s, [[1, 0]], bs.BootstrapConfig(seed=2))
    assert res.q_hat == 0.0 and np.all(res.xi == 0)
    assert res.lo[0] == res.hi[0] == res.C_hat[0] == 1.0


def test_algorithm2_determinism():
    g = random_graph(30, 0.3, 2)
    s = sample_of(g, 100, 3)
    cuts = np.random.default_rng(4).random((15, g.n)) < 0.5
    a = bs.to_csv(bs.algorithm2_cut_cis(s, cuts, bs.BootstrapConfig(seed=5)))
    b = bs.to_csv(bs.algorithm2_cut_cis(s, cuts, bs.BootstrapConfig(seed=5, workers=4)))
    assert a == b


def test_eigen_interval_examples():
    lam = np.array([0.0, 2.0])
    lo, hi = bs.eigen_intervals(lam, np.array([True, False]), 0.25)
    assert (lo[0], hi[0]) == (0.0, 0.0)
    assert np.isclose(lo[1], 1.6) and np.isclose(hi[1], 8 / 3)
    lo, hi = bs.eigen_intervals(lam, np.array([True, False]), 1.0)
    assert hi[1] == math.inf and lo[1] == 1.0
    lo, hi = bs.eigen_intervals(np.array([0.0, 0.0, 3.0]), np.array([True, True, False]), 2.0)
    assert (lo[1], hi[1]) == (0.0, 0.0) and hi[2] == math.inf


def test_eigen_xi_skips_zero_and_first():
    lam_hat = np.array([0.0, 0.0, 2.0, 4.0])
    zero = np.array([True, True, False, False])
    lam_star = np.array([[5.0, 7.0, 3.0, 4.0], [0.0, 0.0, 2.0, 2.0]])
    assert np.allclose(bs.eigen_xi(lam_hat, zero, lam_star), [0.5, 0.5])


def test_eigenvalue_cis_single_edge():
    s = sample_of(single_edge_graph(), 6, 0)
    res = bs.eigenvalue_cis(s, 2, bs.BootstrapConfig(seed=1))
    assert res.q_hat == 0.0
    assert res.intervals[0] == (0.0, 0.0)
    assert res.lo[1] == res.hi[1] == res.eigenvalues[1]
    assert np.isclose(res.eigenvalues[1], 2.0)
    with pytest.raises(ValueError):
        bs.eigenvalue_cis(s, 1, bs.BootstrapConfig())


def test_eigenvalue_cis_properties_and_determinism():
    g = random_graph(40, 0.3, 5)
    s = sample_of(g, 300, 2, er=True)
    a = bs.eigenvalue_cis(s, 6, bs.BootstrapConfig(B_outer=30, alpha=0.05, seed=3))
    b = bs.eigenvalue_cis(s, 6, bs.BootstrapConfig(B_outer=30, alpha=0.05, seed=3, workers=3))
    c = bs.eigenvalue_cis(s, 6, bs.BootstrapConfig(B_outer=30, alpha=0.10, seed=3))
    assert bs.to_csv(a) == bs.to_csv(b)
    assert np.all(a.lo[1:] <= a.eigenvalues[1:]) and np.all(a.eigenvalues[1:] <= a.hi[1:])
    assert abs(a.eigenvalues[0]) <= 1e-6 * 2 * s.edges.vertex_sums(s.weights()).max()
    assert np.all(a.hi - a.lo >= c.hi - c.lo)
    assert a.intervals[0] == (0.0, 0.0)
    rows = bs.to_csv(a).splitlines()
    assert rows[0] == "index,lo,hi" and rows[1] == "1,0,0"


def test_largest_gap_index():
    lo = np.array([0.0, 0.1, 0.2, 5.0, 5.5])
    hi = np.array([0.0, 0.15, 0.3, 6.0, 7.0])
    assert bs.largest_gap_index(lo, hi) == 3


def test_extrapolation_examples():
    assert bs.extrapolate_quantile(1.0, 10, 40) == 0.5
    assert bs.extrapolate_quantile(0.37, 10, 10) == 0.37
    assert bs.extrapolate_quantile(0.0, 3, 1000) == 0.0
    with pytest.raises(ValueError):
        bs.extrapolate_quantile(1.0, 10, 9)


def test_forecast_examples():
    assert bs.forecast_sample_size(1.0, 100, 0.25) == 1600
    assert bs.forecast_sample_size(0.5, 200, 0.1) == 5000
    assert bs.forecast_sample_size(0.2, 50, 0.3) == 50
    with pytest.raises(ValueError):
        bs.forecast_sample_size(1.0, 10, 0.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0, 100), st.integers(1, 10_000), st.floats(1e-3, 10))
def test_forecast_consistency(q0, N0, threshold):
    N1 = bs.forecast_sample_size(q0, N0, threshold)
    assert N1 >= N0
    assert bs.extrapolate_quantile(q0, N0, N1) <= threshold
    if N1 > N0:
        assert bs.extrapolate_quantile(q0, N0, N1 - 1) > threshold
    closed = max(N0, math.ceil(N0 * (q0 / threshold) ** 2))
    assert abs(N1 - closed) <= 1


def test_serialization_precision_and_jsonl():
    est = bs.QuantileEstimate(0.1 + 0.2, 1 / 3, 0.0, 0.05, 50, 30, 7, "fro")
    text = bs.to_csv(est)
    header, row = text.splitlines()
    assert header == "functional,q_hat,mu_hat,sigma_hat,alpha,B_outer,B_inner,seed"
    fields = row.split(",")
    assert float(fields[1]) == 0.1 + 0.2 and float(fields[2]) == 1 / 3
    assert fields[4] == "0.050000000000000003" or float(fields[4]) == 0.05
    obj = json.loads(bs.to_jsonl(est))
    assert obj["q_hat"] == 0.1 + 0.2 and obj["B_outer"] == 50 and obj["functional"] == "fro"
    eig = bs.EigCIResult(1.5, np.array([0.0, 2.0]), np.array([0.0, 0.8]),
                         np.array([0.0, math.inf]), 0.05, 10, 1)
    assert bs.to_csv(eig).splitlines()[2] == "2,0.80000000000000004,inf"
    lines = [json.loads(x) for x in bs.to_jsonl(eig).splitlines()]
    assert lines[0]["q_hat"] == 1.5 and lines[2]["hi"] == "inf"
