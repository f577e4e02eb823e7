import math

import numpy as np
import pytest

from conftest import dense_laplacian, random_graph
from lapcert import harness as hn
from lapcert.errors import ExperimentError
from lapcert.functionals import Exact, FrobeniusSq, OperatorNorm, Sampled, eval_functional
from lapcert.graph import Graph
from lapcert.rng import derive_seed
from lapcert.sampling import draw_sample, edge_weight_probs


def test_parse_config_and_roundtrip():
    text = """
    # desk-scale run
    graph = erdos_renyi
    n = 40          # vertices
    p = 0.2
    functionals = fro, op
    levels = 0.9,0.95
    trials = 12
    normalize = yes
    """
    cfg = hn.parse_config(text)
    assert cfg.n == 40 and cfg.functionals == ("fro", "op") and cfg.levels == (0.9, 0.95)
    assert cfg.normalize is True and cfg.B_outer == 50 and cfg.B_inner == 30
    assert hn.parse_config(cfg.to_text()) == cfg


@pytest.mark.parametrize("text,needle", [
    ("colour = red\n", "colour"),
    ("n = 10\nn = 11\n", "duplicate"),
    ("n = ten\n", "'n'"),
    ("trials = 0\n", "trials"),
    ("functionals = nuclear\n", "functionals"),
    ("just words\n", "line 1"),
    ("eig_r = 1\n", "eig_r"),
])
def test_parse_config_errors(text, needle):
    with pytest.raises(ExperimentError, match=needle):
        hn.parse_config(text)


def test_resolve_N():
    cfg = hn.ExperimentConfig(N_fraction=0.1)
    assert hn.resolve_N(cfg, 1000) == 100 and hn.resolve_N(cfg, 1009) == 100
    assert hn.resolve_N(hn.with_overrides(cfg, N=7), 1000) == 7
    with pytest.raises(ExperimentError):
        hn.resolve_N(cfg, 5)


def test_generators():
    g = hn.erdos_renyi(50, 0.2, 3)
    h = hn.erdos_renyi(50, 0.2, 3)
    assert np.array_equal(g.src, h.src) and np.all(g.w == 1.0)
    assert hn.complete_graph(5).m == 10 and hn.path_graph(6).m == 5
    t = hn.random_tree(30, 1)
    assert t.m == 29 and t.n_components == 1
    mix, labels = hn.gaussian_mixture_graph(20, 3, 0.2, 0)
    assert mix.n == 60 and np.bincount(labels).tolist() == [20, 20, 20]
    assert np.all((mix.w > 0) & (mix.w <= 1.0))


def test_bernoulli_cuts():
    X = hn.bernoulli_cuts(200, 100, 4)
    assert X.shape == (200, 100) and X.dtype == bool
    assert abs(X.mean() - 0.5) < 0.02
    assert np.array_equal(X, hn.bernoulli_cuts(200, 100, 4))


def test_degree_subsample():
    g = random_graph(80, 0.1, 2)
    sub = hn.degree_subsample(g, 30, 5)
    assert sub.graph.n == 30 and len(sub.vertices) == 30
    assert sub.n_components == sub.graph.n_components
    L = dense_laplacian(g)
    A = -L[np.ix_(sub.vertices, sub.vertices)]
    np.fill_diagonal(A, 0)
    B = -dense_laplacian(sub.graph)
    np.fill_diagonal(B, 0)
    assert np.allclose(A, B)
    again = hn.degree_subsample(g, 30, 5)
    assert np.array_equal(sub.vertices, again.vertices)
    with pytest.raises(ValueError):
        hn.degree_subsample(g, 81, 0)


def test_synth_regression_data():
    g = random_graph(40, 0.3, 1)
    a, b = hn.synth_regression_data(g, 7), hn.synth_regression_data(g, 7)
    assert np.array_equal(a.y, b.y)
    assert not np.array_equal(a.y, hn.synth_regression_data(g, 8).y)
    assert np.isclose(a.varsigma2, np.mean((a.beta0 - a.beta0.mean()) ** 2))
    w, V = np.linalg.eigh(dense_laplacian(g))
    # the mean of the bottom eigenvectors is sign dependent; compare its projection onto them
    assert np.allclose(np.abs(V[:, :20].T @ a.beta0), 1 / 20, atol=1e-8)
    # one eigenvector of a connected graph is constant: zero variance, y equals beta0
    one = hn.synth_regression_data(g, 3, k=1)
    assert one.varsigma2 < 1e-28
    assert np.allclose(one.y, one.beta0, atol=1e-12)
    small = hn.synth_regression_data(random_graph(8, 0.6, 0), 1)
    assert small.beta0.shape == (8,)


def test_report_io(tmp_path):
    empty = hn.CoverageReport()
    hn.write_report(empty, tmp_path / "e.csv")
    assert (tmp_path / "e.csv").read_text() == ",".join(hn.REPORT_HEADER) + "\n"
    rows = [hn.CoverageRow("fro", 0.9, 171, 190), hn.CoverageRow("fro", 0.95, 183, 190)]
    report = hn.CoverageReport(rows, 190)
    path = tmp_path / "r.csv"
    hn.write_report(report, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 3
    back = hn.read_report(path)
    assert back.rows == rows and back.trials == 190
    cov = float(lines[1].split(",")[4])
    assert cov == 171 / 190
    assert float(lines[1].split(",")[5]) == math.sqrt((171 / 190) * (19 / 190) / 190)


def test_single_edge_coverage_is_one():
    cfg = hn.ExperimentConfig(graph="single_edge", N=5, functionals=("fro", "fro2", "op"),
                              cuts=3, eig_r=2, trials=6, B_outer=5, B_inner=3)
    report = hn.run_coverage_experiment(cfg)
    assert report.trials == 6 and report.failures == 0
    assert {r.task for r in report.rows} == {"fro", "fro2", "op", "cuts", "eig"}
    assert all(r.coverage == 1.0 and r.se == 0.0 for r in report.rows)


def test_coverage_nested_levels_and_determinism():
    cfg = hn.ExperimentConfig(n=30, p=0.3, N_fraction=0.3, functionals=("fro", "op"), cuts=10,
                              eig_r=4, trials=8, B_outer=10, B_inner=5, seed=3)
    ctx = hn.prepare_context(cfg)
    for t in range(cfg.trials):
        out = hn.run_trial(ctx, t)
        for task in ("fro", "op", "cuts", "eig"):
            assert out[(task, 0.95)] >= out[(task, 0.9)]
    a = hn.report_csv(hn.run_coverage_experiment(cfg))
    b = hn.report_csv(hn.run_coverage_experiment(cfg, workers=2))
    assert a == b


def test_failed_trials_abort(monkeypatch):
    from lapcert.errors import EstimationError

    def broken(ctx, t):
        raise EstimationError("solver exploded")

    monkeypatch.setattr(hn, "run_trial", broken)
    cfg = hn.ExperimentConfig(graph="single_edge", N=2, trials=3, B_outer=2, B_inner=2)
    with pytest.raises(ExperimentError, match="3 of 3"):
        hn.run_coverage_experiment(cfg)


def test_laplacian_trace_sq():
    for seed in range(5):
        g = random_graph(15, 0.4, seed)
        L = dense_laplacian(g)
        assert np.isclose(hn.laplacian_trace_sq(g), np.trace(L @ L), rtol=1e-13)


def test_frobenius_mean_check_examples():
    g = Graph(4, [0, 2], [1, 3], [0.5, 0.5])
    res = hn.frobenius_mean_check(g, 10, 2000, 1)
    assert res.analytic == 0.2 and abs(res.z) <= 3
    one = hn.frobenius_mean_check(hn.single_edge_graph(), 7, 50, 0)
    assert (one.observed, one.analytic, one.z) == (0.0, 0.0, 0.0)
    for seed in range(5):
        h = random_graph(12, 0.5, seed)
        h = h.with_weights(h.w / h.total_weight)
        assert 4.0 - hn.laplacian_trace_sq(h) >= 0
    with pytest.raises(ExperimentError):
        hn.frobenius_mean_check(random_graph(10, 0.5, 1), 5, 10, 0)


def test_frobenius_mean_check_z_is_standard():
    g = random_graph(6, 0.7, 2)
    g = g.with_weights(g.w / g.total_weight)
    z = np.array([hn.frobenius_mean_check(g, 5, 200, 1000 + k).z for k in range(50)])
    assert abs(z.mean()) < 0.5


def test_compositions():
    comps = list(hn.compositions(3, 3))
    assert len(comps) == hn.n_compositions(3, 3) == 10
    assert all(sum(c) == 3 and min(c) >= 0 for c in comps)
    assert len({tuple(c) for c in comps}) == 10
    assert np.isclose(hn.multinomial_pmf(np.array([1, 1]), np.array([0.5, 0.5])), 0.5)


def test_exact_quantile_definition():
    vals = np.array([3.0, 1.0, 2.0])
    pr = np.array([0.25, 0.5, 0.25])
    assert hn.exact_quantile(vals, pr, 0.5) == 1.0
    assert hn.exact_quantile(vals, pr, 0.75) == 2.0
    assert hn.exact_quantile(vals, pr, 0.9) == 3.0


def test_oracle_examples():
    one = hn.single_edge_graph()
    res = hn.brute_force_quantile_oracle(one, edge_weight_probs(one), 3, FrobeniusSq(), 0.9)
    assert np.all(res.values == 0) and res.quantile == 0.0
    two = Graph(4, [0, 2], [1, 3], [1.0, 1.0])
    res = hn.brute_force_quantile_oracle(two, edge_weight_probs(two), 2, FrobeniusSq(), 0.9)
    assert sorted(res.probs.tolist()) == [0.25, 0.25, 0.5]
    assert res.quantile == res.values.max()
    # by hand: counts (1,1) give L_hat = L, counts (2,0) double one edge and drop the other
    assert sorted(res.values.tolist()) == [0.0, 8.0, 8.0]
    assert abs(res.total_mass - 1.0) <= 1e-12
    with pytest.raises(ExperimentError):
        hn.brute_force_quantile_oracle(hn.complete_graph(5), edge_weight_probs(hn.complete_graph(5)),
                                       40, FrobeniusSq(), 0.9, cap=100)


def test_oracle_against_monte_carlo():
    g = Graph(4, [0, 1, 2, 0], [1, 2, 3, 3], [0.4, 0.3, 0.2, 0.1])
    p = edge_weight_probs(g)
    spec = OperatorNorm()
    res = hn.brute_force_quantile_oracle(g, p, 3, spec, 0.9)
    assert abs(res.total_mass - 1) <= 1e-12
    T = 2000
    mc = np.array([eval_functional(spec, Sampled(draw_sample(g, p, 3, derive_seed(9, t))), Exact(g))
                   for t in range(T)])
    for t in (hn.exact_quantile(res.values, res.probs, 0.5), res.quantile):
        P = res.cdf(t)
        se = math.sqrt(P * (1 - P) / T)
        assert abs(np.mean(mc <= t + 1e-9 * max(1, t)) - P) <= 3 * se + 1e-12


def test_bootstrap_population_degenerate():
    one = hn.single_edge_graph()
    pop = hn.bootstrap_population(one, edge_weight_probs(one), [3], FrobeniusSq(), 0.9)
    assert (pop.quantile, pop.mu, pop.sigma) == (0.0, 0.0, 0.0)
