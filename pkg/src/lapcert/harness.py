"""Monte Carlo validation of the bootstrap certificates.

Coverage experiments draw a fresh sparsified Laplacian per trial, run the
configured estimators and record whether the exact graph quantity falls
inside the certificate.  The module also holds exact oracles used by the test
suite: the analytic mean of the squared Frobenius error under edge-weight
sampling and brute-force enumeration of small multinomial outcome spaces.
"""
from __future__ import annotations

import csv
import itertools
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields, replace

import numpy as np
from scipy import linalg as sla
from scipy.special import gammaln

from . import bootstrap as bs
from .errors import ExperimentError, LapcertError
from .functionals import Exact, FrobeniusSq, Sampled, eval_functional, parse_functional
from .graph import Graph, cut_value, degree_vector, load_edge_list
from .rng import derive_seed, stream
from .sampling import draw_sample, probabilities_for
from .spectral import LaplacianOperator, SolverConfig, bottom_eigenvalues, regression_fit

log = logging.getLogger(__name__)

FLOAT_SLACK = 1e-12


# ---------------------------------------------------------------------------
# graph generators


def erdos_renyi(n: int, p: float, seed: int) -> Graph:
    rng = stream(seed, "erdos_renyi")
    i, j = np.triu_indices(n, 1)
    keep = rng.random(len(i)) < p
    return Graph(n, i[keep], j[keep], np.ones(int(keep.sum())))


def complete_graph(n: int, weight: float = 1.0) -> Graph:
    i, j = np.triu_indices(n, 1)
    return Graph(n, i, j, np.full(len(i), float(weight)))


def path_graph(n: int, weight: float = 1.0) -> Graph:
    i = np.arange(n - 1)
    return Graph(n, i, i + 1, np.full(n - 1, float(weight)))


def random_tree(n: int, seed: int) -> Graph:
    """Random recursive tree: vertex ``i`` attaches to a uniform earlier vertex."""
    rng = stream(seed, "tree")
    child = np.arange(1, n)
    parent = np.array([rng.integers(0, c) for c in child], dtype=np.int64)
    return Graph(n, parent, child, np.ones(n - 1))


def single_edge_graph(weight: float = 1.0) -> Graph:
    return Graph(2, [0], [1], [float(weight)])


MIXTURE_MEANS = np.array([
    [0, 0, 0, 0, 0, 0],
    [5, 5, 5, 0, 0, 0],
    [0, 5, 5, 5, 0, 0],
    [0, 0, 5, 5, 5, 0],
    [0, 0, 0, 5, 5, 5],
], dtype=float)


def gaussian_mixture_points(per_component: int, n_components: int, seed: int):
    """Isotropic unit-variance clusters in R^6, jointly min-max rescaled to [0, 1]."""
    if not 1 <= n_components <= len(MIXTURE_MEANS):
        raise ValueError(f"n_components must lie in [1, {len(MIXTURE_MEANS)}]")
    rng = stream(seed, "mixture")
    means = MIXTURE_MEANS[:n_components]
    X = np.vstack([m + rng.standard_normal((per_component, 6)) for m in means])
    X = (X - X.min()) / (X.max() - X.min())
    labels = np.repeat(np.arange(n_components), per_component)
    return X, labels


def kernel_graph(X: np.ndarray, bandwidth: float) -> Graph:
    """Complete graph with Gaussian kernel weights ``exp(-|x - x'|^2 / (2 h^2))``."""
    i, j = np.triu_indices(len(X), 1)
    d2 = np.sum((X[i] - X[j]) ** 2, axis=1)
    w = np.exp(-d2 / (2.0 * bandwidth ** 2))
    keep = w > 0
    return Graph(len(X), i[keep], j[keep], w[keep])


def gaussian_mixture_graph(per_component: int = 150, n_components: int = 3,
                           bandwidth: float = 0.2, seed: int = 0) -> tuple[Graph, np.ndarray]:
    X, labels = gaussian_mixture_points(per_component, n_components, seed)
    return kernel_graph(X, bandwidth), labels


@dataclass(frozen=True)
class Subsample:
    graph: Graph
    vertices: np.ndarray
    n_components: int


def degree_subsample(g: Graph, k: int, seed: int) -> Subsample:
    """Induced subgraph on ``k`` vertices drawn without replacement with probability ∝ degree.

    A disconnected result is kept as is; its component count is reported.
    """
    if not 1 <= k <= g.n:
        raise ValueError(f"k must lie in [1, {g.n}]")
    d = degree_vector(g)
    rng = stream(seed, "subsample")
    nz = np.count_nonzero(d)
    if k > nz:
        raise ValueError("k exceeds the number of vertices with positive degree")
    verts = np.sort(rng.choice(g.n, size=k, replace=False, p=d / d.sum()))
    new_id = np.full(g.n, -1, dtype=np.int64)
    new_id[verts] = np.arange(k)
    keep = (new_id[g.src] >= 0) & (new_id[g.dst] >= 0)
    if not keep.any():
        raise ExperimentError("the induced subgraph has no edges")
    sub = Graph(k, new_id[g.src[keep]], new_id[g.dst[keep]], g.w[keep])
    return Subsample(sub, verts, sub.n_components)


# ---------------------------------------------------------------------------
# configuration


def _floats(text) -> tuple[float, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(float(t) for t in text)
    return tuple(float(t) for t in str(text).split(",") if t.strip())


def _names(text) -> tuple[str, ...]:
    if isinstance(text, (tuple, list)):
        return tuple(text)
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def _bool(text) -> bool:
    if isinstance(text, bool):
        return text
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


GRAPH_KINDS = ("erdos_renyi", "complete", "path", "tree", "mixture", "single_edge", "file")


@dataclass(frozen=True)
class ExperimentConfig:
    """One coverage experiment.

    ``functionals`` lists Algorithm 1 tasks (fro, fro2, op, reg).  ``cuts > 0``
    adds the simultaneous cut-interval task, ``eig_r >= 2`` the eigenvalue
    task.  ``N`` overrides ``N_fraction`` when positive.
    """

    graph: str = "erdos_renyi"
    graph_path: str = ""
    graph_format: str = "whitespace"
    n: int = 200
    p: float = 0.1
    graph_seed: int = 0
    mixture_per_component: int = 150
    mixture_components: int = 3
    mixture_bandwidth: float = 0.2
    normalize: bool = False
    scheme: str = "ew"
    eps: float = 1.0
    N: int = 0
    N_fraction: float = 0.1
    functionals: tuple[str, ...] = ("fro",)
    tau: float = 0.01
    cuts: int = 0
    cut_seed: int = 0
    eig_r: int = 0
    eig_gap_index: int = 0
    levels: tuple[float, ...] = (0.90, 0.95)
    trials: int = 400
    B_outer: int = 50
    B_inner: int = 30
    seed: int = 0
    workers: int = 1

    _CONVERT = {
        "functionals": _names, "levels": _floats, "normalize": _bool,
    }

    def __post_init__(self):
        if self.graph not in GRAPH_KINDS:
            raise ExperimentError(f"graph: unknown kind {self.graph!r}; choose from {GRAPH_KINDS}")
        if self.trials < 1:
            raise ExperimentError("trials: must be at least 1")
        if not self.levels or not all(0 < lv < 1 for lv in self.levels):
            raise ExperimentError("levels: each level must lie in (0, 1)")
        if self.workers < 1:
            raise ExperimentError("workers: must be positive")
        for f in self.functionals:
            if f not in ("fro", "fro2", "op", "reg"):
                raise ExperimentError(f"functionals: unknown functional {f!r}")
        if self.eig_r == 1 or self.eig_r < 0:
            raise ExperimentError("eig_r: must be 0 (off) or at least 2")
        if not (self.functionals or self.cuts or self.eig_r):
            raise ExperimentError("no task configured (functionals, cuts and eig_r are all empty)")

    @classmethod
    def from_mapping(cls, items: dict) -> "ExperimentConfig":
        known = {f.name: f for f in fields(cls) if not f.name.startswith("_")}
        kwargs = {}
        for key, raw in items.items():
            if key not in known:
                raise ExperimentError(f"unknown config key {key!r}")
            conv = cls._CONVERT.get(key)
            try:
                if conv is not None:
                    kwargs[key] = conv(raw)
                elif known[key].type in ("int", int):
                    kwargs[key] = int(raw)
                elif known[key].type in ("float", float):
                    kwargs[key] = float(raw)
                else:
                    kwargs[key] = str(raw)
            except ValueError as exc:
                raise ExperimentError(f"config key {key!r}: {exc}") from exc
        return cls(**kwargs)

    def to_text(self) -> str:
        lines = []
        for f in fields(self):
            if f.name.startswith("_"):
                continue
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def parse_config(text: str) -> ExperimentConfig:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    items = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ExperimentError(f"line {lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        if key in items:
            raise ExperimentError(f"line {lineno}: duplicate key {key!r}")
        items[key] = value
    return ExperimentConfig.from_mapping(items)


def load_config(path) -> ExperimentConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def build_graph(cfg: ExperimentConfig) -> Graph:
    if cfg.graph == "erdos_renyi":
        g = erdos_renyi(cfg.n, cfg.p, cfg.graph_seed)
    elif cfg.graph == "complete":
        g = complete_graph(cfg.n)
    elif cfg.graph == "path":
        g = path_graph(cfg.n)
    elif cfg.graph == "tree":
        g = random_tree(cfg.n, cfg.graph_seed)
    elif cfg.graph == "mixture":
        g, _ = gaussian_mixture_graph(cfg.mixture_per_component, cfg.mixture_components,
                                      cfg.mixture_bandwidth, cfg.graph_seed)
    elif cfg.graph == "single_edge":
        g = single_edge_graph()
    else:
        if not cfg.graph_path:
            raise ExperimentError("graph_path: required when graph = file")
        g = load_edge_list(cfg.graph_path, cfg.graph_format)
    if cfg.normalize:
        g = g.with_weights(g.w / g.total_weight)
    return g


def resolve_N(cfg: ExperimentConfig, m: int) -> int:
    N = cfg.N if cfg.N > 0 else int(math.floor(cfg.N_fraction * m))
    if N < 1:
        raise ExperimentError(f"sample size resolves to {N}; raise N or N_fraction")
    return N


def bernoulli_cuts(count: int, n: int, seed: int) -> np.ndarray:
    """``count`` cut vectors with i.i.d. Bernoulli(1/2) entries, one per row."""
    return stream(seed, "cuts").random((count, n)) < 0.5


# ---------------------------------------------------------------------------
# regression data


@dataclass(frozen=True)
class RegressionData:
    y: np.ndarray
    beta0: np.ndarray
    varsigma2: float


def synth_regression_data(g: Graph, seed: int, k: int = 20) -> RegressionData:
    """Smooth signal from the bottom ``k`` Laplacian eigenvectors plus Gaussian noise.

    When ``n < k`` every eigenvector is used.
    """
    k = min(k, g.n)
    L = g.edge_set.dense_laplacian(g.w)
    _, V = sla.eigh(L, subset_by_index=[0, k - 1], driver="evr")
    # fix the sign of each eigenvector so the signal is platform independent
    lead = V[np.argmax(np.abs(V), axis=0), np.arange(k)]
    V = V * np.where(lead < 0, -1.0, 1.0)
    norms = np.linalg.norm(V, axis=0)
    assert np.allclose(norms, 1.0, atol=1e-10), "eigenvectors must have unit norm"
    beta0 = V.mean(axis=1)
    varsigma2 = float(np.mean((beta0 - beta0.mean()) ** 2))
    y = beta0 + math.sqrt(varsigma2) * stream(seed, "regression").standard_normal(g.n)
    return RegressionData(y, beta0, varsigma2)


# ---------------------------------------------------------------------------
# coverage experiments


@dataclass
class _Context:
    cfg: ExperimentConfig
    graph: Graph
    probs: object
    N: int
    specs: dict
    truth: dict
    cuts: np.ndarray | None
    eig_solver: SolverConfig


def prepare_context(cfg: ExperimentConfig) -> _Context:
    g = build_graph(cfg)
    N = resolve_N(cfg, g.m)
    probs = probabilities_for(g, cfg.scheme, eps=cfg.eps, aer_seed=derive_seed(cfg.seed, "aer"))
    specs, truth = {}, {}
    for name in cfg.functionals:
        if name == "reg":
            data = synth_regression_data(g, derive_seed(cfg.seed, "regression"))
            spec = parse_functional("reg", y=data.y, tau=cfg.tau)
            truth["reg"] = regression_fit(_exact_operator(g), data.y, cfg.tau, spec.solver)
        else:
            spec = parse_functional(name)
        specs[name] = spec
    cuts = None
    if cfg.cuts:
        cuts = bernoulli_cuts(cfg.cuts, g.n, cfg.cut_seed)
        truth["cuts"] = np.array([cut_value(g, x) for x in cuts])
    solver = SolverConfig.eigen()
    if cfg.eig_r:
        if cfg.eig_r > g.n:
            raise ExperimentError(f"eig_r: exceeds the vertex count {g.n}")
        truth["eig"] = bottom_eigenvalues(_exact_operator(g), cfg.eig_r, solver)
        truth["eig_norm"] = 2.0 * degree_vector(g).max()
    return _Context(cfg, g, probs, N, specs, truth, cuts, solver)


def _exact_operator(g: Graph) -> LaplacianOperator:
    return LaplacianOperator(g.edge_set, g.w)


def _covered(value, lo, hi, scale) -> bool:
    s = FLOAT_SLACK * max(scale, 1.0)
    return bool(np.all((lo - s <= value) & (value <= hi + s)))


def run_trial(ctx: _Context, t: int) -> dict:
    """Coverage indicators of one trial, keyed by ``(task, level)``."""
    cfg = ctx.cfg
    trial_seed = derive_seed(cfg.seed, "trial", t)
    sample = draw_sample(ctx.graph, ctx.probs, ctx.N, trial_seed)
    bcfg = bs.BootstrapConfig(cfg.B_outer, cfg.B_inner, 1.0 - cfg.levels[0], trial_seed)
    out = {}
    w_outer = bs.outer_weights(sample, bcfg)
    exact = Exact(ctx.graph)
    for name, spec in ctx.specs.items():
        if name == "reg":
            fit = spec.fit(sample.edges, sample.weights())[:, 0]
            psi = float(np.linalg.norm(fit - ctx.truth["reg"]))
        else:
            psi = eval_functional(spec, Sampled(sample), exact)
        reps = bs.algorithm1_replicates(sample, spec, bcfg, w_outer)
        for lv in cfg.levels:
            q = reps.quantile(lv)
            out[(name, lv)] = psi <= q + FLOAT_SLACK * max(abs(q), abs(psi))
    if ctx.cuts is not None:
        stats = bs.cut_statistics(sample, ctx.cuts)
        xi = bs.cut_xi(stats, w_outer)
        truth = ctx.truth["cuts"]
        for lv in cfg.levels:
            lo, hi, _, _ = bs.intervals_from_quantile(stats, bs.empirical_quantile(xi, lv))
            out[("cuts", lv)] = _covered(truth, lo, hi, ctx.graph.total_weight)
    if cfg.eig_r:
        res = bs.eigenvalue_cis(sample, cfg.eig_r, bcfg, ctx.eig_solver)
        zero = bs.zero_eigen_mask(res.eigenvalues, sample.weights(), sample.edges,
                                  ctx.eig_solver.tol)
        truth = ctx.truth["eig"].copy()
        truth[0] = 0.0
        slack = ctx.eig_solver.tol * ctx.truth["eig_norm"]
        for lv in cfg.levels:
            lo, hi = bs.eigen_intervals(res.eigenvalues, zero, bs.empirical_quantile(res.xi, lv))
            out[("eig", lv)] = bool(np.all((lo - slack <= truth) & (truth <= hi + slack)))
            if cfg.eig_gap_index:
                out[(f"eig_gap{cfg.eig_gap_index}", lv)] = (
                    bs.largest_gap_index(lo, hi) == cfg.eig_gap_index)
    return out


@dataclass(frozen=True)
class CoverageRow:
    task: str
    level: float
    covered: int
    trials: int

    @property
    def coverage(self) -> float:
        return self.covered / self.trials if self.trials else math.nan

    @property
    def se(self) -> float:
        c = self.coverage
        return math.sqrt(c * (1.0 - c) / self.trials) if self.trials else math.nan


@dataclass
class CoverageReport:
    rows: list[CoverageRow] = field(default_factory=list)
    trials: int = 0
    failures: int = 0
    wall_time: float = 0.0

    def get(self, task: str, level: float) -> CoverageRow:
        for r in self.rows:
            if r.task == task and math.isclose(r.level, level):
                return r
        raise KeyError((task, level))


_WORKER_CTX: _Context | None = None


def _init_worker(cfg: ExperimentConfig):
    global _WORKER_CTX
    _WORKER_CTX = prepare_context(cfg)


def _safe_trial(ctx: _Context, t: int):
    try:
        return t, run_trial(ctx, t), None
    except LapcertError as exc:
        return t, None, f"{type(exc).__name__}: {exc}"


def _worker_trial(t: int):
    return _safe_trial(_WORKER_CTX, t)


def default_workers() -> int:
    v = os.environ.get("LAPCERT_THREADS")
    return max(1, int(v)) if v else 1


def run_coverage_experiment(cfg: ExperimentConfig, workers: int | None = None) -> CoverageReport:
    """Observed coverage per task and level, aggregated over ``cfg.trials`` trials.

    A trial whose estimator raises is logged and dropped; more than 1% dropped
    trials fails the experiment.
    """
    start = time.perf_counter()
    workers = workers or cfg.workers
    if workers > 1:
        with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=(cfg,)) as pool:
            results = list(pool.map(_worker_trial, range(cfg.trials), chunksize=4))
    else:
        ctx = prepare_context(cfg)
        results = [_safe_trial(ctx, t) for t in range(cfg.trials)]
    results.sort(key=lambda r: r[0])
    tally: dict = {}
    done = 0
    failures = 0
    for t, out, err in results:
        if err is not None:
            failures += 1
            log.warning("trial %d failed: %s", t, err)
            continue
        done += 1
        for key, hit in out.items():
            tally[key] = tally.get(key, 0) + int(bool(hit))
    if failures > 0.01 * cfg.trials:
        raise ExperimentError(f"{failures} of {cfg.trials} trials failed")
    rows = [CoverageRow(task, lv, c, done) for (task, lv), c in tally.items()]
    order = {k: i for i, k in enumerate(dict.fromkeys(k for k, _ in tally))}
    rows.sort(key=lambda r: (order[r.task], r.level))
    return CoverageReport(rows, done, failures, time.perf_counter() - start)


# ---------------------------------------------------------------------------
# reports


REPORT_HEADER = ("task", "level", "covered", "trials", "coverage", "se")


def report_csv(report: CoverageReport) -> str:
    """CSV text with 17 significant digits; wall time is left out so reruns are byte-identical."""
    rows = [(r.task, r.level, r.covered, r.trials, r.coverage, r.se) for r in report.rows]
    return bs.csv_text(REPORT_HEADER, rows)


def write_report(report: CoverageReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(report_csv(report))


def read_report(path) -> CoverageReport:
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != REPORT_HEADER:
            raise ExperimentError("unexpected report header")
        for rec in reader:
            rows.append(CoverageRow(rec["task"], float(rec["level"]), int(rec["covered"]),
                                    int(rec["trials"])))
    trials = rows[0].trials if rows else 0
    return CoverageReport(rows, trials)


# ---------------------------------------------------------------------------
# analytic moment check


def laplacian_trace_sq(g: Graph) -> float:
    """``tr(L^2) = sum_i d_i^2 + 2 sum_e w_e^2``."""
    d = degree_vector(g)
    return float(math.fsum(d * d) + 2.0 * math.fsum(g.w * g.w))


@dataclass(frozen=True)
class MeanCheck:
    observed: float
    analytic: float
    z: float
    se: float


def frobenius_mean_check(g: Graph, N: int, trials: int, seed: int) -> MeanCheck:
    """Compare the simulated mean of ``||L_hat - L||_F^2`` under edge-weight sampling
    with ``(4 - tr(L^2)) / N``."""
    if abs(g.total_weight - 1.0) > 1e-12:
        raise ExperimentError("frobenius_mean_check needs a graph with total weight 1")
    probs = probabilities_for(g, "ew")
    exact = Exact(g)
    spec = FrobeniusSq()
    vals = np.array([eval_functional(spec, Sampled(draw_sample(g, probs, N,
                                                               derive_seed(seed, "trial", t))), exact)
                     for t in range(trials)])
    analytic = (4.0 - laplacian_trace_sq(g)) / N
    observed = float(vals.mean())
    se = float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else 0.0
    diff = observed - analytic
    if se > 0:
        z = diff / se
    else:
        z = 0.0 if abs(diff) <= 1e-12 * max(1.0, abs(analytic)) else math.copysign(math.inf, diff)
    return MeanCheck(observed, analytic, z, se)


# ---------------------------------------------------------------------------
# brute-force oracle


def compositions(N: int, m: int):
    """Every vector of ``m`` non-negative integers summing to ``N``."""
    for bars in itertools.combinations(range(N + m - 1), m - 1):
        prev = -1
        out = []
        for b in bars:
            out.append(b - prev - 1)
            prev = b
        out.append(N + m - 2 - prev)
        yield np.array(out, dtype=np.int64)


def n_compositions(N: int, m: int) -> int:
    return math.comb(N + m - 1, m - 1)


def multinomial_pmf(counts: np.ndarray, probs: np.ndarray) -> float:
    counts = np.asarray(counts)
    probs = np.asarray(probs, dtype=float)
    if np.any((probs == 0) & (counts > 0)):
        return 0.0
    pos = counts > 0
    logp = (gammaln(counts.sum() + 1) - gammaln(counts + 1).sum()
            + np.sum(counts[pos] * np.log(probs[pos])))
    return float(np.exp(logp))


def _dense_laplacian(n, src, dst, w):
    L = np.zeros((n, n))
    for i, j, x in zip(src, dst, w):
        L[i, i] += x
        L[j, j] += x
        L[i, j] -= x
        L[j, i] -= x
    return L


def dense_psi(name: str, A: np.ndarray, B: np.ndarray, y=None, tau: float = 0.0) -> float:
    """Reference error functionals on dense matrices."""
    if name == "fro2":
        return float(np.sum((A - B) ** 2))
    if name == "fro":
        return float(np.sqrt(np.sum((A - B) ** 2)))
    if name == "op":
        return float(np.max(np.abs(np.linalg.eigvalsh(A - B))))
    if name == "reg":
        I = np.eye(len(A))
        return float(np.linalg.norm(np.linalg.solve(I + tau * A, y) - np.linalg.solve(I + tau * B, y)))
    raise ValueError(f"unknown functional {name!r}")


def _spec_args(spec):
    name = getattr(spec, "name", spec)
    if name == "reg":
        return name, np.asarray(spec.y), spec.tau
    return name, None, 0.0


def exact_quantile(values: np.ndarray, probs: np.ndarray, level: float) -> float:
    """Smallest support point ``a`` with ``P(X <= a) >= level`` (values merged within 1e-12)."""
    order = np.argsort(values, kind="stable")
    v, p = values[order], probs[order]
    cum = 0.0
    k = 0
    while k < len(v):
        j = k
        # merge values that agree up to rounding
        while j + 1 < len(v) and v[j + 1] - v[k] <= 1e-12 * max(1.0, abs(v[k])):
            j += 1
        cum += float(p[k: j + 1].sum())
        if cum >= level - 1e-12:
            return float(v[j])
        k = j + 1
    return float(v[-1])


@dataclass(frozen=True)
class OracleResult:
    values: np.ndarray
    probs: np.ndarray
    quantile: float
    total_mass: float

    def cdf(self, t: float) -> float:
        return float(self.probs[self.values <= t + 1e-12 * max(1.0, abs(t))].sum())


@dataclass(frozen=True)
class BootstrapPopulation:
    """Exact limit of the double-bootstrap replicate distribution (B -> infinity)."""

    values: np.ndarray
    probs: np.ndarray
    quantile: float
    mu: float
    sigma: float


def _composition_space(N: int, m: int, cap: int):
    size = n_compositions(N, m)
    if size > cap:
        raise ExperimentError(f"outcome space has {size} compositions, above the cap {cap}")
    return list(compositions(N, m))


def brute_force_quantile_oracle(g: Graph, p, N: int, spec, level: float,
                                cap: int = 10_000) -> OracleResult:
    """Exact distribution of ``psi(L_hat, L)`` by enumerating every count vector."""
    probs = np.asarray(getattr(p, "probs", p), dtype=float)
    name, y, tau = _spec_args(spec)
    L = _dense_laplacian(g.n, g.src, g.dst, g.w)
    ratio = g.w / probs
    vals, pm = [], []
    for c in _composition_space(N, g.m, cap):
        prob = multinomial_pmf(c, probs)
        if prob == 0.0:
            continue
        Lh = _dense_laplacian(g.n, g.src, g.dst, c / N * ratio)
        vals.append(dense_psi(name, Lh, L, y, tau))
        pm.append(prob)
    vals, pm = np.array(vals), np.array(pm)
    return OracleResult(vals, pm, exact_quantile(vals, pm, level), float(math.fsum(pm)))


def bootstrap_population(g: Graph, p, counts, spec, level: float,
                         cap: int = 10_000) -> BootstrapPopulation:
    """Exact outer/inner bootstrap laws for the realized ``counts`` (aligned with ``g`` edges).

    The inner mean and spread for each outer outcome are exact expectations,
    so the result is the limit of the replicate distribution as both loop
    sizes grow.
    """
    probs = np.asarray(getattr(p, "probs", p), dtype=float)
    counts = np.asarray(counts, dtype=np.int64)
    N = int(counts.sum())
    name, y, tau = _spec_args(spec)
    if name == "fro":
        name, root = "fro2", True
    else:
        root = False
    ratio = g.w / probs
    space = _composition_space(N, g.m, cap)

    def lap(c):
        return _dense_laplacian(g.n, g.src, g.dst, c / N * ratio)

    L_hat = lap(counts)
    base = counts / N
    outer = [(c, multinomial_pmf(c, base)) for c in space]
    outer = [(c, pr) for c, pr in outer if pr > 0]
    eps_star = np.array([dense_psi(name, lap(c), L_hat, y, tau) for c, _ in outer])
    w_star = np.array([pr for _, pr in outer])
    mu = float(np.sum(w_star * eps_star))
    sigma = float(np.sqrt(np.sum(w_star * (eps_star - mu) ** 2)))
    zeta = np.zeros(len(outer))
    for k, (c, _) in enumerate(outer):
        L_star = lap(c)
        inner = [(d, multinomial_pmf(d, c / N)) for d in space]
        e = np.array([dense_psi(name, lap(d), L_star, y, tau) for d, pr in inner if pr > 0])
        pr = np.array([pr for _, pr in inner if pr > 0])
        m_b = float(np.sum(pr * e))
        s_b = float(np.sqrt(np.sum(pr * (e - m_b) ** 2)))
        if np.ptp(e) > 0 and s_b > 0:
            zeta[k] = (eps_star[k] - m_b) / s_b
    if np.ptp(eps_star) == 0:
        sigma = 0.0
    vals = mu + sigma * zeta
    q = exact_quantile(vals, w_star, level)
    if root:
        q = math.sqrt(max(q, 0.0))
    return BootstrapPopulation(vals, w_star, q, mu, sigma)


# ---------------------------------------------------------------------------
# incremental refinement experiment


@dataclass(frozen=True)
class ExtrapolationPoint:
    N: int
    extrapolated_mean: float
    extrapolated_sd: float
    direct_quantile: float

    @property
    def within_one_sd(self) -> bool:
        return abs(self.direct_quantile - self.extrapolated_mean) <= self.extrapolated_sd


def extrapolation_experiment(g: Graph, *, scheme: str = "ew", functional: str = "fro",
                             N0_fraction: float = 0.02,
                             grid_fractions=(0.05, 0.1, 0.2), level: float = 0.95,
                             trials: int = 200, direct_trials: int = 1000,
                             B_outer: int = 50, B_inner: int = 30, seed: int = 0
                             ) -> list[ExtrapolationPoint]:
    """Extrapolated quantile curves from ``N0`` against direct quantiles of ``psi``.

    Each of ``trials`` samples of size ``N0`` yields ``q_hat(N0)`` and its
    extrapolation to every grid size.  The direct reference at each grid
    size is the empirical ``level`` quantile of ``direct_trials`` values of
    ``psi(L_hat, L)``.
    """
    probs = probabilities_for(g, scheme, aer_seed=derive_seed(seed, "aer"))
    spec = parse_functional(functional)
    N0 = max(1, int(math.floor(N0_fraction * g.m)))
    grid = [max(N0, int(math.floor(f * g.m))) for f in grid_fractions]
    q0 = np.empty(trials)
    for t in range(trials):
        ts = derive_seed(seed, "refine", t)
        s = draw_sample(g, probs, N0, ts)
        q0[t] = bs.algorithm1_replicates(s, spec, bs.BootstrapConfig(B_outer, B_inner, 1 - level, ts)
                                         ).quantile(level)
    exact = Exact(g)
    points = []
    for k, N in enumerate(grid):
        ext = np.array([bs.extrapolate_quantile(q, N0, N) for q in q0])
        psi = [eval_functional(spec, Sampled(draw_sample(g, probs, N,
                                                         derive_seed(seed, "direct", k, t))), exact)
               for t in range(direct_trials)]
        points.append(ExtrapolationPoint(N, float(ext.mean()), float(ext.std()),
                                         bs.empirical_quantile(psi, level)))
    return points


def with_overrides(cfg: ExperimentConfig, **kw) -> ExperimentConfig:
    return replace(cfg, **kw)
