"""Bootstrap error certificates for sparsified Laplacians.

Resampling the N draws with replacement is represented by integer weights
over the sample's distinct edges: a weight vector ``W`` summing to ``N``
defines ``L* = (1/N) sum_e W_e (w_e/p_e) Delta_e``.  Every replicate owns a
random stream keyed by ``(seed, "outer", b)`` or
``(seed, "outer", b, "inner", b')`` so results do not depend on scheduling.
"""
from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import EstimationError, LapcertError
from .functionals import Frobenius, FrobeniusSq, FunctionalSpec
from .graph import as_cut
from .rng import stream
from .sampling import SparsifiedSample
from .spectral import LaplacianOperator, SolverConfig, bottom_eigenvalues


@dataclass(frozen=True)
class BootstrapConfig:
    B_outer: int = 50
    B_inner: int = 30
    alpha: float = 0.05
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.B_outer < 2 or self.B_inner < 2:
            raise ValueError("B_outer and B_inner must be at least 2")
        if not 0 < self.alpha < 1:
            raise ValueError("alpha must lie in (0, 1)")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    @property
    def level(self) -> float:
        return 1.0 - self.alpha


def empirical_quantile(values, level: float) -> float:
    """Smallest member ``a`` with ``#{v <= a} / #values >= level``."""
    v = np.sort(np.asarray(values, dtype=float).ravel())
    if v.size == 0:
        raise ValueError("empirical_quantile of an empty set")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    # rank k (1-based) is the first with k / n >= level; guard the float product
    k = max(1, math.ceil(level * v.size))
    while k > 1 and (k - 1) / v.size >= level:
        k -= 1
    while k / v.size < level:
        k += 1
    return float(v[k - 1])


def _check_base(base) -> np.ndarray:
    base = np.asarray(base)
    if base.ndim != 1 or (base.size and base.min() < 0):
        raise ValueError("base must be a non-negative count vector")
    return base


def _multinomial_columns(base: np.ndarray, rngs) -> np.ndarray:
    """One ``Mult(N; base/N)`` draw per generator, stacked as columns."""
    N = int(base.sum())
    out = np.zeros((base.size, len(rngs)), dtype=np.int64)
    if N == 0:
        return out
    nz = np.flatnonzero(base)
    probs = base[nz] / N
    for k, rng in enumerate(rngs):
        out[nz, k] = rng.multinomial(N, probs)
    return out


def multinomial_weights(base, rng: np.random.Generator) -> np.ndarray:
    """One draw of ``Mult(N; base/N)`` where ``N = sum(base)``.

    Categories with zero base weight are skipped and always receive zero.
    """
    return _multinomial_columns(_check_base(base), [rng])[:, 0]


def outer_weights(sample: SparsifiedSample, cfg: BootstrapConfig) -> np.ndarray:
    """Outer resampling weights, one column per replicate."""
    rngs = [stream(cfg.seed, "outer", b) for b in range(cfg.B_outer)]
    return _multinomial_columns(_check_base(sample.counts), rngs)


def inner_weights(w_star: np.ndarray, b: int, cfg: BootstrapConfig) -> np.ndarray:
    rngs = [stream(cfg.seed, "outer", b, "inner", k) for k in range(cfg.B_inner)]
    return _multinomial_columns(_check_base(w_star), rngs)


# ---------------------------------------------------------------------------
# Algorithm 1


@dataclass(frozen=True)
class QuantileEstimate:
    q_hat: float
    mu_hat: float
    sigma_hat: float
    alpha: float
    B_outer: int
    B_inner: int
    seed: int
    functional: str = ""

    FIELDS = ("functional", "q_hat", "mu_hat", "sigma_hat", "alpha", "B_outer", "B_inner", "seed")

    def as_row(self) -> dict:
        return {k: getattr(self, k) for k in self.FIELDS}


@dataclass(frozen=True)
class Algorithm1Replicates:
    """Replicate values of the double bootstrap, before taking a quantile.

    ``square_root`` marks replicates computed on the squared Frobenius error
    for a Frobenius request; quantiles are mapped back by a square root.
    """

    eps_star: np.ndarray
    mu_star: np.ndarray
    sigma_star: np.ndarray
    zeta: np.ndarray
    mu_hat: float
    sigma_hat: float
    functional: str
    square_root: bool = False

    @property
    def studentized(self) -> np.ndarray:
        return self.mu_hat + self.sigma_hat * self.zeta

    def quantile(self, level: float) -> float:
        q = empirical_quantile(self.studentized, level)
        if self.square_root:
            return math.sqrt(max(q, 0.0))
        return q

    def estimate(self, cfg: BootstrapConfig, level: float | None = None) -> QuantileEstimate:
        alpha = cfg.alpha if level is None else 1.0 - level
        return QuantileEstimate(self.quantile(1.0 - alpha), self.mu_hat, self.sigma_hat,
                                alpha, cfg.B_outer, cfg.B_inner, cfg.seed, self.functional)


def _spread(values: np.ndarray) -> tuple[float, float]:
    """Mean and divide-by-B standard deviation; exactly 0 for constant input."""
    mu = float(values.mean())
    if np.ptp(values) == 0:
        return float(values[0]), 0.0
    return mu, float(np.sqrt(np.mean((values - mu) ** 2)))


def algorithm1_replicates(sample: SparsifiedSample, spec: FunctionalSpec,
                          cfg: BootstrapConfig, w_outer: np.ndarray | None = None
                          ) -> Algorithm1Replicates:
    """Run the double bootstrap and keep every replicate value.

    ``w_outer`` may be passed to share outer weights across functionals; it
    must equal ``outer_weights(sample, cfg)``.
    """
    name = getattr(spec, "name", type(spec).__name__)
    square_root = isinstance(spec, Frobenius)
    if square_root:
        spec = FrobeniusSq()
    edges = sample.edges
    if w_outer is None:
        w_outer = outer_weights(sample, cfg)
    try:
        ref = spec.prepare(edges, sample.weights())
        eps_star = np.asarray(spec.compare(edges, sample.weights(w_outer), ref), dtype=float)
    except LapcertError as exc:
        raise EstimationError(f"{name}: outer replicates failed: {exc}") from exc

    def inner(b):
        try:
            w_b = w_outer[:, b]
            ref_b = spec.prepare(edges, sample.weights(w_b))
            W = inner_weights(w_b, b, cfg)
            return np.asarray(spec.compare(edges, sample.weights(W), ref_b), dtype=float)
        except LapcertError as exc:
            raise EstimationError(f"{name}: inner loop failed: {exc}", replicate=b) from exc

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            eps_inner = list(pool.map(inner, range(cfg.B_outer)))
    else:
        eps_inner = [inner(b) for b in range(cfg.B_outer)]

    mu_star = np.empty(cfg.B_outer)
    sigma_star = np.empty(cfg.B_outer)
    zeta = np.zeros(cfg.B_outer)
    for b, e in enumerate(eps_inner):
        mu_star[b], sigma_star[b] = _spread(e)
        if sigma_star[b] > 0:
            zeta[b] = (eps_star[b] - mu_star[b]) / sigma_star[b]
    mu_hat, sigma_hat = _spread(eps_star)
    return Algorithm1Replicates(eps_star, mu_star, sigma_star, zeta, mu_hat, sigma_hat,
                                name, square_root)


def algorithm1_quantile(sample: SparsifiedSample, spec: FunctionalSpec,
                        cfg: BootstrapConfig) -> QuantileEstimate:
    """Double-bootstrap estimate of the ``1 - alpha`` quantile of ``psi(L_hat, L)``.

    For the Frobenius norm the squared norm is bootstrapped and the square
    root of its quantile returned; ``mu_hat`` and ``sigma_hat`` then refer to
    the squared scale.
    """
    return algorithm1_replicates(sample, spec, cfg).estimate(cfg)


# ---------------------------------------------------------------------------
# cut intervals


def _cut_matrix(cuts, n: int) -> np.ndarray:
    if isinstance(cuts, np.ndarray) and cuts.ndim == 2:
        X = cuts.astype(bool)
        if X.shape[1] != n:
            raise ValueError(f"cut vectors have length {X.shape[1]}, graph has {n} vertices")
        return X
    X = [as_cut(x, n) for x in cuts]
    if not X:
        raise ValueError("at least one cut is required")
    return np.vstack(X).astype(bool)


@dataclass(frozen=True)
class CutStatistics:
    """Per-cut centre and spread plus the (edge x cut) crossing table."""

    C_hat: np.ndarray
    sigma_hat: np.ndarray
    crossing: np.ndarray
    values: np.ndarray
    counts: np.ndarray
    N: int

    @property
    def n_cuts(self) -> int:
        return len(self.C_hat)


def cut_statistics(sample: SparsifiedSample, cuts) -> CutStatistics:
    """``C_hat(x)`` and the population spread of the per-draw values ``C_i(x)``."""
    X = _cut_matrix(cuts, sample.n)
    crossing = X[:, sample.src] != X[:, sample.dst]
    crossing = np.ascontiguousarray(crossing.T)
    v = sample.values
    frac = sample.counts / sample.N
    C_hat = (frac * v) @ crossing
    # per-draw values are v_e on crossing edges and 0 elsewhere
    vals = crossing * v[:, None]
    var = frac @ (vals - C_hat) ** 2
    sigma = np.sqrt(var)
    constant = vals.max(axis=0) == vals.min(axis=0)
    sigma[constant] = 0.0
    C_hat[constant] = vals[0, constant] if len(v) else 0.0
    return CutStatistics(C_hat, sigma, crossing, v, sample.counts, sample.N)


@dataclass(frozen=True)
class CutCIResult:
    q_hat: float
    C_hat: np.ndarray
    sigma_hat: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    cmax_interval: tuple[float, float]
    cmin_interval: tuple[float, float]
    alpha: float
    B_outer: int
    seed: int
    xi: np.ndarray = field(repr=False, default=None)

    HEADER = ("row", "C_hat", "sigma_hat", "lo", "hi", "q_hat")

    def rows(self):
        for k in range(len(self.C_hat)):
            yield (str(k), self.C_hat[k], self.sigma_hat[k], self.lo[k], self.hi[k], self.q_hat)
        yield ("cmax", math.nan, math.nan, *self.cmax_interval, self.q_hat)
        yield ("cmin", math.nan, math.nan, *self.cmin_interval, self.q_hat)


def cut_xi(stats: CutStatistics, w_star: np.ndarray) -> np.ndarray:
    """``max_x |sum_e (W_e - c_e) C_e(x)| / (N sigma(x))`` for each weight column."""
    D = (w_star - stats.counts[:, None]) * stats.values[:, None]
    dev = np.abs(D.T @ stats.crossing) / stats.N
    pos = stats.sigma_hat > 0
    if not pos.any():
        return np.zeros(w_star.shape[1])
    return (dev[:, pos] / stats.sigma_hat[pos]).max(axis=1)


def intervals_from_quantile(stats: CutStatistics, q: float):
    half = stats.sigma_hat * q
    lo, hi = stats.C_hat - half, stats.C_hat + half
    return lo, hi, (float(lo.max()), float(hi.max())), (float(lo.min()), float(hi.min()))


def algorithm2_cut_cis(sample: SparsifiedSample, cuts, cfg: BootstrapConfig,
                       stats: CutStatistics | None = None) -> CutCIResult:
    """Simultaneous intervals for the cut values of every cut in ``cuts``."""
    stats = stats or cut_statistics(sample, cuts)
    xi = cut_xi(stats, outer_weights(sample, cfg))
    q = empirical_quantile(xi, cfg.level)
    lo, hi, cmax, cmin = intervals_from_quantile(stats, q)
    return CutCIResult(q, stats.C_hat, stats.sigma_hat, lo, hi, cmax, cmin,
                       cfg.alpha, cfg.B_outer, cfg.seed, xi)


# ---------------------------------------------------------------------------
# eigenvalue intervals


@dataclass(frozen=True)
class EigCIResult:
    q_hat: float
    eigenvalues: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    alpha: float
    B_outer: int
    seed: int
    xi: np.ndarray = field(repr=False, default=None)

    HEADER = ("index", "lo", "hi")

    @property
    def intervals(self) -> list[tuple[float, float]]:
        return list(zip(self.lo.tolist(), self.hi.tolist()))

    def rows(self):
        for j in range(len(self.lo)):
            yield (j + 1, self.lo[j], self.hi[j])


def zero_eigen_mask(lam: np.ndarray, weights: np.ndarray, edges, tol: float) -> np.ndarray:
    """Eigenvalues that are zero up to ``tol`` times a bound on the operator norm."""
    bound = 2.0 * edges.vertex_sums(np.abs(weights)).max()
    return lam <= tol * bound


def eigen_intervals(lam: np.ndarray, zero: np.ndarray, q: float):
    lam = np.where(zero, 0.0, lam)
    lo = lam / (1.0 + q)
    with np.errstate(divide="ignore"):
        hi = np.where(lam == 0, 0.0, lam / (1.0 - q) if q < 1 else np.inf)
    lo[0] = hi[0] = 0.0
    return lo, hi


def eigen_xi(lam_hat: np.ndarray, zero: np.ndarray, lam_star: np.ndarray) -> np.ndarray:
    """``max_{j >= 2} |lambda_j(L*) / lambda_j(L_hat) - 1|`` per replicate row."""
    keep = ~zero
    keep[0] = False
    if not keep.any():
        return np.zeros(len(lam_star))
    return np.abs(lam_star[:, keep] / lam_hat[keep] - 1.0).max(axis=1)


def eigenvalue_cis(sample: SparsifiedSample, r: int, cfg: BootstrapConfig,
                   solver: SolverConfig | None = None, method: str = "auto") -> EigCIResult:
    """Simultaneous intervals for the ``r`` smallest Laplacian eigenvalues."""
    if not 2 <= r <= sample.n:
        raise ValueError(f"r must lie in [2, {sample.n}]")
    solver = solver or SolverConfig.eigen()
    edges = sample.edges
    w_hat = sample.weights()
    lam_hat = bottom_eigenvalues(LaplacianOperator(edges, w_hat), r, solver, method)
    zero = zero_eigen_mask(lam_hat, w_hat, edges, solver.tol)
    W = outer_weights(sample, cfg)

    def replicate(b):
        try:
            return bottom_eigenvalues(LaplacianOperator(edges, sample.weights(W[:, b])),
                                      r, solver, method)
        except LapcertError as exc:
            raise EstimationError(f"eigenvalue replicate failed: {exc}", replicate=b) from exc

    if cfg.workers > 1:
        with ThreadPoolExecutor(cfg.workers) as pool:
            lam_star = np.vstack(list(pool.map(replicate, range(cfg.B_outer))))
    else:
        lam_star = np.vstack([replicate(b) for b in range(cfg.B_outer)])
    xi = eigen_xi(lam_hat, zero, lam_star)
    q = empirical_quantile(xi, cfg.level)
    lo, hi = eigen_intervals(lam_hat, zero, q)
    return EigCIResult(q, lam_hat, lo, hi, cfg.alpha, cfg.B_outer, cfg.seed, xi)


def largest_gap_index(lo: np.ndarray, hi: np.ndarray) -> int:
    """1-based ``j`` maximizing the gap ``lo_{j+1} - hi_j`` between consecutive intervals."""
    gaps = np.asarray(lo[1:]) - np.asarray(hi[:-1])
    return int(np.argmax(gaps)) + 1


# ---------------------------------------------------------------------------
# incremental refinement


def extrapolate_quantile(q0: float, N0: int, N: int) -> float:
    """``sqrt(N0 / N) * q0`` for a larger sample size ``N``."""
    if N0 < 1:
        raise ValueError("N0 must be positive")
    if N < N0:
        raise ValueError("extrapolation only runs forward (N >= N0)")
    if q0 < 0:
        raise ValueError("q0 must be non-negative")
    return math.sqrt(N0 / N) * q0


def forecast_sample_size(q0: float, N0: int, threshold: float) -> int:
    """Smallest ``N1 >= N0`` whose extrapolated quantile is at most ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    if q0 < 0:
        raise ValueError("q0 must be non-negative")
    if q0 <= threshold:
        return int(N0)
    N1 = max(int(N0), math.ceil(N0 * (q0 / threshold) ** 2))
    # settle rounding in the closed form against the extrapolation rule itself
    while N1 > N0 and extrapolate_quantile(q0, N0, N1 - 1) <= threshold:
        N1 -= 1
    while extrapolate_quantile(q0, N0, N1) > threshold:
        N1 += 1
    return N1


# ---------------------------------------------------------------------------
# reports


def format_number(x) -> str:
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".17g")


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([format_number(v) for v in row])
    return buf.getvalue()


def to_csv(result) -> str:
    """CSV text for a QuantileEstimate (or a list of them), CutCIResult or EigCIResult."""
    if isinstance(result, QuantileEstimate):
        result = [result]
    if isinstance(result, (list, tuple)):
        F = QuantileEstimate.FIELDS
        return csv_text(F, ([getattr(r, k) for k in F] for r in result))
    if isinstance(result, (CutCIResult, EigCIResult)):
        return csv_text(result.HEADER, result.rows())
    raise TypeError(f"cannot serialize {type(result).__name__}")


def _json_value(x):
    if isinstance(x, (np.integer, int)):
        return int(x)
    x = float(x)
    return x if math.isfinite(x) else repr(x)


def to_jsonl(result) -> str:
    """One JSON object per line carrying the fixed metadata fields."""
    if isinstance(result, QuantileEstimate):
        result = [result]
    if isinstance(result, (list, tuple)):
        lines = [{k: (v if isinstance(v, str) else _json_value(v)) for k, v in r.as_row().items()}
                 for r in result]
    elif isinstance(result, CutCIResult):
        meta = {"q_hat": result.q_hat, "alpha": result.alpha, "B_outer": result.B_outer,
                "seed": result.seed}
        lines = [{"row": r[0], **dict(zip(result.HEADER[1:], map(_json_value, r[1:])))}
                 for r in result.rows()]
        lines.insert(0, {k: _json_value(v) for k, v in meta.items()})
    elif isinstance(result, EigCIResult):
        meta = {"q_hat": result.q_hat, "alpha": result.alpha, "B_outer": result.B_outer,
                "seed": result.seed}
        lines = [{k: _json_value(v) for k, v in meta.items()}]
        lines += [{"index": j, "lo": _json_value(lo), "hi": _json_value(hi)}
                  for j, lo, hi in result.rows()]
    else:
        raise TypeError(f"cannot serialize {type(result).__name__}")
    return "".join(json.dumps(obj) + "\n" for obj in lines)
