"""Edge sampling distributions and sparsified Laplacians.

A sparsified Laplacian is the average of N i.i.d. draws ``(w(e)/p(e)) Delta_e``.
Draws of the same edge are interchangeable, so a sample is stored as per-edge
counts over the distinct sampled edges.  Any reweighting of the N draws that
respects this (bootstrap weights in particular) is again a count vector over the
same edges, and ``weights(r) = (r / N) * w / p`` gives the Laplacian's edge
weights.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

from . import spectral
from .errors import ConvergenceError, EmptySampleError, SamplingError
from .graph import EdgeSet, Graph
from .rng import stream

SCHEMES = ("ew", "er", "aer", "poisson")
_ER_CHUNK = 256


@dataclass(frozen=True, eq=False)
class EdgeProbabilities:
    """A sampling distribution aligned with ``Graph`` edge order."""

    probs: np.ndarray
    scheme: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or len(p) == 0:
            raise SamplingError("probabilities must be a non-empty vector")
        if np.any(p <= 0) or not np.all(np.isfinite(p)):
            raise SamplingError("every edge probability must be positive and finite")
        p = p / p.sum()
        p.setflags(write=False)
        object.__setattr__(self, "probs", p)


def edge_weight_probs(g: Graph) -> EdgeProbabilities:
    """EW sampling: ``p(e) = w(e) / w(E)``."""
    if g.m == 0:
        raise SamplingError("graph has no edges")
    return EdgeProbabilities(g.w / g.total_weight, "ew")


def effective_resistances(g: Graph, tol: float = spectral.SOLVE_TOL,
                          method: str = "auto") -> np.ndarray:
    """``R_eff(e) = delta_e' L^+ delta_e`` for every edge.

    ``method="cg"`` solves one deflated CG system per edge (in blocks);
    ``"dense"`` reads the resistances off a per-component dense pseudoinverse.
    ``"auto"`` picks dense up to the spectral module's crossover size.
    """
    if method == "auto":
        method = "dense" if g.n <= spectral.DENSE_CROSSOVER else "cg"
    es = g.edge_set
    if method == "dense":
        M = spectral.laplacian_pinv_dense(es, g.w, g.component_ids)
        i, j = g.src, g.dst
        return M[i, i] + M[j, j] - 2.0 * M[i, j]
    if method != "cg":
        raise ValueError(f"unknown method {method!r}")
    Z = spectral.component_nullspace(g.component_ids)
    out = np.empty(g.m)
    max_iter = 5 * g.n
    for start in range(0, g.m, _ER_CHUNK):
        idx = np.arange(start, min(start + _ER_CHUNK, g.m))
        rhs = np.zeros((g.n, len(idx)))
        rhs[g.src[idx], np.arange(len(idx))] = 1.0
        rhs[g.dst[idx], np.arange(len(idx))] = -1.0
        X, iters, rel = spectral.block_cg(lambda V: es.laplacian_apply(g.w, V), rhs,
                                          tol=tol, max_iter=max_iter, nullspace=Z)
        if np.any(rel > tol):
            bad = int(np.argmax(rel))
            raise ConvergenceError(f"effective resistance solve failed for edge {idx[bad]}",
                                   iters, float(rel[bad]))
        out[idx] = X[g.src[idx], np.arange(len(idx))] - X[g.dst[idx], np.arange(len(idx))]
    return out


def effective_resistance_probs(g: Graph, tol: float = spectral.SOLVE_TOL,
                               method: str = "auto") -> EdgeProbabilities:
    """ER sampling: ``p(e)`` proportional to ``w(e) R_eff(e)``."""
    lev = g.w * effective_resistances(g, tol, method)
    return EdgeProbabilities(lev, "er", {"tol": tol, "leverage_sum": math.fsum(lev.tolist())})


def aer_sketch_rows(n: int, eps: float) -> int:
    return int(math.ceil(24.0 * math.log(n) / eps**2)) if n > 1 else 1


def approx_effective_resistance_probs(g: Graph, eps: float, seed: int,
                                      tol: float = spectral.SOLVE_TOL) -> EdgeProbabilities:
    """AER sampling from a Johnson-Lindenstrauss sketch of ``W^{1/2} B L^+``.

    Each of ``k = ceil(24 ln n / eps^2)`` rows solves ``L z = B' W^{1/2} rho``
    with Rademacher ``rho`` scaled by ``1/sqrt(k)``; then
    ``p(e)`` is proportional to ``w(e) * sum_rows (z_i - z_j)^2``.
    """
    if not 0 < eps <= 1:
        raise ValueError("eps must lie in (0, 1]")
    if g.m == 1:
        return EdgeProbabilities(np.ones(1), "aer", {"eps": eps, "seed": seed, "tol": tol})
    k = aer_sketch_rows(g.n, eps)
    rng = stream(seed, "aer")
    es = g.edge_set
    Z = spectral.component_nullspace(g.component_ids)
    sqrt_w = np.sqrt(g.w)
    acc = np.zeros(g.m)
    max_iter = 5 * g.n
    chunk = 512
    for start in range(0, k, chunk):
        rows = min(chunk, k - start)
        rho = rng.choice(np.array([-1.0, 1.0]), size=(g.m, rows)) / math.sqrt(k)
        rhs = es.incidence_t @ (sqrt_w[:, None] * rho)
        X, iters, rel = spectral.block_cg(lambda V: es.laplacian_apply(g.w, V), rhs,
                                          tol=tol, max_iter=max_iter, nullspace=Z)
        if np.any(rel > tol):
            raise ConvergenceError("AER sketch solve failed", iters, float(rel.max()))
        diff = es.incidence @ X
        acc += np.einsum("ij,ij->i", diff, diff)
    lev = g.w * acc
    if np.any(lev <= 0):
        raise SamplingError("AER produced a zero probability; decrease eps")
    return EdgeProbabilities(lev, "aer", {"eps": eps, "seed": seed, "tol": tol})


def probabilities_for(g: Graph, scheme: str, *, eps: float = 1.0, aer_seed: int = 0,
                      tol: float = spectral.SOLVE_TOL) -> EdgeProbabilities:
    if scheme == "ew":
        return edge_weight_probs(g)
    if scheme == "er":
        return effective_resistance_probs(g, tol)
    if scheme == "aer":
        return approx_effective_resistance_probs(g, eps, aer_seed, tol)
    if scheme == "poisson":
        return EdgeProbabilities(np.full(g.m, 1.0 / g.m), "poisson")
    raise ValueError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")


@dataclass(frozen=True, eq=False)
class SparsifiedSample:
    """N i.i.d. edge draws, stored as counts over the distinct sampled edges.

    ``edge_index`` refers to rows of the source graph (or stream).  The sample
    keeps the endpoints, weights and probabilities of its own edges so that
    estimation never touches the source graph again.
    """

    n: int
    N: int
    edge_index: np.ndarray
    counts: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    w: np.ndarray
    p: np.ndarray
    seed: int
    scheme: str = "ew"
    params: dict = field(default_factory=dict)
    graph: Graph | None = field(default=None, repr=False)

    def __post_init__(self):
        for name in ("edge_index", "counts", "src", "dst", "w", "p"):
            arr = np.array(getattr(self, name))
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        if int(self.counts.sum()) != self.N:
            raise SamplingError("counts must sum to N")
        if np.any(self.counts < 1):
            raise SamplingError("stored counts must be positive")

    @property
    def m_unique(self) -> int:
        return len(self.counts)

    @cached_property
    def values(self) -> np.ndarray:
        """Per-draw multiplier ``w(e) / p(e)``."""
        return self.w / self.p

    @property
    def scale(self) -> np.ndarray:
        """Weight contributed by one draw: ``w(e) / (N p(e))``."""
        return self.values / self.N

    @property
    def max_scale(self) -> float:
        return float(self.scale.max())

    @cached_property
    def edges(self) -> EdgeSet:
        return EdgeSet(self.n, self.src, self.dst)

    def weights(self, reweight=None) -> np.ndarray:
        """Edge weights of ``(1/N) sum_e r_e (w/p) Delta_e``.

        ``reweight`` may be a count vector (m_unique,) or a block (m_unique, K).
        """
        if reweight is None:
            return (self.counts / self.N) * self.values
        r = np.asarray(reweight)
        if r.ndim == 1:
            return (r / self.N) * self.values
        return (r / self.N) * self.values[:, None]

    def operator(self, reweight=None) -> spectral.LaplacianOperator:
        return spectral.LaplacianOperator(self.edges, self.weights(reweight))


def _build_sample(g: Graph, counts: np.ndarray, probs: np.ndarray, N: int, seed: int,
                  scheme: str, params: dict) -> SparsifiedSample:
    idx = np.flatnonzero(counts)
    return SparsifiedSample(
        n=g.n, N=N, edge_index=idx, counts=counts[idx].astype(np.int64),
        src=g.src[idx], dst=g.dst[idx], w=g.w[idx], p=probs[idx], seed=seed,
        scheme=scheme, params=dict(params), graph=g,
    )


def draw_sample(g: Graph, p: EdgeProbabilities, N: int, seed: int) -> SparsifiedSample:
    """Draw ``N`` edges i.i.d. from ``p``; counts are one Multinomial(N; p) outcome.

    numpy's multinomial walks categories in index order with conditional
    binomials, so the result depends only on ``(seed, g, p, N)``.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if len(p.probs) != g.m:
        raise SamplingError("probabilities are not aligned with the graph's edges")
    counts = stream(seed, "draw").multinomial(int(N), p.probs)
    return _build_sample(g, counts, p.probs, int(N), seed, p.scheme, p.params)


def sample_from_counts(g: Graph, p: EdgeProbabilities, edge_index, counts, seed: int) -> SparsifiedSample:
    full = np.zeros(g.m, dtype=np.int64)
    edge_index = np.asarray(edge_index, dtype=np.int64)
    if len(edge_index) and (edge_index.min() < 0 or edge_index.max() >= g.m):
        raise SamplingError("edge index out of range for this graph")
    np.add.at(full, edge_index, np.asarray(counts, dtype=np.int64))
    return _build_sample(g, full, p.probs, int(full.sum()), seed, p.scheme, p.params)


def poisson_stream_sample(edge_source: Iterable, g_meta: tuple[int, int], N_target: int,
                          seed: int) -> SparsifiedSample:
    """Blockwise approximate EW sampling for equal-weight edge streams.

    Each edge receives an independent Poisson(N_target / |E|) count; the
    realized total is used as the sample's N.  ``edge_source`` yields
    ``(src, dst, w)`` array blocks, e.g. from ``graph.iter_edge_blocks``.  Only
    edges with a positive count are retained.  One random stream is consumed
    sequentially, so the outcome does not depend on the block size.
    """
    n, m = int(g_meta[0]), int(g_meta[1])
    if N_target < 1:
        raise ValueError("N_target must be at least 1")
    rate = N_target / m
    rng = stream(seed, "poisson")
    keep_idx, keep_c, keep_s, keep_d = [], [], [], []
    w0 = None
    offset = 0
    for src, dst, w in edge_source:
        src, dst, w = np.asarray(src), np.asarray(dst), np.asarray(w, dtype=float)
        if len(w) == 0:
            continue
        if w0 is None:
            w0 = float(w[0])
            if not w0 > 0:
                raise SamplingError("streamed edge weights must be positive")
        if np.any(w != w0):
            bad = offset + int(np.flatnonzero(w != w0)[0])
            raise SamplingError(f"edge {bad} has weight {w[bad - offset]!r} != {w0!r}; "
                                "Poisson streaming requires equal weights")
        if np.any(src == dst):
            raise SamplingError(f"self-loop at stream row {offset + int(np.flatnonzero(src == dst)[0])}")
        c = rng.poisson(rate, size=len(w))
        nz = np.flatnonzero(c)
        keep_idx.append(nz + offset)
        keep_c.append(c[nz])
        keep_s.append(np.minimum(src[nz], dst[nz]))
        keep_d.append(np.maximum(src[nz], dst[nz]))
        offset += len(w)
    if offset != m:
        raise SamplingError(f"stream had {offset} edges but metadata declared {m}")
    counts = np.concatenate(keep_c) if keep_c else np.zeros(0, dtype=np.int64)
    total = int(counts.sum())
    if total == 0:
        raise EmptySampleError(f"Poisson sampler drew no edges (rate {rate:g}); retry with a new seed")
    k = len(counts)
    return SparsifiedSample(
        n=n, N=total, edge_index=np.concatenate(keep_idx), counts=counts.astype(np.int64),
        src=np.concatenate(keep_s), dst=np.concatenate(keep_d), w=np.full(k, w0),
        p=np.full(k, 1.0 / m), seed=seed, scheme="poisson",
        params={"N_target": int(N_target), "m": m},
    )


def sparsified_matvec(s: SparsifiedSample, reweight, v) -> np.ndarray:
    """``(sum_e r_e s_e Delta_e) v`` with ``r`` the sample counts or ``reweight``."""
    v = np.asarray(v, dtype=float)
    if v.shape[0] != s.n:
        raise ValueError(f"vector length {v.shape[0]} != {s.n}")
    if reweight is not None:
        r = np.asarray(reweight)
        if r.shape[0] != s.m_unique:
            raise SamplingError("reweight is not aligned with the sample's edges")
        if int(np.sum(r)) != s.N:
            raise SamplingError(f"reweight sums to {int(np.sum(r))}, expected N={s.N}")
    return s.edges.laplacian_apply(s.weights(reweight), v)


# ---------------------------------------------------------------------------
# serialization

_MAGIC = "#lapcert-sample v1"


def save_sample(s: SparsifiedSample, path) -> None:
    """Header line of ``key=value`` fields, then ``edge_index count`` rows."""
    m = s.graph.m if s.graph is not None else s.params.get("m", "")
    header = {"n": s.n, "m": m, "N": s.N, "seed": s.seed, "scheme": s.scheme}
    for key in ("eps", "tol"):
        if key in s.params:
            header[key] = repr(float(s.params[key]))
    if s.scheme == "aer":
        header["aer_seed"] = s.params["seed"]
    if s.graph is not None:
        header["total_weight"] = repr(s.graph.total_weight)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_MAGIC + " " + " ".join(f"{k}={v}" for k, v in header.items()) + "\n")
        for e, c in zip(s.edge_index.tolist(), s.counts.tolist()):
            fh.write(f"{e} {c}\n")


def read_sample_header(path) -> dict:
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline().strip()
    if not first.startswith(_MAGIC):
        raise SamplingError(f"{path}: not a sample file")
    return dict(tok.split("=", 1) for tok in first[len(_MAGIC):].split())


def load_sample(path, g: Graph) -> SparsifiedSample:
    """Rebuild a saved sample against its source graph, re-deriving probabilities."""
    header = read_sample_header(path)
    data = np.loadtxt(path, comments="#", dtype=np.int64, ndmin=2)
    if int(header["n"]) != g.n or (header.get("m") and int(header["m"]) != g.m):
        raise SamplingError("sample file does not match the graph (n or |E| differ)")
    if "total_weight" in header and not math.isclose(float(header["total_weight"]),
                                                     g.total_weight, rel_tol=1e-12):
        raise SamplingError("sample file does not match the graph (total weight differs)")
    scheme = header["scheme"]
    tol = float(header.get("tol", spectral.SOLVE_TOL))
    p = probabilities_for(g, scheme, eps=float(header.get("eps", 1.0)),
                          aer_seed=int(header.get("aer_seed", 0)), tol=tol)
    s = sample_from_counts(g, p, data[:, 0], data[:, 1], int(header["seed"]))
    if s.N != int(header["N"]):
        raise SamplingError("counts in sample file do not sum to its N")
    return s
