"""Error functionals between two Laplacian operands.

Each functional is evaluated in two steps so that bootstrap loops can reuse
work: ``prepare(edges, w_ref)`` digests the reference operand once, and
``compare(edges, W, ref)`` scores a block of operands (weight columns of ``W``)
against it.  Both operands live on a common ``EdgeSet`` whose pairs are
distinct.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graph import EdgeSet, Graph
from .sampling import SparsifiedSample, SamplingError
from .spectral import SolverConfig, operator_norms_batch, regression_fit_batch


def _frobenius_sq(edges: EdgeSet, D: np.ndarray) -> np.ndarray:
    # off-diagonal entries appear twice; diagonal is the per-vertex sum of differences
    diag = edges.vertex_sums(D)
    return 2.0 * np.einsum("ij,ij->j", D, D) + np.einsum("ij,ij->j", diag, diag)


@dataclass(frozen=True)
class FrobeniusSq:
    name = "fro2"

    def prepare(self, edges, w_ref):
        return np.asarray(w_ref, dtype=float)

    def compare(self, edges, W, ref):
        return _frobenius_sq(edges, W - ref[:, None])


@dataclass(frozen=True)
class Frobenius:
    name = "fro"

    def prepare(self, edges, w_ref):
        return np.asarray(w_ref, dtype=float)

    def compare(self, edges, W, ref):
        return np.sqrt(_frobenius_sq(edges, W - ref[:, None]))


@dataclass(frozen=True)
class OperatorNorm:
    name = "op"
    solver: SolverConfig = field(default_factory=SolverConfig.eigen)

    def prepare(self, edges, w_ref):
        return np.asarray(w_ref, dtype=float)

    def compare(self, edges, W, ref):
        return operator_norms_batch(edges, W - ref[:, None], self.solver)


@dataclass(frozen=True, eq=False)
class RegressionL2:
    """``||r(A) - r(B)||_2`` with ``r(L) = (I + tau L)^{-1} y``."""

    y: np.ndarray
    tau: float
    solver: SolverConfig = field(default_factory=SolverConfig)
    name = "reg"

    def __post_init__(self):
        y = np.array(self.y, dtype=float)
        y.setflags(write=False)
        object.__setattr__(self, "y", y)
        if self.tau < 0:
            raise ValueError("tau must be non-negative")

    def fit(self, edges, W):
        return regression_fit_batch(edges, W, self.y, self.tau, self.solver)

    def prepare(self, edges, w_ref):
        if len(self.y) != edges.n:
            raise ValueError(f"payload y has length {len(self.y)}, graph has {edges.n} vertices")
        return self.fit(edges, np.asarray(w_ref, dtype=float))[:, 0]

    def compare(self, edges, W, ref):
        fits = self.fit(edges, W)
        return np.linalg.norm(fits - ref[:, None], axis=0)


FunctionalSpec = FrobeniusSq | Frobenius | OperatorNorm | RegressionL2
FUNCTIONAL_NAMES = ("fro", "fro2", "op", "reg")


def parse_functional(name: str, *, y=None, tau: float | None = None) -> FunctionalSpec:
    if name == "fro":
        return Frobenius()
    if name == "fro2":
        return FrobeniusSq()
    if name == "op":
        return OperatorNorm()
    if name == "reg":
        if y is None or tau is None:
            raise ValueError("the regression functional needs y and tau")
        return RegressionL2(y, tau)
    raise ValueError(f"unknown functional {name!r}; choose from {FUNCTIONAL_NAMES}")


# ---------------------------------------------------------------------------
# operands


@dataclass(frozen=True, eq=False)
class Exact:
    graph: Graph

    @property
    def n(self):
        return self.graph.n

    def triples(self):
        return self.graph.src, self.graph.dst, self.graph.w


@dataclass(frozen=True, eq=False)
class Sampled:
    sample: SparsifiedSample
    reweight: np.ndarray | None = None

    def __post_init__(self):
        if self.reweight is not None:
            r = np.asarray(self.reweight)
            if r.shape != (self.sample.m_unique,):
                raise SamplingError("reweight is not aligned with the sample's edges")
            if int(r.sum()) != self.sample.N:
                raise SamplingError("reweight must sum to the sample's N")

    @property
    def n(self):
        return self.sample.n

    def weights(self):
        return self.sample.weights(self.reweight)

    def triples(self):
        s = self.sample
        return s.src, s.dst, self.weights()


LaplacianOperand = Exact | Sampled


def common_edges(a: LaplacianOperand, b: LaplacianOperand):
    """Express both operands as weight vectors over one set of distinct pairs."""
    if a.n != b.n:
        raise ValueError(f"operands have different vertex counts ({a.n} vs {b.n})")
    if isinstance(a, Sampled) and isinstance(b, Sampled) and a.sample is b.sample:
        return a.sample.edges, a.weights(), b.weights()
    n = a.n
    sa, da, wa = a.triples()
    sb, db, wb = b.triples()
    keys_a = np.asarray(sa) * n + np.asarray(da)
    keys_b = np.asarray(sb) * n + np.asarray(db)
    keys = np.union1d(keys_a, keys_b)
    out_a = np.zeros(len(keys))
    out_b = np.zeros(len(keys))
    np.add.at(out_a, np.searchsorted(keys, keys_a), wa)
    np.add.at(out_b, np.searchsorted(keys, keys_b), wb)
    return EdgeSet(n, keys // n, keys % n), out_a, out_b


def eval_functional(spec: FunctionalSpec, a: LaplacianOperand, b: LaplacianOperand) -> float:
    """``psi(A, B)`` for two Laplacian operands on the same vertex set."""
    edges, wa, wb = common_edges(a, b)
    ref = spec.prepare(edges, wb)
    return float(spec.compare(edges, wa[:, None], ref)[0])
