"""Weighted undirected graphs, Laplacian action, cuts and edge-list I/O.

A graph is stored as three flat arrays ``src``, ``dst``, ``w`` with ``src < dst``.
The Laplacian ``L = sum_e w(e) Delta_e`` is never formed explicitly here; every
product goes through the signed edge-incidence operator.
"""
from __future__ import annotations

import io
import math
import os
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterator, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.csgraph import connected_components

from .errors import GraphError, GraphFormatError

FORMATS = ("whitespace", "csv", "mtx")


class EdgeSet:
    """Endpoints of a list of edges on ``n`` vertices, with incidence operators.

    Weight vectors are supplied per call, so one ``EdgeSet`` serves the exact
    Laplacian, a sparsified Laplacian and any reweighting of it.  Weights may be
    a vector ``(m,)`` or a matrix ``(m, K)``; in the latter case column ``k`` of
    the input block is multiplied by the Laplacian with weights ``[:, k]``.
    """

    def __init__(self, n: int, src: np.ndarray, dst: np.ndarray):
        self.n = int(n)
        self.src = np.asarray(src, dtype=np.int64)
        self.dst = np.asarray(dst, dtype=np.int64)
        self.m = len(self.src)

    @cached_property
    def incidence(self) -> sp.csr_matrix:
        """Signed incidence ``B`` (m x n): row e is ``e_i - e_j``."""
        rows = np.repeat(np.arange(self.m), 2)
        cols = np.empty(2 * self.m, dtype=np.int64)
        cols[0::2] = self.src
        cols[1::2] = self.dst
        vals = np.tile([1.0, -1.0], self.m)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.m, self.n))

    @cached_property
    def incidence_t(self) -> sp.csr_matrix:
        return self.incidence.T.tocsr()

    @cached_property
    def unsigned_incidence_t(self) -> sp.csr_matrix:
        """``|B|^T`` (n x m); maps per-edge values to per-vertex sums."""
        return abs(self.incidence_t)

    def laplacian_apply(self, weights: np.ndarray, v: np.ndarray) -> np.ndarray:
        diff = self.incidence @ v
        if diff.ndim == 1:
            return self.incidence_t @ (np.asarray(weights) * diff)
        w = np.asarray(weights)
        if w.ndim == 1:
            w = w[:, None]
        return self.incidence_t @ (w * diff)

    def vertex_sums(self, values: np.ndarray) -> np.ndarray:
        """Sum per-edge values onto both endpoints (degrees when values are weights)."""
        return self.unsigned_incidence_t @ values

    def dense_laplacian(self, weights: np.ndarray) -> np.ndarray:
        n = self.n
        w = np.asarray(weights, dtype=float)
        flat = np.bincount(self.src * n + self.dst, weights=-w, minlength=n * n)
        flat += np.bincount(self.dst * n + self.src, weights=-w, minlength=n * n)
        out = flat.reshape(n, n)
        out[np.diag_indices(n)] = self.vertex_sums(w)
        return out


@dataclass(frozen=True, eq=False)
class Graph:
    """Immutable weighted undirected graph on vertices ``0..n-1``.

    On construction edges are oriented so ``src < dst``, repeated pairs are
    merged by summing their weights (keeping first-appearance order) and
    zero-weight edges are dropped.  Self-loops and negative weights raise.
    """

    n: int
    src: np.ndarray
    dst: np.ndarray
    w: np.ndarray
    labels: tuple | None = field(default=None, repr=False)

    def __post_init__(self):
        n = int(self.n)
        if n < 1:
            raise GraphError("vertex count must be positive")
        src = np.asarray(self.src, dtype=np.int64).ravel()
        dst = np.asarray(self.dst, dtype=np.int64).ravel()
        w = np.asarray(self.w, dtype=float).ravel()
        if not (len(src) == len(dst) == len(w)):
            raise GraphError("src, dst and w must have equal length")
        if len(src):
            if src.min() < 0 or dst.min() < 0 or src.max() >= n or dst.max() >= n:
                raise GraphError(f"vertex id out of range [0, {n})")
            if np.any(src == dst):
                k = int(np.flatnonzero(src == dst)[0])
                raise GraphError(f"self-loop at edge {k} (vertex {src[k]})")
            if not np.all(np.isfinite(w)):
                raise GraphError("weights must be finite")
            if np.any(w < 0):
                raise GraphError("negative edge weight")
            lo, hi = np.minimum(src, dst), np.maximum(src, dst)
            keys = lo * n + hi
            uniq, first, inverse = np.unique(keys, return_index=True, return_inverse=True)
            sums = np.bincount(inverse, weights=w, minlength=len(uniq))
            order = np.argsort(first, kind="stable")
            uniq, sums = uniq[order], sums[order]
            keep = sums > 0
            uniq, sums = uniq[keep], sums[keep]
            src, dst, w = uniq // n, uniq % n, sums
        for name, arr in (("src", src), ("dst", dst), ("w", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "n", n)

    @property
    def m(self) -> int:
        return len(self.w)

    @cached_property
    def total_weight(self) -> float:
        return math.fsum(self.w.tolist())

    @cached_property
    def edge_set(self) -> EdgeSet:
        return EdgeSet(self.n, self.src, self.dst)

    @cached_property
    def _components(self) -> tuple[int, np.ndarray]:
        adj = sp.coo_matrix((np.ones(self.m), (self.src, self.dst)), shape=(self.n, self.n))
        k, labels = connected_components(adj, directed=False)
        labels.setflags(write=False)
        return k, labels

    @property
    def component_ids(self) -> np.ndarray:
        return self._components[1]

    @property
    def n_components(self) -> int:
        return self._components[0]

    def with_weights(self, w: np.ndarray) -> "Graph":
        return Graph(self.n, self.src, self.dst, w, labels=self.labels)

    def __repr__(self):
        return f"Graph(n={self.n}, m={self.m}, total_weight={self.total_weight:.6g})"


def _check_vector(g: Graph, v, name="v") -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.shape[0] != g.n:
        raise ValueError(f"{name} has length {v.shape[0]}, graph has {g.n} vertices")
    return v


def laplacian_matvec(g: Graph, v) -> np.ndarray:
    """``L @ v`` computed edge-wise."""
    return g.edge_set.laplacian_apply(g.w, _check_vector(g, v))


def degree_vector(g: Graph) -> np.ndarray:
    """Weighted degrees, i.e. the diagonal of ``L``."""
    return g.edge_set.vertex_sums(g.w)


def as_cut(x, n: int) -> np.ndarray:
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != n:
        raise ValueError(f"cut vector has length {x.shape[0] if x.ndim else 0}, expected {n}")
    if x.dtype != bool:
        if not np.all((x == 0) | (x == 1)):
            raise ValueError("cut vector entries must be 0 or 1")
        x = x.astype(bool)
    return x


def cut_value(g: Graph, x) -> float:
    """Total weight of edges crossing the bipartition encoded by binary ``x``."""
    x = as_cut(x, g.n)
    crossing = x[g.src] != x[g.dst]
    return math.fsum(g.w[crossing].tolist())


def normalize_weights(g: Graph) -> tuple[Graph, float]:
    """Rescale weights to sum to one; returns the graph and the divisor."""
    scale = g.total_weight
    if not scale > 0:
        raise GraphError("cannot normalize a graph with zero total weight")
    if scale == 1.0:
        return g, 1.0
    return g.with_weights(g.w / scale), scale


# ---------------------------------------------------------------------------
# I/O


def _open_text(source):
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8"), True
    if isinstance(source, (bytes, bytearray)):
        return io.StringIO(source.decode("utf-8")), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8"), False


def guess_format(path) -> str:
    ext = os.path.splitext(str(path))[1].lower()
    return {".csv": "csv", ".mtx": "mtx"}.get(ext, "whitespace")


def _split(line: str, fmt: str) -> list[str]:
    if fmt == "csv":
        return [t.strip() for t in line.split(",")]
    return line.split()


def _parse_rows(lines: Sequence[tuple[int, str]], fmt: str, one_based: bool, labels: dict | None):
    """Parse ``(lineno, text)`` rows into id and weight arrays."""
    src = np.empty(len(lines), dtype=np.int64)
    dst = np.empty(len(lines), dtype=np.int64)
    w = np.empty(len(lines), dtype=float)
    offset = 1 if one_based else 0
    for k, (lineno, text) in enumerate(lines):
        toks = _split(text, fmt)
        if len(toks) not in (2, 3):
            raise GraphFormatError(f"expected 2 or 3 fields, got {len(toks)}", lineno)
        try:
            if labels is not None:
                a = labels.setdefault(toks[0], len(labels))
                b = labels.setdefault(toks[1], len(labels))
            else:
                a, b = int(toks[0]) - offset, int(toks[1]) - offset
            weight = float(toks[2]) if len(toks) == 3 and toks[2] != "" else 1.0
        except ValueError as exc:
            raise GraphFormatError(f"malformed row {text!r}", lineno) from exc
        if labels is None and (a < 0 or b < 0):
            raise GraphFormatError("negative vertex id", lineno)
        if a == b:
            raise GraphFormatError(f"self-loop on vertex {toks[0]}", lineno)
        if not math.isfinite(weight):
            raise GraphFormatError(f"non-finite weight {toks[2]!r}", lineno)
        if weight < 0:
            raise GraphFormatError(f"negative weight {toks[2]!r}", lineno)
        src[k], dst[k], w[k] = a, b, weight
    return src, dst, w


def _data_lines(fh, fmt: str, header: bool) -> Iterator[tuple[int, str]]:
    skipped_header = not header
    for lineno, raw in enumerate(fh, start=1):
        line = raw.strip()
        if not line or line[0] in "#%":
            continue
        if not skipped_header:
            skipped_header = True
            continue
        yield lineno, line


def _load_mtx(fh) -> Graph:
    banner = fh.readline()
    lineno = 1
    if not banner.lower().startswith("%%matrixmarket"):
        raise GraphFormatError("missing %%MatrixMarket banner", 1)
    parts = banner.lower().split()
    if len(parts) < 5 or parts[1] != "matrix" or parts[2] != "coordinate":
        raise GraphFormatError("only coordinate matrices are supported", 1)
    field_, symmetry = parts[3], parts[4]
    if symmetry != "symmetric":
        raise GraphFormatError("matrix must be declared symmetric", 1)
    if field_ not in ("real", "integer", "pattern"):
        raise GraphFormatError(f"unsupported field {field_!r}", 1)
    size = None
    rows = []
    for raw in fh:
        lineno += 1
        line = raw.strip()
        if not line or line.startswith("%"):
            continue
        if size is None:
            toks = line.split()
            try:
                size = tuple(int(t) for t in toks)
            except ValueError as exc:
                raise GraphFormatError("malformed size line", lineno) from exc
            if len(size) != 3 or size[0] != size[1]:
                raise GraphFormatError("size line must be 'n n nnz' for a square matrix", lineno)
            continue
        rows.append((lineno, line))
    if size is None:
        raise GraphFormatError("missing size line", lineno)
    n = size[0]
    src, dst, w = _parse_rows(rows, "whitespace", True, None)
    if len(src) == 0:
        raise GraphFormatError("empty edge set")
    if max(src.max(), dst.max()) >= n:
        raise GraphFormatError(f"vertex id exceeds declared size {n}")
    return Graph(n, src, dst, w)


def load_edge_list(source, format: str = "whitespace", *, one_based: bool = False,
                   header: bool = False, n: int | None = None,
                   remap_ids: bool = False) -> Graph:
    """Read a graph from an edge list or a symmetric Matrix-Market file.

    Rows are ``i j [w]`` (whitespace) or ``i,j[,w]`` (csv); a missing weight is 1.
    Lines starting with ``#`` or ``%`` are comments.  With ``remap_ids`` the ids
    are treated as opaque labels, mapped to ``0..n-1`` in order of first
    appearance and kept on ``Graph.labels``.
    """
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}; choose from {FORMATS}")
    fh, owned = _open_text(source)
    try:
        if format == "mtx":
            return _load_mtx(fh)
        rows = list(_data_lines(fh, format, header))
    finally:
        if owned:
            fh.close()
    if not rows:
        raise GraphFormatError("empty edge set")
    labels = {} if remap_ids else None
    src, dst, w = _parse_rows(rows, format, one_based, labels)
    if labels is not None:
        inferred = len(labels)
    else:
        inferred = int(max(src.max(), dst.max())) + 1
    if n is None:
        n = inferred
    elif n < inferred:
        raise GraphFormatError(f"vertex id {inferred - 1} exceeds declared n={n}")
    g = Graph(n, src, dst, w, labels=tuple(labels) if labels is not None else None)
    if g.m == 0:
        raise GraphFormatError("empty edge set (all weights zero)")
    return g


def iter_edge_blocks(source, format: str = "whitespace", *, block_size: int = 1 << 22,
                     one_based: bool = False, header: bool = False):
    """Yield ``(src, dst, w)`` arrays of at most ``block_size`` rows each.

    Rows are returned as read; no duplicate merging happens across blocks.
    """
    if format == "mtx":
        raise ValueError("streaming reads edge lists only")
    fh, owned = _open_text(source)
    try:
        buf = []
        for row in _data_lines(fh, format, header):
            buf.append(row)
            if len(buf) >= block_size:
                yield _parse_rows(buf, format, one_based, None)
                buf = []
        if buf:
            yield _parse_rows(buf, format, one_based, None)
    finally:
        if owned:
            fh.close()


def write_edge_list(g: Graph, path, format: str = "whitespace") -> None:
    sep = "," if format == "csv" else " "
    with open(path, "w", encoding="utf-8") as fh:
        for i, j, w in zip(g.src.tolist(), g.dst.tolist(), g.w.tolist()):
            fh.write(f"{i}{sep}{j}{sep}{w!r}\n")
