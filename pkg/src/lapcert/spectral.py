"""Matrix-free linear algebra on graph Laplacians.

Deflated conjugate gradients for singular Laplacians, Lanczos for extremal
eigenvalues and operator norms, bottom eigenvalues (dense below a size
threshold, block Lanczos above), and the graph-regularized regression solve
``(I + tau L) beta = y``.

The batched helpers (``*_batch``) run K independent problems that share an
edge set but not weights; column ``k`` of every block belongs to problem ``k``.
Bootstrap loops use them to evaluate many reweighted Laplacians at once.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .errors import ConvergenceError
from .graph import EdgeSet

DENSE_CROSSOVER = 2048
LANCZOS_CAP = 400
SOLVE_TOL = 1e-10
EIGEN_TOL = 1e-6
_START_SEED = 0x1A5C


@dataclass(frozen=True)
class SolverConfig:
    tol: float = SOLVE_TOL
    max_iter: int | None = None

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.max_iter is not None and self.max_iter < 1:
            raise ValueError("max_iter must be at least 1")

    @classmethod
    def eigen(cls, tol: float = EIGEN_TOL, max_iter: int | None = None) -> "SolverConfig":
        return cls(tol=tol, max_iter=max_iter)


# ---------------------------------------------------------------------------
# operators


class LinearOperator:
    """A symmetric linear map on R^dim, applied to blocks of column vectors."""

    dim: int
    is_laplacian = False

    def matmat(self, V: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def matvec(self, v: np.ndarray) -> np.ndarray:
        return self.matmat(np.asarray(v, dtype=float)[:, None])[:, 0]

    def to_dense(self) -> np.ndarray:
        return self.matmat(np.eye(self.dim))

    def __neg__(self):
        return ScaledOperator(self, -1.0)

    def __sub__(self, other):
        return DifferenceOperator(self, other)


class DenseOperator(LinearOperator):
    def __init__(self, M):
        self.M = np.asarray(M, dtype=float)
        self.dim = self.M.shape[0]

    def matmat(self, V):
        return self.M @ V

    def to_dense(self):
        return self.M.copy()


class LaplacianOperator(LinearOperator):
    """``sum_e weights[e] Delta_e`` over an edge set; weights may be signed."""

    is_laplacian = True

    def __init__(self, edges: EdgeSet, weights):
        self.edges = edges
        self.weights = np.asarray(weights, dtype=float)
        self.dim = edges.n
        self.is_laplacian = bool(np.all(self.weights >= 0))

    def matmat(self, V):
        return self.edges.laplacian_apply(self.weights, V)

    def to_dense(self):
        return self.edges.dense_laplacian(self.weights)

    def __sub__(self, other):
        if isinstance(other, LaplacianOperator) and other.edges is self.edges:
            return LaplacianOperator(self.edges, self.weights - other.weights)
        return DifferenceOperator(self, other)


class ScaledOperator(LinearOperator):
    def __init__(self, A: LinearOperator, c: float):
        self.A, self.c, self.dim = A, float(c), A.dim

    def matmat(self, V):
        return self.c * self.A.matmat(V)


class DifferenceOperator(LinearOperator):
    def __init__(self, A: LinearOperator, B: LinearOperator):
        if A.dim != B.dim:
            raise ValueError("operator dimensions differ")
        self.A, self.B, self.dim = A, B, A.dim

    def matmat(self, V):
        return self.A.matmat(V) - self.B.matmat(V)


class ShiftedOperator(LinearOperator):
    """``I + tau A``."""

    def __init__(self, A: LinearOperator, tau: float):
        self.A, self.tau, self.dim = A, float(tau), A.dim

    def matmat(self, V):
        return V + self.tau * self.A.matmat(V)


# ---------------------------------------------------------------------------
# conjugate gradients


def component_nullspace(component_ids: np.ndarray) -> np.ndarray:
    """Orthonormal basis (n x c) of per-component constant vectors."""
    component_ids = np.asarray(component_ids)
    labels = np.unique(component_ids)
    Z = np.zeros((len(component_ids), len(labels)))
    for k, lab in enumerate(labels):
        mask = component_ids == lab
        Z[mask, k] = 1.0 / np.sqrt(mask.sum())
    return Z


def _projector(Z):
    if Z is None or Z.shape[1] == 0:
        return None

    def project(V):
        return V - Z @ (Z.T @ V)

    return project


def block_cg(apply, B: np.ndarray, *, tol: float, max_iter: int, nullspace=None):
    """Run independent CG iterations on the columns of ``B``.

    ``apply`` maps an (n, K) block to (n, K), column-wise.  When a nullspace
    basis is given, right-hand sides and iterates are kept orthogonal to it.
    Returns ``(X, iterations, relative_residuals)`` where the residuals are the
    true ``||A x - b|| / ||b||`` recomputed at exit.
    """
    project = _projector(nullspace)
    B = np.asarray(B, dtype=float)
    # residuals are relative to the unprojected right-hand side, so a b lying
    # in the nullspace yields x = 0 instead of chasing rounding noise
    bnorm = np.linalg.norm(B, axis=0)
    if project is not None:
        B = project(B)
    n, K = B.shape
    X = np.zeros_like(B)
    target = tol * bnorm
    iters = 0
    R = B.copy()
    while True:
        P = R.copy()
        rs = np.einsum("ij,ij->j", R, R)
        active = np.sqrt(rs) > target
        while active.any() and iters < max_iter:
            AP = apply(P)
            if project is not None:
                AP = project(AP)
            pAp = np.einsum("ij,ij->j", P, AP)
            alpha = np.where(active & (pAp > 0), rs / np.where(pAp > 0, pAp, 1.0), 0.0)
            X += alpha * P
            R -= alpha * AP
            rs_new = np.einsum("ij,ij->j", R, R)
            beta = np.where(active & (rs > 0), rs_new / np.where(rs > 0, rs, 1.0), 0.0)
            P = R + beta * P
            rs = np.where(active, rs_new, rs)
            iters += 1
            active &= np.sqrt(rs) > target
        if project is not None:
            X = project(X)
        R = B - (project(apply(X)) if project is not None else apply(X))
        true = np.linalg.norm(R, axis=0)
        if np.all(true <= target) or iters >= max_iter:
            break
        # recursive residual drifted from the true one; restart from the true residual
    rel = np.divide(true, bnorm, out=np.zeros_like(true), where=bnorm > 0)
    return X, iters, rel


def cg_solve_deflated(A: LinearOperator, b, nullspace=None, cfg: SolverConfig = SolverConfig()):
    """Solve ``A x = b`` for PSD ``A`` with ``x`` orthogonal to ``nullspace``.

    ``nullspace`` is an (n, c) array or a list of orthonormal vectors.  With the
    per-component constant vectors this returns ``A^+ b``.
    """
    b = np.asarray(b, dtype=float)
    Z = None
    if nullspace is not None and len(nullspace):
        Z = np.column_stack(nullspace) if isinstance(nullspace, (list, tuple)) else np.asarray(nullspace)
    max_iter = cfg.max_iter or 5 * A.dim
    X, iters, rel = block_cg(A.matmat, b[:, None], tol=cfg.tol, max_iter=max_iter, nullspace=Z)
    if rel[0] > cfg.tol:
        raise ConvergenceError("deflated CG did not converge", iters, float(rel[0]))
    return X[:, 0]


def laplacian_pinv_dense(edges: EdgeSet, weights, component_ids) -> np.ndarray:
    """Dense Moore-Penrose inverse of a Laplacian, assembled per component."""
    n = edges.n
    L = edges.dense_laplacian(weights)
    out = np.zeros((n, n))
    for lab in np.unique(component_ids):
        idx = np.flatnonzero(component_ids == lab)
        k = len(idx)
        if k == 1:
            continue
        J = np.full((k, k), 1.0 / k)
        sub = L[np.ix_(idx, idx)]
        inv = sla.solve(sub + J, np.eye(k), assume_a="pos")
        out[np.ix_(idx, idx)] = inv - J
    return out


# ---------------------------------------------------------------------------
# Lanczos


def _start_vector(n: int) -> np.ndarray:
    v = np.random.default_rng(_START_SEED).standard_normal(n)
    return v / np.linalg.norm(v)


def lanczos_extremes(apply, n: int, K: int = 1, *, tol: float = EIGEN_TOL,
                     max_iter: int | None = None):
    """Smallest and largest eigenvalues of K symmetric operators.

    Single-vector Lanczos with full reorthogonalization, one column per
    operator.  A column stops when both extremal Ritz values have residual
    bound ``beta_j |s_j|`` below ``tol * max|theta|``, on breakdown (invariant
    Krylov space), or when the Krylov space fills R^n.
    Returns ``(lam_min, lam_max)`` arrays of length K.
    """
    kmax = min(n, max_iter or LANCZOS_CAP)
    Q = np.zeros((K, kmax, n))
    alpha = np.zeros((kmax, K))
    beta = np.zeros((kmax, K))
    lo, hi = np.zeros(K), np.zeros(K)
    active = np.ones(K, dtype=bool)
    scale = np.zeros(K)
    q = np.repeat(_start_vector(n)[:, None], K, axis=1)
    last_bound = np.full(K, np.inf)
    for j in range(kmax):
        Q[:, j] = q.T
        w = apply(q)
        a = np.einsum("nk,nk->k", q, w)
        w = w - a * q
        if j:
            w -= beta[j - 1] * Q[:, j - 1].T
        basis = Q[:, : j + 1]
        for _ in range(2):
            c = basis @ w.T[:, :, None]
            w -= (basis.transpose(0, 2, 1) @ c)[:, :, 0].T
        b = np.linalg.norm(w, axis=0)
        alpha[j], beta[j] = a, b
        scale = np.maximum(scale, np.abs(a) + b)
        broke = active & (b <= 1e-12 * scale)
        full = j == kmax - 1
        if broke.any() or full or (j >= 3 and j % 4 == 3):
            cols = np.flatnonzero(active)
            T = np.zeros((len(cols), j + 1, j + 1))
            d = np.arange(j + 1)
            T[:, d, d] = alpha[: j + 1, cols].T
            if j:
                T[:, d[:-1], d[1:]] = beta[:j, cols].T
                T[:, d[1:], d[:-1]] = beta[:j, cols].T
            theta, S = np.linalg.eigh(T)
            tmin, tmax = theta[:, 0], theta[:, -1]
            bnd_min = b[cols] * np.abs(S[:, -1, 0])
            bnd_max = b[cols] * np.abs(S[:, -1, -1])
            ref = np.maximum(np.abs(tmin), np.abs(tmax))
            done = (bnd_min <= tol * ref) & (bnd_max <= tol * ref)
            done |= broke[cols] | (j + 1 >= n)
            last_bound[cols] = np.maximum(bnd_min, bnd_max) / np.where(ref > 0, ref, 1.0)
            lo[cols], hi[cols] = tmin, tmax
            active[cols[done]] = False
            if full and active.any():
                raise ConvergenceError("Lanczos hit its iteration cap", j + 1,
                                       float(last_bound[active].max()))
        if not active.any():
            break
        q = np.where(active, w / np.where(b > 0, b, 1.0), 0.0)
    return lo, hi


def operator_norm(A: LinearOperator, cfg: SolverConfig | None = None) -> float:
    """Spectral norm ``max(|lambda_min|, |lambda_max|)`` of a symmetric operator."""
    cfg = cfg or SolverConfig.eigen()
    lo, hi = lanczos_extremes(A.matmat, A.dim, 1, tol=cfg.tol, max_iter=cfg.max_iter)
    return float(max(abs(lo[0]), abs(hi[0])))


def operator_norms_batch(edges: EdgeSet, weights: np.ndarray, cfg: SolverConfig | None = None):
    """Operator norms of ``sum_e weights[e, k] Delta_e`` for every column k."""
    cfg = cfg or SolverConfig.eigen()
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 1:
        weights = weights[:, None]
    lo, hi = lanczos_extremes(lambda V: edges.laplacian_apply(weights, V), edges.n,
                              weights.shape[1], tol=cfg.tol, max_iter=cfg.max_iter)
    return np.maximum(np.abs(lo), np.abs(hi))


def power_norm_estimate(A: LinearOperator, iters: int = 30) -> float:
    v = _start_vector(A.dim)
    est = 0.0
    for _ in range(iters):
        w = A.matvec(v)
        est = float(np.linalg.norm(w))
        if est == 0.0:
            return 0.0
        v = w / est
    return est


def _orthonormal_block(W, V, take, rng):
    """Orthonormalize ``W`` against ``V`` and itself; pad with random vectors."""
    n = W.shape[0]
    cols = []
    basis = V
    candidates = [W[:, k] for k in range(W.shape[1])]
    while len(cols) < take:
        x = candidates.pop(0) if candidates else rng.standard_normal(n)
        nx0 = np.linalg.norm(x)
        for _ in range(2):
            x = x - basis @ (basis.T @ x)
            if cols:
                C = np.column_stack(cols)
                x = x - C @ (C.T @ x)
        nx = np.linalg.norm(x)
        if nx0 == 0 or nx <= 1e-10 * nx0:
            continue
        cols.append(x / nx)
    return np.column_stack(cols)


def _bottom_block_lanczos(A: LinearOperator, r: int, tol: float, cap: int) -> np.ndarray:
    n = A.dim
    rng = np.random.default_rng(_START_SEED)
    anorm = power_norm_estimate(A)
    V = _orthonormal_block(rng.standard_normal((n, r)), np.zeros((n, 0)), r, rng)
    AV = A.matmat(V)
    last = AV
    while True:
        d = V.shape[1]
        T = V.T @ AV
        T = 0.5 * (T + T.T)
        theta, Y = np.linalg.eigh(T)
        Yr = Y[:, :r]
        res = np.linalg.norm(AV @ Yr - (V @ Yr) * theta[:r], axis=0)
        if d >= n or np.all(res <= tol * max(anorm, np.finfo(float).tiny)):
            return theta[:r]
        if d >= cap:
            raise ConvergenceError("block Lanczos hit its iteration cap", d,
                                   float(res.max() / max(anorm, np.finfo(float).tiny)))
        take = min(r, cap - d, n - d)
        Qn = _orthonormal_block(last, V, take, rng)
        last = A.matmat(Qn)
        V = np.hstack([V, Qn])
        AV = np.hstack([AV, last])


def bottom_eigenvalues(A: LinearOperator, r: int, cfg: SolverConfig | None = None,
                       method: str = "auto") -> np.ndarray:
    """The ``r`` smallest eigenvalues of symmetric ``A`` in nondecreasing order.

    ``method="auto"`` uses a dense symmetric eigensolver when ``A.dim <= 2048``
    and block Lanczos (full reorthogonalization, basis cap ``min(n, 400)``)
    otherwise.  Values below ``tol * ||A||`` are returned as computed.
    """
    cfg = cfg or SolverConfig.eigen()
    n = A.dim
    if not 1 <= r <= n:
        raise ValueError(f"r must lie in [1, {n}]")
    if method == "auto":
        method = "dense" if n <= DENSE_CROSSOVER else "lanczos"
    if method == "dense":
        M = A.to_dense()
        vals = sla.eigh(M, eigvals_only=True, subset_by_index=[0, r - 1], driver="evr")
        return np.sort(vals)
    if method == "lanczos":
        cap = max(r, min(n, cfg.max_iter or LANCZOS_CAP))
        return np.sort(_bottom_block_lanczos(A, r, cfg.tol, cap))
    raise ValueError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# regression


def regression_fit(Lop: LinearOperator, y, tau: float, cfg: SolverConfig = SolverConfig()):
    """Minimizer of ``||y - beta||^2 + tau beta' L beta``, i.e. ``(I + tau L)^{-1} y``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    y = np.asarray(y, dtype=float)
    if tau == 0:
        return y.copy()
    op = ShiftedOperator(Lop, tau)
    X, iters, rel = block_cg(op.matmat, y[:, None], tol=cfg.tol,
                             max_iter=cfg.max_iter or 5 * Lop.dim)
    if rel[0] > cfg.tol:
        raise ConvergenceError("regression solve did not converge", iters, float(rel[0]))
    return X[:, 0]


def regression_fit_batch(edges: EdgeSet, weights: np.ndarray, y, tau: float,
                         cfg: SolverConfig = SolverConfig()) -> np.ndarray:
    """``(I + tau L_k)^{-1} y`` for the Laplacian of every weight column k."""
    weights = np.asarray(weights, dtype=float)
    if weights.ndim == 1:
        weights = weights[:, None]
    K = weights.shape[1]
    y = np.asarray(y, dtype=float)
    Y = np.repeat(y[:, None], K, axis=1)
    if tau == 0:
        return Y
    X, iters, rel = block_cg(lambda V: V + tau * edges.laplacian_apply(weights, V), Y,
                             tol=cfg.tol, max_iter=cfg.max_iter or 5 * edges.n)
    if np.any(rel > cfg.tol):
        raise ConvergenceError("regression solve did not converge", iters, float(rel.max()))
    return X
