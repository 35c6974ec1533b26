"""
Stage 3: preliminary embeddings of the sample and the out-of-sample embedding.

GSE minimizes the weighted residual

    Delta_h = 1/2 sum_ij K_ij |(X_j - X_i) - H_i (h_j - h_i)|^2,   sum_i h_i = 0,

whose stationarity conditions form a graph-Laplacian-like block system
``L h = b`` with blocks built from ``A_i = v_i^T v_i``. The translation
nullspace is removed by deflation, which keeps the system positive definite.

OGSE solves ``h_i - sum_j K*_ij h_j = H_i^T (X_i - sum_j K*_ij X_j)``, the same
equations with the small ``xi_i`` terms dropped.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray
from scipy.sparse.csgraph import connected_components

from gse.errors import NearSingularWarning, SingularSystem
from gse.neighborhoods import KernelGraph, stack_frames

DENSE_LIMIT = 4000
PINV_RTOL = 1e-8


@dataclass
class EmbeddingSet:
    h: NDArray[np.floating]  # (n, q)
    variant: str
    residual: float
    dropped_xi: float = 0.0
    inconsistency: float = 0.0


def _edges(graph: KernelGraph):
    W = graph.weights.tocsr()
    W.sort_indices()
    rows = np.repeat(np.arange(W.shape[0]), np.diff(W.indptr))
    return rows, W.indices, W.data


def _block_sparse(rows, cols, blocks, n, q) -> sp.csr_matrix:
    a, b = np.meshgrid(np.arange(q), np.arange(q), indexing="ij")
    r = (rows[:, None, None] * q + a).ravel()
    c = (cols[:, None, None] * q + b).ravel()
    return sp.csr_matrix((blocks.ravel(), (r, c)), shape=(n * q, n * q))


def assemble_gse_system(sample, frames, v, graph: KernelGraph):
    """
    Normal equations of Delta_h.

    Returns:
        (L, b): sparse symmetric (nq, nq) matrix and (n, q) right-hand side.
    """
    X = np.asarray(sample, dtype=float)
    Q = stack_frames(frames)
    n, _, q = Q.shape
    rows, cols, w = _edges(graph)
    A = np.einsum("nba,nbc->nac", v, v)
    wA = w[:, None, None] * A[rows]
    # ordered pair (i, j) contributes w A_i to blocks ii, jj and -w A_i to ij, ji
    diag = np.zeros((n, q, q))
    np.add.at(diag, rows, wA)
    np.add.at(diag, cols, wA)
    L = _block_sparse(np.concatenate([rows, cols, np.arange(n)]),
                      np.concatenate([cols, rows, np.arange(n)]),
                      np.concatenate([-wA, -wA, diag]), n, q)
    # v_i^T c_{j|i} with c_{j|i} = Q_i^T (X_j - X_i)
    c = np.einsum("mpa,mp->ma", Q[rows], X[cols] - X[rows])
    t = w[:, None] * np.einsum("mba,mb->ma", v[rows], c)
    b = np.zeros((n, q))
    np.add.at(b, cols, t)
    np.add.at(b, rows, -t)
    return L, b


def assemble_ogse_system(sample, frames, v, graph: KernelGraph):
    """
    Symmetric form of the OGSE equations, row i scaled by ``K(X_i)``.

    Returns:
        (L, b, xi) with ``xi`` the dropped terms, shape (n, q).
    """
    X = np.asarray(sample, dtype=float)
    Q = stack_frames(frames)
    n, _, q = Q.shape
    rows, cols, w = _edges(graph)
    H = np.einsum("npa,nab->npb", Q, v)
    eye = np.broadcast_to(np.eye(q), (rows.size, q, q))
    deg = graph.row_sums
    L = _block_sparse(np.concatenate([rows, np.arange(n)]),
                      np.concatenate([cols, np.arange(n)]),
                      np.concatenate([-w[:, None, None] * eye,
                                      deg[:, None, None] * np.eye(q)]), n, q)
    dX = X[rows] - X[cols]
    b = np.zeros((n, q))
    np.add.at(b, rows, w[:, None] * np.einsum("mpa,mp->ma", H[rows], dX))
    xi = np.zeros((n, q))
    np.add.at(xi, rows, 0.5 * w[:, None] * np.einsum("mpa,mp->ma", H[cols] - H[rows], -dX))
    xi /= deg[:, None]
    return L, b, xi


def _solve_deflated(L: sp.csr_matrix, b: NDArray[np.floating], graph: KernelGraph, q: int):
    """Solve ``L h = b`` on the mean-zero subspace."""
    n = b.shape[0]
    nq = n * q
    rhs = b.ravel()
    scale = float(L.diagonal().mean()) or 1.0
    T = np.tile(np.eye(q), (n, 1)) / np.sqrt(n)  # orthonormal translation modes
    if nq <= DENSE_LIMIT:
        A = L.toarray() + scale * (T @ T.T)
        A = 0.5 * (A + A.T)
        try:
            factor = sla.cho_factor(A, lower=True, check_finite=True)
        except np.linalg.LinAlgError as exc:
            raise SingularSystem(_singular_message(graph)) from exc
        x = sla.cho_solve(factor, rhs)
    else:
        d = L.diagonal() + scale * np.sum(T * T, axis=1)
        op = spla.LinearOperator((nq, nq), matvec=lambda z: L @ z + scale * (T @ (T.T @ z)))
        pre = spla.LinearOperator((nq, nq), matvec=lambda z: z / d)
        x, info = spla.cg(op, rhs, M=pre, rtol=1e-12, maxiter=20 * nq)
        if info != 0:
            raise SingularSystem(f"conjugate gradient did not converge (info={info}); "
                                 + _singular_message(graph))
    h = x.reshape(n, q)
    return h - h.mean(axis=0)


def _singular_message(graph: KernelGraph) -> str:
    n_comp, labels = connected_components(graph.weights, directed=False)
    if n_comp > 1:
        return f"system is singular beyond translations: {n_comp} graph components, sizes {np.bincount(labels).tolist()[:10]}"
    return "system is singular beyond translations (alignment matrices lost rank)"


def embedding_residual(sample, frames, v, graph: KernelGraph, h) -> float:
    """``Delta_h`` for preliminary embeddings ``h`` of shape (n, q)."""
    X = np.asarray(sample, dtype=float)
    Q = stack_frames(frames)
    H = np.einsum("npa,nab->npb", Q, v)
    rows, cols, w = _edges(graph)
    r = (X[cols] - X[rows]) - np.einsum("mpa,ma->mp", H[rows], h[cols] - h[rows])
    return float(0.5 * np.sum(w * np.sum(r * r, axis=1)))


def solve_embedding(sample, frames, v, graph: KernelGraph, variant: str = "gse") -> EmbeddingSet:
    """
    Preliminary embeddings of the sample.

    Args:
        v: (n, q, q) alignment matrices evaluated at the sample points.
    """
    Q = stack_frames(frames)
    q = Q.shape[2]
    if variant == "gse":
        L, b = assemble_gse_system(sample, Q, v, graph)
        h = _solve_deflated(L, b, graph, q)
        return EmbeddingSet(h=h, variant=variant,
                            residual=embedding_residual(sample, Q, v, graph, h))
    L, b, xi = assemble_ogse_system(sample, Q, v, graph)
    # least squares: the component of b along the translations is unreachable
    mean_b = b.mean(axis=0)
    h = _solve_deflated(L, b - mean_b, graph, q)
    return EmbeddingSet(h=h, variant=variant,
                        residual=embedding_residual(sample, Q, v, graph, h),
                        dropped_xi=float(np.max(np.linalg.norm(xi, axis=1))),
                        inconsistency=float(np.linalg.norm(mean_b) * np.sqrt(b.shape[0])))


def inverse_or_pinv(v: NDArray[np.floating]) -> NDArray[np.floating]:
    """``v^-1``, falling back to a cut-off pseudo-inverse when nearly singular."""
    s = np.linalg.svd(v, compute_uv=False)
    if s[-1] < PINV_RTOL * s[0]:
        warnings.warn("alignment matrix is nearly singular; using pseudo-inverse",
                      NearSingularWarning, stacklevel=3)
        return np.linalg.pinv(v, rcond=PINV_RTOL)
    return np.linalg.inv(v)


def embed_point(x, Qx, v, K, X_nb, h_nb, orthogonal: bool):
    """
    Out-of-sample embedding from the neighbors' kernel weights.

    ``h(X) = sum K* h_j + M (X - sum K* X_j)`` with ``M = v^-1 Q^T`` (GSE)
    or ``M = H^T = v^T Q^T`` (OGSE). Returns ``(h, M)``; ``M`` is the
    Jacobian the formula assigns to h.
    """
    Kstar = K / K.sum()
    resid = np.asarray(x, dtype=float) - Kstar @ X_nb
    M = (v.T if orthogonal else inverse_or_pinv(v)) @ Qx.T
    return Kstar @ h_nb + M @ resid, M
