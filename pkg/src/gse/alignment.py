"""
Stage 2: alignment of the local PCA frames into a smooth field H(X) = Q(X) v(X).

The preliminary alignment matrices ``v_i`` maximize
``sum_ij K_ij Tr(v_i^T S_ij v_j)`` with ``S_ij = Q_i^T Q_j``, either under the
quadratic normalization ``sum_i K_i v_i^T v_i = I`` (a generalized eigenproblem)
or with every ``v_i`` orthogonal (a fixed-point Procrustes iteration).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from numpy.typing import NDArray

from gse.errors import (
    EigensolverFailure,
    IsolatedPoint,
    NonConvergenceWarning,
    SpectralGapWarning,
)
from gse.geometry import orthonormalize_svd
from gse.neighborhoods import KernelGraph, stack_frames

DENSE_LIMIT = 4000
SPECTRAL_GAP_RTOL = 1e-10
NEAR_SINGULAR_RTOL = 1e-8


@dataclass
class AlignmentField:
    """Solution of the averaged (orthogonal) Procrustes problem at the sample."""

    v_star: NDArray[np.floating]  # (n, q, q)
    variant: str
    eigvals: Optional[NDArray[np.floating]] = None
    iterations: int = 0
    converged: bool = True
    objective_history: list = field(default_factory=list)

    @property
    def stacked(self) -> NDArray[np.floating]:
        """The (nq, q) matrix with the v_i stacked vertically."""
        n, q, _ = self.v_star.shape
        return self.v_star.reshape(n * q, q)


def _edges(graph: KernelGraph):
    W = graph.weights.tocsr()
    W.sort_indices()
    rows = np.repeat(np.arange(W.shape[0]), np.diff(W.indptr))
    return W, rows, W.indices, W.data


def cross_grams(Q: NDArray[np.floating], rows, cols) -> NDArray[np.floating]:
    return np.einsum("mpa,mpb->mab", Q[rows], Q[cols])


def assemble_phi(frames, graph: KernelGraph):
    """
    Block matrices of the generalized eigenproblem.

    Returns:
        (Phi1, phi0_diag): ``Phi1`` as a sparse (nq, nq) matrix with blocks
        ``K_ij S_ij`` and the diagonal of ``Phi0`` (``K_i`` repeated q times).
    """
    Q = stack_frames(frames)
    n, _, q = Q.shape
    _, rows, cols, w = _edges(graph)
    blocks = w[:, None, None] * cross_grams(Q, rows, cols)
    Phi1 = _block_matrix(rows, cols, blocks, n, q)
    phi0 = np.repeat(graph.normalized_row_sums, q)
    return Phi1, phi0


def _block_matrix(rows, cols, blocks, n: int, q: int) -> sp.csr_matrix:
    a, b = np.meshgrid(np.arange(q), np.arange(q), indexing="ij")
    r = (rows[:, None, None] * q + a).ravel()
    c = (cols[:, None, None] * q + b).ravel()
    return sp.csr_matrix((blocks.ravel(), (r, c)), shape=(n * q, n * q))


def alignment_objective(frames, graph: KernelGraph, v: NDArray[np.floating]) -> float:
    """``Tr(V^T Phi1 V)`` for stacked alignment matrices ``v`` of shape (n, q, q)."""
    Q = stack_frames(frames)
    _, rows, cols, w = _edges(graph)
    S = cross_grams(Q, rows, cols)
    return float(np.einsum("m,mba,mbc,mca->", w, v[rows], S, v[cols]))


def procrustes_residual(frames, graph: KernelGraph, v: NDArray[np.floating]) -> float:
    """``1/2 sum_ij K_ij ||Q_i v_i - Q_j v_j||_F^2``."""
    Q = stack_frames(frames)
    H = np.einsum("npa,nab->npb", Q, v)
    _, rows, cols, w = _edges(graph)
    diff = H[rows] - H[cols]
    return float(0.5 * np.einsum("m,mpa,mpa->", w, diff, diff))


def _fix_column_signs(V: NDArray[np.floating]) -> NDArray[np.floating]:
    pivot = np.argmax(np.abs(V), axis=0)
    signs = np.sign(V[pivot, np.arange(V.shape[1])])
    signs[signs == 0] = 1.0
    return V * signs


def _top_generalized(Phi1: sp.csr_matrix, phi0: NDArray[np.floating], q: int):
    """Top-q eigenpairs of ``Phi1 V = lambda diag(phi0) V`` with ``V^T Phi0 V = I``."""
    if np.any(phi0 <= 0):
        raise EigensolverFailure("a sample point has zero kernel weight; graph is not connected")
    d = 1.0 / np.sqrt(phi0)
    M = sp.diags(d) @ Phi1 @ sp.diags(d)
    M = 0.5 * (M + M.T)
    nq = M.shape[0]
    k = min(q + 1, nq)
    try:
        if nq <= DENSE_LIMIT:
            lam, U = sla.eigh(M.toarray(), subset_by_index=[nq - k, nq - 1])
        else:
            lam, U = spla.eigsh(M.tocsc(), k=k, which="LA", tol=1e-12)
    except (np.linalg.LinAlgError, spla.ArpackError) as exc:
        raise EigensolverFailure(str(exc)) from exc
    order = np.argsort(-lam, kind="stable")
    lam, U = lam[order], U[:, order]
    return lam, _fix_column_signs(d[:, None] * U[:, :q])


def solve_alignment(frames, graph: KernelGraph) -> AlignmentField:
    """
    Top-q generalized eigenvectors of ``Phi1 V = lambda Phi0 V``.

    The problem is reduced to the symmetric standard form
    ``Phi0^-1/2 Phi1 Phi0^-1/2``; the returned ``V`` satisfies ``V^T Phi0 V = I``.
    """
    Q = stack_frames(frames)
    n, _, q = Q.shape
    Phi1, phi0 = assemble_phi(Q, graph)
    lam, V = _top_generalized(Phi1, phi0, q)
    if lam.size > q and lam[q - 1] - lam[q] < SPECTRAL_GAP_RTOL * abs(lam[0]):
        warnings.warn(f"spectral gap {lam[q - 1] - lam[q]:.3e} is tiny; alignment is not unique",
                      SpectralGapWarning, stacklevel=2)
    return AlignmentField(v_star=V.reshape(n, q, q), variant="gse", eigvals=lam)


def synchronized_start(frames, graph: KernelGraph) -> NDArray[np.floating]:
    """
    Orthogonal starting matrices for the Procrustes iteration.

    Solves the same eigenproblem with every ``S_ij`` replaced by its polar
    factor ``R(S_ij)`` and orthogonalizes the resulting blocks. Unlike the
    raw cross-Grams, the polar factors do not shrink directions in which
    neighboring tangent planes tilt, so the top eigenvectors stay pointwise
    full rank on curved but intrinsically flat sheets.
    """
    Q = stack_frames(frames)
    n, _, q = Q.shape
    _, rows, cols, w = _edges(graph)
    O = polar_factors(cross_grams(Q, rows, cols))
    Phi1 = _block_matrix(rows, cols, w[:, None, None] * O, n, q)
    _, V = _top_generalized(Phi1, np.repeat(graph.normalized_row_sums, q), q)
    return np.stack([orthonormalize_svd(b) for b in V.reshape(n, q, q)])


def polar_factors(S: NDArray[np.floating]) -> NDArray[np.floating]:
    """Batched ``R(S)``; rank-deficient blocks map to zero."""
    U, s, Vt = np.linalg.svd(S)
    O = U @ Vt
    bad = s[:, -1] <= 1e-12 * s[:, 0]
    O[bad] = 0.0
    return O


def sample_field(frames, graph: KernelGraph, v: NDArray[np.floating],
                 include_self: bool = True) -> NDArray[np.floating]:
    """Kernel regression ``sum_j K*_ij S_ij v_j`` evaluated at every sample point."""
    Q = stack_frames(frames)
    W, rows, cols, w = _edges(graph)
    S = cross_grams(Q, rows, cols)
    out = np.zeros_like(v)
    np.add.at(out, rows, w[:, None, None] * np.einsum("mab,mbc->mac", S, v[cols]))
    denom = graph.row_sums.copy()
    if include_self:
        out += v
        denom += 1.0
    return out / denom[:, None, None]


def solve_alignment_orthogonal(
    frames,
    graph: KernelGraph,
    v_init: Optional[NDArray[np.floating]] = None,
    max_iter: int = 200,
    tol: float = 1e-9,
    init: str = "synchronized",
) -> AlignmentField:
    """
    Gauss-Seidel fixed-point iteration ``v_i <- R(sum_{j != i} K*_ij S_ij v_j)``.

    Each update maximizes the objective over ``v_i`` alone, so the objective
    is non-decreasing sweep to sweep; this is checked after every sweep.

    Args:
        v_init: explicit starting matrices (orthogonalized before use).
        init: used when ``v_init`` is None. ``"gse"`` starts from ``R`` of the
            kernel-regressed GSE solution at each sample point;
            ``"synchronized"`` from :func:`synchronized_start`.
    """
    Q = stack_frames(frames)
    n, _, q = Q.shape
    if v_init is None:
        if init == "gse":
            v_init = sample_field(Q, graph, solve_alignment(Q, graph).v_star)
        elif init == "synchronized":
            v_init = synchronized_start(Q, graph)
        else:
            raise ValueError(f"unknown init {init!r}")
    v = np.stack([orthonormalize_svd(m) for m in v_init])

    W, rows, cols, w = _edges(graph)
    S = cross_grams(Q, rows, cols)
    ws = w[:, None, None] * S
    indptr = W.indptr

    obj = alignment_objective(Q, graph, v)
    history = [obj]
    best = v.copy()
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        delta = 0.0
        for i in range(n):
            lo, hi = indptr[i], indptr[i + 1]
            if lo == hi:
                continue
            M = np.einsum("mab,mbc->ac", ws[lo:hi], v[cols[lo:hi]])
            new = orthonormalize_svd(M)
            delta = max(delta, float(np.linalg.norm(new - v[i])))
            v[i] = new
        new_obj = alignment_objective(Q, graph, v)
        if new_obj < obj - 1e-12 * max(1.0, abs(obj)):
            raise RuntimeError(f"objective decreased in sweep {it}: {obj!r} -> {new_obj!r}")
        obj = new_obj
        history.append(obj)
        best = v.copy()
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn(f"orthogonal alignment did not converge in {max_iter} sweeps",
                      NonConvergenceWarning, stacklevel=2)
    return AlignmentField(v_star=best, variant="ogse", iterations=it, converged=converged,
                          objective_history=history)


def field_value(S: NDArray[np.floating], K: NDArray[np.floating], v_n: NDArray[np.floating],
                orthogonal: bool = False):
    """
    ``v(X) = sum_j K*(X, X_j) S(X, X_j) v_j``, optionally orthogonalized.

    Args:
        S: (m, q, q) cross-Grams ``Q(X)^T Q_j`` for the neighbors.
        K: (m,) aggregate kernel values.
        v_n: (m, q, q) alignment matrices of the same neighbors.

    Returns:
        (v, near_singular)
    """
    total = K.sum()
    if not total > 0:
        raise IsolatedPoint("query point has no positive kernel weight to the sample")
    v = np.einsum("m,mab,mbc->ac", K / total, S, v_n)
    if orthogonal:
        return orthonormalize_svd(v), False
    s = np.linalg.svd(v, compute_uv=False)
    return v, bool(s[-1] < NEAR_SINGULAR_RTOL * s[0])
