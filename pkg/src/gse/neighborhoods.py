"""
Stage 1: Euclidean kernel, weighted local PCA frames and the aggregate kernel graph.

Neighborhood conventions:

* For a sample point ``X_i`` the neighborhood is the set of sample points
  strictly inside the ``eps1`` ball (``X_i`` itself included).
* For any other point ``X`` it is that set plus ``X`` itself. When ``X``
  coincides with a sample point the union adds nothing, so a query at
  ``X_i`` reproduces the fit-time frame exactly.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree

from gse.errors import (
    DegenerateSpectrumWarning,
    DimensionMismatch,
    DisconnectedGraph,
    InsufficientNeighbors,
    InvalidConfig,
    SampleOutsideDomain,
)
from gse.geometry import batched_det2

OGSE_INITS = ("synchronized", "gse")
VARIANTS = ("gse", "ogse")

# relative rank test used when eps3 is not given explicitly
EPS3_RELATIVE = 1e-6
DEGENERATE_RTOL = 1e-8


@dataclass(frozen=True)
class HyperParams:
    """
    Algorithm thresholds.

    ``eps1`` is the neighborhood radius and ``eps2`` the Gaussian bandwidth
    coefficient. ``eps3`` is an absolute threshold on ``lambda_q``; ``None``
    selects the per-point relative rule ``lambda_q > 1e-6 * lambda_1``.
    ``eps4`` is accepted for completeness and ignored. ``ogse_init`` picks
    the starting point of the orthogonal alignment iteration.
    """

    q: int
    eps1: Optional[float] = None
    eps2: Optional[float] = None
    eps3: Optional[float] = None
    eps4: Optional[float] = None
    variant: str = "gse"
    ogse_init: str = "synchronized"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidConfig(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.ogse_init not in OGSE_INITS:
            raise InvalidConfig(f"ogse_init must be one of {OGSE_INITS}, got {self.ogse_init!r}")
        if int(self.q) != self.q or self.q < 1:
            raise InvalidConfig(f"q must be a positive integer, got {self.q!r}")
        if self.eps1 is not None and not self.eps1 > 0:
            raise InvalidConfig(f"eps1 must be > 0, got {self.eps1}")
        if self.eps2 is not None and not self.eps2 >= 0:
            raise InvalidConfig(f"eps2 must be >= 0, got {self.eps2}")
        if self.eps3 is not None and not self.eps3 >= 0:
            raise InvalidConfig(f"eps3 must be >= 0, got {self.eps3}")

    @property
    def resolved(self) -> bool:
        return self.eps1 is not None and self.eps2 is not None

    def resolve(self, points: NDArray[np.floating]) -> "HyperParams":
        """Fill ``eps1``/``eps2`` from the sample using the default rules."""
        p = points.shape[1]
        if not 1 <= self.q < p:
            raise InvalidConfig(f"need 1 <= q < p, got q={self.q}, p={p}")
        eps1 = self.eps1 if self.eps1 is not None else default_eps1(points, self.q)
        eps2 = self.eps2 if self.eps2 is not None else 1.0 / eps1**2
        return replace(self, eps1=float(eps1), eps2=float(eps2))


def default_eps1(points: NDArray[np.floating], q: int, percentile: float = 90.0) -> float:
    """90th percentile of k-NN distances, ``k = max(2q + 2, 10)``."""
    n = points.shape[0]
    k = min(max(2 * q + 2, 10), n - 1)
    if k < 1:
        raise InvalidConfig("need at least two points to choose eps1")
    dist, _ = cKDTree(points).query(points, k=k + 1)
    eps1 = float(np.percentile(dist[:, k], percentile))
    # strict inequality in the ball test would otherwise drop the k-th neighbor
    return float(np.nextafter(eps1, np.inf))


@dataclass(frozen=True)
class TangentFrame:
    """Local PCA result at one point."""

    Q: NDArray[np.floating]
    eigenvalues: NDArray[np.floating]
    in_domain: bool
    n_points: int
    degenerate: bool = False


@dataclass(frozen=True)
class KernelGraph:
    """Symmetric aggregate-kernel weights over the sample (zero diagonal)."""

    weights: sp.csr_matrix
    row_sums: NDArray[np.floating]
    total: float

    @property
    def normalized_row_sums(self) -> NDArray[np.floating]:
        """``K_i = sum_j K(X_i, X_j) / K``, summing to one."""
        return self.row_sums / self.total

    @property
    def n(self) -> int:
        return self.weights.shape[0]


def euclidean_kernel(x, x2, eps1: float, eps2: float) -> float:
    """``exp(-eps2 |x - x2|^2)`` inside the mutual ``eps1`` ball, else 0."""
    x = np.asarray(x, dtype=float)
    x2 = np.asarray(x2, dtype=float)
    if x.shape != x2.shape:
        raise DimensionMismatch(f"point shapes differ: {x.shape} vs {x2.shape}")
    d2 = float(np.sum((x - x2) ** 2))
    if not np.sqrt(d2) < eps1:
        return 0.0
    return float(np.exp(-eps2 * d2))


def euclidean_weights(x, sample: NDArray[np.floating], eps1: float, eps2: float):
    """
    Euclidean kernel from ``x`` to every sample point.

    Returns:
        (idx, dist, weights) for the sample points strictly inside the ball,
        in ascending index order.
    """
    x = np.asarray(x, dtype=float)
    if x.shape != sample.shape[1:]:
        raise DimensionMismatch(f"point has shape {x.shape}, sample points {sample.shape[1:]}")
    dist = np.sqrt(np.sum((sample - x) ** 2, axis=1))
    idx = np.flatnonzero(dist < eps1)
    d = dist[idx]
    return idx, d, np.exp(-eps2 * d * d)


def _sign_fix(vecs: NDArray[np.floating]) -> NDArray[np.floating]:
    """Flip each column so that its largest-magnitude entry is positive."""
    pivot = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[pivot, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def local_pca(
    points: NDArray[np.floating],
    weights: NDArray[np.floating],
    q: int,
    eps3: Optional[float] = None,
) -> TangentFrame:
    """
    Weighted PCA of a neighborhood, centered on the weighted mean.

    Args:
        points: (m, p) neighborhood points.
        weights: (m,) nonnegative weights.
        q: number of principal vectors kept.
        eps3: absolute threshold on ``lambda_q``; ``None`` uses the relative rule.

    Raises:
        InsufficientNeighbors: fewer than q + 1 points carry positive weight.
    """
    points = np.asarray(points, dtype=float)
    w = np.asarray(weights, dtype=float)
    m_pos = int(np.count_nonzero(w > 0))
    if m_pos < q + 1:
        raise InsufficientNeighbors(f"{m_pos} weighted points, need at least {q + 1}")
    wsum = w.sum()
    mean = w @ points / wsum
    D = points - mean
    C = (D.T * w) @ D / wsum
    C = 0.5 * (C + C.T)
    lam, vecs = np.linalg.eigh(C)
    lam = lam[::-1]
    vecs = vecs[:, ::-1]
    Q = _sign_fix(vecs[:, :q])
    threshold = eps3 if eps3 is not None else EPS3_RELATIVE * max(lam[0], 0.0)
    in_domain = bool(lam[q - 1] > threshold)
    degenerate = q < lam.size and (lam[q - 1] - lam[q]) <= DEGENERATE_RTOL * max(lam[0], 1e-300)
    return TangentFrame(Q=Q, eigenvalues=lam, in_domain=in_domain, n_points=m_pos,
                        degenerate=bool(degenerate and in_domain))


def frame_at(x, sample: NDArray[np.floating], params: HyperParams) -> TangentFrame:
    """Tangent frame at an arbitrary point using the neighborhood conventions above."""
    x = np.asarray(x, dtype=float)
    idx, d, w = euclidean_weights(x, sample, params.eps1, params.eps2)
    pts = sample[idx]
    if not np.any(d == 0.0):
        pts = np.vstack([pts, x[None, :]])
        w = np.append(w, 1.0)
    return local_pca(pts, w, params.q, params.eps3)


def aggregate_kernel(frame1, frame2, kE: float) -> float:
    """``K_E * Det^2(Q1^T Q2)``; skips the determinant when ``kE == 0``."""
    if kE == 0:
        return 0.0
    Q1 = frame1.Q if isinstance(frame1, TangentFrame) else np.asarray(frame1)
    Q2 = frame2.Q if isinstance(frame2, TangentFrame) else np.asarray(frame2)
    return float(kE * np.linalg.det(Q1.T @ Q2) ** 2)


def kernel_row(x, Qx: NDArray[np.floating], sample: NDArray[np.floating],
               frames: NDArray[np.floating], params: HyperParams):
    """
    Aggregate kernel from a query point to the sample.

    Returns:
        (idx, K, S) with the neighbor indices, kernel values ``K(X, X_j)`` and
        the cross-Gram matrices ``S(X, X_j) = Qx^T Q_j`` of shape (m, q, q).
    """
    idx, _, kE = euclidean_weights(x, sample, params.eps1, params.eps2)
    S = np.einsum("pa,mpb->mab", Qx, frames[idx])
    return idx, kE * batched_det2(S), S


def stack_frames(frames: Sequence) -> NDArray[np.floating]:
    if isinstance(frames, np.ndarray):
        return frames
    return np.stack([f.Q if isinstance(f, TangentFrame) else np.asarray(f) for f in frames])


def graph_from_weights(W) -> KernelGraph:
    """Wrap a symmetric weight matrix (dense or sparse) as a KernelGraph."""
    W = sp.coo_matrix(W, dtype=float)
    off = (W.row != W.col) & (W.data != 0)
    W = sp.csr_matrix((W.data[off], (W.row[off], W.col[off])), shape=W.shape)
    row_sums = np.asarray(W.sum(axis=1)).ravel()
    return KernelGraph(weights=W, row_sums=row_sums, total=float(row_sums.sum()))


def build_kernel_graph(sample: NDArray[np.floating], params: HyperParams):
    """
    Frames at every sample point and the aggregate kernel graph.

    Raises:
        SampleOutsideDomain: some sample point fails the rank test.
        DisconnectedGraph: the positive-weight graph has several components.
    """
    X = np.asarray(sample, dtype=float)
    n, p = X.shape
    q = params.q
    if not params.resolved:
        params = params.resolve(X)
    if n < q + 2:
        raise InvalidConfig(f"need n >= q + 2 sample points, got n={n}")

    frames = []
    bad = []
    for i in range(n):
        try:
            fr = frame_at(X[i], X, params)
        except InsufficientNeighbors:
            bad.append(i)
            frames.append(None)
            continue
        if not fr.in_domain:
            bad.append(i)
        frames.append(fr)
    if bad:
        raise SampleOutsideDomain(
            f"{len(bad)} of {n} sample points fail the rank test (first: {bad[:5]}); "
            "increase eps1 or lower eps3"
        )
    n_degenerate = sum(f.degenerate for f in frames)
    if n_degenerate:
        warnings.warn(f"{n_degenerate} local PCA spectra have lambda_q ~ lambda_(q+1)",
                      DegenerateSpectrumWarning, stacklevel=2)
    Qs = stack_frames(frames)

    # each unordered pair is evaluated once and mirrored
    pairs = cKDTree(X).query_pairs(params.eps1, output_type="ndarray")
    if pairs.size:
        i, j = pairs[:, 0], pairs[:, 1]
        d2 = np.sum((X[i] - X[j]) ** 2, axis=1)
        keep = np.sqrt(d2) < params.eps1
        i, j, d2 = i[keep], j[keep], d2[keep]
        order = np.lexsort((j, i))
        i, j, d2 = i[order], j[order], d2[order]
        S = np.einsum("mpa,mpb->mab", Qs[i], Qs[j])
        k = np.exp(-params.eps2 * d2) * batched_det2(S)
    else:
        i = j = np.zeros(0, dtype=int)
        k = np.zeros(0)
    W = sp.coo_matrix((np.concatenate([k, k]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                      shape=(n, n))
    graph = graph_from_weights(W)
    n_comp, labels = connected_components(graph.weights, directed=False)
    if n_comp > 1:
        sizes = np.bincount(labels)
        raise DisconnectedGraph(
            f"kernel graph has {n_comp} connected components (sizes {sorted(sizes.tolist(), reverse=True)[:5]}); "
            "increase eps1"
        )
    return frames, graph
