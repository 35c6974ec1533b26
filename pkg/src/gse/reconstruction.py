"""
Stage 4: nearness in the embedded coordinate space, the Jacobian field G(y)
and the reconstruction mapping g(y).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Optional

import numpy as np
from numpy.typing import NDArray

from gse.errors import GseError, EmptyNeighborhood, OutsideDomain, RankCollapse, RankDeficient
from gse.geometry import batched_det2, orthonormalize_svd
from gse.neighborhoods import TangentFrame, local_pca

RANK_RTOL = 1e-8
PCA_CACHE_SIZE = 4096


@dataclass(frozen=True)
class CoordinateWeights:
    """Aggregate coordinate kernel from one query ``y`` to its sample neighbors."""

    idx: NDArray[np.intp]
    k: NDArray[np.floating]
    kstar: NDArray[np.floating]
    k_euclid: NDArray[np.floating]
    k_grass: NDArray[np.floating]
    s: NDArray[np.floating]  # (m, q, q)
    frame: TangentFrame


@dataclass
class CoordinateChart:
    """
    Embedded sample ``Y`` with everything Stage 4 reads from the fit.

    ``v`` holds the aligned-field matrices at the sample points, so that
    ``H(X_j) = Q_j v_j``.
    """

    Y: NDArray[np.floating]
    X: NDArray[np.floating]
    Q: NDArray[np.floating]
    v: NDArray[np.floating]
    eps1: float
    eps2: float
    eps3: Optional[float]
    variant: str = "gse"
    Kv: NDArray[np.floating] = field(init=False, repr=False)
    H: NDArray[np.floating] = field(init=False, repr=False)

    def __post_init__(self):
        if self.variant == "ogse":
            q = self.Y.shape[1]
            self.Kv = np.broadcast_to(np.eye(q), (self.Y.shape[0], q, q))
        else:
            self.Kv = np.einsum("nba,nbc->nac", self.v, self.v)
        self.H = np.einsum("npa,nab->npb", self.Q, self.v)
        self._pca = lru_cache(maxsize=PCA_CACHE_SIZE)(self._pca_uncached)

    @property
    def q(self) -> int:
        return self.Y.shape[1]

    def quadratic_distances(self, y) -> NDArray[np.floating]:
        """``(y - y_j)^T K_v(X_j) (y - y_j)`` for every sample embedding."""
        d = np.asarray(y, dtype=float) - self.Y
        return np.einsum("na,nab,nb->n", d, self.Kv, d)

    def neighborhood(self, y) -> NDArray[np.intp]:
        return np.flatnonzero(self.quadratic_distances(y) < self.eps1**2)

    def _pca_uncached(self, key: bytes) -> TangentFrame:
        y = np.frombuffer(key, dtype=float)
        idx = self.neighborhood(y)
        if idx.size == 0:
            raise EmptyNeighborhood(f"no sample embedding within range of y={y}")
        return local_pca(self.X[idx], np.ones(idx.size), self.q, self.eps3)

    def coordinate_frame(self, y) -> TangentFrame:
        """Unweighted PCA over the preimages of the coordinate neighborhood (cached)."""
        y = np.ascontiguousarray(y, dtype=float)
        return self._pca(y.tobytes())

    def in_domain(self, y) -> bool:
        try:
            return self.coordinate_frame(y).in_domain
        except GseError:
            return False

    def __getstate__(self):
        state = self.__dict__.copy()
        state.pop("_pca", None)
        return state

    def __setstate__(self, state):
        self.__dict__.update(state)
        self._pca = lru_cache(maxsize=PCA_CACHE_SIZE)(self._pca_uncached)


def build_chart(model) -> CoordinateChart:
    """Chart over the embedded sample of a fitted model."""
    p = model.params
    return CoordinateChart(Y=model.Y, X=model.X, Q=model.frames, v=model.v_field,
                           eps1=p.eps1, eps2=p.eps2, eps3=p.eps3, variant=p.variant)


def coord_kernel(y, chart: CoordinateChart) -> CoordinateWeights:
    """
    Aggregate nearness ``k = k_E * k_G`` from ``y`` to the sample embeddings.

    Raises:
        EmptyNeighborhood: nothing in range, or every weight vanishes.
        OutsideDomain: ``y`` fails the rank test on its coordinate frame.
    """
    y = np.asarray(y, dtype=float)
    frame = chart.coordinate_frame(y)
    if not frame.in_domain:
        raise OutsideDomain(f"y={y} fails the coordinate rank test")
    quad = chart.quadratic_distances(y)
    idx = np.flatnonzero(quad < chart.eps1**2)
    kE = np.exp(-chart.eps2 * quad[idx])
    s = np.einsum("pa,mpb->mab", frame.Q, chart.Q[idx])
    kG = batched_det2(s)
    k = kE * kG
    total = k.sum()
    if not total > 0:
        raise EmptyNeighborhood(f"all coordinate kernel weights vanish at y={y}")
    return CoordinateWeights(idx=idx, k=k, kstar=k / total, k_euclid=kE, k_grass=kG,
                             s=s, frame=frame)


def jacobian_G(y, chart: CoordinateChart, weights: Optional[CoordinateWeights] = None):
    """
    The p x q matrix G(y) whose columns span the coordinate frame.

    GSE projects the kernel average of ``H(X_j)`` onto the frame; OGSE
    orthogonalizes the aligned average of ``s(y, y_j) v_j`` instead.
    """
    cw = weights if weights is not None else coord_kernel(y, chart)
    qf = cw.frame.Q
    if chart.variant == "ogse":
        inner = np.einsum("m,mab,mbc->ac", cw.kstar, cw.s, chart.v[cw.idx])
        try:
            G = qf @ orthonormalize_svd(inner)
        except RankDeficient as exc:
            raise RankCollapse(f"aligned average lost rank at y={y}") from exc
        return G
    Hbar = np.einsum("m,mpa->pa", cw.kstar, chart.H[cw.idx])
    G = qf @ (qf.T @ Hbar)
    s = np.linalg.svd(G, compute_uv=False)
    if s[-1] <= RANK_RTOL * s[0]:
        raise RankCollapse(f"G(y) has singular values {s}")
    return G


def reconstruct(y, chart: CoordinateChart, form: str = "jacobian") -> NDArray[np.floating]:
    """
    Reconstruction ``g(y)``.

    Args:
        form: ``"jacobian"`` for ``g_KNR(y) + G(y) (y - sum k* y_j)``;
            ``"equivalent"`` for ``g_KNR(y) + sum k*_j H(X_j) (y - y_j)``.
    """
    y = np.asarray(y, dtype=float)
    cw = coord_kernel(y, chart)
    g_knr = cw.kstar @ chart.X[cw.idx]
    if form == "jacobian":
        G = jacobian_G(y, chart, cw)
        return g_knr + G @ (y - cw.kstar @ chart.Y[cw.idx])
    if form == "equivalent":
        H = chart.H[cw.idx]
        return g_knr + np.einsum("m,mpa,ma->p", cw.kstar, H, y - chart.Y[cw.idx])
    raise ValueError(f"unknown reconstruction form {form!r}")
