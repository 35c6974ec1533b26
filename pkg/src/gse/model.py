"""Fitted GSE/OGSE model: orchestration of the four stages and point queries."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional

import numpy as np
from numpy.typing import NDArray

from gse.alignment import (
    AlignmentField,
    alignment_objective,
    field_value,
    procrustes_residual,
    solve_alignment,
    solve_alignment_orthogonal,
)
from gse.embedding import EmbeddingSet, embed_point, solve_embedding
from gse.errors import GseWarning, OutsideDomain
from gse.neighborhoods import HyperParams, TangentFrame, build_kernel_graph, frame_at, kernel_row
from gse.reconstruction import (
    CoordinateChart,
    build_chart,
    coord_kernel,
    jacobian_G as _jacobian_G,
    reconstruct as _reconstruct,
)

log = logging.getLogger(__name__)


class FieldValue(NamedTuple):
    H: NDArray[np.floating]
    v: NDArray[np.floating]
    frame: TangentFrame
    idx: NDArray[np.intp]
    K: NDArray[np.floating]
    near_singular: bool


@dataclass
class GseModel:
    """
    Everything needed to answer embedding and reconstruction queries.

    Attributes:
        X: (n, p) sample.
        params: resolved hyperparameters.
        frames: (n, p, q) local PCA bases.
        eigenvalues: (n, p) local PCA spectra.
        v_star: (n, q, q) generalized-eigenvector alignment.
        v_ort: (n, q, q) orthogonal alignment (OGSE only).
        v_field: (n, q, q) aligned field ``v(X_i)`` at the sample points.
        h: (n, q) preliminary embeddings.
        Y: (n, q) embeddings ``h(X_i)``.
    """

    X: NDArray[np.floating]
    params: HyperParams
    frames: NDArray[np.floating]
    eigenvalues: NDArray[np.floating]
    v_star: NDArray[np.floating]
    v_ort: Optional[NDArray[np.floating]]
    v_field: NDArray[np.floating]
    h: NDArray[np.floating]
    Y: NDArray[np.floating]
    summary: dict = field(default_factory=dict)
    provenance: dict = field(default_factory=dict)
    chart: CoordinateChart = field(init=False, repr=False)

    def __post_init__(self):
        self.chart = build_chart(self)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.params.q

    @property
    def variant(self) -> str:
        return self.params.variant

    @property
    def orthogonal(self) -> bool:
        return self.params.variant == "ogse"

    @property
    def v_sample(self) -> NDArray[np.floating]:
        """Alignment matrices the aligned field regresses from."""
        return self.v_ort if self.orthogonal else self.v_star

    # -- fitting -------------------------------------------------------------

    @classmethod
    def fit(cls, X, params: HyperParams, max_iter: int = 200, tol: float = 1e-9,
            provenance: Optional[dict] = None) -> "GseModel":
        """
        Run stages 1-3 and build the coordinate chart.

        Raises:
            DisconnectedGraph, SampleOutsideDomain, EigensolverFailure, SingularSystem
        """
        X = np.ascontiguousarray(X, dtype=float)
        params = params.resolve(X)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            frames, graph = build_kernel_graph(X, params)
            Q = np.stack([f.Q for f in frames])
            lam = np.stack([f.eigenvalues for f in frames])

            gse = solve_alignment(Q, graph)
            v_ort = None
            ortho: Optional[AlignmentField] = None
            if params.variant == "ogse":
                v0 = None
                if params.ogse_init == "gse":
                    v0 = _sample_field(X, Q, params, gse.v_star, orthogonal=False)
                ortho = solve_alignment_orthogonal(Q, graph, v_init=v0, max_iter=max_iter,
                                                   tol=tol, init=params.ogse_init)
                v_ort = ortho.v_star
            v_src = v_ort if v_ort is not None else gse.v_star
            v_field = _sample_field(X, Q, params, v_src, orthogonal=params.variant == "ogse")

            emb: EmbeddingSet = solve_embedding(X, Q, v_field, graph, params.variant)
        for w in caught:
            warnings.warn_explicit(w.message, w.category, w.filename, w.lineno)
        warned = [w for w in caught if issubclass(w.category, GseWarning)]

        lam_g = gse.eigvals
        summary = {
            "n": int(X.shape[0]),
            "p": int(X.shape[1]),
            "q": int(params.q),
            "variant": params.variant,
            "eps1": params.eps1,
            "eps2": params.eps2,
            "eps3": params.eps3,
            "n_edges": int(graph.weights.nnz // 2),
            "kernel_total": graph.total,
            "delta_H": procrustes_residual(Q, graph, v_src),
            "objective": alignment_objective(Q, graph, v_src),
            "delta_h": emb.residual,
            "spectral_gap": float(lam_g[params.q - 1] - lam_g[params.q]) if lam_g.size > params.q else float("nan"),
            "ogse_sweeps": ortho.iterations if ortho else 0,
            "ogse_converged": ortho.converged if ortho else True,
            "dropped_xi": emb.dropped_xi,
            "n_warnings": len(warned),
        }
        model = cls(X=X, params=params, frames=Q, eigenvalues=lam, v_star=gse.v_star,
                    v_ort=v_ort, v_field=v_field, h=emb.h, Y=np.zeros_like(emb.h),
                    summary=summary, provenance=dict(provenance or {}))
        model.Y = np.stack([model.embed(x) for x in X])
        model.chart = build_chart(model)
        log.info("fitted %s model on n=%d points (delta_h=%.3e)", params.variant, model.n, emb.residual)
        return model

    # -- queries -------------------------------------------------------------

    def frame(self, x) -> TangentFrame:
        """Local PCA frame at ``x``; raises OutsideDomain when the rank test fails."""
        fr = frame_at(x, self.X, self.params)
        if not fr.in_domain:
            raise OutsideDomain(f"lambda_q={fr.eigenvalues[self.q - 1]:.3e} at the query point")
        return fr

    def h_field(self, x) -> FieldValue:
        """Aligned tangent matrix ``H(X) = Q(X) v(X)``."""
        fr = self.frame(x)
        idx, K, S = kernel_row(x, fr.Q, self.X, self.frames, self.params)
        v, near_singular = field_value(S, K, self.v_sample[idx], orthogonal=self.orthogonal)
        return FieldValue(H=fr.Q @ v, v=v, frame=fr, idx=idx, K=K, near_singular=near_singular)

    def embed(self, x) -> NDArray[np.floating]:
        """Embedding ``h(X)`` of an arbitrary in-domain point."""
        fv = self.h_field(x)
        y, _ = embed_point(x, fv.frame.Q, fv.v, fv.K, self.X[fv.idx], self.h[fv.idx],
                           self.orthogonal)
        return y

    def jacobian_h(self, x) -> NDArray[np.floating]:
        """The q x p matrix the embedding formula assigns as its Jacobian."""
        fv = self.h_field(x)
        _, M = embed_point(x, fv.frame.Q, fv.v, fv.K, self.X[fv.idx], self.h[fv.idx],
                           self.orthogonal)
        return M

    def jacobian_G(self, y) -> NDArray[np.floating]:
        return _jacobian_G(y, self.chart)

    def reconstruct(self, y, form: str = "jacobian") -> NDArray[np.floating]:
        return _reconstruct(y, self.chart, form=form)

    def coord_kernel(self, y):
        return coord_kernel(y, self.chart)

    def embed_many(self, Xs) -> NDArray[np.floating]:
        return np.stack([self.embed(x) for x in np.atleast_2d(Xs)])

    def reconstruct_many(self, Ys, form: str = "jacobian") -> NDArray[np.floating]:
        return np.stack([self.reconstruct(y, form) for y in np.atleast_2d(Ys)])


def _sample_field(X, Q, params, v_src, orthogonal: bool):
    """Aligned field at every sample point, through the same path as queries."""
    out = np.empty_like(v_src)
    for i in range(X.shape[0]):
        idx, K, S = kernel_row(X[i], Q[i], X, Q, params)
        out[i], _ = field_value(S, K, v_src[idx], orthogonal=orthogonal)
    return out


# module-level forms of the query operations

def h_field(x, model: GseModel) -> FieldValue:
    return model.h_field(x)


def embed(x, model: GseModel) -> NDArray[np.floating]:
    return model.embed(x)
