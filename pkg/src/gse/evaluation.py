"""
Evaluation quantities: reconstruction error, tangent proximity, the local
maximum error over a ball with its lower bound, and projection onto the
estimated manifold.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from numpy.typing import NDArray
from scipy.optimize import least_squares
from scipy.spatial import cKDTree

from gse.errors import GseError, RejectionFailure
from gse.geometry import projection_2norm_distance
from gse.manifolds import PointCloud, SyntheticManifold


def reconstruction_error(x, model) -> float:
    """``||X - g(h(X))||``."""
    x = np.asarray(x, dtype=float)
    return float(np.linalg.norm(x - model.reconstruct(model.embed(x))))


def tangent_error(x, model, tangent) -> float:
    """
    Projection 2-norm distance between the true tangent space and ``Span(G(h(X)))``.

    Args:
        tangent: (p, q) basis of the true tangent space at ``x``; need not be
            orthonormal.
    """
    G = model.jacobian_G(model.embed(x))
    return projection_2norm_distance(np.linalg.qr(np.asarray(tangent, float))[0],
                                     np.linalg.qr(G)[0])


@dataclass(frozen=True)
class PointRecord:
    index: int
    x: NDArray[np.floating]
    y: Optional[NDArray[np.floating]]
    x_star: Optional[NDArray[np.floating]]
    delta: float
    tangent_error: float
    error: str = ""

    @property
    def ok(self) -> bool:
        return not self.error


@dataclass(frozen=True)
class BoundRecord:
    """Empirical maximum error over an ambient ball against its lower bound."""

    x0: NDArray[np.floating]
    eps: float
    empirical: float  # max delta^2 over the ball
    rhs: float  # delta^2(x0) + eps^2 d^2(L(x0), Span G(h(x0)))
    delta0: float
    tangent_distance: float
    m: int

    def holds(self, slack: float = 0.1) -> bool:
        return self.empirical >= self.rhs - slack * self.eps**2


@dataclass
class EvalReport:
    records: list = field(default_factory=list)
    bounds: list = field(default_factory=list)

    @property
    def deltas(self) -> NDArray[np.floating]:
        return np.array([r.delta for r in self.records if r.ok], dtype=float)

    @property
    def tangent_errors(self) -> NDArray[np.floating]:
        t = np.array([r.tangent_error for r in self.records if r.ok], dtype=float)
        return t[np.isfinite(t)]

    @property
    def n_failed(self) -> int:
        return sum(not r.ok for r in self.records)

    def aggregates(self) -> dict:
        """Mean/median/max reconstruction error and mean tangent distance over good rows."""
        d, t = self.deltas, self.tangent_errors
        nan = float("nan")
        return {
            "n_points": len(self.records),
            "n_failed": self.n_failed,
            "mean_delta": float(d.mean()) if d.size else nan,
            "median_delta": float(np.median(d)) if d.size else nan,
            "max_delta": float(d.max()) if d.size else nan,
            "mean_tangent_error": float(t.mean()) if t.size else nan,
            "max_tangent_error": float(t.max()) if t.size else nan,
        }


def evaluate(model, cloud: PointCloud, tangents: bool = True) -> EvalReport:
    """
    Per-point reconstruction and tangent errors on a test cloud.

    Failures at individual points are recorded on the row, not raised.
    """
    report = EvalReport()
    have_t = tangents and cloud.tangents is not None and len(cloud.tangents) == cloud.n
    for i, x in enumerate(cloud.points):
        try:
            y = model.embed(x)
            xs = model.reconstruct(y)
            te = float("nan")
            if have_t:
                G = model.jacobian_G(y)
                te = projection_2norm_distance(cloud.tangents[i], np.linalg.qr(G)[0])
            report.records.append(PointRecord(i, x, y, xs, float(np.linalg.norm(x - xs)), te))
        except GseError as exc:
            report.records.append(PointRecord(i, x, None, None, float("nan"), float("nan"),
                                              error=f"{type(exc).__name__}: {exc}"))
    return report


def sample_ball(manifold: SyntheticManifold, x0, eps: float, m: int, seed: int,
                batch: int = 20000, max_batches: int = 200) -> NDArray[np.floating]:
    """
    ``m`` manifold points drawn from the sampling measure restricted to the
    open ball of radius ``eps`` around ``x0`` (rejection sampling).

    Raises:
        RejectionFailure: fewer than ``m`` acceptances within the draw budget.
    """
    x0 = np.asarray(x0, dtype=float)
    rng = np.random.default_rng(seed)
    kept = []
    count = 0
    for _ in range(max_batches):
        b = manifold.low + (manifold.high - manifold.low) * rng.random((batch, manifold.q))
        pts = manifold.f(b)
        hit = pts[np.linalg.norm(pts - x0, axis=1) < eps]
        kept.append(hit)
        count += hit.shape[0]
        if count >= m:
            return np.concatenate(kept)[:m]
    raise RejectionFailure(f"only {count} of {m} points landed in the ball of radius {eps} "
                           f"after {max_batches * batch} draws")


def local_max_error(x0, eps: float, model, manifold: SyntheticManifold, tangent,
                    m: int = 500, seed: int = 0) -> BoundRecord:
    """
    Empirical maximum of ``delta^2`` over the ball ``U_eps(x0)`` and the
    lower bound ``delta^2(x0) + eps^2 d^2(L(x0), Span G(h(x0)))``.

    The ball supremum includes ``x0`` itself. Points where the fitted
    mappings are undefined are skipped.
    """
    if m < 1:
        raise ValueError("m must be positive")
    x0 = np.asarray(x0, dtype=float)
    d0 = reconstruction_error(x0, model)
    dist = tangent_error(x0, model, tangent)
    best = d0**2
    for x in sample_ball(manifold, x0, eps, m, seed):
        try:
            best = max(best, reconstruction_error(x, model) ** 2)
        except GseError:
            continue
    return BoundRecord(x0=x0, eps=float(eps), empirical=float(best),
                       rhs=float(d0**2 + eps**2 * dist**2), delta0=d0,
                       tangent_distance=float(dist), m=m)


@dataclass(frozen=True)
class Projection:
    y: NDArray[np.floating]
    distance: float
    seed_distance: float
    converged: bool


def project_to_manifold(x, model, k: int = 5, max_nfev: int = 200) -> Projection:
    """
    ``argmin_y ||X - g(y)||`` by multi-start local least squares.

    Starts are ``h(X)`` and the embeddings of the ``k`` sample points nearest
    to ``X``. The best point found is returned, never worse than ``h(X)``.
    """
    x = np.asarray(x, dtype=float)
    y0 = model.embed(x)
    scale = 10.0 * math.sqrt(model.p) * float(np.max(np.abs(model.X - model.X.mean(0))) + 1.0)

    def resid(y):
        try:
            return model.reconstruct(y) - x
        except GseError:
            return np.full(x.shape, scale)

    seed_d = float(np.linalg.norm(resid(y0)))
    best_y, best_d, converged = y0, seed_d, False
    _, nb = cKDTree(model.X).query(x, k=min(k, model.n))
    starts = [y0] + [model.Y[j] for j in np.atleast_1d(nb)]
    for s in starts:
        res = least_squares(resid, s, method="trf", max_nfev=max_nfev,
                            xtol=1e-14, ftol=1e-14, gtol=1e-14)
        d = float(np.linalg.norm(resid(res.x)))
        if d < best_d:
            best_y, best_d = res.x, d
        converged = converged or res.status > 0
    return Projection(y=np.asarray(best_y, float), distance=best_d, seed_distance=seed_d,
                      converged=converged)
