"""
Synthetic single-chart manifolds with analytic Jacobians.

Each manifold is a chart ``f: B -> R^p`` on a parameter box ``B``, sampled
uniformly in the parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from numpy.typing import NDArray

from gse.errors import InvalidConfig


@dataclass(frozen=True)
class PointCloud:
    """Sample of a manifold, optionally with the generator's hidden coordinates."""

    points: NDArray[np.floating]
    params: Optional[NDArray[np.floating]] = None
    tangents: Optional[NDArray[np.floating]] = None  # (n, p, q) orthonormal

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def p(self) -> int:
        return self.points.shape[1]


@dataclass(frozen=True)
class SyntheticManifold:
    name: str
    q: int
    p: int
    chart: Callable[[NDArray], NDArray]
    jacobian: Callable[[NDArray], NDArray]
    low: NDArray[np.floating]
    high: NDArray[np.floating]
    options: dict = field(default_factory=dict)

    def f(self, b) -> NDArray[np.floating]:
        """Chart applied to parameters of shape (q,) or (m, q)."""
        b = np.asarray(b, dtype=float)
        return self.chart(b)

    def J(self, b) -> NDArray[np.floating]:
        """Jacobian(s) of the chart, shape (p, q) or (m, p, q)."""
        return self.jacobian(np.asarray(b, dtype=float))

    def tangent(self, b) -> NDArray[np.floating]:
        """Orthonormal basis of ``Span(J_f(b))``."""
        J = self.J(b)
        if J.ndim == 2:
            return np.linalg.qr(J)[0]
        return np.stack([np.linalg.qr(j)[0] for j in J])

    def sample_params(self, n: int, seed: int) -> NDArray[np.floating]:
        rng = np.random.default_rng(seed)
        return self.low + (self.high - self.low) * rng.random((n, self.q))

    def sample(self, n: int, seed: int) -> PointCloud:
        """``n`` i.i.d. uniform draws on the parameter box, mapped through the chart."""
        if n < 0:
            raise InvalidConfig(f"n must be nonnegative, got {n}")
        b = self.sample_params(n, seed)
        if n == 0:
            return PointCloud(np.zeros((0, self.p)), b, np.zeros((0, self.p, self.q)))
        return PointCloud(points=self.f(b), params=b, tangents=self.tangent(b))

    def is_interior(self, b, margin: float = 0.1) -> NDArray[np.bool_]:
        """Parameters at least ``margin`` of the box width from every face."""
        b = np.atleast_2d(b)
        w = self.high - self.low
        return np.all((b >= self.low + margin * w) & (b <= self.high - margin * w), axis=1)


def swiss_roll(t_range=(1.5 * np.pi, 4.5 * np.pi), height: float = 21.0) -> SyntheticManifold:
    """``f(t, s) = (t cos t, s, t sin t)``."""

    def chart(b):
        t, s = b[..., 0], b[..., 1]
        return np.stack([t * np.cos(t), s, t * np.sin(t)], axis=-1)

    def jac(b):
        t = b[..., 0]
        J = np.zeros(b.shape[:-1] + (3, 2))
        J[..., 0, 0] = np.cos(t) - t * np.sin(t)
        J[..., 2, 0] = np.sin(t) + t * np.cos(t)
        J[..., 1, 1] = 1.0
        return J

    return SyntheticManifold("swissroll", 2, 3, chart, jac,
                             np.array([t_range[0], 0.0]), np.array([t_range[1], height]))


def spiral(t_max: float = 6 * np.pi, pitch: float = 0.2) -> SyntheticManifold:
    """Helix ``f(t) = (cos t, sin t, pitch * t)``."""

    def chart(b):
        t = b[..., 0]
        return np.stack([np.cos(t), np.sin(t), pitch * t], axis=-1)

    def jac(b):
        t = b[..., 0]
        return np.stack([-np.sin(t), np.cos(t), np.full_like(t, pitch)], axis=-1)[..., None]

    return SyntheticManifold("spiral", 1, 3, chart, jac, np.array([0.0]), np.array([t_max]))


def affine_plane(p: int = 5, q: int = 2, seed: int = 0, size: float = 10.0) -> SyntheticManifold:
    """Randomly rotated and offset coordinate q-plane in R^p."""
    rng = np.random.default_rng(seed)
    B = np.linalg.qr(rng.standard_normal((p, q)))[0]
    offset = rng.standard_normal(p)

    def chart(b):
        return b @ B.T + offset

    def jac(b):
        return np.broadcast_to(B, b.shape[:-1] + (p, q)).copy()

    return SyntheticManifold("affineplane", q, p, chart, jac, np.zeros(q), np.full(q, size),
                             options={"basis": B, "offset": offset})


def sphere_patch(half_width: float = 0.7) -> SyntheticManifold:
    """Inverse stereographic chart of a patch of the unit sphere around the north pole."""

    def chart(b):
        u, v = b[..., 0], b[..., 1]
        r2 = u * u + v * v
        return np.stack([2 * u, 2 * v, 1 - r2], axis=-1) / (1 + r2)[..., None]

    def jac(b):
        u, v = b[..., 0], b[..., 1]
        d = 1 + u * u + v * v
        J = np.empty(b.shape[:-1] + (3, 2))
        J[..., 0, 0] = 2 * (d - 2 * u * u) / d**2
        J[..., 0, 1] = -4 * u * v / d**2
        J[..., 1, 0] = -4 * u * v / d**2
        J[..., 1, 1] = 2 * (d - 2 * v * v) / d**2
        J[..., 2, 0] = -4 * u / d**2
        J[..., 2, 1] = -4 * v / d**2
        return J

    return SyntheticManifold("spherepatch", 2, 3, chart, jac,
                             np.full(2, -half_width), np.full(2, half_width))


_FACTORIES = {
    "swissroll": swiss_roll,
    "spiral": spiral,
    "affineplane": affine_plane,
    "spherepatch": sphere_patch,
}


def get_manifold(name: str, **options) -> SyntheticManifold:
    key = name.lower().replace("_", "").replace("-", "")
    if key not in _FACTORIES:
        raise InvalidConfig(f"unknown manifold {name!r}; choose from {sorted(_FACTORIES)}")
    try:
        return _FACTORIES[key](**options)
    except TypeError as exc:
        raise InvalidConfig(f"bad options for manifold {name!r}: {exc}") from exc
