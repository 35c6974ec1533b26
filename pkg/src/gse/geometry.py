"""
Grassmann and Stiefel primitives.

A point of Grass(p, q) is represented by any orthonormal p x q basis of the
subspace. Every distance and kernel here depends only on the cross-Gram
matrix ``Q1.T @ Q2`` and is therefore invariant to ``Q -> Q @ O`` for any
orthogonal q x q matrix ``O``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np
from numpy.typing import NDArray

from gse.errors import DimensionMismatch, RankDeficient

ORTHONORMAL_TOL = 1e-10
RANK_RTOL = 1e-12


@dataclass(frozen=True)
class Subspace:
    """q-dimensional linear subspace of R^p held by an orthonormal basis."""

    basis: NDArray[np.floating]

    def __post_init__(self):
        basis = np.asarray(self.basis, dtype=float)
        if basis.ndim == 1:
            basis = basis[:, None]
        if basis.ndim != 2:
            raise DimensionMismatch(f"basis must be 2-D, got shape {basis.shape}")
        p, q = basis.shape
        if not 1 <= q <= p:
            raise DimensionMismatch(f"need 1 <= q <= p, got p={p}, q={q}")
        err = np.linalg.norm(basis.T @ basis - np.eye(q))
        if err > ORTHONORMAL_TOL:
            raise ValueError(f"basis is not orthonormal (||B^T B - I||_F = {err:.3e})")
        object.__setattr__(self, "basis", basis)

    @property
    def p(self) -> int:
        return self.basis.shape[0]

    @property
    def q(self) -> int:
        return self.basis.shape[1]

    @classmethod
    def from_span(cls, A) -> "Subspace":
        """Orthonormal basis for the column span of a full-rank matrix."""
        A = np.atleast_2d(np.asarray(A, dtype=float))
        if A.shape[0] == 1 and A.shape[1] > 1:
            A = A.T
        Q, _ = np.linalg.qr(A)
        return cls(Q)


SubspaceLike = Union[Subspace, NDArray[np.floating]]


def _basis(L: SubspaceLike) -> NDArray[np.floating]:
    if isinstance(L, Subspace):
        return L.basis
    B = np.asarray(L, dtype=float)
    return B[:, None] if B.ndim == 1 else B


def _cross_gram(L: SubspaceLike, L2: SubspaceLike) -> NDArray[np.floating]:
    A, B = _basis(L), _basis(L2)
    if A.shape != B.shape:
        raise DimensionMismatch(f"subspace shapes differ: {A.shape} vs {B.shape}")
    return A.T @ B


def orthonormalize_svd(A, rtol: float = RANK_RTOL) -> NDArray[np.floating]:
    """
    Nearest matrix with orthonormal columns, ``A1 @ A2.T`` for ``A = A1 S A2.T``.

    This is the polar factor of ``A`` and the maximizer of ``Tr(V.T @ A)``
    over all V with orthonormal columns.

    Raises:
        RankDeficient: if ``sigma_min <= rtol * sigma_max``.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] < A.shape[1]:
        raise DimensionMismatch(f"expected a tall a x b matrix, got shape {A.shape}")
    U, s, Vt = np.linalg.svd(A, full_matrices=False)
    if s.size == 0 or s[-1] <= rtol * s[0]:
        raise RankDeficient(f"singular values {s} below relative tolerance {rtol}")
    return U @ Vt


def _cos_sin(L: SubspaceLike, L2: SubspaceLike):
    """Cosines (descending) and sines (ascending) of the principal angles."""
    A, B = _basis(L), _basis(L2)
    M = _cross_gram(A, B)
    c = np.clip(np.linalg.svd(M, compute_uv=False), 0.0, 1.0)
    # sines from the residual of B after projecting onto L; accurate near 0
    s = np.clip(np.sort(np.linalg.svd(B - A @ M, compute_uv=False)), 0.0, 1.0)
    return c, s


def principal_angles(L: SubspaceLike, L2: SubspaceLike) -> NDArray[np.floating]:
    """Principal angles between two subspaces, ascending in [0, pi/2]."""
    c, s = _cos_sin(L, L2)
    # arccos is ill-conditioned near 0 and arcsin near pi/2
    return np.sort(np.where(c * c < 0.5, np.arccos(c), np.arcsin(s)))


def projection_2norm_distance(L: SubspaceLike, L2: SubspaceLike) -> float:
    """``||P_L - P_L2||_2``, the sine of the largest principal angle."""
    return float(np.sin(principal_angles(L, L2)[-1]))


def binet_cauchy_kernel(L: SubspaceLike, L2: SubspaceLike) -> float:
    """``Det^2(L.T @ L2)``, the product of squared principal-angle cosines."""
    return float(np.linalg.det(_cross_gram(L, L2)) ** 2)


def binet_cauchy_distance(L: SubspaceLike, L2: SubspaceLike) -> float:
    """``sqrt(1 - prod cos^2)``, evaluated from the sines so it vanishes exactly on L = L2."""
    s = np.sin(principal_angles(L, L2))
    with np.errstate(divide="ignore"):
        return float(np.sqrt(-np.expm1(np.sum(np.log1p(-s * s)))))


def projector(L: SubspaceLike, complement: bool = False) -> NDArray[np.floating]:
    """Orthogonal projector ``Q Q^T`` onto L, or ``I - Q Q^T`` with ``complement``."""
    Q = _basis(L)
    P = Q @ Q.T
    if complement:
        return np.eye(Q.shape[0]) - P
    return P


def batched_det2(S: NDArray[np.floating]) -> NDArray[np.floating]:
    """Binet-Cauchy kernels for a stack of cross-Gram matrices of shape (m, q, q)."""
    if S.shape[0] == 0:
        return np.zeros(0)
    return np.linalg.det(S) ** 2
