"""Fixed random orthogonal rotation.

A Haar-distributed rotation makes every coordinate of a rotated unit vector
approximately N(0, 1/d), which is the source the scalar quantizer is designed
for. The matrix is generated once from a seed, persisted with the index, and
never changes afterwards.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["RotationMatrix", "generate_rotation", "rotate", "rotate_back"]


@dataclass(frozen=True)
class RotationMatrix:
    """Orthogonal d x d matrix with its generation seed.

    Attributes:
        dim: Dimension d.
        matrix: (d, d) float64 orthogonal matrix.
        seed: Seed the matrix was generated from (persisted for audit).
    """

    dim: int
    matrix: np.ndarray
    seed: int

    def __post_init__(self):
        self.matrix.setflags(write=False)

    def apply(self, v: np.ndarray) -> np.ndarray:
        """Rotate a vector (d,) or rows of a matrix (n, d)."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.dim:
            raise ValueError(f"expected trailing dim {self.dim}, got {v.shape[-1]}")
        return v @ self.matrix.T

    def apply_inverse(self, v: np.ndarray) -> np.ndarray:
        """Inverse rotation (the transpose, since the matrix is orthogonal)."""
        v = np.asarray(v, dtype=np.float64)
        if v.shape[-1] != self.dim:
            raise ValueError(f"expected trailing dim {self.dim}, got {v.shape[-1]}")
        return v @ self.matrix


def generate_rotation(dim: int, seed: int) -> RotationMatrix:
    """Draw a Haar-distributed orthogonal matrix deterministically from a seed.

    Fills d x d with i.i.d. standard normals, takes the QR factorization, and
    flips each column by the sign of the corresponding diagonal entry of R
    (without the sign fix, QR biases the distribution away from Haar).

    Raises:
        ValueError: If dim < 2.
    """
    if dim < 2:
        raise ValueError(f"dim must be >= 2, got {dim}")
    rng = np.random.default_rng(seed)
    gauss = rng.standard_normal((dim, dim))
    q, r = np.linalg.qr(gauss)
    q = q * np.where(np.diag(r) >= 0, 1.0, -1.0)
    return RotationMatrix(dim=dim, matrix=q, seed=seed)


def rotate(rot: RotationMatrix, v: np.ndarray) -> np.ndarray:
    """Apply the rotation; preserves norms and inner products."""
    return rot.apply(v)


def rotate_back(rot: RotationMatrix, v: np.ndarray) -> np.ndarray:
    """Undo the rotation via the transpose."""
    return rot.apply_inverse(v)
