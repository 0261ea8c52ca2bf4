"""
Finite-dimensional C*-algebras A = B(H_1) + ... + B(H_k) and their elements.

Elements are stored as full matrices over the enveloping space H_1 + ... + H_k with the
block-diagonal pattern enforced at construction.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Optional

import numpy as np

from src.core.config import settings
from src.core.exceptions import (
    MalformedInputError,
    NotHermitianError,
    NotPositiveError,
    ShapeMismatchError,
)


def _tol(tol: Optional[float]) -> float:
    return settings.tol if tol is None else float(tol)


# ---------------------------------------------------------------------------
# Dense helpers shared by the whole package
# ---------------------------------------------------------------------------


def hermitian_part(matrix: np.ndarray, tol: Optional[float] = None) -> np.ndarray:
    """Return (x + x*)/2, rejecting inputs with ||x - x*|| > tol * ||x||."""
    tol = _tol(tol)
    matrix = np.asarray(matrix, dtype=complex)
    scale = np.linalg.norm(matrix)
    defect = np.linalg.norm(matrix - matrix.conj().T)
    if defect > tol * max(scale, 1e-300):
        raise NotHermitianError(f"operator is not Hermitian: ||x - x*|| = {defect:.3e}, ||x|| = {scale:.3e}")
    return (matrix + matrix.conj().T) / 2


def eigh_desc(matrix: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigen-decomposition of a Hermitian matrix with deterministic ordering and phases.

    Eigenvalues are sorted in descending order. Each eigenvector is rotated so that its
    first component of largest modulus is real and positive.
    """
    values, vectors = np.linalg.eigh(matrix)
    values = values[::-1]
    vectors = vectors[:, ::-1].copy()
    for k in range(vectors.shape[1]):
        column = vectors[:, k]
        pivot = column[int(np.argmax(np.abs(column)))]
        if abs(pivot) > 0:
            vectors[:, k] = column * (abs(pivot) / pivot)
    return values, vectors


def min_eigenvalue(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(matrix)[0])


def operator_norm(matrix: np.ndarray) -> float:
    if matrix.size == 0:
        return 0.0
    return float(np.linalg.norm(matrix, 2))


def is_psd(matrix: np.ndarray, tol: Optional[float] = None) -> bool:
    """Positivity of an (already Hermitian-checked) matrix: min eig >= -tol * max(1, ||x||)."""
    tol = _tol(tol)
    herm = hermitian_part(matrix, tol)
    return min_eigenvalue(herm) >= -tol * max(1.0, operator_norm(herm))


def psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    values, vectors = eigh_desc(matrix)
    roots = np.sqrt(np.clip(values, 0.0, None))
    return (vectors * roots) @ vectors.conj().T


def pinv_sqrt(matrix: np.ndarray, tol: Optional[float] = None) -> np.ndarray:
    """Inverse square root on the support; eigenvalues below tol * lambda_max count as zero."""
    tol = _tol(tol)
    values, vectors = eigh_desc(matrix)
    if values.size == 0 or values[0] <= 0:
        return np.zeros_like(matrix, dtype=complex)
    keep = values > tol * values[0]
    inv = np.zeros_like(values)
    inv[keep] = 1.0 / np.sqrt(values[keep])
    return (vectors * inv) @ vectors.conj().T


def support_of(matrix: np.ndarray, tol: Optional[float] = None) -> tuple[np.ndarray, int]:
    """Projection onto the span of eigenvectors with eigenvalue > tol * ||x||, and its rank."""
    tol = _tol(tol)
    values, vectors = eigh_desc(matrix)
    if values.size == 0 or values[0] <= 0:
        return np.zeros_like(matrix, dtype=complex), 0
    rank = int(np.count_nonzero(values > tol * values[0]))
    basis = vectors[:, :rank]
    return basis @ basis.conj().T, rank


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AlgebraShape:
    """A direct sum of full matrix algebras, given by its block dimensions."""

    blocks: tuple[int, ...]

    def __post_init__(self):
        try:
            blocks = tuple(int(b) for b in self.blocks)
        except (TypeError, ValueError) as e:
            raise ShapeMismatchError(f"invalid block list {self.blocks!r}: {e}") from e
        if not blocks or any(b < 1 for b in blocks):
            raise ShapeMismatchError(f"blocks must be a non-empty list of positive integers, got {blocks}")
        object.__setattr__(self, "blocks", blocks)

    @classmethod
    def full(cls, dim: int) -> "AlgebraShape":
        return cls((dim,))

    @classmethod
    def classical(cls, outcomes: int) -> "AlgebraShape":
        """The commutative algebra C^m."""
        return cls((1,) * outcomes)

    @property
    def dim(self) -> int:
        return sum(self.blocks)

    @property
    def unit_trace(self) -> int:
        """t_A = Tr(I_A)."""
        return sum(self.blocks)

    @property
    def is_factor(self) -> bool:
        return len(self.blocks) == 1

    @property
    def is_classical(self) -> bool:
        return all(b == 1 for b in self.blocks)

    @cached_property
    def offsets(self) -> tuple[tuple[int, int], ...]:
        spans, start = [], 0
        for b in self.blocks:
            spans.append((start, start + b))
            start += b
        return tuple(spans)

    @cached_property
    def block_mask(self) -> np.ndarray:
        mask = np.zeros((self.dim, self.dim), dtype=bool)
        for start, stop in self.offsets:
            mask[start:stop, start:stop] = True
        mask.setflags(write=False)
        return mask

    def block_projector(self, index: int) -> np.ndarray:
        """Diagonal of the minimal central projection onto block ``index``."""
        diag = np.zeros(self.dim)
        start, stop = self.offsets[index]
        diag[start:stop] = 1.0
        return diag


def enforce_block_support(matrix: np.ndarray, mask: np.ndarray, tol: Optional[float] = None) -> np.ndarray:
    """Zero the off-block entries of ``matrix``, failing when they carry more than tol."""
    tol = _tol(tol)
    if not np.all(np.isfinite(matrix)):
        raise MalformedInputError("operator has non-finite entries")
    leak = np.linalg.norm(matrix[~mask]) if not mask.all() else 0.0
    if leak > tol * max(1.0, np.linalg.norm(matrix)):
        raise ShapeMismatchError(f"operator leaks outside the block pattern (off-block norm {leak:.3e})")
    out = np.array(matrix, dtype=complex)
    out[~mask] = 0.0
    return out


@dataclass(frozen=True, eq=False)
class AlgOperator:
    """An element of an algebra with the given shape."""

    shape: AlgebraShape
    matrix: np.ndarray

    def __post_init__(self):
        matrix = np.asarray(self.matrix, dtype=complex)
        d = self.shape.dim
        if matrix.shape != (d, d):
            raise ShapeMismatchError(f"expected a {d}x{d} matrix for blocks {list(self.shape.blocks)}, got {matrix.shape}")
        matrix = enforce_block_support(matrix, self.shape.block_mask)
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def dagger(self) -> "AlgOperator":
        return AlgOperator(self.shape, self.matrix.conj().T)

    def _check(self, other: "AlgOperator"):
        if other.shape != self.shape:
            raise ShapeMismatchError(f"shape mismatch: {self.shape.blocks} vs {other.shape.blocks}")

    def __add__(self, other: "AlgOperator") -> "AlgOperator":
        self._check(other)
        return AlgOperator(self.shape, self.matrix + other.matrix)

    def __sub__(self, other: "AlgOperator") -> "AlgOperator":
        self._check(other)
        return AlgOperator(self.shape, self.matrix - other.matrix)

    def __mul__(self, scalar: complex) -> "AlgOperator":
        return AlgOperator(self.shape, self.matrix * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar: complex) -> "AlgOperator":
        return AlgOperator(self.shape, self.matrix / scalar)


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def identity(shape: AlgebraShape) -> AlgOperator:
    return AlgOperator(shape, np.eye(shape.dim))


def tracial_state(shape: AlgebraShape) -> AlgOperator:
    """tau_A = I_A / t_A."""
    return AlgOperator(shape, np.eye(shape.dim) / shape.unit_trace)


def hs_inner(a: AlgOperator, b: AlgOperator) -> complex:
    """<a, b> = Tr(a* b)."""
    a._check(b)
    return complex(np.vdot(a.matrix, b.matrix))


def transpose(a: AlgOperator) -> AlgOperator:
    return AlgOperator(a.shape, a.matrix.T)


def is_positive(a: AlgOperator, tol: Optional[float] = None) -> bool:
    """Raises NotHermitianError for inputs outside the Hermiticity tolerance."""
    return is_psd(a.matrix, tol)


def support_projection(a: AlgOperator, tol: Optional[float] = None) -> AlgOperator:
    if not is_positive(a, tol):
        raise NotPositiveError("support projection requires a positive operator")
    projection, _ = support_of(hermitian_part(a.matrix, tol), tol)
    return AlgOperator(a.shape, projection)


def conjugate_by_sqrt(c: AlgOperator, a: AlgOperator, tol: Optional[float] = None) -> AlgOperator:
    """chi_c(a) = c^{1/2} a c^{1/2}."""
    c._check(a)
    if not is_positive(c, tol):
        raise NotPositiveError("conjugation requires a positive operator c")
    root = psd_sqrt(hermitian_part(c.matrix, tol))
    return AlgOperator(a.shape, root @ a.matrix @ root)
