"""
Labeled tensor products of block algebras, partial traces/transposes and the link product.

The first listed factor is the most significant one in the Kronecker layout.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Iterator, NamedTuple, Optional, Sequence, Union

import numpy as np

from src.core.exceptions import ShapeMismatchError
from src.linalg.algebra import AlgebraShape, AlgOperator, enforce_block_support

FactorLabel = int


class Factor(NamedTuple):
    """One tensor factor: a label and the algebra it carries."""

    label: FactorLabel
    shape: AlgebraShape


Layout = tuple[Factor, ...]


def as_layout(factors: Iterable) -> Layout:
    layout = []
    for item in factors:
        label, shape = item
        if not isinstance(shape, AlgebraShape):
            shape = AlgebraShape(tuple(shape))
        layout.append(Factor(int(label), shape))
    return tuple(layout)


def layout_dims(factors: Layout) -> tuple[int, ...]:
    return tuple(f.shape.dim for f in factors)


def layout_dim(factors: Layout) -> int:
    return math.prod(layout_dims(factors))


def layout_trace(factors: Layout) -> int:
    return math.prod(f.shape.unit_trace for f in factors)


def labels_of(factors: Layout) -> tuple[FactorLabel, ...]:
    return tuple(f.label for f in factors)


@lru_cache(maxsize=512)
def layout_mask(factors: Layout) -> np.ndarray:
    """Support pattern of the tensor product: the sum of q(I) B(H_I) q(I) over block multi-indices."""
    mask = np.ones((1, 1), dtype=bool)
    for factor in factors:
        mask = np.kron(mask, factor.shape.block_mask)
    mask.setflags(write=False)
    return mask


@lru_cache(maxsize=512)
def layout_coordinates(factors: Layout) -> np.ndarray:
    """Flat (row-major) indices of the matrix entries allowed by the block pattern."""
    coords = np.flatnonzero(layout_mask(factors).ravel())
    coords.setflags(write=False)
    return coords


def block_multi_indices(factors: Layout) -> Iterator[tuple[int, ...]]:
    return itertools.product(*(range(len(f.shape.blocks)) for f in factors))


def central_projection(factors: Layout, multi_index: Sequence[int]) -> np.ndarray:
    """Diagonal of q(I) = q_{i_1} x ... x q_{i_k}."""
    diag = np.ones(1)
    for factor, index in zip(factors, multi_index):
        diag = np.kron(diag, factor.shape.block_projector(index))
    return diag


def _check_layout(factors: Layout):
    labels = labels_of(factors)
    if len(set(labels)) != len(labels):
        raise ShapeMismatchError(f"factor labels must be distinct, got {list(labels)}")
    if any(label < 0 for label in labels):
        raise ShapeMismatchError(f"factor labels must be non-negative, got {list(labels)}")


@dataclass(frozen=True, eq=False)
class LabeledOperator:
    """An operator on a tensor product of labeled algebras."""

    factors: Layout
    matrix: np.ndarray

    def __post_init__(self):
        factors = as_layout(self.factors)
        _check_layout(factors)
        matrix = np.asarray(self.matrix, dtype=complex)
        d = layout_dim(factors)
        if matrix.shape != (d, d):
            raise ShapeMismatchError(f"expected a {d}x{d} matrix for labels {list(labels_of(factors))}, got {matrix.shape}")
        matrix = enforce_block_support(matrix, layout_mask(factors))
        matrix.setflags(write=False)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "matrix", matrix)

    @classmethod
    def from_alg(cls, op: AlgOperator, label: FactorLabel = 0) -> "LabeledOperator":
        return cls((Factor(label, op.shape),), op.matrix)

    def to_alg(self) -> AlgOperator:
        if len(self.factors) != 1:
            raise ShapeMismatchError(f"operator has {len(self.factors)} factors, expected one")
        return AlgOperator(self.factors[0].shape, self.matrix)

    @property
    def labels(self) -> tuple[FactorLabel, ...]:
        return labels_of(self.factors)

    @property
    def dims(self) -> tuple[int, ...]:
        return layout_dims(self.factors)

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def factor(self, label: FactorLabel) -> Factor:
        for f in self.factors:
            if f.label == label:
                return f
        raise ShapeMismatchError(f"unknown factor label {label}; operator carries {list(self.labels)}")

    def position(self, label: FactorLabel) -> int:
        self.factor(label)
        return self.labels.index(label)

    def tensor_view(self) -> np.ndarray:
        return self.matrix.reshape(self.dims + self.dims)

    def trace(self) -> complex:
        return complex(np.trace(self.matrix))

    def norm(self) -> float:
        return float(np.linalg.norm(self.matrix))

    def dagger(self) -> "LabeledOperator":
        return LabeledOperator(self.factors, self.matrix.conj().T)

    def conj(self) -> "LabeledOperator":
        return LabeledOperator(self.factors, self.matrix.conj())

    def with_matrix(self, matrix: np.ndarray) -> "LabeledOperator":
        return LabeledOperator(self.factors, matrix)

    def _aligned(self, other: "LabeledOperator") -> np.ndarray:
        if set(other.labels) != set(self.labels):
            raise ShapeMismatchError(f"label mismatch: {list(self.labels)} vs {list(other.labels)}")
        other = permute(other, self.labels)
        if other.factors != self.factors:
            raise ShapeMismatchError("factor shapes differ between operands")
        return other.matrix

    def __add__(self, other: "LabeledOperator") -> "LabeledOperator":
        return LabeledOperator(self.factors, self.matrix + self._aligned(other))

    def __sub__(self, other: "LabeledOperator") -> "LabeledOperator":
        return LabeledOperator(self.factors, self.matrix - self._aligned(other))

    def __mul__(self, scalar: complex) -> "LabeledOperator":
        return LabeledOperator(self.factors, self.matrix * scalar)

    __rmul__ = __mul__

    def __truediv__(self, scalar: complex) -> "LabeledOperator":
        return LabeledOperator(self.factors, self.matrix / scalar)


OperatorLike = Union[LabeledOperator, AlgOperator]


def as_labeled(x: OperatorLike, label: FactorLabel = 0) -> LabeledOperator:
    if isinstance(x, AlgOperator):
        return LabeledOperator.from_alg(x, label)
    return x


def identity_operator(factors: Iterable) -> LabeledOperator:
    factors = as_layout(factors)
    return LabeledOperator(factors, np.eye(layout_dim(factors)))


def tracial_operator(factors: Iterable) -> LabeledOperator:
    factors = as_layout(factors)
    return LabeledOperator(factors, np.eye(layout_dim(factors)) / layout_trace(factors))


def _positions(x: LabeledOperator, labels: Iterable[FactorLabel]) -> list[int]:
    labels = list(labels)
    if len(set(labels)) != len(labels):
        raise ShapeMismatchError(f"repeated labels in {labels}")
    return [x.position(label) for label in labels]


def tensor(x: LabeledOperator, y: LabeledOperator) -> LabeledOperator:
    overlap = set(x.labels) & set(y.labels)
    if overlap:
        raise ShapeMismatchError(f"tensor product needs disjoint labels, shared: {sorted(overlap)}")
    return LabeledOperator(x.factors + y.factors, np.kron(x.matrix, y.matrix))


def partial_trace(x: LabeledOperator, over: Iterable[FactorLabel]) -> LabeledOperator:
    traced = set(_positions(x, over))
    k = len(x.factors)
    keep = [i for i in range(k) if i not in traced]
    if not traced:
        return x
    rows = list(range(k))
    cols = [k + i for i in range(k)]
    for i in traced:
        cols[i] = rows[i]
    out = [rows[i] for i in keep] + [cols[i] for i in keep]
    reduced = np.einsum(x.tensor_view(), rows + cols, out)
    factors = tuple(x.factors[i] for i in keep)
    d = layout_dim(factors)
    return LabeledOperator(factors, np.asarray(reduced).reshape(d, d))


def partial_transpose(x: LabeledOperator, over: Iterable[FactorLabel]) -> LabeledOperator:
    positions = _positions(x, over)
    k = len(x.factors)
    axes = list(range(2 * k))
    for i in positions:
        axes[i], axes[k + i] = axes[k + i], axes[i]
    return x.with_matrix(x.tensor_view().transpose(axes).reshape(x.dim, x.dim))


def transpose(x: LabeledOperator) -> LabeledOperator:
    return x.with_matrix(x.matrix.T)


def permute(x: LabeledOperator, order: Sequence[FactorLabel]) -> LabeledOperator:
    """Reorder the factors of ``x`` to follow ``order`` (a permutation of its labels)."""
    order = list(order)
    if sorted(order) != sorted(x.labels):
        raise ShapeMismatchError(f"{order} is not a permutation of {list(x.labels)}")
    if tuple(order) == x.labels:
        return x
    perm = _positions(x, order)
    k = len(x.factors)
    t = x.tensor_view().transpose(perm + [k + p for p in perm])
    return LabeledOperator(tuple(x.factors[p] for p in perm), t.reshape(x.dim, x.dim))


def relabel(x: LabeledOperator, mapping: dict[FactorLabel, FactorLabel]) -> LabeledOperator:
    factors = tuple(Factor(mapping.get(f.label, f.label), f.shape) for f in x.factors)
    return LabeledOperator(factors, x.matrix)


def link_product(x: LabeledOperator, y: LabeledOperator) -> LabeledOperator:
    """X*Y = Tr_{M^N}[(I_{M\\N} x Y^{T_{M^N}})(X x I_{N\\M})].

    Shared factors are contracted row index with row index and column index with column
    index, which is the same contraction without forming I x Y^T. The result carries the
    surviving factors of ``x`` followed by those of ``y``.
    """
    shared = [label for label in x.labels if label in y.labels]
    for label in shared:
        if x.factor(label).shape != y.factor(label).shape:
            raise ShapeMismatchError(
                f"shared label {label} has blocks {list(x.factor(label).shape.blocks)} "
                f"vs {list(y.factor(label).shape.blocks)}"
            )
    if not shared:
        return tensor(x, y)
    all_labels = list(dict.fromkeys(x.labels + y.labels))
    row = {label: i for i, label in enumerate(all_labels)}
    col = {label: len(all_labels) + i for i, label in enumerate(all_labels)}
    x_sub = [row[l] for l in x.labels] + [col[l] for l in x.labels]
    y_sub = [row[l] for l in y.labels] + [col[l] for l in y.labels]
    factors = tuple(f for f in x.factors if f.label not in shared) + tuple(
        f for f in y.factors if f.label not in shared
    )
    out_labels = labels_of(factors)
    out_sub = [row[l] for l in out_labels] + [col[l] for l in out_labels]
    contracted = np.einsum(x.tensor_view(), x_sub, y.tensor_view(), y_sub, out_sub, optimize=True)
    d = layout_dim(factors)
    return LabeledOperator(factors, np.asarray(contracted).reshape(d, d))


def link_chain(operators: Sequence[LabeledOperator]) -> LabeledOperator:
    """Fold X_1 * (X_2 * (... * X_k)) from the right."""
    if not operators:
        raise ShapeMismatchError("link chain needs at least one operator")
    result = operators[-1]
    for op in reversed(operators[:-1]):
        result = link_product(op, result)
    return result


def compress(x: LabeledOperator, assignment: dict[FactorLabel, int]) -> LabeledOperator:
    """q x q for the central projection q selecting the given blocks of the given factors."""
    diag = np.ones(1)
    for factor in x.factors:
        if factor.label in assignment:
            diag = np.kron(diag, factor.shape.block_projector(assignment[factor.label]))
        else:
            diag = np.kron(diag, np.ones(factor.shape.dim))
    return x.with_matrix(diag[:, None] * x.matrix * diag[None, :])


def embed_identity(x: LabeledOperator, factors: Iterable, order: Optional[Sequence[FactorLabel]] = None) -> LabeledOperator:
    """I_factors x X, optionally permuted into ``order``."""
    result = tensor(identity_operator(factors), x)
    return permute(result, order) if order is not None else result
