"""
Choi correspondence for maps between finite-dimensional C*-algebras.

The Choi matrix of T: A -> B is X_T = (T x id)(Psi) in B x A (outputs first), and
T_X(a) = Tr_A[(I_B x a^T) X].
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Iterable, Optional, Sequence

import numpy as np
from loguru import logger

from src.core.config import settings
from src.core.exceptions import NotHermitianError, NotPositiveError, ShapeMismatchError
from src.linalg.algebra import AlgebraShape, eigh_desc, hermitian_part, is_psd
from src.linalg.tensor import (
    Factor,
    FactorLabel,
    Layout,
    LabeledOperator,
    OperatorLike,
    as_labeled,
    as_layout,
    identity_operator,
    labels_of,
    layout_coordinates,
    layout_dim,
    link_product,
    partial_trace,
    permute,
)


@dataclass(frozen=True, eq=False)
class CpMapChoi:
    """A linear map given by its Choi matrix on outputs x inputs."""

    inputs: Layout
    outputs: Layout
    choi: LabeledOperator

    def __post_init__(self):
        inputs, outputs = as_layout(self.inputs), as_layout(self.outputs)
        if set(labels_of(inputs)) & set(labels_of(outputs)):
            raise ShapeMismatchError("input and output labels must be disjoint")
        if self.choi.factors != outputs + inputs:
            raise ShapeMismatchError(
                f"Choi factors {list(self.choi.labels)} do not match outputs {list(labels_of(outputs))} "
                f"followed by inputs {list(labels_of(inputs))}"
            )
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "outputs", outputs)

    @classmethod
    def from_operator(cls, choi: LabeledOperator, output_labels: Sequence[FactorLabel]) -> "CpMapChoi":
        """Split a labeled operator into outputs (the given labels) and inputs (the rest)."""
        output_labels = list(output_labels)
        input_labels = [label for label in choi.labels if label not in output_labels]
        choi = permute(choi, output_labels + input_labels)
        n_out = len(output_labels)
        return cls(choi.factors[n_out:], choi.factors[:n_out], choi)

    @property
    def input_labels(self) -> tuple[FactorLabel, ...]:
        return labels_of(self.inputs)

    @property
    def output_labels(self) -> tuple[FactorLabel, ...]:
        return labels_of(self.outputs)

    @property
    def input_dim(self) -> int:
        return layout_dim(self.inputs)

    @property
    def output_dim(self) -> int:
        return layout_dim(self.outputs)


def align_input(m: CpMapChoi, a: OperatorLike) -> LabeledOperator:
    """Label an algebra element as the map's input, or reorder a labeled one to match."""
    if not isinstance(a, LabeledOperator):
        if len(m.inputs) != 1:
            raise ShapeMismatchError("a plain algebra element can only feed a single-factor input")
        a = as_labeled(a, m.inputs[0].label)
    if set(a.labels) != set(m.input_labels):
        raise ShapeMismatchError(f"argument labels {list(a.labels)} differ from input labels {list(m.input_labels)}")
    a = permute(a, m.input_labels)
    if a.factors != m.inputs:
        raise ShapeMismatchError("argument shapes differ from the input algebra")
    return a


def apply_map(m: CpMapChoi, a: OperatorLike) -> LabeledOperator:
    """T_X(a), computed as the link product X * a."""
    return link_product(m.choi, align_input(m, a))


def _choi_from_columns(columns: np.ndarray, inputs: Layout, outputs: Layout) -> LabeledOperator:
    d_in, d_out = layout_dim(inputs), layout_dim(outputs)
    in_coords, out_coords = layout_coordinates(inputs), layout_coordinates(outputs)
    full = np.zeros((d_out * d_out, d_in * d_in), dtype=complex)
    full[np.ix_(out_coords, in_coords)] = columns
    # [o, o', i, j] -> [o, i, o', j]
    tensor4 = full.reshape(d_out, d_out, d_in, d_in).transpose(0, 2, 1, 3)
    return LabeledOperator(outputs + inputs, tensor4.reshape(d_out * d_in, d_out * d_in))


def choi_of_action(action: np.ndarray, inputs: Iterable, outputs: Iterable) -> CpMapChoi:
    """Choi matrix of the map whose matrix on block coordinates is ``action``.

    Block coordinates are the entries allowed by the block pattern, in row-major order.
    """
    inputs, outputs = as_layout(inputs), as_layout(outputs)
    action = np.asarray(action, dtype=complex)
    expected = (len(layout_coordinates(outputs)), len(layout_coordinates(inputs)))
    if action.shape != expected:
        raise ShapeMismatchError(f"action matrix must be {expected[0]}x{expected[1]}, got {action.shape}")
    return CpMapChoi(inputs, outputs, _choi_from_columns(action, inputs, outputs))


def choi_of_function(f: Callable[[np.ndarray], np.ndarray], inputs: Iterable, outputs: Iterable) -> CpMapChoi:
    """Choi matrix of a map given as a function on full matrices."""
    inputs, outputs = as_layout(inputs), as_layout(outputs)
    d_in = layout_dim(inputs)
    in_coords, out_coords = layout_coordinates(inputs), layout_coordinates(outputs)
    columns = np.zeros((len(out_coords), len(in_coords)), dtype=complex)
    for k, flat in enumerate(in_coords):
        unit = np.zeros((d_in, d_in), dtype=complex)
        unit.flat[flat] = 1.0
        columns[:, k] = np.asarray(f(unit), dtype=complex).ravel()[out_coords]
    return CpMapChoi(inputs, outputs, _choi_from_columns(columns, inputs, outputs))


def action_matrix(m: CpMapChoi) -> np.ndarray:
    """Matrix of the map on block coordinates (inverse of ``choi_of_action``)."""
    d_in, d_out = m.input_dim, m.output_dim
    tensor4 = m.choi.matrix.reshape(d_out, d_in, d_out, d_in).transpose(0, 2, 1, 3)
    full = tensor4.reshape(d_out * d_out, d_in * d_in)
    return full[np.ix_(layout_coordinates(m.outputs), layout_coordinates(m.inputs))]


def identity_channel(shape: AlgebraShape, input_label: FactorLabel = 0, output_label: FactorLabel = 1) -> CpMapChoi:
    """Choi matrix Psi of id on the algebra (restricted to the block pattern)."""
    factor_in, factor_out = Factor(input_label, shape), Factor(output_label, shape)
    n = len(layout_coordinates((factor_in,)))
    return choi_of_action(np.eye(n), (factor_in,), (factor_out,))


def compose(second: CpMapChoi, first: CpMapChoi) -> CpMapChoi:
    """Choi matrix of second o first, via the link product over first's outputs."""
    if set(first.output_labels) != set(second.input_labels):
        raise ShapeMismatchError("outputs of the first map must be the inputs of the second")
    choi = link_product(second.choi, first.choi)
    return CpMapChoi(first.inputs, second.outputs, choi)


def is_cp(m: CpMapChoi, tol: Optional[float] = None) -> bool:
    try:
        return is_psd(m.choi.matrix, tol)
    except NotHermitianError:
        return False


def tp_residual(m: CpMapChoi) -> float:
    reduced = partial_trace(m.choi, m.output_labels)
    return float(np.linalg.norm(reduced.matrix - np.eye(m.input_dim)))


def is_tp(m: CpMapChoi, tol: Optional[float] = None) -> bool:
    tol = settings.tol if tol is None else tol
    return tp_residual(m) <= tol * max(1.0, np.sqrt(m.input_dim))


def adjoint_map(m: CpMapChoi) -> CpMapChoi:
    """Choi matrix of the Hilbert-Schmidt adjoint: entries conj(X[(o,i),(o',j)]) rearranged as (i,o),(i',o')."""
    swapped = permute(m.choi.conj(), m.input_labels + m.output_labels)
    return CpMapChoi(m.outputs, m.inputs, swapped)


def transpose_map(m: CpMapChoi) -> CpMapChoi:
    """S^T(a) = S(a^T)^T, whose Choi matrix is X_S^T."""
    return CpMapChoi(m.inputs, m.outputs, m.choi.with_matrix(m.choi.matrix.T))


def kraus(m: CpMapChoi, tol: Optional[float] = None) -> list[np.ndarray]:
    """Kraus operators from the eigenpairs of the Choi matrix; their number is rank(X)."""
    tol = settings.tol if tol is None else tol
    if not is_cp(m, tol):
        raise NotPositiveError("Kraus form requires a completely positive map")
    values, vectors = eigh_desc(hermitian_part(m.choi.matrix, tol))
    if values.size == 0 or values[0] <= 0:
        return []
    rank = int(np.count_nonzero(values > tol * values[0]))
    ops = [np.sqrt(values[k]) * vectors[:, k].reshape(m.output_dim, m.input_dim) for k in range(rank)]
    logger.debug(f"Kraus rank {rank} for map {list(m.input_labels)} -> {list(m.output_labels)}")
    return ops


@dataclass(frozen=True, eq=False)
class StinespringDilation:
    """T(a) = V*(a x I_r)V with V: H_out -> H_in x C^r."""

    isometry: np.ndarray
    ancilla_dim: int
    input_dim: int
    output_dim: int

    def apply(self, a: np.ndarray) -> np.ndarray:
        lifted = np.kron(np.asarray(a), np.eye(self.ancilla_dim))
        return self.isometry.conj().T @ lifted @ self.isometry

    def is_isometry(self, tol: Optional[float] = None) -> bool:
        tol = settings.tol if tol is None else tol
        gram = self.isometry.conj().T @ self.isometry
        return float(np.linalg.norm(gram - np.eye(self.output_dim))) <= tol * max(1.0, np.sqrt(self.output_dim))


def minimal_stinespring(m: CpMapChoi, tol: Optional[float] = None) -> StinespringDilation:
    """Dilation with ancilla dimension rank(X): V = sum_k K_k^* x |k>."""
    ops = kraus(m, tol)
    r = len(ops)
    v = np.zeros((m.input_dim * max(r, 1), m.output_dim), dtype=complex)
    for k, op in enumerate(ops):
        v[k::r, :] = op.conj().T
    return StinespringDilation(v, max(r, 1), m.input_dim, m.output_dim)


def maximally_entangled(shape: AlgebraShape, first_label: FactorLabel, second_label: FactorLabel) -> LabeledOperator:
    """Psi = sum_ij |i><j| x |i><j| on two copies of the algebra."""
    return identity_channel(shape, second_label, first_label).choi


def unit_preserving_residual(m: CpMapChoi) -> float:
    """||T(I) - I||, used for unital checks of adjoints."""
    image = apply_map(m, identity_operator(m.inputs))
    return float(np.linalg.norm(image.matrix - np.eye(m.output_dim)))
