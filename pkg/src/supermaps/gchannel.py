"""
Generalized channels, POVMs and instruments with respect to a section K = J n S(A).

A section is carried as a subspace J, a designated state rho in K of maximal support and a
scale s: the maps considered act on s*K, so a cp map is a generalized channel when
Tr_B X lies in I/s + (K^T)^perp. The channel section uses s = t_{B_0}, which makes its
members the Choi matrices of channels.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from loguru import logger

from src.core.config import settings
from src.core.exceptions import (
    DecompositionError,
    MembershipError,
    NotHermitianError,
    NotPositiveError,
    ShapeMismatchError,
)
from src.core.results import Verdict, failed, passed
from src.linalg.algebra import AlgebraShape, hermitian_part, is_psd, min_eigenvalue, pinv_sqrt, psd_sqrt, support_of
from src.linalg.choi import CpMapChoi, is_cp
from src.linalg.subspace import (
    Subspace,
    component_norm,
    default_state,
    preimage_under_partial_trace,
    section_contains,
    section_span,
    span,
)
from src.linalg.tensor import (
    Factor,
    FactorLabel,
    Layout,
    LabeledOperator,
    OperatorLike,
    as_labeled,
    as_layout,
    compress,
    labels_of,
    layout_coordinates,
    layout_dim,
    layout_mask,
    partial_trace,
    permute,
    tracial_operator,
)


def _tol(tol: Optional[float]) -> float:
    return settings.tol if tol is None else tol


def _on_layout(x: OperatorLike, factors: Layout) -> LabeledOperator:
    x = as_labeled(x, factors[0].label if len(factors) == 1 else 0)
    if set(x.labels) != set(labels_of(factors)):
        raise ShapeMismatchError(f"operator labels {list(x.labels)} do not match {list(labels_of(factors))}")
    x = permute(x, labels_of(factors))
    if x.factors != factors:
        raise ShapeMismatchError("operator shapes differ from the section algebra")
    return x


@dataclass(frozen=True, eq=False)
class SectionSpec:
    """A section K = J n S(A) given by (J, rho, scale)."""

    subspace: Subspace
    rho: LabeledOperator
    scale: float = 1.0

    def __post_init__(self):
        tol = settings.tol
        rho = _on_layout(self.rho, self.subspace.factors)
        if self.scale <= 0:
            raise MembershipError(f"section scale must be positive, got {self.scale}")
        if not self.subspace.contains(rho, tol):
            raise MembershipError("designated state does not lie in J")
        if not is_psd(rho.matrix, tol):
            raise NotPositiveError("designated state is not positive")
        if abs(rho.trace() - 1.0) > tol * max(1.0, rho.norm()):
            raise MembershipError(f"designated state has trace {rho.trace().real:.6g}, expected 1")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "scale", float(self.scale))

    # -- constructors -------------------------------------------------------

    @classmethod
    def full(cls, factors: Iterable) -> "SectionSpec":
        """The whole state space."""
        factors = as_layout(factors)
        return cls(Subspace.full(factors), tracial_operator(factors))

    @classmethod
    def channel_section(
        cls,
        input_shape: AlgebraShape,
        output_shape: AlgebraShape,
        input_label: FactorLabel = 0,
        output_label: FactorLabel = 1,
    ) -> "SectionSpec":
        """Choi matrices of channels B_0 -> B_1: J = Tr_{B_1}^{-1}([I_{B_0}]), scale t_{B_0}."""
        b0, b1 = Factor(input_label, input_shape), Factor(output_label, output_shape)
        factors = (b1, b0)
        j = preimage_under_partial_trace(Subspace.scalars((b0,)), factors)
        return cls(j, tracial_operator(factors), float(input_shape.unit_trace))

    @classmethod
    def fixed_statistics(cls, elements: Sequence[OperatorLike], rho: OperatorLike) -> "SectionSpec":
        """States with the statistics of rho under the POVM ``elements``: Tr(E_i s) = Tr(E_i rho)."""
        elements = [as_labeled(e) for e in elements]
        factors = elements[0].factors
        rho = _on_layout(rho, factors)
        identity = np.eye(layout_dim(factors))
        constraints = []
        for e in elements:
            e = _on_layout(e, factors)
            weight = np.trace(e.matrix @ rho.matrix)
            constraints.append(e.with_matrix(e.matrix - weight * identity))
        j = span(constraints, factors).orthocomplement()
        return cls(j, rho)

    @classmethod
    def from_subspace(cls, j: Subspace, rho: Optional[OperatorLike] = None, scale: float = 1.0) -> "SectionSpec":
        return cls(j, default_state(j) if rho is None else rho, scale)

    # -- derived ------------------------------------------------------------

    @property
    def factors(self) -> Layout:
        return self.subspace.factors

    @property
    def labels(self) -> tuple[FactorLabel, ...]:
        return self.subspace.labels

    @cached_property
    def span(self) -> Subspace:
        """[K]."""
        return section_span(self.subspace, self.rho)

    @cached_property
    def span_transposed(self) -> Subspace:
        return self.span.transpose()

    @cached_property
    def tau_in_k(self) -> bool:
        return self.subspace.contains(tracial_operator(self.factors))

    def unit(self) -> LabeledOperator:
        """I/scale, the target of Tr_B X for generalized channels."""
        return LabeledOperator(self.factors, np.eye(layout_dim(self.factors)) / self.scale)

    def contains(self, x: OperatorLike, tol: Optional[float] = None) -> bool:
        """x in K (trace one)."""
        return section_contains(self.subspace, x, tol)


def _check_inputs(x: CpMapChoi, k: SectionSpec):
    if set(x.input_labels) != set(k.labels):
        raise ShapeMismatchError(f"map inputs {list(x.input_labels)} differ from section labels {list(k.labels)}")
    for f in x.inputs:
        if f not in k.factors:
            raise ShapeMismatchError(f"input factor {f.label} has a different algebra than the section")


def _input_marginal(x: CpMapChoi, k: SectionSpec) -> LabeledOperator:
    return permute(partial_trace(x.choi, x.output_labels), k.labels)


def is_generalized_channel(x: CpMapChoi, k: SectionSpec, tol: Optional[float] = None) -> Verdict:
    """X >= 0 and Tr_B X in I/scale + (K^T)^perp."""
    tol = _tol(tol)
    _check_inputs(x, k)
    if not is_cp(x, tol):
        return failed("complete positivity", _negativity(x.choi))
    marginal = _input_marginal(x, k)
    residual = k.span_transposed.component(marginal - k.unit())
    bound = tol * max(1.0, marginal.norm())
    if residual > bound:
        return failed("trace condition Tr_B X in I + (K^T)^perp", residual)
    return passed("generalized channel", residual)


def _negativity(x: LabeledOperator) -> float:
    try:
        return max(0.0, -min_eigenvalue(hermitian_part(x.matrix, 1.0)))
    except NotHermitianError:
        return float("inf")


def are_equivalent(x1: CpMapChoi, x2: CpMapChoi, k: SectionSpec, tol: Optional[float] = None) -> Verdict:
    """X1 - X2 in B x (K^T)^perp, i.e. both maps agree on K."""
    tol = _tol(tol)
    for name, x in (("first", x1), ("second", x2)):
        if not is_generalized_channel(x, k, tol):
            raise MembershipError(f"{name} map is not a generalized channel for this section")
    if set(x1.output_labels) != set(x2.output_labels):
        raise ShapeMismatchError("maps have different outputs")
    difference = x1.choi - x2.choi
    residual = component_norm(difference, k.span_transposed)
    bound = tol * max(1.0, x1.choi.norm())
    if residual > bound:
        return failed("difference in B x (K^T)^perp", residual)
    return passed("equivalent", residual)


@dataclass(frozen=True, eq=False)
class GeneralizedPovm:
    """Positive elements M_1..M_m summing into I/scale + K^perp."""

    elements: tuple[LabeledOperator, ...]

    def __post_init__(self):
        elements = tuple(as_labeled(e) for e in self.elements)
        if not elements:
            raise ShapeMismatchError("a POVM needs at least one element")
        factors = elements[0].factors
        elements = tuple(_on_layout(e, factors) for e in elements)
        for j, e in enumerate(elements):
            if not is_psd(e.matrix):
                raise NotPositiveError(f"POVM element {j} is not positive")
        object.__setattr__(self, "elements", elements)

    @property
    def outcome_count(self) -> int:
        return len(self.elements)

    @property
    def factors(self) -> Layout:
        return self.elements[0].factors

    def total(self) -> LabeledOperator:
        result = self.elements[0]
        for e in self.elements[1:]:
            result = result + e
        return result

    def to_channel(self, outcome_label: Optional[FactorLabel] = None) -> CpMapChoi:
        """a -> sum_j Tr(M_j a)|j><j|, with Choi matrix sum_j |j><j| x M_j^T."""
        if outcome_label is None:
            outcome_label = max(labels_of(self.factors)) + 1
        m = self.outcome_count
        outcome = Factor(outcome_label, AlgebraShape.classical(m))
        choi = sum(np.kron(np.diag(np.eye(m)[j]), e.matrix.T) for j, e in enumerate(self.elements))
        return CpMapChoi(self.factors, (outcome,), LabeledOperator((outcome,) + self.factors, choi))

    @classmethod
    def from_channel(cls, x: CpMapChoi) -> "GeneralizedPovm":
        if len(x.outputs) != 1 or not x.outputs[0].shape.is_classical:
            raise ShapeMismatchError("a POVM channel has a single classical output")
        label = x.outputs[0].label
        parts = instrument_components(x.choi, label)
        return cls(tuple(p.with_matrix(p.matrix.T) for p in parts))


def is_generalized_povm(m: GeneralizedPovm, k: SectionSpec, tol: Optional[float] = None) -> Verdict:
    """sum_j M_j in I/scale + K^perp."""
    tol = _tol(tol)
    total = _on_layout(m.total(), k.factors)
    residual = k.span.component(total - k.unit())
    if residual > tol * max(1.0, total.norm()):
        return failed("normalization sum_j M_j in I + K^perp", residual)
    return passed("generalized POVM", residual)


def povm_equivalent(m: GeneralizedPovm, n: GeneralizedPovm, k: SectionSpec, tol: Optional[float] = None) -> Verdict:
    """M_j - N_j in K^perp for every j."""
    tol = _tol(tol)
    if m.outcome_count != n.outcome_count:
        raise ShapeMismatchError(f"outcome counts differ: {m.outcome_count} vs {n.outcome_count}")
    worst, where = 0.0, None
    for j, (a, b) in enumerate(zip(m.elements, n.elements)):
        a = _on_layout(a, k.factors)
        residual = k.span.component(a - b)
        if residual > worst:
            worst, where = residual, j
    if worst > tol * max(1.0, max(e.norm() for e in m.elements)):
        return failed(f"M_{where} - N_{where} in K^perp", worst)
    return passed("equivalent POVMs", worst)


def instrument_components(choi: LabeledOperator, outcome_label: FactorLabel) -> list[LabeledOperator]:
    """X_j with X = sum_j |j><j| x X_j along a classical factor."""
    factor = choi.factor(outcome_label)
    if not factor.shape.is_classical:
        raise ShapeMismatchError(f"factor {outcome_label} is not classical")
    return [
        partial_trace(compress(choi, {outcome_label: j}), [outcome_label])
        for j in range(len(factor.shape.blocks))
    ]


def is_generalized_instrument(
    x: CpMapChoi,
    k: SectionSpec,
    outcomes: int,
    outcome_label: Optional[FactorLabel] = None,
    tol: Optional[float] = None,
) -> Verdict:
    """X >= 0 on C^m x B(K_1) x A and sum_j X_j is a generalized channel."""
    tol = _tol(tol)
    label = x.output_labels[0] if outcome_label is None else outcome_label
    factor = x.choi.factor(label)
    if factor.shape != AlgebraShape.classical(outcomes):
        if outcomes == 1:
            return is_generalized_channel(x, k, tol)
        raise ShapeMismatchError(f"output factor {label} is not C^{outcomes}")
    if label not in x.output_labels:
        raise ShapeMismatchError(f"factor {label} is not an output")
    if not is_cp(x, tol):
        return failed("complete positivity", _negativity(x.choi))
    rest = [l for l in x.output_labels if l != label]
    if not rest:
        raise ShapeMismatchError("an instrument needs a quantum output besides the outcome factor")
    summed = CpMapChoi.from_operator(partial_trace(x.choi, [label]), rest)
    verdict = is_generalized_channel(summed, k, tol)
    if not verdict:
        return failed(f"summed instrument: {verdict.condition}", verdict.residual)
    return passed("generalized instrument", verdict.residual)


def _fresh_factors(factors: Layout, labels: Optional[Sequence[FactorLabel]]) -> Layout:
    if labels is None:
        start = max(labels_of(factors)) + 1
        labels = range(start, start + len(factors))
    labels = list(labels)
    if len(labels) != len(factors):
        raise ShapeMismatchError("need one output label per input factor")
    return tuple(Factor(label, f.shape) for label, f in zip(labels, factors))


def conjugation_choi(root: np.ndarray, inputs: Layout, outputs: Layout) -> LabeledOperator:
    """Choi matrix of a -> r a r* for a block-diagonal r (masked |vec r><vec r|)."""
    vec = np.asarray(root).ravel()
    choi = np.outer(vec, vec.conj()) * layout_mask(outputs + inputs)
    return LabeledOperator(outputs + inputs, choi)


def make_simple(
    c: OperatorLike,
    k: SectionSpec,
    output_labels: Optional[Sequence[FactorLabel]] = None,
    tol: Optional[float] = None,
) -> CpMapChoi:
    """Choi matrix of chi_c(a) = c^{1/2} a c^{1/2} for c in (I/scale + K^perp) n A^+."""
    tol = _tol(tol)
    c = _on_layout(c, k.factors)
    try:
        positive = is_psd(c.matrix, tol)
    except NotHermitianError as e:
        raise MembershipError(f"simple-channel parameter is not Hermitian: {e}") from e
    if not positive:
        raise MembershipError("simple-channel parameter is not positive")
    residual = k.span.component(c - k.unit())
    if residual > tol * max(1.0, c.norm()):
        raise MembershipError(f"simple-channel parameter is outside I + K^perp (residual {residual:.3e})")
    outputs = _fresh_factors(k.factors, output_labels)
    root = psd_sqrt(hermitian_part(c.matrix, tol))
    return CpMapChoi(k.factors, outputs, conjugation_choi(root, k.factors, outputs))


def precompose_simple(channel: CpMapChoi, c: OperatorLike, tol: Optional[float] = None) -> CpMapChoi:
    """Choi matrix of Lambda o chi_c: (I x (c^{1/2})^T) X_Lambda (I x (c^{1/2})^T)."""
    c = _on_layout(c, channel.inputs)
    root = psd_sqrt(hermitian_part(c.matrix, settings.recheck_tol(tol))).T
    side = np.kron(np.eye(channel.output_dim), root)
    return CpMapChoi(channel.inputs, channel.outputs, channel.choi.with_matrix(side @ channel.choi.matrix @ side))


@dataclass(frozen=True, eq=False)
class SimpleFactorization:
    """Phi = Lambda o chi_c with Lambda a channel extending Lambda_p from A_p."""

    c: LabeledOperator
    support: LabeledOperator
    restricted: CpMapChoi
    channel: CpMapChoi
    residual: float

    def recompose(self) -> CpMapChoi:
        return precompose_simple(self.channel, self.c)


def factor_simple(x: CpMapChoi, k: SectionSpec, tol: Optional[float] = None) -> SimpleFactorization:
    """Split a generalized channel as Lambda o chi_c with c = Phi*(I_B)."""
    tol = _tol(tol)
    verdict = is_generalized_channel(x, k, tol)
    if not verdict:
        raise MembershipError(f"not a generalized channel: {verdict.condition} (residual {verdict.residual:.3e})")
    marginal = partial_trace(x.choi, x.output_labels)
    c = marginal.with_matrix(hermitian_part(marginal.matrix, tol).T)
    inverse_root = pinv_sqrt(c.matrix, tol).T
    side = np.kron(np.eye(x.output_dim), inverse_root)
    restricted = x.choi.with_matrix(side @ x.choi.matrix @ side)
    projection, rank = support_of(c.matrix, tol)
    free = tracial_operator(x.outputs).matrix
    extension = np.kron(free, (np.eye(x.input_dim) - projection).T)
    channel = CpMapChoi(x.inputs, x.outputs, restricted.with_matrix(restricted.matrix + extension))
    restricted_map = CpMapChoi(x.inputs, x.outputs, restricted)
    rebuilt = precompose_simple(channel, c, tol)
    residual = float(np.linalg.norm(rebuilt.choi.matrix - x.choi.matrix))
    logger.debug(f"simple factorization: rank(c) = {rank}, recomposition residual {residual:.3e}")
    if residual > settings.recheck_tol(tol) * max(1.0, x.choi.norm()):
        raise DecompositionError(f"recomposition residual {residual:.3e} exceeds tolerance")
    return SimpleFactorization(c, c.with_matrix(projection), restricted_map, channel, residual)


def fixed_statistics_coefficients(
    x: CpMapChoi, elements: Sequence[OperatorLike], tol: Optional[float] = None
) -> tuple[np.ndarray, float]:
    """Least-squares c_i with Tr_B X = sum_i c_i E_i^T, and the fit residual."""
    marginal = partial_trace(x.choi, x.output_labels)
    coords = layout_coordinates(marginal.factors)
    columns = []
    for e in elements:
        e = _on_layout(e, marginal.factors)
        columns.append(e.matrix.T.ravel()[coords])
    target = marginal.matrix.ravel()[coords]
    design = np.stack(columns, axis=1)
    coefficients, *_ = np.linalg.lstsq(design, target, rcond=None)
    residual = float(np.linalg.norm(design @ coefficients - target))
    return coefficients.real, residual
