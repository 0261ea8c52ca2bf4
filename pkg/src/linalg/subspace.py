"""
Operator subspaces under the Hilbert-Schmidt inner product.

A subspace is stored as an orthonormal column basis in block coordinates: the matrix entries
permitted by the block pattern of its layout, in row-major order. In these coordinates the
trace inner product is the standard one, so projectors, complements and adjoint images are
plain dense linear algebra.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Iterable, Optional, Sequence

import numpy as np
from loguru import logger
from scipy.linalg import null_space

from src.core.config import settings
from src.core.exceptions import MembershipError, NotHermitianError, NotPositiveError, ShapeMismatchError
from src.linalg.algebra import AlgebraShape, hermitian_part, is_psd, support_of
from src.linalg.choi import CpMapChoi, action_matrix
from src.linalg.tensor import (
    FactorLabel,
    Layout,
    LabeledOperator,
    OperatorLike,
    as_labeled,
    as_layout,
    labels_of,
    layout_coordinates,
    layout_dim,
    layout_dims,
    permute as permute_operator,
)


def _rank_tol(tol: Optional[float]) -> float:
    return settings.rank_cutoff(tol)


@lru_cache(maxsize=512)
def _coordinate_lookup(factors: Layout) -> np.ndarray:
    d = layout_dim(factors)
    lookup = np.full(d * d, -1, dtype=np.int64)
    coords = layout_coordinates(factors)
    lookup[coords] = np.arange(len(coords))
    lookup.setflags(write=False)
    return lookup


def _orthonormal_columns(columns: np.ndarray, tol: Optional[float]) -> np.ndarray:
    if columns.shape[1] == 0:
        return columns.astype(complex)
    u, s, _ = np.linalg.svd(columns, full_matrices=False)
    if s.size == 0 or s[0] == 0:
        return np.zeros((columns.shape[0], 0), dtype=complex)
    rank = int(np.count_nonzero(s > _rank_tol(tol) * s[0]))
    return u[:, :rank]


@dataclass(frozen=True, eq=False)
class Subspace:
    """A subspace of the algebra on ``factors`` with orthonormal coordinate columns."""

    factors: Layout
    columns: np.ndarray

    def __post_init__(self):
        factors = as_layout(self.factors)
        columns = np.asarray(self.columns, dtype=complex)
        n = len(layout_coordinates(factors))
        if columns.ndim != 2 or columns.shape[0] != n:
            raise ShapeMismatchError(f"basis columns must have {n} rows, got shape {columns.shape}")
        columns.setflags(write=False)
        object.__setattr__(self, "factors", factors)
        object.__setattr__(self, "columns", columns)

    # -- constructors -------------------------------------------------------

    @classmethod
    def from_columns(cls, factors: Iterable, columns: np.ndarray, tol: Optional[float] = None) -> "Subspace":
        factors = as_layout(factors)
        return cls(factors, _orthonormal_columns(np.asarray(columns, dtype=complex), tol))

    @classmethod
    def full(cls, factors: Iterable) -> "Subspace":
        factors = as_layout(factors)
        return cls(factors, np.eye(len(layout_coordinates(factors)), dtype=complex))

    @classmethod
    def zero(cls, factors: Iterable) -> "Subspace":
        factors = as_layout(factors)
        return cls(factors, np.zeros((len(layout_coordinates(factors)), 0), dtype=complex))

    @classmethod
    def scalars(cls, factors: Iterable) -> "Subspace":
        """[I]."""
        factors = as_layout(factors)
        unit = np.eye(layout_dim(factors)).ravel()[layout_coordinates(factors)]
        return cls(factors, (unit / np.linalg.norm(unit))[:, None])

    # -- basic views --------------------------------------------------------

    @property
    def dim(self) -> int:
        return self.columns.shape[1]

    @property
    def ambient_dim(self) -> int:
        return self.columns.shape[0]

    @property
    def labels(self) -> tuple[FactorLabel, ...]:
        return labels_of(self.factors)

    @property
    def shape(self) -> AlgebraShape:
        if len(self.factors) != 1:
            raise ShapeMismatchError("subspace lives on several factors")
        return self.factors[0].shape

    def vector(self, x: OperatorLike) -> np.ndarray:
        """Block coordinates of ``x`` (reordered to this layout)."""
        x = as_labeled(x, self.factors[0].label if len(self.factors) == 1 else 0)
        if set(x.labels) != set(self.labels):
            raise ShapeMismatchError(f"operator labels {list(x.labels)} differ from subspace labels {list(self.labels)}")
        x = permute_operator(x, self.labels)
        if x.factors != self.factors:
            raise ShapeMismatchError("operator shapes differ from the subspace algebra")
        return x.matrix.ravel()[layout_coordinates(self.factors)]

    def operator(self, vector: np.ndarray) -> LabeledOperator:
        d = layout_dim(self.factors)
        full = np.zeros(d * d, dtype=complex)
        full[layout_coordinates(self.factors)] = vector
        return LabeledOperator(self.factors, full.reshape(d, d))

    @property
    def basis(self) -> list[LabeledOperator]:
        return [self.operator(self.columns[:, k]) for k in range(self.dim)]

    def member_array(self) -> np.ndarray:
        """Basis elements as a (dim, D, D) array."""
        d = layout_dim(self.factors)
        full = np.zeros((d * d, self.dim), dtype=complex)
        full[layout_coordinates(self.factors)] = self.columns
        return full.T.reshape(self.dim, d, d)

    def projector(self) -> np.ndarray:
        return self.columns @ self.columns.conj().T

    def project(self, x: OperatorLike) -> LabeledOperator:
        v = self.vector(x)
        return self.operator(self.columns @ (self.columns.conj().T @ v))

    def component(self, x: OperatorLike) -> float:
        """Norm of the orthogonal projection of x onto the subspace."""
        return float(np.linalg.norm(self.columns.conj().T @ self.vector(x)))

    def residual(self, x: OperatorLike) -> float:
        v = self.vector(x)
        return float(np.linalg.norm(v - self.columns @ (self.columns.conj().T @ v)))

    def contains(self, x: OperatorLike, tol: Optional[float] = None) -> bool:
        tol = settings.tol if tol is None else tol
        v = self.vector(x)
        return self.residual(x) <= tol * max(1.0, float(np.linalg.norm(v)))

    # -- lattice ------------------------------------------------------------

    def _check(self, other: "Subspace") -> "Subspace":
        if set(other.labels) != set(self.labels):
            raise ShapeMismatchError(f"subspaces live on {list(self.labels)} and {list(other.labels)}")
        other = other.permute(self.labels)
        if other.factors != self.factors:
            raise ShapeMismatchError("subspaces live on different algebras")
        return other

    def orthocomplement(self) -> "Subspace":
        if self.dim == 0:
            return Subspace.full(self.factors)
        if self.dim == self.ambient_dim:
            return Subspace.zero(self.factors)
        return Subspace(self.factors, null_space(self.columns.conj().T))

    def join(self, other: "Subspace", tol: Optional[float] = None) -> "Subspace":
        other = self._check(other)
        return Subspace.from_columns(self.factors, np.hstack([self.columns, other.columns]), tol)

    def meet(self, other: "Subspace", tol: Optional[float] = None) -> "Subspace":
        other = self._check(other)
        return self.orthocomplement().join(other.orthocomplement(), tol).orthocomplement()

    __or__ = join
    __and__ = meet

    def distance(self, other: "Subspace") -> float:
        """Frobenius distance of the two orthogonal projectors."""
        other = self._check(other)
        return float(np.linalg.norm(self.projector() - other.projector()))

    def equals(self, other: "Subspace", tol: Optional[float] = None) -> bool:
        tol = settings.tol if tol is None else tol
        return self.distance(other) <= tol * np.sqrt(max(self.dim, other.dim, 1))

    def is_subspace_of(self, other: "Subspace", tol: Optional[float] = None) -> bool:
        tol = settings.tol if tol is None else tol
        other = self._check(other)
        leftover = self.columns - other.columns @ (other.columns.conj().T @ self.columns)
        return float(np.linalg.norm(leftover)) <= tol * np.sqrt(max(self.dim, 1))

    # -- structure maps -----------------------------------------------------

    def _index_map(self, old_flat_for_new: np.ndarray, new_factors: Layout) -> np.ndarray:
        lookup = _coordinate_lookup(self.factors)
        return lookup[old_flat_for_new[layout_coordinates(new_factors)]]

    def transpose(self) -> "Subspace":
        """J^T = {a^T : a in J}."""
        d = layout_dim(self.factors)
        flat = np.arange(d * d).reshape(d, d).T.ravel()
        return Subspace(self.factors, self.columns[self._index_map(flat, self.factors)])

    def adjoint(self) -> "Subspace":
        transposed = self.transpose()
        return Subspace(self.factors, transposed.columns.conj())

    def is_self_adjoint(self, tol: Optional[float] = None) -> bool:
        return self.adjoint().equals(self, tol)

    def permute(self, order: Sequence[FactorLabel]) -> "Subspace":
        order = list(order)
        if sorted(order) != sorted(self.labels):
            raise ShapeMismatchError(f"{order} is not a permutation of {list(self.labels)}")
        if tuple(order) == self.labels:
            return self
        perm = [self.labels.index(label) for label in order]
        k = len(self.factors)
        dims = layout_dims(self.factors)
        d = layout_dim(self.factors)
        flat = np.arange(d * d).reshape(dims + dims).transpose(perm + [k + p for p in perm]).ravel()
        new_factors = tuple(self.factors[p] for p in perm)
        return Subspace(new_factors, self.columns[self._index_map(flat, new_factors)])

    def tensor(self, other: "Subspace") -> "Subspace":
        """Span of {a x b}, on self.factors followed by other.factors."""
        if set(self.labels) & set(other.labels):
            raise ShapeMismatchError("tensor product of subspaces needs disjoint labels")
        factors = self.factors + other.factors
        d1, d2 = layout_dim(self.factors), layout_dim(other.factors)
        coords = layout_coordinates(factors)
        rows, cols = np.divmod(coords, d1 * d2)
        i1, i2 = np.divmod(rows, d2)
        j1, j2 = np.divmod(cols, d2)
        c1 = _coordinate_lookup(self.factors)[i1 * d1 + j1]
        c2 = _coordinate_lookup(other.factors)[i2 * d2 + j2]
        joint = self.columns[c1][:, :, None] * other.columns[c2][:, None, :]
        return Subspace(factors, joint.reshape(len(coords), self.dim * other.dim))


# ---------------------------------------------------------------------------
# Module-level operations
# ---------------------------------------------------------------------------


def span(ops: Sequence[OperatorLike], factors: Optional[Iterable] = None, tol: Optional[float] = None) -> Subspace:
    ops = [as_labeled(op) for op in ops]
    if factors is None:
        if not ops:
            raise ShapeMismatchError("cannot span an empty list without a layout")
        factors = ops[0].factors
    target = Subspace.zero(factors)
    if not ops:
        return target
    columns = np.stack([target.vector(op) for op in ops], axis=1)
    return Subspace.from_columns(target.factors, columns, tol)


def orthocomplement(j: Subspace) -> Subspace:
    return j.orthocomplement()


def join(j1: Subspace, j2: Subspace, tol: Optional[float] = None) -> Subspace:
    return j1.join(j2, tol)


def meet(j1: Subspace, j2: Subspace, tol: Optional[float] = None) -> Subspace:
    return j1.meet(j2, tol)


def _aligned_to(j: Subspace, factors: Layout) -> Subspace:
    if set(j.labels) != set(labels_of(factors)):
        raise ShapeMismatchError(f"subspace labels {list(j.labels)} do not match {list(labels_of(factors))}")
    j = j.permute(labels_of(factors))
    if j.factors != factors:
        raise ShapeMismatchError("subspace algebra differs from the map's algebra")
    return j


def preimage_under_map(s: CpMapChoi, j0: Subspace, tol: Optional[float] = None) -> Subspace:
    """S^{-1}(J0) = {a : S(a) in J0}."""
    j0 = _aligned_to(j0, s.outputs)
    m = action_matrix(s)
    off = m - j0.columns @ (j0.columns.conj().T @ m)
    if not np.any(off):
        return Subspace.full(s.inputs)
    return Subspace(s.inputs, null_space(off, rcond=_rank_tol(tol)))


def adjoint_image(s: CpMapChoi, j0: Subspace, tol: Optional[float] = None) -> Subspace:
    """S*(J0)."""
    j0 = _aligned_to(j0, s.outputs)
    return Subspace.from_columns(s.inputs, action_matrix(s).conj().T @ j0.columns, tol)


def _traced_factors(j0: Subspace, factors: Layout) -> Layout:
    traced = tuple(f for f in factors if f.label not in j0.labels)
    kept = tuple(f for f in factors if f.label in j0.labels)
    _aligned_to(j0, kept)
    return traced


def partial_trace_adjoint_image(j0: Subspace, factors: Iterable) -> Subspace:
    """S*(J0) = I x J0 for S the partial trace from ``factors`` onto J0's factors."""
    factors = as_layout(factors)
    traced = _traced_factors(j0, factors)
    if not traced:
        return j0.permute(labels_of(factors))
    return Subspace.scalars(traced).tensor(j0).permute(labels_of(factors))


def preimage_under_partial_trace(j0: Subspace, factors: Iterable) -> Subspace:
    """S^{-1}(J0) = (S*(J0^perp))^perp for S the partial trace onto J0's factors."""
    factors = as_layout(factors)
    return partial_trace_adjoint_image(j0.orthocomplement(), factors).orthocomplement()


def tilde(j: Subspace, tol: Optional[float] = None) -> Subspace:
    """[I] v (J^T)^perp."""
    return Subspace.scalars(j.factors).join(j.transpose().orthocomplement(), tol)


def component_norm(x: LabeledOperator, subspace: Subspace) -> float:
    """Norm of the projection of x onto (full algebra of the other factors) x subspace."""
    if subspace.dim == 0:
        return 0.0
    inner = list(subspace.labels)
    rest = [label for label in x.labels if label not in inner]
    xp = permute_operator(x, rest + inner)
    if xp.factors[len(rest):] != subspace.factors:
        raise ShapeMismatchError("subspace factors differ from the operator's factors")
    d_rest = layout_dim(xp.factors[: len(rest)])
    d_in = layout_dim(subspace.factors)
    x4 = xp.matrix.reshape(d_rest, d_in, d_rest, d_in)
    partial = np.einsum("atbs,kts->kab", x4, subspace.member_array().conj(), optimize=True)
    return float(np.linalg.norm(partial))


def section_contains(j: Subspace, x: OperatorLike, tol: Optional[float] = None) -> bool:
    """x in J, x >= 0 and Tr x = 1."""
    tol = settings.tol if tol is None else tol
    x = as_labeled(x, j.factors[0].label if len(j.factors) == 1 else 0)
    if not j.contains(x, tol):
        return False
    try:
        if not is_psd(x.matrix, tol):
            return False
    except NotHermitianError:
        return False
    return abs(x.trace() - 1.0) <= tol * max(1.0, x.norm())


def _compression_subspace(p: np.ndarray, factors: Layout) -> Subspace:
    """A_p = {p a p}, the range of an orthogonal projection on coordinates."""
    coords = layout_coordinates(factors)
    m = np.kron(p, p.T)[np.ix_(coords, coords)]
    values, vectors = np.linalg.eigh((m + m.conj().T) / 2)
    return Subspace(factors, vectors[:, values > 0.5])


def section_span(j: Subspace, rho: OperatorLike, tol: Optional[float] = None) -> Subspace:
    """[K] = J ^ A_p with p = supp(rho), rho a state of maximal support in K."""
    tol = settings.tol if tol is None else tol
    rho = as_labeled(rho, j.factors[0].label if len(j.factors) == 1 else 0)
    if not j.contains(rho, tol):
        raise MembershipError("designated state does not lie in the subspace")
    if not is_psd(rho.matrix, tol):
        raise NotPositiveError("designated state is not positive")
    rho = permute_operator(rho, j.labels)
    p, rank = support_of(hermitian_part(rho.matrix, tol), tol)
    if rank == rho.dim:
        return j
    logger.debug(f"designated state has rank {rank} < {rho.dim}; restricting the section span")
    return j.meet(_compression_subspace(p, j.factors), tol)


def default_state(j: Subspace, tol: Optional[float] = None) -> LabeledOperator:
    """Projection of the tracial state onto J, renormalized; fails when not a state.

    This heuristic finds a faithful element only when the projected tracial state stays
    positive; it is not complete.
    """
    tol = settings.tol if tol is None else tol
    d = layout_dim(j.factors)
    projected = j.project(LabeledOperator(j.factors, np.eye(d) / d))
    trace = projected.trace().real
    if trace <= tol:
        raise MembershipError("projected tracial state has no trace; supply a state explicitly")
    candidate = projected / trace
    candidate = candidate.with_matrix(hermitian_part(candidate.matrix, settings.recheck_tol(tol)))
    if not is_psd(candidate.matrix, tol):
        raise MembershipError("projected tracial state is not positive; supply a state explicitly")
    return candidate
