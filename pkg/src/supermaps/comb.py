"""
Generalized supermaps C_J(B_0, ..., B_n): the subspace tower, membership, application and
equivalence, plus the comb and tester special cases.

Factor order on A_n is B_n, ..., B_1 followed by the base layout B_0. Chain labels default to
consecutive integers after the largest base label, so a comb on shapes B_0..B_{2N-1} with a
single base factor carries label l on B_l.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Optional, Sequence

import numpy as np
from loguru import logger

from src.core.config import settings
from src.core.exceptions import (
    CrossCheckError,
    DimensionBudgetError,
    MembershipError,
    NotHermitianError,
    ShapeMismatchError,
)
from src.core.results import Verdict, failed, passed
from src.linalg.algebra import AlgebraShape, is_psd
from src.linalg.subspace import (
    Subspace,
    component_norm,
    partial_trace_adjoint_image,
    preimage_under_partial_trace,
    section_contains,
    tilde,
)
from src.linalg.tensor import (
    Factor,
    FactorLabel,
    Layout,
    LabeledOperator,
    OperatorLike,
    as_labeled,
    block_multi_indices,
    compress,
    identity_operator,
    labels_of,
    layout_dim,
    layout_trace,
    link_product,
    partial_trace,
    permute,
    tensor,
    tracial_operator,
)
from src.supermaps.gchannel import SectionSpec

METHODS = ("subspace", "chain", "both")


def _tol(tol: Optional[float]) -> float:
    return settings.tol if tol is None else tol


def _as_shape(shape) -> AlgebraShape:
    return shape if isinstance(shape, AlgebraShape) else AlgebraShape(tuple(shape))


@dataclass(frozen=True, eq=False)
class SupermapSpec:
    """A base section K over B_0 and a chain [B_1, ..., B_n].

    The supermap levels use K itself; a scale carried by the base section only matters to the
    generalized-channel functions.
    """

    base: SectionSpec
    chain: tuple[AlgebraShape, ...]
    chain_labels: tuple[FactorLabel, ...] = ()

    def __post_init__(self):
        chain = tuple(_as_shape(s) for s in self.chain)
        if not chain:
            raise ShapeMismatchError("a supermap chain needs at least one algebra")
        labels = tuple(self.chain_labels)
        if not labels:
            start = max(self.base.labels) + 1
            labels = tuple(range(start, start + len(chain)))
        if len(labels) != len(chain):
            raise ShapeMismatchError(f"{len(chain)} chain algebras but {len(labels)} labels")
        all_labels = labels + self.base.labels
        if len(set(all_labels)) != len(all_labels):
            raise ShapeMismatchError(f"chain labels {list(labels)} clash with each other or the base")
        object.__setattr__(self, "chain", chain)
        object.__setattr__(self, "chain_labels", labels)
        total = layout_dim(self.factors())
        if total > settings.max_total_dim:
            raise DimensionBudgetError(
                f"A_{self.n} has dimension {total}, above the budget of {settings.max_total_dim}"
            )

    # -- layout -------------------------------------------------------------

    @property
    def n(self) -> int:
        return len(self.chain)

    @property
    def base_factors(self) -> Layout:
        return self.base.factors

    def chain_factor(self, l: int) -> Factor:
        """B_l for 1 <= l <= n."""
        if not 1 <= l <= self.n:
            raise ShapeMismatchError(f"chain index {l} outside 1..{self.n}")
        return Factor(self.chain_labels[l - 1], self.chain[l - 1])

    def factors(self, level: Optional[int] = None) -> Layout:
        """Layout of A_level = B_level x ... x B_1 x B_0."""
        level = self.n if level is None else level
        return tuple(self.chain_factor(l) for l in range(level, 0, -1)) + self.base_factors

    def labels(self, level: Optional[int] = None) -> tuple[FactorLabel, ...]:
        return labels_of(self.factors(level))

    def level_labels(self, l: int) -> list[FactorLabel]:
        """Labels of B_l (several for a multi-factor base)."""
        return list(self.base.labels) if l == 0 else [self.chain_labels[l - 1]]

    def unit_trace(self, l: int) -> int:
        """t_{B_l}."""
        return layout_trace(self.base_factors) if l == 0 else self.chain[l - 1].unit_trace

    def constant(self, level: Optional[int] = None) -> int:
        """c_level = t_{B_{level-1}} t_{B_{level-3}} ..., with c_0 = 1."""
        level = self.n if level is None else level
        c = 1
        for l in range(level - 1, -1, -2):
            c *= self.unit_trace(l)
        return c

    def align(self, x: OperatorLike, level: Optional[int] = None) -> LabeledOperator:
        """Reorder a labeled operator to the layout of A_level."""
        target = self.factors(level)
        x = as_labeled(x, target[0].label if len(target) == 1 else 0)
        if set(x.labels) != set(labels_of(target)):
            raise ShapeMismatchError(f"operator labels {list(x.labels)} differ from A_{level} labels {list(labels_of(target))}")
        x = permute(x, labels_of(target))
        if x.factors != target:
            raise ShapeMismatchError("operator shapes differ from the supermap algebras")
        return x

    def truncated(self, level: int) -> "SupermapSpec":
        return SupermapSpec(self.base, self.chain[:level], self.chain_labels[:level])

    # -- the tower ----------------------------------------------------------

    @cached_property
    def tower(self) -> tuple[Subspace, ...]:
        """J_0 = [K] and J_l = Tr_{B_l}^{-1}(tilde J_{l-1})."""
        subspaces = [self.base.span]
        for level in range(1, self.n + 1):
            previous = tilde(subspaces[-1])
            subspaces.append(preimage_under_partial_trace(previous, self.factors(level)))
            logger.debug(f"J_{level}: dimension {subspaces[-1].dim} of {subspaces[-1].ambient_dim}")
        return tuple(subspaces)

    def subspace(self, level: Optional[int] = None) -> Subspace:
        return self.tower[self.n if level is None else level]

    def closed_form_subspace(self, level: Optional[int] = None) -> Subspace:
        """J_level through the alternating S^{-1} / S^* formulas, without tilde."""
        level = self.n if level is None else level
        j = tilde(self.tower[0]) if level % 2 else self.tower[0]
        for l in range(1, level + 1):
            if (level - l) % 2 == 0:
                j = preimage_under_partial_trace(j, self.factors(l))
            else:
                j = partial_trace_adjoint_image(j, self.factors(l))
        return j

    def tilde_identity_residual(self, level: int) -> float:
        """Projector distance between tilde(J_level) and S_level^*(J_{level-1})."""
        lifted = partial_trace_adjoint_image(self.tower[level - 1], self.factors(level))
        return tilde(self.tower[level]).distance(lifted)


def build_spec(
    base: SectionSpec,
    chain: Sequence,
    chain_labels: Optional[Sequence[FactorLabel]] = None,
    tol: Optional[float] = None,
) -> SupermapSpec:
    """Build and cross-check the tower over ``base`` and ``chain``."""
    tol = _tol(tol)
    if not base.tau_in_k:
        raise MembershipError("the tracial state is not in the base section")
    spec = SupermapSpec(base, tuple(chain), tuple(chain_labels or ()))
    j_n = spec.subspace()
    distance = j_n.distance(spec.closed_form_subspace())
    if distance > settings.recheck_tol(tol) * np.sqrt(max(j_n.dim, 1)):
        raise CrossCheckError(f"recursive and closed-form J_{spec.n} differ by {distance:.3e}")
    logger.info(f"built supermap tower: n = {spec.n}, dim A_n = {layout_dim(spec.factors())}, "
                f"dim J_n = {j_n.dim}, c_n = {spec.constant()}")
    return spec


def comb_spec(shapes: Sequence, outcomes: Optional[int] = None) -> SupermapSpec:
    """Spec over the full state space of B_0 with chain B_1..; a tester appends C^outcomes."""
    shapes = [_as_shape(s) for s in shapes]
    if len(shapes) < 2 or len(shapes) % 2:
        raise ShapeMismatchError(f"a comb needs an even number of algebras, got {len(shapes)}")
    base = SectionSpec.full((Factor(0, shapes[0]),))
    chain = shapes[1:] + ([AlgebraShape.classical(outcomes)] if outcomes is not None else [])
    return build_spec(base, chain)


# ---------------------------------------------------------------------------
# Membership
# ---------------------------------------------------------------------------


def membership_by_subspace(x: OperatorLike, spec: SupermapSpec, tol: Optional[float] = None, level: Optional[int] = None) -> Verdict:
    """X >= 0, X in J_n and Tr X = c_n."""
    tol = _tol(tol)
    level = spec.n if level is None else level
    x = spec.align(x, level)
    try:
        positive = is_psd(x.matrix, tol)
    except NotHermitianError:
        return failed("hermiticity", float(np.linalg.norm(x.matrix - x.matrix.conj().T)))
    if not positive:
        return failed("positivity")
    j = spec.subspace(level)
    residual = j.residual(x)
    if residual > tol * max(1.0, x.norm()):
        return failed(f"X in J_{level}", residual)
    c = spec.constant(level)
    deviation = abs(x.trace() - c)
    if deviation > tol * max(1.0, c):
        return failed(f"Tr X = c_{level} = {c}", deviation)
    return passed(f"member at level {level}", residual)


@dataclass(frozen=True, eq=False)
class ChainWitness:
    """Y^(0) = X, Y^(1), ... on A_n, A_{n-2}, ..."""

    levels: tuple[int, ...]
    operators: tuple[LabeledOperator, ...]

    def __len__(self) -> int:
        return len(self.operators)


def _insert_identity(labels: list[FactorLabel], like: LabeledOperator, x: LabeledOperator) -> LabeledOperator:
    """I on the given factors of ``like`` tensored with x, in the layout of ``like``."""
    factors = tuple(like.factor(label) for label in labels)
    return permute(tensor(identity_operator(factors), x), like.labels)


def membership_by_chain(
    x: OperatorLike, spec: SupermapSpec, tol: Optional[float] = None, level: Optional[int] = None
) -> tuple[Verdict, Optional[ChainWitness]]:
    """Extract Y^(m+1) = Tr_{B_{l-1}} Tr_{B_l} Y^(m) / t_{B_{l-1}} and re-verify each rung."""
    tol = _tol(tol)
    n = spec.n if level is None else level
    x = spec.align(x, n)
    try:
        positive = is_psd(x.matrix, tol)
    except NotHermitianError:
        return failed("hermiticity", rung=0), None
    if not positive:
        return failed("positivity", rung=0), None

    levels, operators = [n], [x]
    current = x
    rung = 0
    worst = 0.0
    while n - 2 * rung >= 2:
        l = n - 2 * rung
        traced = partial_trace(current, spec.level_labels(l))
        following = partial_trace(traced, spec.level_labels(l - 1)) / spec.unit_trace(l - 1)
        rebuilt = _insert_identity(spec.level_labels(l - 1), traced, following)
        residual = float(np.linalg.norm(traced.matrix - rebuilt.matrix))
        worst = max(worst, residual)
        if residual > tol * max(1.0, traced.norm()):
            return failed(f"Tr_B{l} Y^({rung}) = I_B{l - 1} x Y^({rung + 1})", residual, rung=rung), None
        rung += 1
        current = following
        levels.append(l - 2)
        operators.append(current)

    terminal = n - 2 * rung
    if terminal == 1:
        verdict = membership_by_subspace(current, spec, tol, level=1)
        if not verdict:
            return failed(f"terminal Y^({rung}) in C_J(B_0, B_1): {verdict.condition}", verdict.residual, rung=rung), None
    elif not section_contains(spec.base.subspace, current, tol):
        return failed(f"terminal Y^({rung}) in K", spec.base.subspace.residual(current), rung=rung), None
    return passed("chain conditions", worst), ChainWitness(tuple(levels), tuple(operators))


def check_membership(
    x: OperatorLike,
    spec: SupermapSpec,
    method: str = "subspace",
    tol: Optional[float] = None,
    level: Optional[int] = None,
) -> Verdict:
    """Membership by one characterization or both (reporting a disagreement)."""
    if method not in METHODS:
        raise ValueError(f"unknown membership method {method!r}")
    if method == "subspace":
        return membership_by_subspace(x, spec, tol, level)
    chain_verdict, _ = membership_by_chain(x, spec, tol, level)
    if method == "chain":
        return chain_verdict
    subspace_verdict = membership_by_subspace(x, spec, tol, level)
    if bool(subspace_verdict) != bool(chain_verdict):
        logger.error(
            f"membership characterizations disagree: subspace {bool(subspace_verdict)}, chain {bool(chain_verdict)}"
        )
        return failed(
            "characterizations disagree",
            max(subspace_verdict.residual, chain_verdict.residual),
            rung=chain_verdict.rung,
            subspace=subspace_verdict.condition,
            chain=chain_verdict.condition,
        )
    return chain_verdict if not chain_verdict else subspace_verdict


def is_comb(x: OperatorLike, shapes: Sequence, tol: Optional[float] = None, method: str = "subspace") -> Verdict:
    """Comb(B_0, ..., B_{2N-1}) = C(B_0, ..., B_{2N-1})."""
    return check_membership(x, comb_spec(shapes), method, tol)


def is_tester(x: OperatorLike, shapes: Sequence, outcomes: int, tol: Optional[float] = None, method: str = "subspace") -> Verdict:
    """N-testers: C(B_0, ..., B_{2N-1}, C^outcomes)."""
    return check_membership(x, comb_spec(shapes, outcomes), method, tol)


# ---------------------------------------------------------------------------
# Application
# ---------------------------------------------------------------------------


def _member_verdict(x: OperatorLike, spec: SupermapSpec, level: int, tol: float) -> Verdict:
    if level == 0:
        x = spec.align(x, 0)
        if section_contains(spec.base.subspace, x, tol):
            return passed("state in K")
        return failed("state in K", spec.base.subspace.residual(x))
    return membership_by_subspace(x, spec, tol, level)


def apply_supermap_blockwise(y: LabeledOperator, x: LabeledOperator, spec: SupermapSpec) -> LabeledOperator:
    """Sum over block multi-indices I of A_{n-1} of ((I x q(I)) Y) * (q(I) X)."""
    lower = spec.factors(spec.n - 1)
    result = None
    for index in block_multi_indices(lower):
        assignment = {f.label: i for f, i in zip(lower, index)}
        term = link_product(compress(y, assignment), compress(x, assignment))
        result = term if result is None else result + term
    return result


def apply_supermap(y: OperatorLike, x: OperatorLike, spec: SupermapSpec, tol: Optional[float] = None) -> LabeledOperator:
    """Phi_Y(X) = Y * X for Y at level n of ``spec`` and X at level n-1."""
    tol = _tol(tol)
    y = spec.align(y, spec.n)
    x = spec.align(x, spec.n - 1)
    for name, operator, level in (("supermap", y, spec.n), ("argument", x, spec.n - 1)):
        verdict = _member_verdict(operator, spec, level, tol)
        if not verdict:
            raise MembershipError(f"{name} is not a member at level {level}: {verdict.condition}")
    output = link_product(y, x)
    blockwise = apply_supermap_blockwise(y, x, spec)
    gap = float(np.linalg.norm(output.matrix - permute(blockwise, output.labels).matrix))
    if gap > tol * max(1.0, output.norm()):
        raise CrossCheckError(f"blockwise and global application differ by {gap:.3e}")
    logger.debug(f"applied supermap: output trace {output.trace().real:.12f}")
    return output


# ---------------------------------------------------------------------------
# Equivalence
# ---------------------------------------------------------------------------


def _require_members(spec: SupermapSpec, tol: float, *operators: LabeledOperator):
    for k, operator in enumerate(operators, start=1):
        verdict = membership_by_subspace(operator, spec, tol)
        if not verdict:
            raise MembershipError(f"operator {k} is not a member: {verdict.condition}")


def equivalence_witness(
    x1: OperatorLike, x2: OperatorLike, spec: SupermapSpec, tol: Optional[float] = None
) -> tuple[Verdict, list[LabeledOperator]]:
    """Ladder W^(m) with X_1 - X_2 = I_{B_{n-1}} x W^(1) and Tr_{B_l} W^(m) = I_{B_{l-1}} x W^(m+1)."""
    tol = _tol(tol)
    n = spec.n
    x1, x2 = spec.align(x1, n), spec.align(x2, n)
    difference = x1 - x2
    bound = tol * max(1.0, x1.norm())
    j0 = spec.subspace(0)
    if n == 1:
        residual = component_norm(difference, j0.transpose())
        if residual > bound:
            return failed("X_1 - X_2 in B_1 x (J^T)^perp", residual, rung=0), [difference]
        return passed("equivalent", residual), [difference]

    top = spec.level_labels(n - 1)
    current = partial_trace(difference, top) / spec.unit_trace(n - 1)
    rebuilt = _insert_identity(top, difference, current)
    residual = float(np.linalg.norm(difference.matrix - rebuilt.matrix))
    if residual > bound:
        return failed(f"X_1 - X_2 = I_B{n - 1} x W^(1)", residual, rung=0), [difference]
    ladder = [current]
    l = n - 2
    while l >= 2:
        traced = partial_trace(current, spec.level_labels(l))
        following = partial_trace(traced, spec.level_labels(l - 1)) / spec.unit_trace(l - 1)
        rebuilt = _insert_identity(spec.level_labels(l - 1), traced, following)
        residual = float(np.linalg.norm(traced.matrix - rebuilt.matrix))
        if residual > bound:
            return failed(f"Tr_B{l} W^({len(ladder)}) = I_B{l - 1} x W^({len(ladder) + 1})", residual, rung=len(ladder)), ladder
        current = following
        ladder.append(current)
        l -= 2

    rung = len(ladder)
    if l == 1:
        residual = component_norm(partial_trace(current, spec.level_labels(1)), j0.transpose())
        if residual > bound:
            return failed(f"Tr_B1 W^({rung}) in B_{n} x (J^T)^perp", residual, rung=rung), ladder
        return passed("equivalent", residual), ladder
    residual = component_norm(current, j0.orthocomplement())
    if residual > bound:
        return failed(f"W^({rung}) in B_{n} x J", residual, rung=rung), ladder
    leftover = partial_trace(current, spec.level_labels(0)).norm()
    if leftover > bound:
        return failed(f"Tr_B0 W^({rung}) = 0", leftover, rung=rung), ladder
    return passed("equivalent", max(residual, leftover)), ladder


def supermap_equivalent(x1: OperatorLike, x2: OperatorLike, spec: SupermapSpec, tol: Optional[float] = None) -> Verdict:
    """X_1 - X_2 in B_n x (J_{n-1}^T)^perp, cross-checked by the W ladder."""
    tol = _tol(tol)
    x1, x2 = spec.align(x1), spec.align(x2)
    _require_members(spec, tol, x1, x2)
    residual = component_norm(x1 - x2, spec.subspace(spec.n - 1).transpose())
    holds = residual <= tol * max(1.0, x1.norm())
    ladder_verdict, _ = equivalence_witness(x1, x2, spec, tol)
    if holds != bool(ladder_verdict):
        raise CrossCheckError(f"equivalence subspace test ({holds}) and ladder ({bool(ladder_verdict)}) disagree")
    if holds:
        return passed("equivalent", residual)
    return failed(f"X_1 - X_2 in B_{spec.n} x (J_{spec.n - 1}^T)^perp", residual, rung=ladder_verdict.rung)


def _is_full_single_factor(section: SectionSpec) -> bool:
    return len(section.factors) == 1 and section.subspace.dim == section.subspace.ambient_dim


def permuted_spec(spec: SupermapSpec) -> SupermapSpec:
    """For K full and N = n + 1: C(B_0, B_n, B_{n+1}, B_1, ..) if n is odd, C(B_n, B_{n+1}, B_0, ..) if even."""
    if not _is_full_single_factor(spec.base):
        raise ShapeMismatchError("the permuted chain needs a full state space on a single base factor")
    n = spec.n - 1
    b = [spec.base_factors[0]] + [spec.chain_factor(l) for l in range(1, spec.n + 1)]
    if n % 2:
        base, chain = b[0], [b[n], b[n + 1]] + b[1:n]
    else:
        base, chain = b[n], [b[n + 1]] + b[0:n]
    return build_spec(SectionSpec.full((base,)), [f.shape for f in chain], [f.label for f in chain])


def _permuted_chain_member(x: LabeledOperator, spec: SupermapSpec, tol: float) -> bool:
    return bool(membership_by_subspace(x, permuted_spec(spec), tol))


def respects_equivalence(x: OperatorLike, spec: SupermapSpec, tol: Optional[float] = None) -> Verdict:
    """A level-(n+1) member is constant on equivalence classes iff X in B_{n+1} x B_n x J_{n-1}."""
    tol = _tol(tol)
    if spec.n < 2:
        raise ShapeMismatchError("respecting equivalence needs a spec of level at least 2")
    x = spec.align(x)
    verdict = membership_by_subspace(x, spec, tol)
    if not verdict:
        raise MembershipError(f"not a member at level {spec.n}: {verdict.condition}")
    lower = spec.subspace(spec.n - 2)
    residual = component_norm(x, lower.orthocomplement())
    holds = residual <= tol * max(1.0, x.norm())
    details = {}
    if _is_full_single_factor(spec.base):
        cross = _permuted_chain_member(x, spec, tol)
        details["permuted_chain"] = cross
        if cross != holds:
            raise CrossCheckError(f"permuted-chain membership ({cross}) disagrees with the subspace test ({holds})")
    if holds:
        return passed("respects equivalence", residual, **details)
    return failed(f"X in B_{spec.n} x B_{spec.n - 1} x J_{spec.n - 2}", residual, **details)


# ---------------------------------------------------------------------------
# Combs as maps between combs
# ---------------------------------------------------------------------------


def hat_spec(shapes: Sequence) -> SupermapSpec:
    """The comb spec over B_1, ..., B_{2N} for a comb on B_0, ..., B_{2N+1}."""
    shapes = [_as_shape(s) for s in shapes]
    if len(shapes) < 4 or len(shapes) % 2:
        raise ShapeMismatchError("comb equivalence needs an even number of at least four algebras")
    base = SectionSpec.full((Factor(1, shapes[1]),))
    return build_spec(base, shapes[2:-1], list(range(2, len(shapes) - 1)))


def comb_equivalence_witness(
    x1: OperatorLike, x2: OperatorLike, shapes: Sequence, tol: Optional[float] = None
) -> tuple[Verdict, list[LabeledOperator]]:
    """V^(N) ... V^(1) with X_1 - X_2 = I_{B_2N} x V^(N), Tr_{B_{2m-1}} V^(m) = I x V^(m-1), Tr_{B_1} V^(1) = 0."""
    tol = _tol(tol)
    spec = comb_spec(shapes)
    x1, x2 = spec.align(x1), spec.align(x2)
    difference = x1 - x2
    bound = tol * max(1.0, x1.norm())
    big_n = (len(shapes) - 2) // 2
    if big_n == 0:
        residual = difference.norm()
        return (passed("equal", residual) if residual <= bound else failed("X_1 = X_2", residual, rung=0)), []
    current = partial_trace(difference, [2 * big_n]) / spec.unit_trace(2 * big_n)
    rebuilt = _insert_identity([2 * big_n], difference, current)
    residual = float(np.linalg.norm(difference.matrix - rebuilt.matrix))
    if residual > bound:
        return failed(f"X_1 - X_2 = I_B{2 * big_n} x V^({big_n})", residual, rung=big_n), []
    ladder = [current]
    for m in range(big_n, 1, -1):
        traced = partial_trace(current, [2 * m - 1])
        following = partial_trace(traced, [2 * m - 2]) / spec.unit_trace(2 * m - 2)
        rebuilt = _insert_identity([2 * m - 2], traced, following)
        residual = float(np.linalg.norm(traced.matrix - rebuilt.matrix))
        if residual > bound:
            return failed(f"Tr_B{2 * m - 1} V^({m}) = I_B{2 * m - 2} x V^({m - 1})", residual, rung=m), ladder
        current = following
        ladder.append(current)
    leftover = partial_trace(current, [1]).norm()
    if leftover > bound:
        return failed("Tr_B1 V^(1) = 0", leftover, rung=1), ladder
    return passed("equivalent combs", leftover), ladder


def comb_equivalent(x1: OperatorLike, x2: OperatorLike, shapes: Sequence, tol: Optional[float] = None) -> Verdict:
    """X_1 - X_2 in B_{2N+1} x (hat J_{2N-1}^T)^perp x B_0."""
    tol = _tol(tol)
    spec = comb_spec(shapes)
    x1, x2 = spec.align(x1), spec.align(x2)
    _require_members(spec, tol, x1, x2)
    difference = x1 - x2
    if len(shapes) == 2:
        residual = difference.norm()
    else:
        residual = component_norm(difference, hat_spec(shapes).subspace().transpose())
    holds = residual <= tol * max(1.0, x1.norm())
    ladder_verdict, _ = comb_equivalence_witness(x1, x2, shapes, tol)
    if holds != bool(ladder_verdict):
        raise CrossCheckError(f"comb equivalence subspace test ({holds}) and ladder ({bool(ladder_verdict)}) disagree")
    if holds:
        return passed("equivalent combs", residual)
    return failed("X_1 - X_2 in B_2N+1 x (hat J^T)^perp x B_0", residual, rung=ladder_verdict.rung)


def comb_respects_equivalence(x: OperatorLike, shapes: Sequence, tol: Optional[float] = None) -> Verdict:
    """Membership in Comb(B_0..B_{2N+1}) and Comb(B_0, B_1, B_2N, B_2N+1, B_2, ..., B_2N-1)."""
    tol = _tol(tol)
    if len(shapes) < 4:
        raise ShapeMismatchError(f"respecting comb equivalence needs at least four algebras, got {len(shapes)}")
    spec = comb_spec(shapes)
    x = spec.align(x)
    verdict = membership_by_subspace(x, spec, tol)
    if not verdict:
        raise MembershipError(f"not a comb: {verdict.condition}")
    shapes = [_as_shape(s) for s in shapes]
    last = len(shapes) - 1
    order = [1, last - 1, last] + list(range(2, last - 1))
    reordered = build_spec(spec.base, [shapes[l] for l in order], order)
    second = membership_by_subspace(x, reordered, tol)
    if second:
        return passed("respects comb equivalence", second.residual)
    return failed(f"reordered comb: {second.condition}", second.residual)


# ---------------------------------------------------------------------------
# Comb sections and the tower rescaling
# ---------------------------------------------------------------------------


def comb_subspace(j: Subspace, a: Iterable, b: Iterable, c: Iterable) -> Subspace:
    """Comb_J(A, B, C) = Tr_C^{-1}([tilde J x B] ^ Tr_A^{-1}([I_B])) on C x A x B."""
    a, b, c = tuple(a), tuple(b), tuple(c)
    inner = tilde(j).tensor(Subspace.full(b))
    unit_marginal = preimage_under_partial_trace(Subspace.scalars(b), a + b)
    return preimage_under_partial_trace(inner.meet(unit_marginal), c + a + b)


def gchannel_subspace(j: Subspace, b: Iterable, c: Iterable) -> Subspace:
    """J_1 of C_{J x B}(A x B, C), i.e. Tr_C^{-1}(tilde(J x B))."""
    b, c = tuple(b), tuple(c)
    joint = j.tensor(Subspace.full(b))
    return preimage_under_partial_trace(tilde(joint), c + joint.factors)


def lift_spec(spec: SupermapSpec, level: Optional[int] = None) -> SupermapSpec:
    """One-step spec over A_level with section J_level: C_J(..B_{level+1}) = C_{J_level}(A_level, B_{level+1}) / c_level."""
    level = spec.n - 1 if level is None else level
    if not 0 <= level < spec.n:
        raise ShapeMismatchError(f"lift level {level} outside 0..{spec.n - 1}")
    factors = spec.factors(level)
    base = SectionSpec(spec.subspace(level), tracial_operator(factors))
    nxt = spec.chain_factor(level + 1)
    return build_spec(base, [nxt.shape], [nxt.label])
