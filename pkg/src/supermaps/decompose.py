"""
Constructive realizations: semicausal operators split through an ancilla, the ladder of
channels behind a supermap member, and ancilla realizations of channels acting on channels.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Optional, Sequence

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
from src.linalg.algebra import AlgebraShape, eigh_desc, hermitian_part, is_psd, psd_sqrt
from src.linalg.choi import CpMapChoi, is_cp, is_tp
from src.linalg.tensor import (
    Factor,
    FactorLabel,
    Layout,
    LabeledOperator,
    block_multi_indices,
    central_projection,
    compress,
    identity_operator,
    labels_of,
    layout_dim,
    layout_trace,
    link_chain,
    link_product,
    partial_trace,
    permute,
    relabel,
    tensor,
    tracial_operator,
)
from src.supermaps.comb import SupermapSpec, membership_by_chain
from src.supermaps.gchannel import (
    SectionSpec,
    SimpleFactorization,
    are_equivalent,
    conjugation_choi,
    factor_simple,
)

BlockIndex = tuple[int, ...]


def _tol(tol: Optional[float]) -> float:
    return settings.tol if tol is None else tol


def _fresh_label(labels: Sequence[FactorLabel]) -> FactorLabel:
    return max(labels, default=-1) + 1


def _sum(operators) -> Optional[LabeledOperator]:
    total = None
    for op in operators:
        total = op if total is None else total + op
    return total


def _spectral_blocks(y: LabeledOperator, tol: float) -> dict[BlockIndex, tuple[np.ndarray, np.ndarray]]:
    """Nonzero eigenpairs of each block q(n) Y q(n); ranks use the rank cutoff."""
    blocks = {}
    for n in block_multi_indices(y.factors):
        block = compress(y, dict(zip(y.labels, n))).matrix
        values, vectors = eigh_desc(hermitian_part(block, tol))
        if values.size == 0 or values[0] <= 0:
            continue
        rank = int(np.count_nonzero(values > settings.rank_cutoff(tol) * max(1.0, values[0])))
        if rank:
            blocks[n] = (values[:rank], vectors[:, :rank])
    return blocks


# ---------------------------------------------------------------------------
# Semicausal splitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class SemilocalSplit:
    """X_{m,n} = X1(m, n) * X0(n) through an ancilla D.

    X1(m, n) is a channel from block m of B (tensored with D) to A, trace preserving on that
    block; X0(n) is a positive operator on D x C_n with Tr_D X0(n) = Y_n.
    """

    ancilla: Factor
    a_labels: tuple[FactorLabel, ...]
    b_labels: tuple[FactorLabel, ...]
    c_labels: tuple[FactorLabel, ...]
    marginal: LabeledOperator
    channels: dict[tuple[BlockIndex, BlockIndex], CpMapChoi] = field(default_factory=dict)
    states: dict[BlockIndex, LabeledOperator] = field(default_factory=dict)

    @property
    def ancilla_dim(self) -> int:
        return self.ancilla.shape.dim

    def block(self, m: BlockIndex, n: BlockIndex) -> LabeledOperator:
        return link_product(self.channels[(m, n)].choi, self.states[n])

    def reconstruct(self) -> LabeledOperator:
        return _sum(self.block(m, n) for (m, n) in self.channels)

    def reconstruction_residual(self, x: LabeledOperator) -> float:
        rebuilt = self.reconstruct()
        return float(np.linalg.norm(permute(rebuilt, x.labels).matrix - x.matrix))

    def marginal_residual(self) -> float:
        """max_n ||Tr_D X0(n) - Y_n||."""
        worst = 0.0
        for n, state in self.states.items():
            reduced = partial_trace(state, [self.ancilla.label])
            target = compress(self.marginal, dict(zip(self.c_labels, n)))
            worst = max(worst, float(np.linalg.norm(reduced.matrix - permute(target, reduced.labels).matrix)))
        return worst


def semicausal_marginal(
    x: LabeledOperator, a_labels: Sequence[FactorLabel], b_labels: Sequence[FactorLabel]
) -> tuple[LabeledOperator, float]:
    """Y = Tr_{A,B} X / t_B and the residual ||Tr_A X - I_B x Y||."""
    traced = partial_trace(x, a_labels)
    b_factors = tuple(x.factor(label) for label in b_labels)
    y = partial_trace(traced, b_labels) / layout_trace(b_factors)
    rebuilt = permute(tensor(identity_operator(b_factors), y), traced.labels)
    return y, float(np.linalg.norm(traced.matrix - rebuilt.matrix))


def semilocalize(
    x: LabeledOperator,
    a_labels: Sequence[FactorLabel],
    b_labels: Sequence[FactorLabel],
    tol: Optional[float] = None,
    ancilla_dim: Optional[int] = None,
    ancilla_label: Optional[FactorLabel] = None,
) -> SemilocalSplit:
    """Split a positive X on A x B x C with Tr_A X = I_B x Y into channels and ancilla states.

    Every remaining factor of ``x`` belongs to C. The ancilla dimension defaults to the
    largest rank of a block of Y; a larger ``ancilla_dim`` pads every channel with a
    tracial output on the unused ancilla levels.
    """
    tol = _tol(tol)
    a_labels, b_labels = tuple(a_labels), tuple(b_labels)
    c_labels = tuple(label for label in x.labels if label not in a_labels + b_labels)
    x = permute(x, a_labels + b_labels + c_labels)
    try:
        positive = is_psd(x.matrix, tol)
    except NotHermitianError as e:
        raise NotPositiveError(f"operator to split is not Hermitian: {e}") from e
    if not positive:
        raise NotPositiveError("operator to split is not positive")
    y, residual = semicausal_marginal(x, a_labels, b_labels)
    if residual > tol * max(1.0, x.norm()):
        raise MembershipError(f"Tr_A X is not of the form I_B x Y (residual {residual:.3e})")

    a_factors = x.factors[: len(a_labels)]
    b_factors = x.factors[len(a_labels): len(a_labels) + len(b_labels)]
    c_factors = x.factors[len(a_labels) + len(b_labels):]
    d_a, d_b, d_c = layout_dim(a_factors), layout_dim(b_factors), layout_dim(c_factors)

    spectra = _spectral_blocks(y, tol)
    if not spectra:
        raise DecompositionError("the operator to split vanishes")
    needed = max(values.size for values, _ in spectra.values())
    d_d = needed if ancilla_dim is None else ancilla_dim
    if d_d < needed:
        raise ShapeMismatchError(f"ancilla dimension {d_d} is below the required {needed}")
    label = _fresh_label(x.labels) if ancilla_label is None else ancilla_label
    ancilla = Factor(label, AlgebraShape.full(d_d))

    x4 = x.matrix.reshape(d_a * d_b, d_c, d_a * d_b, d_c)
    tau_a = tracial_operator(a_factors).matrix
    channels, states = {}, {}
    for n, (values, vectors) in spectra.items():
        r = values.size
        psi = np.zeros((d_d, d_c), dtype=complex)
        psi[:r] = np.sqrt(values)[:, None] * vectors.T
        states[n] = LabeledOperator((ancilla,) + c_factors, np.outer(psi.ravel(), psi.ravel().conj()))
        lift = np.zeros((d_d, d_c), dtype=complex)
        lift[:r] = vectors.conj().T / np.sqrt(values)[:, None]
        moved = np.einsum("tc,icjd,sd->itjs", lift, x4, lift.conj(), optimize=True)
        moved = moved.reshape(d_a * d_b * d_d, d_a * d_b * d_d)
        unused = np.diag((np.arange(d_d) >= r).astype(float))
        for m in block_multi_indices(b_factors):
            q_m = central_projection(b_factors, m)
            mask = np.kron(np.kron(np.ones(d_a), q_m), np.ones(d_d))
            choi = moved * np.outer(mask, mask) + np.kron(np.kron(tau_a, np.diag(q_m)), unused)
            operator = LabeledOperator(a_factors + b_factors + (ancilla,), choi)
            channels[(m, n)] = CpMapChoi(b_factors + (ancilla,), a_factors, operator)
    logger.debug(f"semilocal split: ancilla dimension {d_d}, {len(states)} blocks of C")
    return SemilocalSplit(ancilla, a_labels, b_labels, c_labels, y, channels, states)


def intertwining_isometry(
    v: np.ndarray, w: np.ndarray, a_dim: int, b_dim: int, tol: Optional[float] = None
) -> np.ndarray:
    """U with V = (U x I_B)(I_A x W), for W: H_B' -> H_D x H_B a minimal dilation.

    V maps H_A' x H_B' into H_P x H_B; the ancilla of W must be minimal, i.e. the rows of W
    regrouped as D x (B B') are linearly independent.
    """
    tol = _tol(tol)
    v, w = np.asarray(v, dtype=complex), np.asarray(w, dtype=complex)
    d_in = w.shape[1]
    if w.shape[0] % b_dim or v.shape[0] % b_dim or v.shape[1] != a_dim * d_in:
        raise ShapeMismatchError(f"incompatible dilation shapes {v.shape} and {w.shape}")
    d_d, p = w.shape[0] // b_dim, v.shape[0] // b_dim
    w_rows = w.reshape(d_d, b_dim * d_in)
    if np.linalg.matrix_rank(w_rows, tol=settings.rank_cutoff(tol) * max(1.0, np.linalg.norm(w_rows))) < d_d:
        raise DecompositionError("the dilation W is not minimal")
    v4 = v.reshape(p, b_dim, a_dim, d_in)
    pinv = np.linalg.pinv(w_rows)
    u = np.zeros((p, a_dim * d_d), dtype=complex)
    for a in range(a_dim):
        u[:, a * d_d:(a + 1) * d_d] = v4[:, :, a, :].reshape(p, b_dim * d_in) @ pinv
    rebuilt = np.kron(u, np.eye(b_dim)) @ np.kron(np.eye(a_dim), w)
    residual = float(np.linalg.norm(rebuilt - v))
    if residual > settings.recheck_tol(tol) * max(1.0, np.linalg.norm(v)):
        raise DecompositionError(f"no intertwiner: residual {residual:.3e}")
    defect = float(np.linalg.norm(u.conj().T @ u - np.eye(a_dim * d_d)))
    if defect > settings.recheck_tol(tol) * max(1.0, np.sqrt(a_dim * d_d)):
        raise DecompositionError(f"intertwiner is not isometric: defect {defect:.3e}")
    return u


# ---------------------------------------------------------------------------
# Ladder decomposition
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class LadderDecomposition:
    """q(I) X = I_{D_k} * X_k(I^k) * ... * X_1(I^1) * X_0(I_0).

    ``levels[j]`` holds the labels of the grouped algebra B'_j (B'_0 = B_1 x B_0 for odd n).
    ``stages[m - 1]`` maps each multi-index over B'_{2m-2}, ..., B'_0 to the channel
    B'_{2m-1} x D_{m-1} -> D_m x B'_{2m}, and ``initial`` lives on D_0 x B'_0.
    """

    spec: SupermapSpec
    levels: tuple[tuple[FactorLabel, ...], ...]
    ancillas: tuple[Factor, ...]
    stages: tuple[dict[BlockIndex, CpMapChoi], ...]
    initial: LabeledOperator

    @property
    def k(self) -> int:
        return len(self.stages)

    @property
    def ancilla_dim(self) -> int:
        return self.ancillas[0].shape.dim

    def lower_labels(self, m: int) -> tuple[FactorLabel, ...]:
        """Labels of B'_{2m-2} x ... x B'_0."""
        return tuple(label for j in range(2 * m - 2, -1, -1) for label in self.levels[j])

    def all_labels(self) -> tuple[FactorLabel, ...]:
        return self.lower_labels(self.k + 1)

    def block_indices(self) -> Iterator[dict[FactorLabel, int]]:
        factors = {f.label: f for f in self.spec.factors()}
        labels = self.all_labels()
        for values in block_multi_indices(tuple(factors[label] for label in labels)):
            yield dict(zip(labels, values))

    def chain_for(self, index: dict[FactorLabel, int]) -> list[LabeledOperator]:
        """I_{D_k}, X_k(I^k), ..., X_0(I_0) for one multi-index over A_n."""
        operators = [identity_operator((self.ancillas[self.k],))]
        for m in range(self.k, 0, -1):
            key = tuple(index[label] for label in self.lower_labels(m))
            upper = self.levels[2 * m] + self.levels[2 * m - 1]
            operators.append(compress(self.stages[m - 1][key].choi, {label: index[label] for label in upper}))
        operators.append(compress(self.initial, {label: index[label] for label in self.levels[0]}))
        return operators

    def reconstruct_block(self, index: dict[FactorLabel, int]) -> LabeledOperator:
        return permute(link_chain(self.chain_for(index)), self.spec.labels())

    def reconstruct(self) -> LabeledOperator:
        return _sum(self.reconstruct_block(index) for index in self.block_indices())

    def reconstruction_residual(self, x: LabeledOperator) -> float:
        """Largest block residual ||q(I) X - chain(I)||."""
        x = self.spec.align(x)
        worst = 0.0
        for index in self.block_indices():
            gap = self.reconstruct_block(index).matrix - compress(x, index).matrix
            worst = max(worst, float(np.linalg.norm(gap)))
        return worst

    def stages_are_channels(self, tol: Optional[float] = None) -> bool:
        return all(is_cp(stage, tol) and is_tp(stage, tol) for stages in self.stages for stage in stages.values())


def grouped_levels(spec: SupermapSpec) -> tuple[tuple[FactorLabel, ...], ...]:
    """Labels of B'_0, ..., B'_n' with B_1 and B_0 grouped for odd n."""
    n = spec.n
    if n % 2 == 0:
        return tuple(tuple(spec.level_labels(j)) for j in range(n + 1))
    bottom = tuple(spec.level_labels(1) + spec.level_labels(0))
    return (bottom,) + tuple(tuple(spec.level_labels(j + 1)) for j in range(1, n))


def _tracial_channel(inputs: Layout, outputs: Layout) -> CpMapChoi:
    """a -> Tr(a) tau."""
    return CpMapChoi(inputs, outputs, tensor(tracial_operator(outputs), identity_operator(inputs)))


def ladder_decompose(
    x: LabeledOperator,
    spec: SupermapSpec,
    tol: Optional[float] = None,
    ancilla_start: Optional[FactorLabel] = None,
) -> LadderDecomposition:
    """Decompose a member of C_J(B_0, ..., B_n) into a ladder of channels through one ancilla.

    The ancilla D_m carries label ``ancilla_start + m``; by default the labels follow the
    largest label of the spec.
    """
    tol = _tol(tol)
    x = spec.align(x)
    verdict, witness = membership_by_chain(x, spec, tol)
    if not verdict:
        raise MembershipError(f"not a member: {verdict.condition} (rung {verdict.rung})")
    levels = grouped_levels(spec)
    k = (len(levels) - 1) // 2
    factors = {f.label: f for f in spec.factors()}

    def layout(labels: Sequence[FactorLabel]) -> Layout:
        return tuple(factors[label] for label in labels)

    d_d = 1
    for y in witness.operators[1:]:
        for values, _ in _spectral_blocks(y, tol).values():
            d_d = max(d_d, values.size)
    start = _fresh_label(spec.labels()) if ancilla_start is None else ancilla_start
    ancillas = tuple(Factor(start + m, AlgebraShape.full(d_d)) for m in range(k + 1))
    clash = set(labels_of(ancillas)) & set(spec.labels())
    if clash:
        raise ShapeMismatchError(f"ancilla labels {sorted(clash)} are already in use")

    stages: list[dict[BlockIndex, CpMapChoi]] = [dict() for _ in range(k)]
    current = x
    for m in range(k, 0, -1):
        upper, middle = levels[2 * m], levels[2 * m - 1]
        lower = tuple(label for j in range(2 * m - 2, -1, -1) for label in levels[j])
        a_labels = upper if m == k else (ancillas[m].label,) + upper
        split = semilocalize(current, a_labels, middle, tol, d_d, ancillas[m - 1].label)
        inputs = layout(middle) + (ancillas[m - 1],)
        outputs = (ancillas[m],) + layout(upper)
        for n in block_multi_indices(layout(lower)):
            choi = _sum(
                split.channels[(b, n)].choi for b in block_multi_indices(layout(middle)) if (b, n) in split.channels
            )
            if choi is None:
                stages[m - 1][n] = _tracial_channel(inputs, outputs)
                continue
            if m == k:
                choi = tensor(tracial_operator((ancillas[m],)), choi)
            stages[m - 1][n] = CpMapChoi.from_operator(choi, labels_of(outputs))
        current = permute(_sum(split.states.values()), (ancillas[m - 1].label,) + lower)
    if k == 0:
        current = tensor(identity_operator((ancillas[0],)), current)

    decomposition = LadderDecomposition(spec, levels, ancillas, tuple(stages), current)
    _verify_initial(decomposition, witness.operators[-1], tol)
    residual = decomposition.reconstruction_residual(x)
    logger.info(f"ladder decomposition: k = {k}, ancilla dimension {d_d}, residual {residual:.3e}")
    if residual > settings.recheck_tol(tol) * max(1.0, x.norm()):
        raise DecompositionError(f"ladder reconstruction residual {residual:.3e}")
    return decomposition


def _verify_initial(decomposition: LadderDecomposition, terminal: LabeledOperator, tol: float):
    """X_0 >= 0 and Tr_D X_0 equals the terminal element of the chain witness."""
    initial = decomposition.initial
    if not is_psd(initial.matrix, settings.recheck_tol(tol)):
        raise DecompositionError("initial element is not positive")
    reduced = partial_trace(initial, [decomposition.ancillas[0].label])
    gap = float(np.linalg.norm(reduced.matrix - permute(terminal, reduced.labels).matrix))
    if gap > settings.recheck_tol(tol) * max(1.0, terminal.norm()):
        raise DecompositionError(f"Tr_D X_0 differs from the terminal chain element by {gap:.3e}")


def apply_ladders(supermap: LadderDecomposition, member: LadderDecomposition) -> LabeledOperator:
    """Y * X as the joint link chain of both ladders, summed over blocks that agree."""
    outer_ancillas, inner_ancillas = set(labels_of(supermap.ancillas)), set(labels_of(member.ancillas))
    collisions = (outer_ancillas & (inner_ancillas | set(member.all_labels()))) | (
        inner_ancillas & set(supermap.all_labels())
    )
    if collisions:
        raise ShapeMismatchError(f"ladder ancilla labels {sorted(collisions)} collide")
    shared = set(supermap.all_labels()) & set(member.all_labels())
    member_blocks = list(member.block_indices())
    terms = (
        link_chain(supermap.chain_for(outer) + member.chain_for(inner))
        for outer in supermap.block_indices()
        for inner in member_blocks
        if all(outer[label] == inner[label] for label in shared)
    )
    return _sum(terms)


@dataclass(frozen=True, eq=False)
class CombFactorization:
    """Phi_X = Phi_comb o (id x chi_c) with chi_c a simple channel on B_0."""

    simple: SimpleFactorization
    comb: LabeledOperator

    def recompose(self) -> LabeledOperator:
        base = self.simple.c.factors
        start = _fresh_label(self.comb.labels)
        moved = tuple(Factor(start + i, f.shape) for i, f in enumerate(base))
        chi = conjugation_choi(psd_sqrt(self.simple.c.matrix), moved, base)
        joined = link_product(self.comb, chi)
        return relabel(joined, {start + i: f.label for i, f in enumerate(base)})


def factor_through_comb(decomposition: LadderDecomposition, tol: Optional[float] = None) -> CombFactorization:
    """For odd n, split the initial generalized channel of a ladder by the simple factorization.

    Replacing X_0 by the channel Lambda turns the ladder into a comb over B_0, ..., B_n.
    """
    tol = _tol(tol)
    spec = decomposition.spec
    if spec.n % 2 == 0:
        raise ShapeMismatchError("the comb-and-simple-channel split needs an odd level")
    outputs = [decomposition.ancillas[0].label] + spec.level_labels(1)
    initial = CpMapChoi.from_operator(decomposition.initial, outputs)
    simple = factor_simple(initial, SectionSpec(spec.base.subspace, spec.base.rho), tol)
    replaced = LadderDecomposition(
        spec,
        decomposition.levels,
        decomposition.ancillas,
        decomposition.stages,
        permute(simple.channel.choi, decomposition.initial.labels),
    )
    return CombFactorization(simple, replaced.reconstruct())


# ---------------------------------------------------------------------------
# Channels on channels
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ChannelRealization:
    """Xi(X_E) = Lambda((E x id_A)(rho)) with rho pure on H_0 x H_A.

    ``omega`` is Tr_{H_1} Tr_B X / d_1, the state fixing how Xi weighs the input of E.
    """

    ancilla: Factor
    rho: LabeledOperator
    channel: CpMapChoi
    omega: LabeledOperator


def realize_on_channels(
    x: CpMapChoi, tol: Optional[float] = None, ancilla_label: Optional[FactorLabel] = None
) -> ChannelRealization:
    """Ancilla realization of a generalized channel on the channel section of B(H_1 x H_0).

    The inputs of ``x`` must be two full matrix algebras, H_1 first.
    """
    tol = _tol(tol)
    if len(x.inputs) != 2 or not all(f.shape.is_factor for f in x.inputs):
        raise ShapeMismatchError("input must be B(H_1) x B(H_0) with H_1 first")
    h1, h0 = x.inputs
    section = SectionSpec.channel_section(h0.shape, h1.shape, h0.label, h1.label)
    factorization = factor_simple(x, section, tol)
    c = factorization.c
    sigma = partial_trace(c, [h1.label]) / h1.shape.dim
    gap = float(np.linalg.norm(c.matrix - tensor(identity_operator((h1,)), sigma).matrix))
    if gap > settings.recheck_tol(tol) * max(1.0, c.norm()):
        raise MembershipError(f"Phi*(I) is not of the form I x omega (residual {gap:.3e})")

    values, vectors = eigh_desc(hermitian_part(sigma.matrix, tol))
    rank = int(np.count_nonzero(values > settings.rank_cutoff(tol) * max(1.0, values[0])))
    w = vectors[:, :rank]
    label = _fresh_label(x.choi.labels) if ancilla_label is None else ancilla_label
    ancilla = Factor(label, AlgebraShape.full(rank))

    # (I x W*)(I x sigma^{1/2}) applied to sum_i |i>|i>
    half = w.conj().T @ psd_sqrt(hermitian_part(sigma.matrix, tol))
    psi = half.T.ravel()
    rho = LabeledOperator((h0, ancilla), np.outer(psi, psi.conj()))

    side = np.kron(np.eye(x.output_dim * h1.shape.dim), w.T)
    restricted = side @ factorization.channel.choi.matrix @ side.conj().T
    channel = CpMapChoi((h1, ancilla), x.outputs, LabeledOperator(x.outputs + (h1, ancilla), restricted))

    omega = sigma.with_matrix(sigma.matrix.T)
    rebuilt = from_realization(rho, channel, tol)
    verdict = are_equivalent(rebuilt, x, section, settings.recheck_tol(tol))
    if not verdict:
        raise DecompositionError(f"realization does not reproduce the map on channels ({verdict.residual:.3e})")
    logger.info(f"realized a map on channels with ancilla dimension {rank}")
    return ChannelRealization(ancilla, rho, channel, omega)


def from_realization(rho: LabeledOperator, channel: CpMapChoi, tol: Optional[float] = None) -> CpMapChoi:
    """Choi matrix of X_E -> Lambda((E x id_A)(rho)), which is Lambda * rho."""
    tol = _tol(tol)
    shared = [label for label in rho.labels if label in channel.input_labels]
    if len(shared) != 1 or len(rho.labels) != 2:
        raise ShapeMismatchError("rho must live on H_0 x H_A with H_A an input of the channel")
    try:
        positive = is_psd(rho.matrix, tol)
    except NotHermitianError as e:
        raise MembershipError(f"rho is not Hermitian: {e}") from e
    if not positive or abs(rho.trace() - 1.0) > tol * max(1.0, rho.norm()):
        raise MembershipError("rho is not a state")
    if not (is_cp(channel, tol) and is_tp(channel, tol)):
        raise MembershipError("Lambda is not a channel")
    return CpMapChoi.from_operator(link_product(channel.choi, rho), channel.output_labels)


def evaluate_realization(realization: ChannelRealization, channel: CpMapChoi) -> LabeledOperator:
    """Lambda((E x id_A)(rho)) for a channel E: H_0 -> H_1."""
    return link_product(realization.channel.choi, link_product(channel.choi, realization.rho))
