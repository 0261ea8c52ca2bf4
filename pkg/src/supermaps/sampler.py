"""
Seeded random states, channels, section elements, generalized channels and combs.

Every sampler takes a ``seed`` (an int, a ``numpy.random.Generator`` or None); composite
samplers thread one generator through their parts so equal seeds give equal outputs.
"""

from __future__ import annotations

from typing import Iterable, Optional, Sequence, Union

import numpy as np
from loguru import logger

from src.core.config import settings
from src.core.exceptions import ShapeMismatchError
from src.linalg.algebra import AlgebraShape, AlgOperator, is_psd, operator_norm, pinv_sqrt, psd_sqrt
from src.linalg.choi import CpMapChoi
from src.linalg.tensor import (
    Factor,
    FactorLabel,
    Layout,
    LabeledOperator,
    as_layout,
    block_multi_indices,
    labels_of,
    layout_dim,
    layout_mask,
    partial_trace,
    permute,
)
from src.supermaps.comb import SupermapSpec
from src.supermaps.decompose import LadderDecomposition, grouped_levels
from src.supermaps.gchannel import SectionSpec, precompose_simple

Seed = Union[int, np.random.Generator, None]


def generator(seed: Seed = None) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def fork(seed: Optional[int], count: int) -> list[np.random.Generator]:
    """Independent generators for parallel sampling, derived by seed-sequence spawning."""
    return [np.random.default_rng(child) for child in np.random.SeedSequence(seed).spawn(count)]


def ginibre(rows: int, cols: int, seed: Seed = None) -> np.ndarray:
    """Matrix of i.i.d. standard complex normal entries."""
    rng = generator(seed)
    return (rng.standard_normal((rows, cols)) + 1j * rng.standard_normal((rows, cols))) / np.sqrt(2.0)


def _layout(factors: Union[AlgebraShape, Iterable], label: FactorLabel = 0) -> Layout:
    if isinstance(factors, AlgebraShape):
        return (Factor(label, factors),)
    return as_layout(factors)


def _random_hermitian(factors: Layout, rng: np.random.Generator) -> np.ndarray:
    d = layout_dim(factors)
    g = ginibre(d, d, rng)
    return (g + g.conj().T) * layout_mask(factors) / 2


def random_unitary(dim: int, seed: Seed = None) -> np.ndarray:
    """QR of a Ginibre matrix with the phases of diag(R) moved into Q."""
    q, r = np.linalg.qr(ginibre(dim, dim, seed))
    phases = np.diagonal(r) / np.abs(np.diagonal(r))
    return q * phases[None, :]


def random_layout_state(factors: Iterable, seed: Seed = None, rank: Optional[int] = None) -> LabeledOperator:
    """Density operator on a tensor product of block algebras (pinched Wishart)."""
    factors = as_layout(factors)
    d = layout_dim(factors)
    g = ginibre(d, rank or d, seed)
    w = (g @ g.conj().T) * layout_mask(factors)
    return LabeledOperator(factors, w / np.trace(w).real)


def random_state(shape: AlgebraShape, seed: Seed = None, rank: Optional[int] = None) -> AlgOperator:
    return random_layout_state(_layout(shape), seed, rank).to_alg()


def random_channel(
    inputs: Union[AlgebraShape, Iterable],
    outputs: Union[AlgebraShape, Iterable],
    kraus_rank: Optional[int] = None,
    seed: Seed = None,
) -> CpMapChoi:
    """Wishart Choi matrix normalized by (I x H^{-1/2}) W (I x H^{-1/2}), H = Tr_out W.

    A plain shape gets label 0 as input and label 1 as output.
    """
    inputs, outputs = _layout(inputs, 0), _layout(outputs, 1)
    d_in, d_out = layout_dim(inputs), layout_dim(outputs)
    rank = kraus_rank or d_in * d_out
    if rank < 1:
        raise ShapeMismatchError(f"Kraus rank must be positive, got {rank}")
    if rank * d_out < d_in:
        raise ShapeMismatchError(f"Kraus rank {rank} cannot give a channel from dimension {d_in} to {d_out}")
    g = ginibre(d_out * d_in, rank, seed)
    w = LabeledOperator(outputs + inputs, (g @ g.conj().T) * layout_mask(outputs + inputs))
    h = partial_trace(w, labels_of(outputs)).matrix
    side = np.kron(np.eye(d_out), pinv_sqrt(h, settings.rank_cutoff()))
    choi = side @ w.matrix @ side
    return CpMapChoi(inputs, outputs, w.with_matrix((choi + choi.conj().T) / 2))


def _max_weight(rho: np.ndarray, direction: np.ndarray) -> float:
    """Largest w with rho + w * direction >= 0, by doubling then bisection."""
    tol = settings.tol
    low, high = 0.0, 1.0
    while is_psd(rho + high * direction, tol) and high < 1e6:
        low, high = high, 2 * high
    for _ in range(settings.bisection_steps):
        middle = (low + high) / 2
        if is_psd(rho + middle * direction, tol):
            low = middle
        else:
            high = middle
    return low


def random_section_element(k: SectionSpec, seed: Seed = None) -> LabeledOperator:
    """rho + w h_0 for a random traceless direction h_0 in [K], at half the largest positive weight."""
    rng = generator(seed)
    rho = k.rho
    h = k.span.project(rho.with_matrix(_random_hermitian(k.factors, rng)))
    h = (h.matrix + h.matrix.conj().T) / 2
    direction = h - np.trace(h) * rho.matrix
    size = np.linalg.norm(direction)
    if size == 0:
        return rho
    direction = direction / size
    weight = _max_weight(rho.matrix, direction) / 2
    logger.debug(f"section sample: weight {weight:.3e}")
    return rho.with_matrix(rho.matrix + weight * direction)


def random_simple_parameter(k: SectionSpec, seed: Seed = None) -> LabeledOperator:
    """c = I/scale + y with y in [K]^perp Hermitian and c positive definite."""
    rng = generator(seed)
    unit = k.unit()
    h = _random_hermitian(k.factors, rng)
    perp = h - k.span.project(unit.with_matrix(h)).matrix
    perp = (perp + perp.conj().T) / 2
    size = operator_norm(perp)
    if size <= settings.tol:
        return unit
    return unit.with_matrix(unit.matrix + perp * (0.5 / (k.scale * size)))


def random_generalized_channel(
    k: SectionSpec,
    outputs: Union[AlgebraShape, Iterable],
    seed: Seed = None,
    kraus_rank: Optional[int] = None,
) -> CpMapChoi:
    """Lambda o chi_c for a random simple parameter c and a random channel Lambda.

    A plain output shape is labeled one past the largest label of the section.
    """
    rng = generator(seed)
    outputs = _layout(outputs, max(k.labels) + 1)
    c = random_simple_parameter(k, rng)
    channel = random_channel(k.factors, outputs, kraus_rank, rng)
    return precompose_simple(channel, c)


def _initial_state(spec: SupermapSpec, ancilla: Factor, rng: np.random.Generator) -> LabeledOperator:
    """X_0 >= 0 on D x B_0 with Tr_D X_0 a random element of K."""
    sigma = random_section_element(spec.base, rng).matrix
    omega = random_layout_state((ancilla,) + spec.base_factors, rng)
    marginal = partial_trace(omega, [ancilla.label]).matrix
    side = np.kron(np.eye(ancilla.shape.dim), psd_sqrt(sigma) @ pinv_sqrt(marginal, settings.rank_cutoff()))
    return omega.with_matrix(side @ omega.matrix @ side.conj().T)


def random_comb(
    spec: SupermapSpec,
    seed: Seed = None,
    ancilla_dim: int = 2,
    ancilla_start: Optional[FactorLabel] = None,
) -> tuple[LabeledOperator, LadderDecomposition]:
    """A member of C_J(B_0, ..., B_n) generated by a ladder of random channels.

    The ladder is returned with the member as a known decomposition.
    """
    rng = generator(seed)
    levels = grouped_levels(spec)
    k = (len(levels) - 1) // 2
    factors = {f.label: f for f in spec.factors()}
    start = max(spec.labels()) + 1 if ancilla_start is None else ancilla_start
    ancillas = tuple(Factor(start + m, AlgebraShape.full(ancilla_dim)) for m in range(k + 1))

    def layout(labels: Sequence[FactorLabel]) -> Layout:
        return tuple(factors[label] for label in labels)

    stages = []
    for m in range(1, k + 1):
        lower = tuple(label for j in range(2 * m - 2, -1, -1) for label in levels[j])
        inputs = layout(levels[2 * m - 1]) + (ancillas[m - 1],)
        outputs = (ancillas[m],) + layout(levels[2 * m])
        stages.append({n: random_channel(inputs, outputs, None, rng) for n in block_multi_indices(layout(lower))})

    if spec.n % 2 == 0:
        initial = _initial_state(spec, ancillas[0], rng)
    else:
        unscaled = SectionSpec(spec.base.subspace, spec.base.rho)
        outputs = (ancillas[0],) + layout(spec.level_labels(1))
        channel = random_generalized_channel(unscaled, outputs, rng)
        initial = permute(channel.choi, (ancillas[0].label,) + levels[0])

    ladder = LadderDecomposition(spec, levels, ancillas, tuple(stages), initial)
    x = ladder.reconstruct()
    logger.debug(f"random member at level {spec.n}: trace {x.trace().real:.6g}")
    return x, ladder


def random_povm(factors: Iterable, outcomes: int, seed: Seed = None) -> list[LabeledOperator]:
    """M_j = S^{-1/2} G_j S^{-1/2} with S = sum_j G_j for Wishart G_j."""
    rng = generator(seed)
    factors = as_layout(factors)
    parts = [random_layout_state(factors, rng) for _ in range(outcomes)]
    total = sum(p.matrix for p in parts)
    side = pinv_sqrt(total, settings.rank_cutoff())
    return [p.with_matrix(side @ p.matrix @ side) for p in parts]


def random_pvm(factors: Iterable, seed: Seed = None) -> list[LabeledOperator]:
    """Rank-one projectors onto the columns of a random unitary (single full factor)."""
    factors = as_layout(factors)
    if len(factors) != 1 or not factors[0].shape.is_factor:
        raise ShapeMismatchError("a random PVM needs one full matrix algebra")
    u = random_unitary(factors[0].shape.dim, seed)
    return [LabeledOperator(factors, np.outer(u[:, j], u[:, j].conj())) for j in range(u.shape[1])]
