"""
Tests for generalized channels, POVMs, instruments and simple channels.
"""

import numpy as np
import pytest

from src.core.exceptions import MembershipError, NotHermitianError, NotPositiveError, ShapeMismatchError
from src.linalg.algebra import AlgebraShape
from src.linalg.choi import CpMapChoi, apply_map, is_cp, is_tp
from src.linalg.subspace import Subspace
from src.linalg.tensor import Factor, LabeledOperator, identity_operator, tensor
from src.supermaps.decompose import from_realization
from src.supermaps.gchannel import (
    GeneralizedPovm,
    SectionSpec,
    are_equivalent,
    conjugation_choi,
    factor_simple,
    fixed_statistics_coefficients,
    instrument_components,
    is_generalized_channel,
    is_generalized_instrument,
    is_generalized_povm,
    make_simple,
    povm_equivalent,
    precompose_simple,
)
from src.supermaps.sampler import (
    random_channel,
    random_generalized_channel,
    random_layout_state,
    random_povm,
    random_simple_parameter,
    random_unitary,
)

QUBIT = AlgebraShape.full(2)
BIT = AlgebraShape.classical(2)
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)
PAIR = ((1, QUBIT), (0, QUBIT))


def on(matrix: np.ndarray, label: int = 0) -> LabeledOperator:
    return LabeledOperator(((label, QUBIT),), matrix)


@pytest.fixture
def channel_section():
    return SectionSpec.channel_section(QUBIT, QUBIT)


@pytest.fixture
def fixed_pvm():
    """Rotated computational PVM with a faithful, non-tracial state of equal statistics."""
    u = random_unitary(2, seed=21)
    elements = [on(np.outer(u[:, j], u[:, j].conj())) for j in range(2)]
    rho = on(u @ (np.eye(2) / 2 + 0.2 * SIGMA_X) @ u.conj().T)
    return elements, rho, SectionSpec.fixed_statistics(elements, rho)


def measure_and_prepare(elements, weights, states) -> CpMapChoi:
    """a -> sum_i c_i Tr(E_i a) omega_i."""
    choi = sum(c * np.kron(w, e.matrix.T) for e, c, w in zip(elements, weights, states))
    return CpMapChoi(((0, QUBIT),), ((1, QUBIT),), LabeledOperator(((1, QUBIT), (0, QUBIT)), choi))


def realization(seed: int) -> CpMapChoi:
    rho = random_layout_state([(0, [2]), (3, [2])], seed=seed)
    lam = random_channel([(1, [2]), (3, [2])], [(2, [2])], seed=seed + 1)
    return from_realization(rho, lam)


# ---------------------------------------------------------------------------
# Sections
# ---------------------------------------------------------------------------


def test_channel_section_members_are_scaled_channels(channel_section):
    assert channel_section.scale == 2
    assert channel_section.labels == (1, 0)
    lam = random_channel(QUBIT, QUBIT, seed=1)
    assert channel_section.contains(lam.choi / 2)
    assert not channel_section.contains(tensor(on(np.diag([1.0, 0.0]), 1), on(np.diag([1.0, 0.0]))))
    assert channel_section.tau_in_k


def test_fixed_statistics_section(fixed_pvm):
    elements, rho, k = fixed_pvm
    assert k.contains(rho)
    assert k.subspace.dim == 3
    assert k.tau_in_k
    for e in elements:
        assert not k.contains(e)


def test_section_rejects_bad_state():
    with pytest.raises(MembershipError):
        SectionSpec.fixed_statistics([on(np.diag([1.0, 0.0])), on(np.diag([0.0, 1.0]))], on(np.eye(2)))
    with pytest.raises(NotPositiveError):
        SectionSpec(Subspace.full([(0, [2])]), on(np.diag([1.5, -0.5])))


# ---------------------------------------------------------------------------
# Generalized channels
# ---------------------------------------------------------------------------


def test_channels_are_generalized_channels_for_the_full_section():
    lam = random_channel(QUBIT, AlgebraShape.full(3), seed=2)
    assert is_generalized_channel(lam, SectionSpec.full(lam.inputs))


def test_realizations_act_on_channels(channel_section):
    x = realization(3)
    verdict = is_generalized_channel(x, channel_section)
    assert verdict
    assert verdict.residual < 1e-9


def test_plain_channels_on_pairs_are_not_maps_on_channels(channel_section):
    lam = random_channel(PAIR, [(2, [2])], seed=4)
    verdict = is_generalized_channel(lam, channel_section)
    assert not verdict
    assert verdict.condition.startswith("trace condition")


def test_non_cp_map_fails(channel_section):
    x = realization(5)
    broken = CpMapChoi(x.inputs, x.outputs, x.choi - x.choi.with_matrix(np.eye(8)))
    verdict = is_generalized_channel(broken, channel_section)
    assert not verdict and verdict.condition == "complete positivity"


def test_input_labels_must_match_section(channel_section):
    with pytest.raises(ShapeMismatchError):
        is_generalized_channel(random_channel(QUBIT, QUBIT, seed=6), channel_section)


def test_sampled_generalized_channels(channel_section, fixed_pvm):
    _, _, k = fixed_pvm
    for seed in range(5):
        assert is_generalized_channel(random_generalized_channel(channel_section, QUBIT, seed=seed), channel_section)
        assert is_generalized_channel(random_generalized_channel(k, QUBIT, seed=seed), k)


def test_measure_and_prepare_equivalence(fixed_pvm):
    elements, _, k = fixed_pvm
    omega = np.diag([0.7, 0.3])
    first = measure_and_prepare(elements, [1.0, 1.0], [omega, omega])
    second = measure_and_prepare(elements, [1.5, 0.5], [omega, omega])
    assert is_generalized_channel(first, k) and is_generalized_channel(second, k)
    assert not is_tp(second)
    assert are_equivalent(first, second, k)

    other = np.diag([0.1, 0.9])
    third = measure_and_prepare(elements, [1.5, 0.5], [omega, other])
    assert is_generalized_channel(third, k)
    assert not are_equivalent(first, third, k)


def test_fixed_statistics_coefficients(fixed_pvm):
    elements, _, _ = fixed_pvm
    omega = np.diag([0.7, 0.3])
    x = measure_and_prepare(elements, [1.5, 0.5], [omega, omega])
    coefficients, residual = fixed_statistics_coefficients(x, elements)
    assert np.allclose(coefficients, [1.5, 0.5])
    assert residual < 1e-10


def test_equivalence_of_realizations(channel_section):
    x = realization(7)
    assert are_equivalent(x, x, channel_section)
    assert not are_equivalent(x, realization(9), channel_section)


def test_equivalence_requires_members(channel_section):
    with pytest.raises(MembershipError):
        are_equivalent(realization(7), random_channel(PAIR, [(2, [2])], seed=8), channel_section)


# ---------------------------------------------------------------------------
# POVMs and instruments
# ---------------------------------------------------------------------------


def test_process_povm(channel_section):
    flat = GeneralizedPovm((identity_operator(PAIR) / 4, identity_operator(PAIR) / 4))
    assert is_generalized_povm(flat, channel_section)
    doubled = GeneralizedPovm((identity_operator(PAIR) / 2, identity_operator(PAIR) / 2))
    assert not is_generalized_povm(doubled, channel_section)


def test_process_povm_from_povm_and_state(channel_section):
    omega = random_layout_state([(0, [2])], seed=10)
    povm = random_povm([(1, [2])], 3, seed=11)
    m = GeneralizedPovm(tuple(tensor(f, omega) for f in povm))
    assert m.outcome_count == 3
    assert is_generalized_povm(m, channel_section)


def test_povm_equivalence_up_to_annihilated_terms(channel_section):
    base = identity_operator(PAIR) / 4
    invisible = tensor(on(np.eye(2), 1), on(SIGMA_Z))
    visible = tensor(on(SIGMA_Z, 1), on(np.eye(2)))
    m = GeneralizedPovm((base, base))
    n = GeneralizedPovm((base + invisible * 0.1, base - invisible * 0.1))
    assert is_generalized_povm(n, channel_section)
    assert povm_equivalent(m, n, channel_section)
    other = GeneralizedPovm((base + visible * 0.1, base - visible * 0.1))
    assert not povm_equivalent(m, other, channel_section)
    with pytest.raises(ShapeMismatchError):
        povm_equivalent(m, GeneralizedPovm((base * 2,)), channel_section)


def test_povm_channel_round_trip():
    povm = random_povm([(0, [2])], 3, seed=12)
    m = GeneralizedPovm(tuple(povm))
    x = m.to_channel()
    assert x.output_labels == (1,)
    assert is_cp(x) and is_tp(x)
    rho = random_layout_state([(0, [2])], seed=13)
    probabilities = np.diag(apply_map(x, rho).matrix).real
    expected = [np.trace(e.matrix @ rho.matrix).real for e in povm]
    assert np.allclose(probabilities, expected)
    back = GeneralizedPovm.from_channel(x)
    assert all(np.allclose(a.matrix, b.matrix) for a, b in zip(back.elements, povm))


def test_povm_rejects_negative_elements():
    with pytest.raises(NotPositiveError):
        GeneralizedPovm((on(np.diag([1.0, -0.5])),))


def lueders_instrument(projectors) -> CpMapChoi:
    factors = ((2, BIT), (1, QUBIT), (0, QUBIT))
    choi = sum(
        np.kron(np.diag(np.eye(2)[j]), conjugation_choi(p, (Factor(0, QUBIT),), (Factor(1, QUBIT),)).matrix)
        for j, p in enumerate(projectors)
    )
    return CpMapChoi(((0, QUBIT),), ((2, BIT), (1, QUBIT)), LabeledOperator(factors, choi))


def test_lueders_instrument():
    projectors = [np.diag([1.0, 0.0]), np.diag([0.0, 1.0])]
    x = lueders_instrument(projectors)
    k = SectionSpec.full([(0, [2])])
    assert is_generalized_instrument(x, k, 2, 2)
    components = instrument_components(x.choi, 2)
    assert len(components) == 2
    assert np.isclose(components[0].trace(), 1)

    partial = lueders_instrument([projectors[0], np.zeros((2, 2))])
    verdict = is_generalized_instrument(partial, k, 2, 2)
    assert not verdict
    assert verdict.condition.startswith("summed instrument")


def test_instrument_outcome_factor_must_be_classical():
    x = lueders_instrument([np.diag([1.0, 0.0]), np.diag([0.0, 1.0])])
    with pytest.raises(ShapeMismatchError):
        is_generalized_instrument(x, SectionSpec.full([(0, [2])]), 3, 2)


# ---------------------------------------------------------------------------
# Simple channels
# ---------------------------------------------------------------------------


def test_make_simple(channel_section):
    c = random_simple_parameter(channel_section, seed=14)
    x = make_simple(c, channel_section)
    assert is_generalized_channel(x, channel_section)
    assert x.output_labels == (2, 3)
    with pytest.raises(MembershipError):
        make_simple(identity_operator(PAIR), channel_section)
    with pytest.raises(MembershipError):
        make_simple(identity_operator(PAIR) * -1, channel_section)


def test_full_section_only_admits_the_identity_parameter():
    k = SectionSpec.full([(0, [2])])
    x = make_simple(on(np.eye(2)), k)
    assert is_tp(x)
    with pytest.raises(MembershipError):
        make_simple(on(np.diag([1.5, 0.5])), k)


def test_factor_simple_recovers_the_parameter(channel_section):
    c = random_simple_parameter(channel_section, seed=15)
    lam = random_channel(PAIR, [(2, [3])], seed=16)
    x = precompose_simple(lam, c)
    assert is_generalized_channel(x, channel_section)
    factorization = factor_simple(x, channel_section)
    assert np.allclose(factorization.c.matrix, c.matrix)
    assert is_cp(factorization.channel) and is_tp(factorization.channel)
    assert np.allclose(factorization.recompose().choi.matrix, x.choi.matrix)
    assert factorization.residual < 1e-9


def test_precompose_hermiticity_check_follows_tol():
    lam = random_channel(QUBIT, QUBIT, seed=30)
    c = LabeledOperator(lam.inputs, np.eye(2) + 1e-8 * np.array([[0, 1], [0, 0]], dtype=complex))
    assert is_tp(precompose_simple(lam, c), 1e-6)
    with pytest.raises(NotHermitianError):
        precompose_simple(lam, c, tol=1e-12)


def test_factor_simple_twice(channel_section):
    x = realization(17)
    first = factor_simple(x, channel_section)
    again = factor_simple(first.recompose(), channel_section)
    assert np.allclose(again.c.matrix, first.c.matrix)
    assert np.allclose(again.recompose().choi.matrix, x.choi.matrix)


def test_factor_simple_with_rank_deficient_parameter(fixed_pvm):
    elements, _, k = fixed_pvm
    omega = np.diag([0.7, 0.3])
    x = measure_and_prepare(elements, [2.0, 0.0], [omega, omega])
    assert is_generalized_channel(x, k)
    factorization = factor_simple(x, k)
    assert int(round(np.trace(factorization.support.matrix).real)) == 1
    assert np.allclose(factorization.c.matrix, 2 * elements[0].matrix)
    assert is_tp(factorization.channel)
    assert np.allclose(factorization.recompose().choi.matrix, x.choi.matrix)


def test_factor_simple_rejects_non_members(channel_section):
    with pytest.raises(MembershipError):
        factor_simple(random_channel(PAIR, [(2, [2])], seed=19), channel_section)
