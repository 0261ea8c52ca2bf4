"""
Tests for the Choi correspondence, Kraus forms and Stinespring dilations.
"""

import numpy as np
import pytest

from src.core.exceptions import NotPositiveError, ShapeMismatchError
from src.linalg.algebra import AlgebraShape
from src.linalg.choi import (
    CpMapChoi,
    action_matrix,
    adjoint_map,
    apply_map,
    choi_of_action,
    choi_of_function,
    compose,
    identity_channel,
    is_cp,
    is_tp,
    kraus,
    minimal_stinespring,
    tp_residual,
    transpose_map,
    unit_preserving_residual,
)
from src.linalg.tensor import LabeledOperator, permute
from src.supermaps.sampler import ginibre, random_channel, random_unitary

QUBIT = AlgebraShape.full(2)
IN = [(0, [2])]
OUT = [(1, [2])]


def on(label: int, matrix: np.ndarray) -> LabeledOperator:
    return LabeledOperator(((label, QUBIT),), matrix)


@pytest.fixture
def channel():
    return random_channel(QUBIT, AlgebraShape.full(3), seed=5)


def test_identity_channel():
    m = identity_channel(QUBIT)
    assert m.input_labels == (0,) and m.output_labels == (1,)
    assert is_cp(m) and is_tp(m)
    a = ginibre(2, 2, seed=1)
    assert np.allclose(apply_map(m, on(0, a)).matrix, a)


def test_choi_of_function_applies_the_function():
    u = random_unitary(2, seed=3)
    m = choi_of_function(lambda a: u @ a @ u.conj().T, IN, OUT)
    a = ginibre(2, 2, seed=4)
    assert np.allclose(apply_map(m, on(0, a)).matrix, u @ a @ u.conj().T)
    assert is_cp(m) and is_tp(m)
    assert len(kraus(m)) == 1


def test_action_matrix_inverts_choi_of_action():
    action = ginibre(4, 4, seed=2)
    m = choi_of_action(action, IN, OUT)
    assert np.allclose(action_matrix(m), action)
    with pytest.raises(ShapeMismatchError):
        choi_of_action(np.eye(3), IN, OUT)


def test_classical_maps_use_block_coordinates():
    bit = AlgebraShape.classical(2)
    stochastic = np.array([[0.9, 0.2], [0.1, 0.8]])
    m = choi_of_action(stochastic, [(0, bit)], [(1, bit)])
    assert m.choi.dim == 4
    out = apply_map(m, LabeledOperator(((0, bit),), np.diag([0.25, 0.75])))
    assert np.allclose(np.diag(out.matrix), stochastic @ np.array([0.25, 0.75]))
    assert is_cp(m) and is_tp(m)


def test_transposition_is_tp_but_not_cp():
    m = choi_of_function(lambda a: a.T, IN, OUT)
    assert is_tp(m)
    assert not is_cp(m)
    with pytest.raises(NotPositiveError):
        kraus(m)


def test_random_channel_kraus_form(channel):
    ops = kraus(channel)
    a = ginibre(2, 2, seed=9)
    expected = sum(k @ a @ k.conj().T for k in ops)
    assert np.allclose(apply_map(channel, on(0, a)).matrix, expected)
    assert np.allclose(sum(k.conj().T @ k for k in ops), np.eye(2))


def test_minimal_stinespring(channel):
    dilation = minimal_stinespring(channel)
    assert dilation.ancilla_dim == len(kraus(channel))
    a = ginibre(2, 2, seed=10)
    assert np.allclose(dilation.apply(a), apply_map(channel, on(0, a)).matrix)


def test_stinespring_of_unital_map_is_isometry():
    u = random_unitary(2, seed=6)
    m = choi_of_function(lambda a: u @ a @ u.conj().T, IN, OUT)
    assert minimal_stinespring(m).is_isometry()


def test_compose():
    first = random_channel(IN, OUT, seed=11)
    second = random_channel(OUT, [(2, [2])], seed=12)
    both = compose(second, first)
    a = ginibre(2, 2, seed=13)
    step = apply_map(first, on(0, a))
    expected = apply_map(second, step)
    assert np.allclose(apply_map(both, on(0, a)).matrix, expected.matrix)
    assert is_tp(both)
    with pytest.raises(ShapeMismatchError):
        compose(first, first)


def test_adjoint_map_is_hilbert_schmidt_adjoint(channel):
    adjoint = adjoint_map(channel)
    a, b = ginibre(2, 2, seed=14), ginibre(3, 3, seed=15)
    forward = apply_map(channel, on(0, a)).matrix
    backward = apply_map(adjoint, LabeledOperator(((1, AlgebraShape.full(3)),), b)).matrix
    assert np.isclose(np.vdot(b, forward), np.vdot(backward, a))
    assert unit_preserving_residual(adjoint) < 1e-9


def test_transpose_map(channel):
    a = ginibre(2, 2, seed=16)
    transposed = apply_map(transpose_map(channel), on(0, a)).matrix
    assert np.allclose(transposed, apply_map(channel, on(0, a.T)).matrix.T)


def test_from_operator_splits_outputs():
    m = random_channel(IN, [(4, [3])], seed=17)
    swapped = permute(m.choi, [0, 4])
    rebuilt = CpMapChoi.from_operator(swapped, [4])
    assert rebuilt.output_labels == (4,) and rebuilt.input_labels == (0,)
    assert np.allclose(rebuilt.choi.matrix, m.choi.matrix)


def test_choi_factors_must_match_layout():
    m = identity_channel(QUBIT)
    with pytest.raises(ShapeMismatchError):
        CpMapChoi(m.outputs, m.inputs, m.choi)


def test_tp_residual_of_scaled_channel(channel):
    scaled = CpMapChoi(channel.inputs, channel.outputs, channel.choi * 2)
    assert np.isclose(tp_residual(scaled), np.sqrt(2))
    assert not is_tp(scaled)
