"""
Tests for labeled tensor products, partial operations and the link product.
"""

import numpy as np
import pytest

from src.core.exceptions import ShapeMismatchError
from src.linalg.algebra import AlgebraShape
from src.linalg.tensor import (
    Factor,
    LabeledOperator,
    compress,
    embed_identity,
    identity_operator,
    layout_coordinates,
    link_chain,
    link_product,
    partial_trace,
    partial_transpose,
    permute,
    relabel,
    tensor,
    tracial_operator,
)

QUBIT = AlgebraShape.full(2)


def random_matrix(rng, d: int) -> np.ndarray:
    return rng.standard_normal((d, d)) + 1j * rng.standard_normal((d, d))


def on(label: int, matrix: np.ndarray, shape: AlgebraShape = QUBIT) -> LabeledOperator:
    return LabeledOperator((Factor(label, shape),), matrix)


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def test_tensor_is_kronecker_in_listed_order(rng):
    a, b = random_matrix(rng, 2), random_matrix(rng, 2)
    x = tensor(on(0, a), on(1, b))
    assert x.labels == (0, 1)
    assert np.allclose(x.matrix, np.kron(a, b))


def test_tensor_rejects_shared_labels():
    with pytest.raises(ShapeMismatchError):
        tensor(identity_operator([(0, [2])]), identity_operator([(0, [2])]))


def test_duplicate_labels_are_rejected():
    with pytest.raises(ShapeMismatchError):
        identity_operator([(3, [2]), (3, [2])])


def test_partial_trace(rng):
    a, b = random_matrix(rng, 2), random_matrix(rng, 3)
    x = tensor(on(0, a), on(5, b, AlgebraShape.full(3)))
    assert np.allclose(partial_trace(x, [0]).matrix, np.trace(a) * b)
    assert np.allclose(partial_trace(x, [5]).matrix, np.trace(b) * a)
    assert np.isclose(partial_trace(x, [0, 5]).trace(), np.trace(a) * np.trace(b))


def test_partial_transpose(rng):
    a, b = random_matrix(rng, 2), random_matrix(rng, 2)
    x = tensor(on(0, a), on(1, b))
    assert np.allclose(partial_transpose(x, [1]).matrix, np.kron(a, b.T))
    assert np.allclose(partial_transpose(x, [0, 1]).matrix, x.matrix.T)


def test_permute_swaps_factors(rng):
    a, b = random_matrix(rng, 2), random_matrix(rng, 3)
    x = tensor(on(0, a), on(1, b, AlgebraShape.full(3)))
    swapped = permute(x, [1, 0])
    assert swapped.labels == (1, 0)
    assert np.allclose(swapped.matrix, np.kron(b, a))
    with pytest.raises(ShapeMismatchError):
        permute(x, [0, 2])


def test_addition_aligns_labels(rng):
    a, b = random_matrix(rng, 2), random_matrix(rng, 2)
    x = tensor(on(0, a), on(1, b))
    total = x + permute(x, [1, 0])
    assert np.allclose(total.matrix, 2 * x.matrix)


def test_link_product_without_shared_labels_is_tensor(rng):
    a, b = random_matrix(rng, 2), random_matrix(rng, 2)
    assert np.allclose(link_product(on(0, a), on(1, b)).matrix, np.kron(a, b))


def test_link_with_identity_channel_returns_the_state(rng):
    vec = np.eye(2).reshape(4)
    identity_choi = LabeledOperator(((1, QUBIT), (0, QUBIT)), np.outer(vec, vec))
    g = random_matrix(rng, 2)
    rho = g @ g.conj().T
    rho /= np.trace(rho)
    out = link_product(identity_choi, on(0, rho))
    assert out.labels == (1,)
    assert np.allclose(out.matrix, rho)


def test_link_product_matches_trace_formula(rng):
    x = LabeledOperator(((0, QUBIT), (1, QUBIT)), random_matrix(rng, 4))
    y = LabeledOperator(((1, QUBIT), (2, QUBIT)), random_matrix(rng, 4))
    big_x = np.kron(x.matrix, np.eye(2))
    big_y = LabeledOperator(((0, QUBIT), (1, QUBIT), (2, QUBIT)), np.kron(np.eye(2), y.matrix))
    big_y = partial_transpose(big_y, [1])
    product = LabeledOperator(((0, QUBIT), (1, QUBIT), (2, QUBIT)), big_y.matrix @ big_x)
    expected = partial_trace(product, [1])
    assert np.allclose(link_product(x, y).matrix, expected.matrix)


def test_link_product_is_commutative_up_to_order(rng):
    x = LabeledOperator(((0, QUBIT), (1, QUBIT)), random_matrix(rng, 4))
    y = LabeledOperator(((2, QUBIT), (1, QUBIT)), random_matrix(rng, 4))
    xy, yx = link_product(x, y), link_product(y, x)
    assert xy.labels == (0, 2) and yx.labels == (2, 0)
    assert np.allclose(permute(yx, xy.labels).matrix, xy.matrix)


def test_link_chain_is_associative(rng):
    x = LabeledOperator(((0, QUBIT), (1, QUBIT)), random_matrix(rng, 4))
    y = LabeledOperator(((1, QUBIT), (2, QUBIT)), random_matrix(rng, 4))
    z = LabeledOperator(((2, QUBIT), (3, QUBIT)), random_matrix(rng, 4))
    left = link_product(link_product(x, y), z)
    assert np.allclose(link_chain([x, y, z]).matrix, left.matrix)


def test_link_product_rejects_mismatched_shared_factor():
    x = identity_operator([(0, [2])])
    y = identity_operator([(0, [1, 1])])
    with pytest.raises(ShapeMismatchError):
        link_product(x, y)


def test_block_pattern_of_products():
    factors = ((0, AlgebraShape((1, 1))), (1, QUBIT))
    assert len(layout_coordinates(factors)) == 8
    with pytest.raises(ShapeMismatchError):
        LabeledOperator(factors, np.ones((4, 4)))


def test_compress_selects_a_block(rng):
    shape = AlgebraShape((1, 2))
    g = random_matrix(rng, 3) * shape.block_mask
    x = tensor(on(0, g, shape), on(1, np.eye(2)))
    kept = compress(x, {0: 1})
    expected = np.kron(np.diag([0, 1, 1]) @ g @ np.diag([0, 1, 1]), np.eye(2))
    assert np.allclose(kept.matrix, expected)


def test_embed_identity_and_relabel(rng):
    a = random_matrix(rng, 2)
    x = embed_identity(on(0, a), [(1, [2])], order=[0, 1])
    assert np.allclose(x.matrix, np.kron(a, np.eye(2)))
    moved = relabel(x, {0: 7})
    assert moved.labels == (7, 1)


def test_tracial_operator_has_unit_trace():
    tau = tracial_operator([(0, [2, 1]), (1, [3])])
    assert np.isclose(tau.trace(), 1)
