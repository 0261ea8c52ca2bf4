"""
Tests for operator subspaces and the section helpers built on them.
"""

import numpy as np
import pytest

from src.core.exceptions import MembershipError, ShapeMismatchError
from src.linalg.algebra import AlgebraShape
from src.linalg.choi import choi_of_function
from src.linalg.subspace import (
    Subspace,
    adjoint_image,
    component_norm,
    default_state,
    partial_trace_adjoint_image,
    preimage_under_map,
    preimage_under_partial_trace,
    section_contains,
    section_span,
    span,
    tilde,
)
from src.linalg.tensor import LabeledOperator, identity_operator, permute
from src.supermaps.sampler import ginibre, random_layout_state

QUBIT = AlgebraShape.full(2)
ONE = [(0, [2])]
TWO = [(1, [2]), (0, [2])]
SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.diag([1.0, -1.0]).astype(complex)


def on(matrix: np.ndarray, label: int = 0) -> LabeledOperator:
    return LabeledOperator(((label, QUBIT),), matrix)


@pytest.fixture
def diagonal():
    return span([on(np.eye(2)), on(SIGMA_Z)])


def test_constructors():
    assert Subspace.full(ONE).dim == 4
    assert Subspace.zero(ONE).dim == 0
    assert Subspace.scalars(ONE).dim == 1
    assert Subspace.full([(0, [1, 2])]).ambient_dim == 5


def test_span_and_contains(diagonal):
    assert diagonal.dim == 2
    assert diagonal.contains(on(np.diag([0.3, 0.7])))
    assert not diagonal.contains(on(SIGMA_X))
    assert np.isclose(diagonal.residual(on(SIGMA_X)), np.sqrt(2))
    projected = diagonal.project(on(np.array([[1, 2], [3, 4]])))
    assert np.allclose(projected.matrix, np.diag([1, 4]))


def test_span_drops_dependent_elements():
    j = span([on(np.eye(2)), on(2 * np.eye(2)), on(SIGMA_Z)])
    assert j.dim == 2


def test_orthocomplement_and_lattice(diagonal):
    perp = diagonal.orthocomplement()
    assert perp.dim == 2
    assert perp.contains(on(SIGMA_X))
    assert diagonal.join(perp).equals(Subspace.full(ONE))
    assert diagonal.meet(perp).dim == 0
    scalars = Subspace.scalars(ONE)
    assert scalars.is_subspace_of(diagonal)
    assert not diagonal.is_subspace_of(scalars)
    assert diagonal.meet(span([on(np.eye(2)), on(SIGMA_X)])).equals(scalars)


def test_transpose_and_adjoint():
    upper = span([on(np.array([[0, 1], [0, 0]]))])
    assert upper.transpose().contains(on(np.array([[0, 0], [1, 0]])))
    assert upper.adjoint().contains(on(np.array([[0, 0], [1, 0]])))
    assert not upper.is_self_adjoint()
    assert span([on(SIGMA_X), on(SIGMA_Z)]).is_self_adjoint()


def test_permute_and_tensor(diagonal):
    other = span([on(SIGMA_X, 1)])
    joint = diagonal.tensor(other)
    assert joint.dim == 2
    assert joint.labels == (0, 1)
    element = LabeledOperator(((0, QUBIT), (1, QUBIT)), np.kron(SIGMA_Z, SIGMA_X))
    assert joint.contains(element)
    swapped = joint.permute([1, 0])
    assert swapped.contains(permute(element, [1, 0]))
    with pytest.raises(ShapeMismatchError):
        diagonal.tensor(diagonal)


def test_preimage_under_partial_trace_dimension():
    j = preimage_under_partial_trace(Subspace.scalars(ONE), TWO)
    assert j.dim == 13
    assert j.contains(identity_operator(TWO))
    traceless_first = LabeledOperator(((1, QUBIT), (0, QUBIT)), np.kron(SIGMA_Z, SIGMA_X))
    assert j.contains(traceless_first)
    assert not j.contains(LabeledOperator(((1, QUBIT), (0, QUBIT)), np.kron(np.eye(2), SIGMA_Z)))


def test_partial_trace_adjoint_image(diagonal):
    j = partial_trace_adjoint_image(diagonal, TWO)
    assert j.dim == 2
    assert j.labels == (1, 0)
    assert j.contains(LabeledOperator(((1, QUBIT), (0, QUBIT)), np.kron(np.eye(2), SIGMA_Z)))


def test_preimage_and_adjoint_image_of_a_map(diagonal):
    dephase = choi_of_function(lambda a: np.diag(np.diag(a)), ONE, [(1, [2])])
    target = span([on(np.eye(2), 1)])
    pre = preimage_under_map(dephase, target)
    assert pre.contains(on(np.eye(2)))
    assert pre.contains(on(SIGMA_X))
    assert not pre.contains(on(SIGMA_Z))
    image = adjoint_image(dephase, span([on(SIGMA_Z, 1)]))
    assert image.equals(span([on(SIGMA_Z)]))


def test_tilde_of_full_and_scalars():
    assert tilde(Subspace.full(ONE)).equals(Subspace.scalars(ONE))
    assert tilde(Subspace.scalars(ONE)).equals(Subspace.full(ONE))


def test_component_norm():
    j = span([on(SIGMA_Z)])
    x = LabeledOperator(((1, QUBIT), (0, QUBIT)), np.kron(np.eye(2), SIGMA_Z) + np.kron(SIGMA_X, np.eye(2)))
    assert np.isclose(component_norm(x, j), 2.0)
    assert component_norm(x, Subspace.zero(ONE)) == 0.0


def test_section_contains(diagonal):
    assert section_contains(diagonal, on(np.diag([0.25, 0.75])))
    assert not section_contains(diagonal, on(np.diag([0.5, 0.75])))
    assert not section_contains(diagonal, on(np.diag([1.5, -0.5])))


def test_section_span_restricts_to_support(diagonal):
    assert section_span(diagonal, on(np.eye(2) / 2)).equals(diagonal)
    pure = section_span(diagonal, on(np.diag([1.0, 0.0])))
    assert pure.dim == 1
    assert pure.contains(on(np.diag([1.0, 0.0])))
    with pytest.raises(MembershipError):
        section_span(diagonal, on(np.array([[0.5, 0.5], [0.5, 0.5]])))


def test_default_state(diagonal):
    assert np.allclose(default_state(diagonal).matrix, np.eye(2) / 2)
    with pytest.raises(MembershipError):
        default_state(span([on(SIGMA_X)]))


def test_vector_reorders_labels():
    j = Subspace.full(TWO)
    rho = random_layout_state([(0, [2]), (1, [2])], seed=3)
    assert j.contains(rho)
    assert np.isclose(np.linalg.norm(j.vector(rho)), rho.norm())
    with pytest.raises(ShapeMismatchError):
        j.vector(on(ginibre(2, 2, seed=1)))
