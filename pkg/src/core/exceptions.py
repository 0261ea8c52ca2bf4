"""
Exception hierarchy for qcomb.

Verifiers answer "does not hold" with a value; exceptions signal inputs that cannot be
checked at all, or constructions whose preconditions fail.
"""


class QcombError(Exception):
    """Base class for all toolkit errors."""


class ShapeMismatchError(QcombError):
    """Algebras, factor labels or matrix dimensions do not line up."""


class NotHermitianError(QcombError):
    """An operator expected to be Hermitian is not, within tolerance."""


class NotPositiveError(QcombError):
    """An operator expected to be positive semidefinite is not, within tolerance."""


class MembershipError(QcombError):
    """A required membership (channel, section, supermap set, ...) fails."""


class DecompositionError(QcombError):
    """A constructive decomposition could not be verified."""


class DimensionBudgetError(QcombError):
    """A construction would exceed the configured dimension budget."""


class MalformedInputError(QcombError):
    """A file payload or command-line argument cannot be interpreted."""


class CrossCheckError(QcombError):
    """Two independent computations of the same result disagree beyond tolerance."""
