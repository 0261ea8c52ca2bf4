"""
qcomb - verification and decomposition of generalized quantum channels, combs and testers
on finite-dimensional C*-algebras.
"""

__version__ = "0.1.0"
__author__ = "qcomb developers"
