"""
Linear-algebra layer: block algebras, labeled tensor products, Choi matrices and operator
subspaces.
"""
