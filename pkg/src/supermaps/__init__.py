"""
Generalized channels, supermaps and combs built on the linear-algebra layer.
"""
