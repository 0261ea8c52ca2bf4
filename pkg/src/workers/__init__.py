"""
Command Workers

This package contains workers for:
- Verification (membership, equivalence, application)
- Decomposition (simple factors, semilocal splits, ladders, channel realizations)
"""
