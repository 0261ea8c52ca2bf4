"""
Core functionality for qcomb: settings, logging, errors and verdicts.
"""
