"""
File models and JSON storage for operators, sections, specs and manifests.
"""
