"""
Shift Learning Lab: learning single-index models and juntas under randomly shifted inputs.
"""
__version__ = "1.0.0"
