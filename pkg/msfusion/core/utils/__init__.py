"""
Core utility functions shared by the domains.
"""

from .arrays import (
    angle_between_deg,
    normalize_vectors,
    readonly,
    rotate_towards,
)

__all__ = [
    "angle_between_deg",
    "normalize_vectors",
    "readonly",
    "rotate_towards",
]
