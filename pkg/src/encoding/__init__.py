"""
Encoding package initialization
"""
from .codec import FieldEncoder, FieldValidator

__all__ = ["FieldEncoder", "FieldValidator"]
