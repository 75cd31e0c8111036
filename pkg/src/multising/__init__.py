"""Numerical toolkit for multisingular hyperbolicity of singular flows."""
from __future__ import annotations

__version__ = "0.1.0"
