"""Independently trained options on a pick-and-place surrogate, the analysis of
their origin and result sets, and two ways of adapting them into a sequence."""
from __future__ import annotations

__version__ = "0.1.0"
