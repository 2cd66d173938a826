"""Invariant-domain-preserving ALE continuous finite element solver."""

__version__ = "0.1.0"
