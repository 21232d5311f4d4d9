"""Desk-scale RLVR laboratory: GRPO on synthetic verifiable tasks under weak supervision."""

__version__ = "0.1.0"
