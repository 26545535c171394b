"""Unified-transform and d-bar solvers for linear KP and KPII on the half-plane."""

from __future__ import annotations

__version__ = "0.1.0"
