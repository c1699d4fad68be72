"""Deterministic UPnP lab: protocol stack, simulated network, attacks and a token-based defense."""

from __future__ import annotations

__version__ = "0.1.0"

from ._kernel import BACKEND  # noqa: E402  (exposes which wire kernel is active)

__all__ = ["BACKEND", "__version__"]
