"""Cleaning, map matching and enrichment of cycling GPS traces against OpenStreetMap."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import CycleTrailError, InputError, RemoteError  # noqa: E402

__all__ = ["__version__", "CycleTrailError", "InputError", "RemoteError"]
