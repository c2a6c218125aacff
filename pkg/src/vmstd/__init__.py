"""Multi-level variational multiscale solver with separated (low-rank) fields."""

from __future__ import annotations

__version__ = "0.1.0"
