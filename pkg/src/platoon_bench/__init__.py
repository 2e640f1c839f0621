"""Longitudinal platoon simulation: linear feedback and distributed MPC."""

__version__ = "0.1.0"

from . import model, solver  # noqa: E402
