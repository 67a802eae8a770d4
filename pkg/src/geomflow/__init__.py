"""Numerical laboratory for Ricci flow coupled with harmonic map flow."""

from . import cli, nil3, ode, rrfs, spd

__all__ = ["cli", "nil3", "ode", "rrfs", "spd"]
__version__ = "0.1.0"
