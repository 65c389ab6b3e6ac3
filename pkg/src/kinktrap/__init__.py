"""Simulation toolkit for kink defects in laser-cooled ion Coulomb crystals."""

__version__ = "0.1.0"
