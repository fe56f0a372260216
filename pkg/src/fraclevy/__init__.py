"""Simulation and verification toolkit for fractional evolution equations with
a piecewise constant argument driven by Levy noise."""

__version__ = "0.1.0"
