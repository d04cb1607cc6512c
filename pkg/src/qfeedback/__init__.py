"""Feedback master equations, adiabatic elimination checks and trajectory tools."""

__version__ = "0.1.0"
