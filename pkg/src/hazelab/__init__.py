"""hazelab: haze synthesis, a semantic dehazing CNN, and its evaluation harness."""

__version__ = "0.1.0"
