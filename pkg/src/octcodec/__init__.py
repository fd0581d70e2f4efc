"""Multi-resolution learned image codec built on generalized octave convolutions."""

__version__ = "0.1.0"
