"""tempogan: temporally coherent super-resolution for smoke flows."""

__version__ = "0.1.0"
