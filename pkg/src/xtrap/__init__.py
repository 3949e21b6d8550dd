"""Graph OOD data augmentation by linear extrapolation in structure and feature space."""

__version__ = "0.1.0"
