"""Outlier-mining adversarial training for robust OOD detection, plus its Gaussian-model theory checks."""

__version__ = "0.1.0"
