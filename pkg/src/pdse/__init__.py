"""Dual-branch predictive-diffusion speech enhancement toolkit."""

__version__ = "0.1.0"

from pdse.estimator import WaveformDegrader, WaveformEnhancer

__all__ = ["WaveformEnhancer", "WaveformDegrader", "__version__"]
