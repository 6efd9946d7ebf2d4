"""Quantum feature extraction for THz multi-layer imaging.

A statevector-simulated variational circuit turns THz-TDS waveforms into
feature vectors, a small batch-normalized MLP scores the six layer surfaces,
and classical baselines are provided for comparison. A synthetic raster-scan
generator stands in for measured data.
"""

from thzq.errors import ThzqError

__version__ = "0.1.0"

__all__ = ["ThzqError", "__version__"]
