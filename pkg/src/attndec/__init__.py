"""Attention decoding from multichannel biosignals with (generalized) canonical correlation analysis."""

from .errors import AttnDecError, InvalidArgument, InvalidDataset, NumericDegeneracy
from .linalg import LagSpec, TimeSeries

__all__ = ["AttnDecError", "InvalidArgument", "InvalidDataset", "NumericDegeneracy", "LagSpec", "TimeSeries"]
__version__ = "0.1.0"
