"""Recurrent-network laboratory: GRU/ConvGRU with adaptive detrending,
recurrent batch normalization, layer normalization, and a full training and
diagnostics pipeline on synthetic contextual-recognition tasks."""

from .tensor import ConvSpec, NumericError, Prng, ShapeError, Tensor

__all__ = ["Tensor", "ConvSpec", "Prng", "NumericError", "ShapeError"]
__version__ = "0.1.0"
