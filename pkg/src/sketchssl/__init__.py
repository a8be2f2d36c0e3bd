"""Self-supervised sketch representations learned by translating between
raster images and pen-stroke sequences."""

from .errors import DataError, NumericalError, SketchSSLError, UsageError
from .strokes import PenState, StrokeSequence

__version__ = "0.1.0"
__all__ = ["DataError", "NumericalError", "PenState", "SketchSSLError", "StrokeSequence", "UsageError", "__version__"]
