"""Complex-valued fully convolutional network for dense labeling of
polarimetric SAR-style complex imagery, written on top of numpy."""

from .ctensor import DTYPE, FormatError, ShapeError
from .initializers import InitSpec, Scheme
from .net import NetConfig, NetModel, build, load, predict_image, save

__version__ = "0.1.0"

__all__ = [
    "DTYPE", "FormatError", "ShapeError", "InitSpec", "Scheme", "NetConfig",
    "NetModel", "build", "load", "predict_image", "save",
]
