"""Local trainer for per-user one-class reconstructive adversarial networks."""

from .data import make_class, make_dataset
from .ran import RanModel, TrainConfig, default_discriminator, default_reconstructor
from .export import export_model, quantize, dequantize

__version__ = "0.1.0"

__all__ = [
    "RanModel",
    "TrainConfig",
    "default_reconstructor",
    "default_discriminator",
    "make_class",
    "make_dataset",
    "export_model",
    "quantize",
    "dequantize",
]
