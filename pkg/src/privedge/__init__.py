"""Two-party secure computation engine for private one-class prediction.

The service provider (s1) and a non-colluding regulator (s2) evaluate
per-user convolutional reconstructors over additively secret-shared
images and weights, compare the reconstruction dissimilarities inside a
garbled circuit, and reveal nothing but the matched class (or none) and
the resulting allow/block decision.
"""

from .fixedpoint import RingParams, decode, encode, truncate
from .model import (
    LayerSpec,
    ReconstructorSpec,
    WeightSet,
    load_model_dir,
    quantize_weights,
    save_model_dir,
    share_weights,
    validate_undercomplete,
)
from .rng import RandomSource
from .sharing import ShareTensor, reconstruct, share

__version__ = "0.1.0"

__all__ = [
    "RingParams",
    "encode",
    "decode",
    "truncate",
    "RandomSource",
    "ShareTensor",
    "share",
    "reconstruct",
    "LayerSpec",
    "ReconstructorSpec",
    "WeightSet",
    "quantize_weights",
    "validate_undercomplete",
    "share_weights",
    "save_model_dir",
    "load_model_dir",
    "__version__",
]
