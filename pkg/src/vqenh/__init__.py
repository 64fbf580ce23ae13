"""QP-adaptive perceptual enhancement of compressed video.

A target frame is fused with its two temporal neighbors through
cross-frame attention over frozen feature pyramids, decoded
progressively, and modulated by the encoding quantization parameter;
training is adversarial with perceptual and feature-matching losses.
"""

__version__ = "0.1.0"

from .core import (AblationMask, ClipTriplet, Frame, ModelConfig, QPCode,
                   TrainConfig, encode_qp, decode_qp, load_config,
                   make_triplet, pad_to_multiple, save_config)
from .errors import (ConfigError, FormatError, InvalidInputError, NumericError,
                     PluginError, ShapeError, UnknownQPError, VqenhError)
from .estimator import VideoEnhancer
from .pipeline import (Generator, build_generator, count_parameters,
                       enhance_frame, enhance_sequence)

__all__ = [
    "__version__",
    "AblationMask",
    "ClipTriplet",
    "ConfigError",
    "Frame",
    "FormatError",
    "Generator",
    "InvalidInputError",
    "ModelConfig",
    "NumericError",
    "PluginError",
    "QPCode",
    "ShapeError",
    "TrainConfig",
    "UnknownQPError",
    "VideoEnhancer",
    "VqenhError",
    "build_generator",
    "count_parameters",
    "decode_qp",
    "encode_qp",
    "enhance_frame",
    "enhance_sequence",
    "load_config",
    "make_triplet",
    "pad_to_multiple",
    "save_config",
]
