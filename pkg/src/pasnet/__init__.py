"""Multiplier-free spiking neural network for multi-node IMU activity recognition."""

from .config import PROFILES, ModelConfig, TrainConfig, load_config, parse_config, profile
from .errors import (ConfigurationError, InputError, InvalidStateError, PasNetError, TrainingDiverged,
                     TrainingError)
from .model import PASNet, build_model
from .streaming import StreamingEngine, stream_with_exit

__version__ = "0.1.0"

__all__ = [
    "PROFILES", "ModelConfig", "TrainConfig", "load_config", "parse_config", "profile",
    "ConfigurationError", "InputError", "InvalidStateError", "PasNetError", "TrainingDiverged",
    "TrainingError", "PASNet", "build_model", "StreamingEngine", "stream_with_exit",
]
