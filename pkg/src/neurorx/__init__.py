"""Reservoir-computing MIMO-OFDM receivers with a structure-aware frequency-domain
classifier, decision feedback, 2D attention and conventional baselines."""

from .errors import ConfigurationError, NumericalFailure
from .txchain import PilotMode, PilotPattern, Subframe, SubframeSpec
from .channel import ChannelModel, ChannelProfile, PaConfig
from .pipeline import (DetectorConfig, DetectionReport, run_detector, run_montecarlo,
                       simulate_subframe)

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "NumericalFailure",
    "PilotMode",
    "PilotPattern",
    "Subframe",
    "SubframeSpec",
    "ChannelModel",
    "ChannelProfile",
    "PaConfig",
    "DetectorConfig",
    "DetectionReport",
    "run_detector",
    "run_montecarlo",
    "simulate_subframe",
]
