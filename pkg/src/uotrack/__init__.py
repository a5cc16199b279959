"""Unified online multi-task object tracking with desk-scale neural kernels."""

from .association import Tracker, TrackerConfig, track_sequence
from .geometry import BinaryMask, Box, RleMask
from .metrics import MetricsReport, evaluate
from .simulator import ScenarioConfig, generate, scripted_crossing
from .structures import FrameDetections, TrackedObject

__version__ = "0.1.0"

__all__ = [
    "BinaryMask",
    "Box",
    "FrameDetections",
    "MetricsReport",
    "RleMask",
    "ScenarioConfig",
    "TrackedObject",
    "Tracker",
    "TrackerConfig",
    "evaluate",
    "generate",
    "scripted_crossing",
    "track_sequence",
]
