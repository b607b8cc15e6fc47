"""Compound-eye visuo-tactile sensing: stereo depth, marker tracking and force regression."""

from .force import ForceNet, load_weights, train
from .kernels import BACKEND
from .stereo import DepthMap, SgbmParams, StereoPipeline, WlsParams, estimate_depth
from .synthgen import SceneSpec, SensorLayout, default_layout, render_compound_frame
from .tactile import TactileTracker

__version__ = "0.1.0"

__all__ = [
    "BACKEND",
    "DepthMap",
    "ForceNet",
    "SceneSpec",
    "SensorLayout",
    "SgbmParams",
    "StereoPipeline",
    "TactileTracker",
    "WlsParams",
    "default_layout",
    "estimate_depth",
    "load_weights",
    "render_compound_frame",
    "train",
]
