"""Sound source localization with a frequency-domain steered beamformer.

A delay-and-sum beamformer is steered over a geodesic direction grid using
whitened, SNR-weighted cross-correlations; a per-region Bayesian tracker
turns the per-block detections into source-presence probabilities.
"""

from .geometry import (MicrophoneArray, SphereGrid, TdoaTable, build_grid, build_tdoa_table,
                       load_array_config, nearest_region, prism_array)
from .pipeline import DetectionEvent, Localizer, PipelineConfig, run_pipeline
from .search import DirectionDetection, direction_search, locate_sources
from .simulate import Scene, SceneSource, synthesize
from .tracker import TrackerParams, fuse

__all__ = [
    "MicrophoneArray", "SphereGrid", "TdoaTable", "build_grid", "build_tdoa_table",
    "load_array_config", "nearest_region", "prism_array", "DetectionEvent", "Localizer",
    "PipelineConfig", "run_pipeline", "DirectionDetection", "direction_search",
    "locate_sources", "Scene", "SceneSource", "synthesize", "TrackerParams", "fuse",
]
