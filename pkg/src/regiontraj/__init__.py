"""Region-based relation learning and stochastic multi-goal estimation for
pedestrian trajectory prediction."""

__version__ = "0.1.0"

from .data import (AgentTrack, DatasetSplit, SceneRecording, SequenceSample,
                   build_windows, estimate_kinematics, leave_one_out_split,
                   parse_ethucy_file, parse_sdd_annotations, rotate_scene)
from .density import (DensityMapSequence, SceneGeometry, render_density_frame,
                      render_sequence, world_to_map)
from .metrics import ade, fde, kde_nll, min_of_k, perturb_observations
from .model import ModelConfig, TrajectoryPredictor, forward_infer, forward_train

__all__ = [
    "AgentTrack", "DatasetSplit", "SceneRecording", "SequenceSample",
    "build_windows", "estimate_kinematics", "leave_one_out_split",
    "parse_ethucy_file", "parse_sdd_annotations", "rotate_scene",
    "DensityMapSequence", "SceneGeometry", "render_density_frame",
    "render_sequence", "world_to_map",
    "ade", "fde", "kde_nll", "min_of_k", "perturb_observations",
    "ModelConfig", "TrajectoryPredictor", "forward_infer", "forward_train",
]
