"""Egocentric spatial-memory mapping engine and desk-scale maze simulator."""

from .bvu import bvu_step, merge_maps, warp_map
from .geometry import (
    ActionLimits,
    Affine2,
    Egomotion,
    NoiseModel,
    Pose,
    compose_pose,
    egomotion_to_affine,
    perturb_egomotion,
    validate_egomotion,
)
from .memory import GlobalMemory, detect_loop_closure, read_local, write_local, write_place
from .place import PlaceEncoder, embedding_distance, encode_place, triplet_loss
from .world import MazeMap, SensorConfig, observe_local, parse_maze, raycast

__version__ = "0.1.0"

__all__ = [
    "ActionLimits",
    "Affine2",
    "Egomotion",
    "GlobalMemory",
    "MazeMap",
    "NoiseModel",
    "PlaceEncoder",
    "Pose",
    "SensorConfig",
    "bvu_step",
    "compose_pose",
    "detect_loop_closure",
    "egomotion_to_affine",
    "embedding_distance",
    "encode_place",
    "merge_maps",
    "observe_local",
    "parse_maze",
    "perturb_egomotion",
    "raycast",
    "read_local",
    "triplet_loss",
    "validate_egomotion",
    "warp_map",
    "write_local",
    "write_place",
]
