"""
Crowd simulator package initialization
"""
from src.grid_flow import OpticalFlowField

from .ground_truth import agent_counts, ground_truth_flow, ground_truth_optical, rasterize
from .sequence import SimSequence, simulate
from .simulator import (
    ObservationFrame,
    SimState,
    decode_trajectories,
    encode_trajectories,
    ground_plane_homography,
    initial_state,
    records_to_states,
    states_to_records,
    step,
)

__all__ = [
    "ObservationFrame",
    "OpticalFlowField",
    "SimSequence",
    "SimState",
    "agent_counts",
    "decode_trajectories",
    "encode_trajectories",
    "ground_plane_homography",
    "ground_truth_flow",
    "ground_truth_optical",
    "initial_state",
    "rasterize",
    "records_to_states",
    "simulate",
    "states_to_records",
    "step",
]
