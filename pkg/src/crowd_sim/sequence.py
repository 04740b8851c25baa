"""
Whole simulated sequences
"""
import logging
from dataclasses import dataclass, field
from typing import List, Optional

from config.flowcount_config import SimConfig
from src.density_render import AnnotationFrame, AnnotationSequence, Homography
from src.grid_flow import DensityMap, FlowField, GridShape, OpticalFlowField

from .ground_truth import agent_counts, ground_truth_flow, ground_truth_optical, rasterize
from .simulator import ObservationFrame, SimState, ground_plane_homography, initial_state, step


logger = logging.getLogger(__name__)


@dataclass
class SimSequence:
    """A simulated video with exact ground truth for every frame pair"""
    config: SimConfig
    states: List[SimState]
    frames: List[ObservationFrame] = field(default_factory=list)
    flows: List[FlowField] = field(default_factory=list)  # flows[t] is f^{t,t+1}
    optical: List[OpticalFlowField] = field(default_factory=list)
    homography: Optional[Homography] = None

    @property
    def shape(self) -> GridShape:
        return self.config.shape

    @property
    def n_frames(self) -> int:
        return len(self.states)

    def counts(self, t: int) -> DensityMap:
        return agent_counts(self.states[t], self.shape)

    def annotations(self) -> AnnotationSequence:
        frames = [AnnotationFrame(s.frame_index, s.heads_px(self.shape)) for s in self.states]
        return AnnotationSequence(
            frames=frames,
            image_w=self.shape.image_w,
            image_h=self.shape.image_h,
            homography=self.homography,
        )


def simulate(config: SimConfig) -> SimSequence:
    """Run the simulator for config.n_frames frames and derive every ground-truth field"""
    logger.info(
        f"Simulating {config.n_frames} frames of {config.n_agents} agents "
        f"({config.motion_model}, seed={config.seed}) on a {config.shape.rows}x{config.shape.cols} grid"
    )
    states = [initial_state(config)]
    for _ in range(config.n_frames - 1):
        states.append(step(states[-1], config))
    return SimSequence(
        config=config,
        states=states,
        frames=[rasterize(s, config) for s in states],
        flows=[ground_truth_flow(a, b, config.shape) for a, b in zip(states, states[1:])],
        optical=[ground_truth_optical(a, b, config.shape) for a, b in zip(states, states[1:])],
        homography=ground_plane_homography(config.shape),
    )
