"""
In-memory training sequences and the patch partition of keyframes
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional

import numpy as np

from config.flowcount_config import KernelSpec
from src.crowd_sim import SimSequence, agent_counts
from src.density_render import AnnotationFrame, render_density
from src.errors import AnnotationError, ConfigError, RegionError, ShapeError
from src.grid_flow import CellRegion, DensityMap, FlowField, GridShape, OpticalFlowField


logger = logging.getLogger(__name__)


@dataclass
class TrainingSequence:
    """
    Frames of one video with density targets at annotated frames.

    `targets` supervise training (usually Gaussian-rendered), `counts` are the
    exact per-cell head counts used for evaluation when known. `optical[t]` and
    `flows[t]` describe the pair (t, t+1).
    """
    shape: GridShape
    frames: List[np.ndarray]
    targets: Dict[int, DensityMap] = field(default_factory=dict)
    counts: Dict[int, DensityMap] = field(default_factory=dict)
    optical: Optional[List[OpticalFlowField]] = None
    flows: Optional[List[FlowField]] = None

    def __post_init__(self):
        expected = (self.shape.image_h, self.shape.image_w)
        for t, pixels in enumerate(self.frames):
            if np.shape(pixels) != expected:
                raise ShapeError(f"frame {t} is {np.shape(pixels)}, expected {expected}")

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    def keyframes(self, interval: int) -> List[int]:
        """Frames t with t % interval == 0 that have both neighbors"""
        return [t for t in range(1, self.n_frames - 1) if t % interval == 0]

    def eval_target(self, t: int) -> DensityMap:
        if t in self.counts:
            return self.counts[t]
        if t in self.targets:
            return self.targets[t]
        raise AnnotationError(f"no target for frame {t}")

    def require_targets(self, frames: List[int]) -> None:
        missing = [t for t in frames if t not in self.targets]
        if missing:
            raise AnnotationError(f"missing density targets for keyframes {missing[:10]}")

    def slice(self, start: int, stop: int) -> "TrainingSequence":
        """Frames [start, stop) re-indexed from 0"""
        if not 0 <= start < stop <= self.n_frames:
            raise ConfigError(f"cannot slice frames [{start}, {stop}) of {self.n_frames}")

        def shift(mapping: Dict[int, DensityMap]) -> Dict[int, DensityMap]:
            return {t - start: m for t, m in mapping.items() if start <= t < stop}

        return TrainingSequence(
            shape=self.shape,
            frames=self.frames[start:stop],
            targets=shift(self.targets),
            counts=shift(self.counts),
            optical=self.optical[start:stop - 1] if self.optical is not None else None,
            flows=self.flows[start:stop - 1] if self.flows is not None else None,
        )

    @classmethod
    def from_simulation(cls, sim: SimSequence, kernel: KernelSpec = KernelSpec(), smooth: bool = True):
        shape = sim.shape
        counts = {t: agent_counts(state, shape) for t, state in enumerate(sim.states)}
        if smooth:
            targets = {
                t: render_density(AnnotationFrame(t, state.heads_px(shape)), kernel, shape)
                for t, state in enumerate(sim.states)
            }
        else:
            targets = dict(counts)
        return cls(
            shape=shape,
            frames=[frame.pixels for frame in sim.frames],
            targets=targets,
            counts=counts,
            optical=list(sim.optical),
            flows=list(sim.flows),
        )


def patch_regions(shape: GridShape, n: int) -> List[CellRegion]:
    """n x n partition of the grid in row-major order; uneven grids get uneven patches"""
    if n > shape.rows or n > shape.cols:
        raise RegionError(f"cannot split a {shape.rows}x{shape.cols} grid into {n}x{n} patches")
    row_edges = [(i * shape.rows) // n for i in range(n + 1)]
    col_edges = [(i * shape.cols) // n for i in range(n + 1)]
    return [
        CellRegion(row_edges[i], row_edges[i + 1], col_edges[j], col_edges[j + 1])
        for i in range(n)
        for j in range(n)
    ]


def nominal_patch_size(shape: GridShape, n: int):
    regions = patch_regions(shape, n)
    return max(r.n_rows for r in regions), max(r.n_cols for r in regions)


def crop_frame(pixels: np.ndarray, region: CellRegion, cell_px: int) -> np.ndarray:
    return np.asarray(pixels)[region.row0 * cell_px:region.row1 * cell_px, region.col0 * cell_px:region.col1 * cell_px]


def inner_mask(inner: CellRegion, outer: CellRegion) -> np.ndarray:
    """1 on the cells of `inner`, 0 on the halo of `outer` around it"""
    mask = np.zeros((outer.n_rows, outer.n_cols))
    mask[inner.relative_to(outer).slices] = 1.0
    return mask


def pad_to(values: np.ndarray, inner: CellRegion, outer: CellRegion) -> np.ndarray:
    """Embed a map over `inner` into a zero map over `outer`"""
    out = np.zeros((outer.n_rows, outer.n_cols))
    out[inner.relative_to(outer).slices] = values
    return out
