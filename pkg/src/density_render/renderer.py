"""
Ground-truth density rendering from head annotations, in the image plane and on the ground plane
"""
import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from config.flowcount_config import KernelSpec
from src.errors import AnnotationError, ConfigError, HorizonError, ShapeError
from src.grid_flow import DensityMap, GridShape, OpticalFlowField


logger = logging.getLogger(__name__)

HORIZON_EPS = 1e-12
GROUND_CELL_M = 0.30


def _as_points(points) -> np.ndarray:
    array = np.asarray(points, dtype=np.float64)
    if array.size == 0:
        return np.zeros((0, 2))
    if array.ndim != 2 or array.shape[1] != 2:
        raise ShapeError(f"points must be an (n, 2) array, got {array.shape}")
    return array


@dataclass(frozen=True, eq=False)
class AnnotationFrame:
    """Head positions (x, y) in pixels for one frame"""
    time_index: int
    heads: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    roi_mask: Optional[np.ndarray] = None

    def __post_init__(self):
        heads = _as_points(self.heads).copy()
        if not np.all(np.isfinite(heads)):
            raise AnnotationError(f"frame {self.time_index} has non-finite head coordinates")
        heads.setflags(write=False)
        object.__setattr__(self, "heads", heads)
        if self.roi_mask is not None:
            mask = np.array(self.roi_mask, dtype=bool)
            mask.setflags(write=False)
            object.__setattr__(self, "roi_mask", mask)

    @property
    def n_heads(self) -> int:
        return int(self.heads.shape[0])

    def check_roi(self, shape: GridShape) -> None:
        if self.roi_mask is not None and self.roi_mask.shape != (shape.rows, shape.cols):
            raise ShapeError(f"roi mask {self.roi_mask.shape} does not match grid {shape.rows}x{shape.cols}")


@dataclass(frozen=True, eq=False)
class Homography:
    """Projective map from the image plane to the ground plane"""
    h: np.ndarray

    def __post_init__(self):
        matrix = np.array(self.h, dtype=np.float64)
        if matrix.shape != (3, 3):
            raise ShapeError(f"homography must be 3x3, got {matrix.shape}")
        if abs(np.linalg.det(matrix)) <= 1e-12:
            raise ShapeError("homography is not invertible")
        matrix.setflags(write=False)
        object.__setattr__(self, "h", matrix)

    @classmethod
    def identity(cls) -> "Homography":
        return cls(np.eye(3))

    @classmethod
    def from_row_major(cls, values: Sequence[float]) -> "Homography":
        return cls(np.asarray(values, dtype=np.float64).reshape(3, 3))

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.h))

    def to_row_major(self) -> list:
        return [float(v) for v in self.h.ravel()]


def map_points(points, h: Homography) -> np.ndarray:
    """Apply the homography with division by the third homogeneous coordinate"""
    pts = _as_points(points)
    if len(pts) == 0:
        return pts.copy()
    homogeneous = np.column_stack([pts, np.ones(len(pts))]) @ h.h.T
    w = homogeneous[:, 2]
    horizon = np.flatnonzero(np.abs(w) < HORIZON_EPS)
    if horizon.size:
        index = int(horizon[0])
        raise HorizonError(f"point {index} {tuple(pts[index])} maps onto the horizon", point_index=index)
    return homogeneous[:, :2] / w[:, None]


def kernel_sum(points_cells: np.ndarray, sigma: float, truncation_radius: float, rows: int, cols: int) -> np.ndarray:
    """Sum of truncated 2D Gaussians centered on points, evaluated at cell centers (cell units)"""
    values = np.zeros((rows, cols))
    if len(points_cells) == 0:
        return values
    centers_x = np.arange(cols, dtype=np.float64) + 0.5
    centers_y = np.arange(rows, dtype=np.float64) + 0.5
    dx = centers_x[None, None, :] - points_cells[:, 0][:, None, None]
    dy = centers_y[None, :, None] - points_cells[:, 1][:, None, None]
    d2 = dx * dx + dy * dy
    var = sigma * sigma
    kernels = np.exp(-d2 / (2.0 * var)) / (2.0 * np.pi * var)
    kernels[d2 > (truncation_radius * sigma) ** 2] = 0.0
    return kernels.sum(axis=0)


def _check_inside_image(frame: AnnotationFrame, shape: GridShape) -> None:
    heads = frame.heads
    outside = (heads[:, 0] < 0) | (heads[:, 0] > shape.image_w) | (heads[:, 1] < 0) | (heads[:, 1] > shape.image_h)
    if np.any(outside):
        index = int(np.flatnonzero(outside)[0])
        raise AnnotationError(
            f"frame {frame.time_index}: head {index} at {tuple(heads[index])} lies outside the "
            f"{shape.image_w}x{shape.image_h} image"
        )


def render_density(frame: AnnotationFrame, kernel: KernelSpec, shape: GridShape) -> DensityMap:
    """Gaussian-smoothed density evaluated at cell centers"""
    _check_inside_image(frame, shape)
    frame.check_roi(shape)
    values = kernel_sum(frame.heads / shape.cell_px, kernel.sigma, kernel.truncation_radius, shape.rows, shape.cols)
    return DensityMap(shape, values)


def count_map(frame: AnnotationFrame, shape: GridShape) -> DensityMap:
    """Unsmoothed integer head counts per cell (floor binning)"""
    _check_inside_image(frame, shape)
    values = np.zeros((shape.rows, shape.cols))
    if frame.n_heads:
        cols = np.minimum(np.floor(frame.heads[:, 0] / shape.cell_px).astype(int), shape.cols - 1)
        rows = np.minimum(np.floor(frame.heads[:, 1] / shape.cell_px).astype(int), shape.rows - 1)
        np.add.at(values, (rows, cols), 1.0)
    return DensityMap(shape, values)


def render_ground_density(
    frame: AnnotationFrame,
    h: Homography,
    kernel: KernelSpec,
    ground_shape: GridShape,
    cell_m: float = GROUND_CELL_M,
) -> Tuple[DensityMap, int]:
    """Density over ground-plane cells of side cell_m, with the number of clipped heads"""
    if cell_m <= 0:
        raise ShapeError(f"cell_m must be > 0, got {cell_m}")
    ground = map_points(frame.heads, h)
    if not np.all(np.isfinite(ground)):
        raise AnnotationError(f"frame {frame.time_index}: mapped heads are not finite")
    cells = ground / cell_m
    inside = (
        (cells[:, 0] >= 0) & (cells[:, 0] <= ground_shape.cols)
        & (cells[:, 1] >= 0) & (cells[:, 1] <= ground_shape.rows)
    )
    clipped = int(np.count_nonzero(~inside))
    if clipped:
        logger.warning(f"frame {frame.time_index}: {clipped} heads fall outside the ground grid and were clipped")
    values = kernel_sum(
        cells[inside], kernel.sigma / cell_m, kernel.truncation_radius, ground_shape.rows, ground_shape.cols
    )
    return DensityMap(ground_shape, values), clipped


def warp_heads(frame: AnnotationFrame, optical: OpticalFlowField, direction: int = 1) -> Tuple[AnnotationFrame, int]:
    """Move heads along the bilinearly sampled optical flow; heads leaving the image are dropped"""
    if direction not in (1, -1):
        raise ConfigError(f"direction must be +1 or -1, got {direction}")
    shape = optical.shape
    if frame.n_heads == 0:
        return AnnotationFrame(frame.time_index + direction, frame.heads, frame.roi_mask), 0
    displacement = optical.sample(frame.heads[:, 0], frame.heads[:, 1])
    moved = frame.heads + direction * displacement
    inside = (
        (moved[:, 0] >= 0) & (moved[:, 0] <= shape.image_w)
        & (moved[:, 1] >= 0) & (moved[:, 1] <= shape.image_h)
    )
    dropped = int(np.count_nonzero(~inside))
    if dropped:
        logger.warning(f"frame {frame.time_index}: {dropped} warped heads left the image and were dropped")
    return AnnotationFrame(frame.time_index + direction, moved[inside], frame.roi_mask), dropped
