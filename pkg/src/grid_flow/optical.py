"""
Optical flow fields sampled on the grid
"""
from dataclasses import dataclass

import numpy as np

from src.errors import ShapeError
from src.grid_flow.flow_field import GridShape


@dataclass(frozen=True, eq=False)
class OpticalFlowField:
    """Per-cell apparent motion (u, v) in pixels per frame"""
    shape: GridShape
    uv: np.ndarray

    def __post_init__(self):
        uv = np.array(self.uv, dtype=np.float64, copy=True)
        if uv.shape != (self.shape.rows, self.shape.cols, 2):
            raise ShapeError(f"optical flow {uv.shape} does not match grid {self.shape.rows}x{self.shape.cols}x2")
        if not np.all(np.isfinite(uv)):
            raise ShapeError("optical flow must be finite")
        uv.setflags(write=False)
        object.__setattr__(self, "uv", uv)

    @classmethod
    def zeros(cls, shape: GridShape) -> "OpticalFlowField":
        return cls(shape, np.zeros((shape.rows, shape.cols, 2)))

    def sample(self, x_px: np.ndarray, y_px: np.ndarray) -> np.ndarray:
        """Bilinear interpolation between cell centers, edge values held constant"""
        cell_px = self.shape.cell_px
        gx = np.clip(np.asarray(x_px, dtype=np.float64) / cell_px - 0.5, 0.0, self.shape.cols - 1)
        gy = np.clip(np.asarray(y_px, dtype=np.float64) / cell_px - 0.5, 0.0, self.shape.rows - 1)
        x0 = np.floor(gx).astype(int)
        y0 = np.floor(gy).astype(int)
        x1 = np.minimum(x0 + 1, self.shape.cols - 1)
        y1 = np.minimum(y0 + 1, self.shape.rows - 1)
        wx = (gx - x0)[:, None]
        wy = (gy - y0)[:, None]
        top = self.uv[y0, x0] * (1 - wx) + self.uv[y0, x1] * wx
        bottom = self.uv[y1, x0] * (1 - wx) + self.uv[y1, x1] * wx
        return top * (1 - wy) + bottom * wy
