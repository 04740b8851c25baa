"""
Numerical helpers shared by the flowcount test suites
"""
import numpy as np

from src.grid_flow import OUTSIDE, GridShape, flow_mask


FD_STEP = 1e-6
FD_TOLERANCE = 1e-4
FD_FLOOR = 1e-2


def random_flow(rng: np.random.Generator, shape: GridShape, scale: float = 1.0) -> np.ndarray:
    """Non-negative channels that respect the flow mask of the grid"""
    channels = rng.random((shape.rows, shape.cols, 10)) * scale
    return channels * flow_mask(shape)


def rotate_field(channels: np.ndarray) -> np.ndarray:
    """Quarter turn of the grid together with the 3x3 direction stencil"""
    rows, cols, _ = channels.shape
    spatial = np.rot90(channels, axes=(0, 1))
    stencil = spatial[..., :9].reshape(cols, rows, 3, 3)
    rotated = np.empty_like(spatial)
    rotated[..., :9] = np.rot90(stencil, axes=(2, 3)).reshape(cols, rows, 9)
    rotated[..., OUTSIDE] = spatial[..., OUTSIDE]
    return rotated


def check_directional(fn, x: np.ndarray, grad: np.ndarray, rng: np.random.Generator, n_dirs: int = 4):
    """Compare grad against central differences of fn along random unit directions"""
    x = np.asarray(x, dtype=np.float64)
    for _ in range(n_dirs):
        d = rng.normal(size=x.shape)
        d /= np.linalg.norm(d)
        numeric = (fn(x + FD_STEP * d) - fn(x - FD_STEP * d)) / (2 * FD_STEP)
        analytic = float(np.sum(np.asarray(grad) * d))
        denom = max(abs(numeric), abs(analytic), FD_FLOOR)
        assert abs(numeric - analytic) / denom < FD_TOLERANCE, (numeric, analytic)
