"""
Grid/flow data model and the people-conservation algebra over it.

A FlowField stores, at every source cell i, ten non-negative channels: the
flow towards each of the nine cells of the 3x3 neighborhood in row-major order
(NW, N, NE, W, SELF, E, SW, S, SE) and the exchange with the outside world.
"""
import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Set, Tuple, Union

import numpy as np

from src.errors import ConfigError, GridIndexError, RegionError, ShapeError


logger = logging.getLogger(__name__)

NEIGHBOR_OFFSETS: Tuple[Tuple[int, int], ...] = (
    (-1, -1), (-1, 0), (-1, 1),
    (0, -1), (0, 0), (0, 1),
    (1, -1), (1, 0), (1, 1),
)
CHANNEL_NAMES = ("NW", "N", "NE", "W", "SELF", "E", "SW", "S", "SE", "OUTSIDE")
SELF = 4
OUTSIDE = 9
N_DIRECTIONS = 9
N_CHANNELS = 10

INCOMING = "incoming"
OUTGOING = "outgoing"

CellIndex = Union[int, Tuple[int, int]]


class FlowDirection(str, Enum):
    """Temporal direction of a frame-pair flow field"""
    FORWARD = "forward"
    BACKWARD = "backward"

    def toggled(self) -> "FlowDirection":
        return FlowDirection.BACKWARD if self is FlowDirection.FORWARD else FlowDirection.FORWARD


class ReconstructionMode(str, Enum):
    """Which flows a per-frame density is summed from"""
    FORWARD = "forward"
    BACKWARD = "backward"
    AVERAGED = "averaged"


def opposite_channel(k: int) -> int:
    """Channel pointing back along direction k"""
    return N_DIRECTIONS - 1 - k


@dataclass(frozen=True)
class GridShape:
    """Grid of rows x cols locations, each covering cell_px x cell_px pixels"""
    rows: int
    cols: int
    cell_px: int = 8

    def __post_init__(self):
        for name in ("rows", "cols", "cell_px"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise ShapeError(f"GridShape.{name} must be a positive integer, got {value!r}")

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @property
    def image_h(self) -> int:
        return self.rows * self.cell_px

    @property
    def image_w(self) -> int:
        return self.cols * self.cell_px

    def cell(self, j: CellIndex) -> Tuple[int, int]:
        """Normalize a flat or (row, col) index, validating it"""
        if isinstance(j, tuple):
            r, c = j
        else:
            if j < 0 or j >= self.n_cells:
                raise GridIndexError(f"cell index {j} outside grid of {self.n_cells} cells")
            r, c = divmod(int(j), self.cols)
        if not (0 <= r < self.rows and 0 <= c < self.cols):
            raise GridIndexError(f"cell {(r, c)} outside {self.rows}x{self.cols} grid")
        return int(r), int(c)

    def to_dict(self) -> dict:
        return {"rows": self.rows, "cols": self.cols, "cell_px": self.cell_px}


@dataclass(frozen=True)
class CellRegion:
    """Half-open rectangle of cells [row0, row1) x [col0, col1)"""
    row0: int
    row1: int
    col0: int
    col1: int

    @property
    def n_rows(self) -> int:
        return self.row1 - self.row0

    @property
    def n_cols(self) -> int:
        return self.col1 - self.col0

    @property
    def n_cells(self) -> int:
        return self.n_rows * self.n_cols

    @property
    def slices(self) -> Tuple[slice, slice]:
        return slice(self.row0, self.row1), slice(self.col0, self.col1)

    def check_within(self, shape: GridShape) -> None:
        if self.n_rows < 1 or self.n_cols < 1:
            raise RegionError(f"empty region {self}")
        if self.row0 < 0 or self.col0 < 0 or self.row1 > shape.rows or self.col1 > shape.cols:
            raise RegionError(f"region {self} outside {shape.rows}x{shape.cols} grid")

    def contains(self, other: "CellRegion") -> bool:
        return (self.row0 <= other.row0 and other.row1 <= self.row1
                and self.col0 <= other.col0 and other.col1 <= self.col1)

    def expanded(self, halo: int, shape: GridShape) -> "CellRegion":
        """Region grown by halo cells on every side, clipped to the grid"""
        return CellRegion(
            max(0, self.row0 - halo), min(shape.rows, self.row1 + halo),
            max(0, self.col0 - halo), min(shape.cols, self.col1 + halo),
        )

    def relative_to(self, outer: "CellRegion") -> "CellRegion":
        return CellRegion(self.row0 - outer.row0, self.row1 - outer.row0,
                          self.col0 - outer.col0, self.col1 - outer.col0)


def _frozen_copy(values: np.ndarray) -> np.ndarray:
    array = np.array(values, dtype=np.float64, copy=True)
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class DensityMap:
    """Per-cell people count m_j over a grid"""
    shape: GridShape
    values: np.ndarray

    def __post_init__(self):
        values = _frozen_copy(self.values)
        if values.shape != (self.shape.rows, self.shape.cols):
            raise ShapeError(
                f"density values {values.shape} do not match grid {self.shape.rows}x{self.shape.cols}"
            )
        if not np.all(np.isfinite(values)) or np.any(values < 0):
            raise ShapeError("density values must be finite and non-negative")
        object.__setattr__(self, "values", values)

    @classmethod
    def zeros(cls, shape: GridShape) -> "DensityMap":
        return cls(shape, np.zeros((shape.rows, shape.cols)))

    @property
    def total_count(self) -> float:
        return float(self.values.sum())

    def region_total(self, region: CellRegion) -> float:
        region.check_within(self.shape)
        return float(self.values[region.slices].sum())

    def crop(self, region: CellRegion) -> "DensityMap":
        region.check_within(self.shape)
        sub_shape = GridShape(region.n_rows, region.n_cols, self.shape.cell_px)
        return DensityMap(sub_shape, self.values[region.slices])


@dataclass(frozen=True, eq=False)
class FlowField:
    """Per-cell people flows between two consecutive frames"""
    shape: GridShape
    channels: np.ndarray
    direction: FlowDirection = FlowDirection.FORWARD
    outside_mask: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        channels = _frozen_copy(self.channels)
        expected = (self.shape.rows, self.shape.cols, N_CHANNELS)
        if channels.shape != expected:
            raise ShapeError(f"flow channels {channels.shape} do not match {expected}")
        if not np.all(np.isfinite(channels)) or np.any(channels < 0):
            raise ShapeError("flow values must be finite and non-negative")
        if self.outside_mask is not None:
            mask = np.array(self.outside_mask, dtype=bool)
            if mask.shape != (self.shape.rows, self.shape.cols):
                raise ShapeError("outside_mask must match the grid")
            mask.setflags(write=False)
            object.__setattr__(self, "outside_mask", mask)
        allowed = flow_mask(self.shape, self.outside_mask)
        if np.any(channels[~allowed] != 0):
            raise ShapeError("flow present on a channel that leaves the grid or on an interior OUTSIDE channel")
        object.__setattr__(self, "channels", channels)
        object.__setattr__(self, "direction", FlowDirection(self.direction))

    @classmethod
    def zeros(cls, shape: GridShape, direction: FlowDirection = FlowDirection.FORWARD) -> "FlowField":
        return cls(shape, np.zeros((shape.rows, shape.cols, N_CHANNELS)), direction)

    @property
    def total_flow(self) -> float:
        return float(self.channels.sum())


def _valid_slices(dr: int, dc: int, rows: int, cols: int):
    """Source and target slices for cells whose neighbor (dr, dc) lies in-grid"""
    source = (slice(max(0, -dr), rows - max(0, dr)), slice(max(0, -dc), cols - max(0, dc)))
    target = (slice(max(0, dr), rows - max(0, -dr)), slice(max(0, dc), cols - max(0, -dc)))
    return source, target


def boundary_mask(shape: GridShape) -> np.ndarray:
    """True on the outermost ring of cells"""
    mask = np.zeros((shape.rows, shape.cols), dtype=bool)
    mask[0, :] = mask[-1, :] = True
    mask[:, 0] = mask[:, -1] = True
    return mask


def flow_mask(shape: GridShape, outside_mask: Optional[np.ndarray] = None) -> np.ndarray:
    """Channels that may carry flow: in-grid targets plus OUTSIDE at boundary (or masked) cells"""
    mask = np.zeros((shape.rows, shape.cols, N_CHANNELS), dtype=bool)
    for k, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        source, _ = _valid_slices(dr, dc, shape.rows, shape.cols)
        mask[source + (k,)] = True
    mask[..., OUTSIDE] = boundary_mask(shape)
    if outside_mask is not None:
        mask[..., OUTSIDE] |= np.asarray(outside_mask, dtype=bool)
    return mask


def neighbor_cells(j: CellIndex, shape: GridShape) -> Set[Tuple[int, int]]:
    """N(j): in-grid cells within Chebyshev distance 1 of j, j included"""
    r, c = shape.cell(j)
    return {
        (r + dr, c + dc)
        for dr, dc in NEIGHBOR_OFFSETS
        if 0 <= r + dr < shape.rows and 0 <= c + dc < shape.cols
    }


def incoming_sum(channels: np.ndarray) -> np.ndarray:
    """Per-cell sum of flows arriving at each cell, OUTSIDE arrivals included"""
    rows, cols, _ = channels.shape
    total = channels[..., OUTSIDE].copy()
    for k, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        source, target = _valid_slices(dr, dc, rows, cols)
        total[target] += channels[source + (k,)]
    return total


def outgoing_sum(channels: np.ndarray) -> np.ndarray:
    """Per-cell sum of flows leaving each cell, OUTSIDE departures included"""
    total = channels[..., OUTSIDE].copy()
    # reverse channel order so outgoing(reverse(f)) adds the same terms as incoming(f)
    for k in range(N_DIRECTIONS - 1, -1, -1):
        total += channels[..., k]
    return total


def scatter_incoming(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Adjoint of incoming_sum: each channel receives the value at its target cell"""
    rows, cols = values.shape
    out = np.zeros((rows, cols, N_CHANNELS))
    for k, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        source, target = _valid_slices(dr, dc, rows, cols)
        out[source + (k,)] = values[target]
    out[..., OUTSIDE] = values
    return out * mask


def broadcast_outgoing(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Adjoint of outgoing_sum"""
    return values[..., None] * mask


def reverse_channels(channels: np.ndarray) -> np.ndarray:
    """Move f[i, i->j] to g[j, j->i]; OUTSIDE stays in place"""
    rows, cols, _ = channels.shape
    out = np.zeros_like(channels)
    out[..., OUTSIDE] = channels[..., OUTSIDE]
    for k, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
        source, target = _valid_slices(dr, dc, rows, cols)
        out[target + (opposite_channel(k),)] = channels[source + (k,)]
    return out


def target_cell_mask(cell_mask: np.ndarray) -> np.ndarray:
    """Per-channel weight equal to the cell_mask value at the channel's target cell"""
    return scatter_incoming(cell_mask.astype(np.float64), np.ones(cell_mask.shape + (N_CHANNELS,), dtype=bool))


def density_from_flows(f: FlowField, mode: str = INCOMING) -> DensityMap:
    """Sum flows into (incoming) or out of (outgoing) every cell"""
    if mode == INCOMING:
        values = incoming_sum(f.channels)
    elif mode == OUTGOING:
        values = outgoing_sum(f.channels)
    else:
        raise ConfigError(f"mode must be '{INCOMING}' or '{OUTGOING}', got {mode!r}")
    return DensityMap(f.shape, values)


def reverse_flow(f: FlowField) -> FlowField:
    """Flow field of the same motion played backwards"""
    return FlowField(f.shape, reverse_channels(f.channels), f.direction.toggled(), f.outside_mask)


def _check_same_shape(a: GridShape, b: GridShape, what: str) -> None:
    if (a.rows, a.cols) != (b.rows, b.cols):
        raise ShapeError(f"{what}: {a.rows}x{a.cols} vs {b.rows}x{b.cols}")


def average_bidirectional(m_fwd: DensityMap, m_bwd: DensityMap) -> DensityMap:
    """Elementwise mean of forward- and backward-reconstructed densities"""
    _check_same_shape(m_fwd.shape, m_bwd.shape, "cannot average densities")
    return DensityMap(m_fwd.shape, (m_fwd.values + m_bwd.values) / 2.0)


def reconstruct_density(
    f_fwd: Optional[FlowField],
    f_bwd: Optional[FlowField],
    mode: ReconstructionMode = ReconstructionMode.AVERAGED,
) -> DensityMap:
    """Density at frame t from f^{t-1,t} (forward) and/or f^{t+1,t} (backward)"""
    mode = ReconstructionMode(mode)
    if mode is ReconstructionMode.FORWARD or (mode is ReconstructionMode.AVERAGED and f_bwd is None):
        if f_fwd is None:
            raise ConfigError("forward reconstruction needs f^{t-1,t}")
        return density_from_flows(f_fwd, INCOMING)
    if mode is ReconstructionMode.BACKWARD or f_fwd is None:
        if f_bwd is None:
            raise ConfigError("backward reconstruction needs f^{t+1,t}")
        return density_from_flows(f_bwd, INCOMING)
    return average_bidirectional(density_from_flows(f_fwd, INCOMING), density_from_flows(f_bwd, INCOMING))


def conservation_violation_map(f_in: FlowField, f_out: FlowField) -> np.ndarray:
    """Per-cell |incoming of f^{t-1,t} - outgoing of f^{t,t+1}|"""
    _check_same_shape(f_in.shape, f_out.shape, "cannot compare flows")
    return np.abs(incoming_sum(f_in.channels) - outgoing_sum(f_out.channels))
