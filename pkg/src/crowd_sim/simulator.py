"""
Agent-based synthetic crowd with exact per-cell ground truth
"""
import logging
from dataclasses import dataclass
from typing import Dict, List

import numpy as np

from config.flowcount_config import SimConfig, derive_seed
from src.density_render import Homography
from src.encoding import FieldEncoder
from src.errors import ParseError, ShapeError
from src.grid_flow import GridShape, boundary_mask


logger = logging.getLogger(__name__)

# share of the preferred velocity blended in at every step
STEERING_GAIN = 0.3
LANE_SPEED_FRACTION = 0.9


def _frozen(array: np.ndarray, dtype) -> np.ndarray:
    out = np.array(array, dtype=dtype, copy=True)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class SimState:
    """Agents at one frame; positions and velocities are in cell units"""
    frame_index: int
    ids: np.ndarray
    positions: np.ndarray
    velocities: np.ndarray
    next_id: int = 0

    def __post_init__(self):
        ids = _frozen(self.ids, np.int64).reshape(-1)
        positions = _frozen(np.reshape(self.positions, (-1, 2)), np.float64)
        velocities = _frozen(np.reshape(self.velocities, (-1, 2)), np.float64)
        if not (len(ids) == len(positions) == len(velocities)):
            raise ShapeError("ids, positions and velocities must describe the same agents")
        if len(np.unique(ids)) != len(ids):
            raise ShapeError("agent ids must be unique")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "positions", positions)
        object.__setattr__(self, "velocities", velocities)
        if len(ids) and self.next_id <= int(ids.max()):
            object.__setattr__(self, "next_id", int(ids.max()) + 1)

    @property
    def n_agents(self) -> int:
        return int(len(self.ids))

    def cells(self, shape: GridShape) -> np.ndarray:
        """(row, col) of every agent by floor binning"""
        cols = np.minimum(np.floor(self.positions[:, 0]).astype(int), shape.cols - 1)
        rows = np.minimum(np.floor(self.positions[:, 1]).astype(int), shape.rows - 1)
        return np.column_stack([rows, cols])

    def heads_px(self, shape: GridShape) -> np.ndarray:
        return self.positions * shape.cell_px


@dataclass(frozen=True, eq=False)
class ObservationFrame:
    """Grayscale stand-in for a video frame"""
    pixels: np.ndarray
    frame_index: int = 0

    def __post_init__(self):
        pixels = _frozen(self.pixels, np.float64)
        if pixels.ndim != 2:
            raise ShapeError(f"observation frames are 2D, got {pixels.shape}")
        if not np.all(np.isfinite(pixels)):
            raise ShapeError("observation pixels must be finite")
        object.__setattr__(self, "pixels", pixels)

    @property
    def shape_px(self):
        return self.pixels.shape

    def check_grid(self, shape: GridShape) -> None:
        if self.pixels.shape != (shape.image_h, shape.image_w):
            raise ShapeError(
                f"frame of {self.pixels.shape} pixels does not match a {shape.image_h}x{shape.image_w} grid image"
            )


def _clip_speed(velocities: np.ndarray, speed_max: float) -> np.ndarray:
    speed = np.hypot(velocities[:, 0], velocities[:, 1])
    scale = np.where(speed > speed_max, speed_max / np.maximum(speed, 1e-300), 1.0)
    return velocities * scale[:, None]


def _preferred_velocity(positions: np.ndarray, config: SimConfig) -> np.ndarray:
    shape = config.shape
    speed = config.speed_max * LANE_SPEED_FRACTION
    if config.motion_model == "lanes":
        # bands of two rows alternate between eastbound and westbound
        band = (np.floor(positions[:, 1]).astype(int) // 2) % 2
        heading = np.where(band == 0, 1.0, -1.0)
        return np.column_stack([heading * speed, np.zeros(len(positions))])
    if config.motion_model == "swirl":
        dx = positions[:, 0] - shape.cols / 2.0
        dy = positions[:, 1] - shape.rows / 2.0
        r = np.maximum(np.hypot(dx, dy), 1e-9)
        # counterclockwise on screen (y points down)
        return np.column_stack([dy / r, -dx / r]) * speed
    return np.zeros_like(positions)


def _steer(positions: np.ndarray, velocities: np.ndarray, config: SimConfig, rng: np.random.Generator) -> np.ndarray:
    noise = rng.normal(0.0, 1.0, size=velocities.shape) * config.speed_max
    if config.motion_model == "random-walk":
        steered = velocities + 0.3 * noise
    else:
        preferred = _preferred_velocity(positions, config)
        steered = (1 - STEERING_GAIN) * velocities + STEERING_GAIN * preferred + 0.1 * noise
    return _clip_speed(steered, config.speed_max)


def _reflect(coords: np.ndarray, velocity: np.ndarray, upper: int):
    below = coords < 0
    above = coords >= upper
    coords = np.where(below, -coords, coords)
    coords = np.where(above, 2.0 * upper - coords, coords)
    coords = np.minimum(coords, np.nextafter(float(upper), 0.0))
    velocity = np.where(below | above, -velocity, velocity)
    return coords, velocity


def _spawn_in_cells(cells: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Uniform positions inside the given (row, col) cells"""
    offsets = rng.random(size=(len(cells), 2))
    return np.column_stack([cells[:, 1] + offsets[:, 0], cells[:, 0] + offsets[:, 1]])


def _step_rng(config: SimConfig, frame_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([derive_seed(config.seed, "crowd_sim"), frame_index]))


def initial_state(config: SimConfig) -> SimState:
    """Agents placed uniformly over the grid with their model's preferred velocity"""
    shape = config.shape
    rng = np.random.default_rng(derive_seed(config.seed, "crowd_sim.init"))
    positions = rng.random(size=(config.n_agents, 2)) * np.array([shape.cols, shape.rows])
    positions = np.minimum(positions, np.nextafter(np.array([shape.cols, shape.rows], dtype=np.float64), 0.0))
    velocities = _steer(positions, np.zeros_like(positions), config, rng)
    return SimState(0, np.arange(config.n_agents), positions, velocities, config.n_agents)


def step(state: SimState, config: SimConfig) -> SimState:
    """
    Advance every agent by the velocity it carries, then steer.

    Agents leaving the grid (exit_enabled) are exchanged one-for-one with
    newcomers entering the boundary cell they left from, so every boundary
    cell sees as many arrivals from outside as departures in each step.
    Spontaneous exchanges happen at entry_rate per frame.
    """
    shape = config.shape
    rng = _step_rng(config, state.frame_index)
    prev_cells = state.cells(shape)
    positions = state.positions + state.velocities
    velocities = state.velocities.copy()

    if config.exit_enabled:
        leaving = (
            (positions[:, 0] < 0) | (positions[:, 0] >= shape.cols)
            | (positions[:, 1] < 0) | (positions[:, 1] >= shape.rows)
        )
        on_border = boundary_mask(shape)[prev_cells[:, 0], prev_cells[:, 1]]
        candidates = np.flatnonzero(on_border & ~leaving)
        n_events = min(int(rng.poisson(config.entry_rate)), len(candidates))
        if n_events:
            exchanged = rng.choice(candidates, size=n_events, replace=False)
            leaving[np.sort(exchanged)] = True
    else:
        xs, vxs = _reflect(positions[:, 0], velocities[:, 0], shape.cols)
        ys, vys = _reflect(positions[:, 1], velocities[:, 1], shape.rows)
        positions = np.column_stack([xs, ys])
        velocities = np.column_stack([vxs, vys])
        leaving = np.zeros(len(positions), dtype=bool)

    staying = ~leaving
    ids = state.ids[staying]
    positions = positions[staying]
    velocities = _steer(positions, velocities[staying], config, rng)

    next_id = state.next_id
    n_new = int(np.count_nonzero(leaving))
    if n_new:
        entry_cells = prev_cells[leaving]
        new_positions = _spawn_in_cells(entry_cells, rng)
        new_velocities = _steer(new_positions, np.zeros_like(new_positions), config, rng)
        new_ids = np.arange(next_id, next_id + n_new)
        next_id += n_new
        ids = np.concatenate([ids, new_ids])
        positions = np.concatenate([positions, new_positions])
        velocities = np.concatenate([velocities, new_velocities])
        logger.debug(f"frame {state.frame_index + 1}: {n_new} agents exchanged at the border")

    return SimState(state.frame_index + 1, ids, positions, velocities, next_id)


def ground_plane_homography(shape: GridShape, cell_m: float = 0.30, tilt: float = 0.5) -> Homography:
    """
    Image-to-ground homography of a synthetic camera looking down at the scene.

    At tilt=0 every image cell maps onto one ground cell of side cell_m; larger
    tilt compresses rows further down the image.
    """
    scale = cell_m / shape.cell_px
    k = tilt / shape.image_h
    return Homography(np.array([[scale, 0.0, 0.0], [0.0, scale, 0.0], [0.0, k, 1.0]]))


def states_to_records(states: List[SimState]) -> List[Dict]:
    """Trajectory snapshots with arrays stored as little-endian bytes"""
    return [
        {
            "frame_index": s.frame_index,
            "next_id": s.next_id,
            "ids": s.ids.astype("<i8").tobytes(),
            "positions": s.positions.astype("<f8").tobytes(),
            "velocities": s.velocities.astype("<f8").tobytes(),
        }
        for s in states
    ]


def records_to_states(records: List[Dict], source: str = "<records>") -> List[SimState]:
    states = []
    for position, record in enumerate(records):
        try:
            states.append(SimState(
                frame_index=int(record["frame_index"]),
                ids=np.frombuffer(record["ids"], dtype="<i8"),
                positions=np.frombuffer(record["positions"], dtype="<f8").reshape(-1, 2),
                velocities=np.frombuffer(record["velocities"], dtype="<f8").reshape(-1, 2),
                next_id=int(record["next_id"]),
            ))
        except (KeyError, TypeError, ValueError) as e:
            raise ParseError(f"bad trajectory record {position}: {e}", source, position) from e
    return states


def encode_trajectories(states: List[SimState]) -> bytes:
    return FieldEncoder.encode_msgpack(states_to_records(states))


def decode_trajectories(data: bytes, source: str = "<bytes>") -> List[SimState]:
    return records_to_states(FieldEncoder.decode_msgpack(data, source), source)
