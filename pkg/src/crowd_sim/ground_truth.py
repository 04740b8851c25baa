"""
Exact counts, flows, optical flow and observation frames derived from agent states
"""
import logging

import numpy as np

from config.flowcount_config import SimConfig
from src.errors import AssumptionViolatedError
from src.grid_flow import (
    N_CHANNELS,
    NEIGHBOR_OFFSETS,
    OUTSIDE,
    DensityMap,
    FlowDirection,
    FlowField,
    GridShape,
    OpticalFlowField,
    boundary_mask,
)

from .simulator import ObservationFrame, SimState


logger = logging.getLogger(__name__)

_CHANNEL_OF_OFFSET = {offset: k for k, offset in enumerate(NEIGHBOR_OFFSETS)}
BLOB_TRUNCATION = 3.0


def agent_counts(state: SimState, shape: GridShape) -> DensityMap:
    """Integer number of agents per cell"""
    values = np.zeros((shape.rows, shape.cols))
    if state.n_agents:
        cells = state.cells(shape)
        np.add.at(values, (cells[:, 0], cells[:, 1]), 1.0)
    return DensityMap(shape, values)


def _match(prev: SimState, next: SimState):
    common, prev_idx, next_idx = np.intersect1d(prev.ids, next.ids, assume_unique=True, return_indices=True)
    gone = np.setdiff1d(np.arange(prev.n_agents), prev_idx)
    new = np.setdiff1d(np.arange(next.n_agents), next_idx)
    return prev_idx, next_idx, gone, new


def ground_truth_flow(prev: SimState, next: SimState, shape: GridShape) -> FlowField:
    """Count every agent transition between two states on the flow channel it takes"""
    channels = np.zeros((shape.rows, shape.cols, N_CHANNELS))
    prev_cells = prev.cells(shape)
    next_cells = next.cells(shape)
    prev_idx, next_idx, gone, new = _match(prev, next)

    moves = next_cells[next_idx] - prev_cells[prev_idx]
    if len(moves) and np.any(np.abs(moves) > 1):
        worst = int(np.argmax(np.abs(moves).max(axis=1)))
        agent = int(prev.ids[prev_idx[worst]])
        raise AssumptionViolatedError(
            f"agent {agent} moved {tuple(moves[worst])} cells between frames {prev.frame_index} and {next.frame_index}"
        )
    for (dr, dc), k in _CHANNEL_OF_OFFSET.items():
        hit = (moves[:, 0] == dr) & (moves[:, 1] == dc)
        if np.any(hit):
            sources = prev_cells[prev_idx[hit]]
            np.add.at(channels[..., k], (sources[:, 0], sources[:, 1]), 1.0)

    departures = np.zeros((shape.rows, shape.cols))
    arrivals = np.zeros((shape.rows, shape.cols))
    np.add.at(departures, (prev_cells[gone, 0], prev_cells[gone, 1]), 1.0)
    np.add.at(arrivals, (next_cells[new, 0], next_cells[new, 1]), 1.0)
    border = boundary_mask(shape)
    if np.any((departures + arrivals)[~border] > 0):
        raise AssumptionViolatedError("agents appeared or vanished away from the grid border")
    if not np.array_equal(departures, arrivals):
        cell = tuple(int(v) for v in np.argwhere(departures != arrivals)[0])
        raise AssumptionViolatedError(
            f"cell {cell}: {int(departures[cell])} departures vs {int(arrivals[cell])} arrivals from outside"
        )
    channels[..., OUTSIDE] = departures

    direction = FlowDirection.FORWARD if next.frame_index >= prev.frame_index else FlowDirection.BACKWARD
    return FlowField(shape, channels, direction)


def ground_truth_optical(prev: SimState, next: SimState, shape: GridShape) -> OpticalFlowField:
    """Mean pixel displacement of the agents starting in each cell"""
    sums = np.zeros((shape.rows, shape.cols, 2))
    counts = np.zeros((shape.rows, shape.cols))
    prev_idx, next_idx, _, _ = _match(prev, next)
    if len(prev_idx):
        cells = prev.cells(shape)[prev_idx]
        displacement = (next.positions[next_idx] - prev.positions[prev_idx]) * shape.cell_px
        np.add.at(sums, (cells[:, 0], cells[:, 1]), displacement)
        np.add.at(counts, (cells[:, 0], cells[:, 1]), 1.0)
    occupied = counts > 0
    uv = np.zeros_like(sums)
    uv[occupied] = sums[occupied] / counts[occupied][:, None]
    return OpticalFlowField(shape, uv)


def rasterize(state: SimState, config: SimConfig) -> ObservationFrame:
    """Agents as unit-amplitude Gaussian blobs (sigma = cell_px / 2) on a black frame"""
    shape = config.shape
    if state.n_agents == 0:
        return ObservationFrame(np.zeros((shape.image_h, shape.image_w)), state.frame_index)
    sigma = shape.cell_px / 2.0
    heads = state.heads_px(shape)
    dx = (np.arange(shape.image_w) + 0.5)[None, :] - heads[:, 0][:, None]
    dy = (np.arange(shape.image_h) + 0.5)[None, :] - heads[:, 1][:, None]
    gx = np.where(np.abs(dx) <= BLOB_TRUNCATION * sigma, np.exp(-dx * dx / (2 * sigma * sigma)), 0.0)
    gy = np.where(np.abs(dy) <= BLOB_TRUNCATION * sigma, np.exp(-dy * dy / (2 * sigma * sigma)), 0.0)
    pixels = np.clip(gy.T @ gx, 0.0, 1.0)
    return ObservationFrame(pixels, state.frame_index)
