"""
Tests for the grid/flow data model and the conservation algebra
"""
import pytest
import numpy as np

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.errors import ConfigError, GridIndexError, RegionError, ShapeError
from src.grid_flow import (
    NEIGHBOR_OFFSETS,
    OUTSIDE,
    SELF,
    CellRegion,
    DensityMap,
    FlowDirection,
    FlowField,
    GridShape,
    ReconstructionMode,
    average_bidirectional,
    conservation_violation_map,
    density_from_flows,
    flow_mask,
    incoming_sum,
    neighbor_cells,
    opposite_channel,
    outgoing_sum,
    reconstruct_density,
    reverse_flow,
)
from tests.helpers import random_flow, rotate_field


def _brute_incoming(channels: np.ndarray) -> np.ndarray:
    rows, cols, _ = channels.shape
    total = np.zeros((rows, cols))
    for r in range(rows):
        for c in range(cols):
            total[r, c] += channels[r, c, OUTSIDE]
            for k, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
                sr, sc = r - dr, c - dc
                if 0 <= sr < rows and 0 <= sc < cols:
                    total[r, c] += channels[sr, sc, k]
    return total


class TestGridModel:
    """Test grid shapes, regions and neighborhoods"""

    def test_neighbors_interior_corner_and_degenerate(self):
        """Test N(j) clipping at the border"""
        shape = GridShape(3, 3)
        assert len(neighbor_cells((1, 1), shape)) == 9
        assert neighbor_cells((0, 0), shape) == {(0, 0), (0, 1), (1, 0), (1, 1)}
        assert neighbor_cells(0, GridShape(1, 1)) == {(0, 0)}
        assert neighbor_cells(5, shape) == neighbor_cells((1, 2), shape)

    def test_invalid_cell_index(self):
        """Test index errors for cells outside the grid"""
        shape = GridShape(3, 3)
        with pytest.raises(GridIndexError):
            neighbor_cells(9, shape)
        with pytest.raises(GridIndexError):
            neighbor_cells((3, 0), shape)

    def test_grid_shape_validation(self):
        """Test that grid dimensions must be positive integers"""
        with pytest.raises(ShapeError):
            GridShape(0, 4)
        shape = GridShape(2, 3, 8)
        assert (shape.image_h, shape.image_w, shape.n_cells) == (16, 24, 6)

    def test_region_helpers(self):
        """Test region expansion, containment and bounds checks"""
        shape = GridShape(4, 4)
        region = CellRegion(0, 2, 1, 3)
        outer = region.expanded(1, shape)
        assert outer == CellRegion(0, 3, 0, 4)
        assert outer.contains(region)
        assert region.relative_to(outer) == CellRegion(0, 2, 1, 3)
        with pytest.raises(RegionError):
            CellRegion(3, 5, 0, 1).check_within(shape)

    def test_opposite_channels(self):
        """Test that opposite channels point back along the same offset"""
        for k, (dr, dc) in enumerate(NEIGHBOR_OFFSETS):
            assert NEIGHBOR_OFFSETS[opposite_channel(k)] == (-dr, -dc)
        assert opposite_channel(SELF) == SELF


class TestFlowField:
    """Test flow field invariants"""

    def test_rejects_negative_flow(self):
        """Test non-negativity"""
        shape = GridShape(2, 2)
        channels = np.zeros((2, 2, 10))
        channels[0, 0, SELF] = -1.0
        with pytest.raises(ShapeError):
            FlowField(shape, channels)

    def test_rejects_interior_outside_flow(self):
        """Test that OUTSIDE is only open on boundary cells unless masked"""
        shape = GridShape(3, 3)
        channels = np.zeros((3, 3, 10))
        channels[1, 1, OUTSIDE] = 1.0
        with pytest.raises(ShapeError):
            FlowField(shape, channels)
        mask = np.zeros((3, 3), dtype=bool)
        mask[1, 1] = True
        assert FlowField(shape, channels, outside_mask=mask).total_flow == 1.0

    def test_rejects_flow_leaving_grid(self):
        """Test that channels pointing off the grid stay empty"""
        shape = GridShape(2, 2)
        channels = np.zeros((2, 2, 10))
        channels[0, 0, 1] = 1.0  # north of the top row
        with pytest.raises(ShapeError):
            FlowField(shape, channels)

    def test_flow_mask_counts(self):
        """Test the number of open channels on a 3x3 grid"""
        mask = flow_mask(GridShape(3, 3))
        assert mask[1, 1, :9].all()
        assert not mask[1, 1, OUTSIDE]
        assert mask[0, 0].sum() == 5  # SELF, E, S, SE and OUTSIDE

    def test_arrays_are_frozen(self):
        """Test that stored arrays cannot be modified in place"""
        m = DensityMap(GridShape(2, 2), np.ones((2, 2)))
        with pytest.raises(ValueError):
            m.values[0, 0] = 5.0


class TestConservationAlgebra:
    """Test density summation, reversal and violation maps"""

    def test_zero_flow_gives_zero_density(self):
        """Test the empty sum"""
        shape = GridShape(3, 4)
        m = density_from_flows(FlowField.zeros(shape))
        assert np.array_equal(m.values, np.zeros((3, 4)))

    def test_single_cell_outgoing(self):
        """Test hand summation of SELF and OUTSIDE on a 1x1 grid"""
        channels = np.zeros((1, 1, 10))
        channels[0, 0, SELF] = 1.5
        channels[0, 0, OUTSIDE] = 0.5
        m = density_from_flows(FlowField(GridShape(1, 1), channels), "outgoing")
        assert m.values[0, 0] == 2.0

    def test_incoming_matches_brute_force(self, rng):
        """Test incoming sums against an explicit double loop"""
        shape = GridShape(4, 5)
        channels = random_flow(rng, shape)
        np.testing.assert_allclose(incoming_sum(channels), _brute_incoming(channels), rtol=1e-12)
        np.testing.assert_allclose(outgoing_sum(channels), channels.sum(axis=2), rtol=1e-12)

    def test_unknown_mode(self):
        """Test that only incoming and outgoing summation exist"""
        with pytest.raises(ConfigError):
            density_from_flows(FlowField.zeros(GridShape(2, 2)), "sideways")

    def test_reverse_hand_example(self):
        """Test that E at cell 0 becomes W at cell 1"""
        channels = np.zeros((1, 2, 10))
        channels[0, 0, 5] = 3.0
        g = reverse_flow(FlowField(GridShape(1, 2), channels))
        assert g.channels[0, 1, 3] == 3.0
        assert g.channels.sum() == 3.0
        assert g.direction is FlowDirection.BACKWARD

    def test_reverse_symmetric_field(self):
        """Test that a symmetric field is a fixed point of reversal"""
        shape = GridShape(3, 3)
        mask = flow_mask(shape)
        channels = 0.7 * mask
        channels[..., OUTSIDE] = 0.0
        g = reverse_flow(FlowField(shape, channels))
        assert np.array_equal(g.channels, channels)

    def test_reverse_is_involution(self, rng):
        """Test reverse(reverse(f)) == f"""
        shape = GridShape(5, 4)
        f = FlowField(shape, random_flow(rng, shape))
        twice = reverse_flow(reverse_flow(f))
        assert np.array_equal(twice.channels, f.channels)
        assert twice.direction is f.direction

    def test_reversed_outgoing_equals_incoming_exactly(self, rng):
        """Test outgoing(reverse(f)) == incoming(f) bit for bit"""
        for rows, cols in [(1, 1), (2, 3), (6, 5)]:
            shape = GridShape(rows, cols)
            f = FlowField(shape, random_flow(rng, shape, scale=3.0))
            lhs = density_from_flows(reverse_flow(f), "outgoing").values
            rhs = density_from_flows(f, "incoming").values
            assert np.array_equal(lhs, rhs)

    def test_average_bidirectional(self):
        """Test the elementwise mean and shape checks"""
        shape = GridShape(1, 2)
        m = average_bidirectional(DensityMap(shape, [[2.0, 0.0]]), DensityMap(shape, [[0.0, 2.0]]))
        assert np.array_equal(m.values, [[1.0, 1.0]])
        with pytest.raises(ShapeError):
            average_bidirectional(DensityMap(shape, [[1.0, 1.0]]), DensityMap.zeros(GridShape(2, 1)))

    def test_violation_single_cell(self):
        """Test |2.0 - 1.2| on a 1x1 grid"""
        shape = GridShape(1, 1)
        f_in = np.zeros((1, 1, 10))
        f_in[0, 0, SELF] = 2.0
        f_out = np.zeros((1, 1, 10))
        f_out[0, 0, SELF] = 1.2
        violation = conservation_violation_map(FlowField(shape, f_in), FlowField(shape, f_out))
        assert violation[0, 0] == pytest.approx(0.8)

    def test_violation_matches_brute_force(self, rng):
        """Test the violation map against per-cell re-summation"""
        shape = GridShape(4, 4)
        f_in = random_flow(rng, shape)
        f_out = random_flow(rng, shape)
        expected = np.abs(_brute_incoming(f_in) - f_out.sum(axis=2))
        violation = conservation_violation_map(FlowField(shape, f_in), FlowField(shape, f_out))
        np.testing.assert_allclose(violation, expected, rtol=1e-12, atol=1e-12)

    def test_violation_shape_mismatch(self):
        """Test that flows on different grids are rejected"""
        with pytest.raises(ShapeError):
            conservation_violation_map(FlowField.zeros(GridShape(2, 2)), FlowField.zeros(GridShape(2, 3)))

    def test_rotation_equivariance(self, rng):
        """Test that rotating flows with their stencil rotates the density"""
        shape = GridShape(3, 5)
        channels = random_flow(rng, shape)
        rotated = rotate_field(channels)
        rotated_shape = GridShape(5, 3)
        assert np.all(rotated[~flow_mask(rotated_shape)] == 0)
        np.testing.assert_allclose(incoming_sum(rotated), np.rot90(incoming_sum(channels)), rtol=1e-12)
        np.testing.assert_allclose(outgoing_sum(rotated), np.rot90(outgoing_sum(channels)), rtol=1e-12)


class TestReconstruction:
    """Test forward, backward and averaged density reconstruction"""

    def _pair(self, rng):
        shape = GridShape(3, 3)
        return (FlowField(shape, random_flow(rng, shape)),
                FlowField(shape, random_flow(rng, shape), FlowDirection.BACKWARD))

    def test_modes(self, rng):
        """Test each reconstruction mode"""
        f_fwd, f_bwd = self._pair(rng)
        forward = reconstruct_density(f_fwd, f_bwd, ReconstructionMode.FORWARD)
        backward = reconstruct_density(f_fwd, f_bwd, "backward")
        averaged = reconstruct_density(f_fwd, f_bwd)
        assert np.array_equal(forward.values, incoming_sum(f_fwd.channels))
        assert np.array_equal(backward.values, incoming_sum(f_bwd.channels))
        assert np.array_equal(averaged.values, (forward.values + backward.values) / 2.0)

    def test_averaged_falls_back_to_available_side(self, rng):
        """Test sequence ends where only one flow exists"""
        f_fwd, f_bwd = self._pair(rng)
        assert np.array_equal(reconstruct_density(f_fwd, None).values, incoming_sum(f_fwd.channels))
        assert np.array_equal(reconstruct_density(None, f_bwd).values, incoming_sum(f_bwd.channels))
        with pytest.raises(ConfigError):
            reconstruct_density(None, None)
        with pytest.raises(ConfigError):
            reconstruct_density(None, f_bwd, ReconstructionMode.FORWARD)
