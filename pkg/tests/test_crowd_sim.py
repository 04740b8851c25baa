"""
Tests for the crowd simulator and its exact ground truth
"""
import pytest
import numpy as np

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from config.flowcount_config import LossWeights, SimConfig
from src.crowd_sim import (
    SimState,
    agent_counts,
    decode_trajectories,
    encode_trajectories,
    ground_plane_homography,
    ground_truth_flow,
    ground_truth_optical,
    rasterize,
    simulate,
    step,
)
from src.density_render import map_points
from src.encoding import FieldEncoder
from src.errors import AssumptionViolatedError, ConfigError, ParseError
from src.grid_flow import (
    SELF,
    GridShape,
    conservation_violation_map,
    incoming_sum,
    outgoing_sum,
    reverse_flow,
)
from src.losses import loss_combi


def _state(frame_index, positions, ids=None, velocities=None):
    positions = np.asarray(positions, dtype=np.float64)
    ids = np.arange(len(positions)) if ids is None else ids
    velocities = np.zeros_like(positions) if velocities is None else velocities
    return SimState(frame_index, ids, positions, velocities)


class TestSimulator:
    """Test agent motion and boundary exchange"""

    def test_determinism(self, smoke_config):
        """Test that two runs with one seed give bitwise-identical trajectories"""
        a = simulate(smoke_config)
        b = simulate(smoke_config)
        for s, t in zip(a.states, b.states):
            assert np.array_equal(s.ids, t.ids)
            assert np.array_equal(s.positions, t.positions)
            assert np.array_equal(s.velocities, t.velocities)
        assert np.array_equal(a.frames[-1].pixels, b.frames[-1].pixels)

    def test_seeds_differ(self, smoke_config):
        """Test that another seed gives another crowd"""
        a = simulate(smoke_config)
        b = simulate(SimConfig.for_smoke_test(seed=4))
        assert not np.array_equal(a.states[0].positions, b.states[0].positions)

    def test_static_crowd(self):
        """Test that zero speed and no exchange keep every agent in place"""
        config = SimConfig(shape=GridShape(4, 4, 4), n_agents=6, n_frames=4, speed_max=0.0, entry_rate=0.0)
        sim = simulate(config)
        for state in sim.states[1:]:
            assert np.array_equal(state.positions, sim.states[0].positions)
        for f in sim.flows:
            assert f.channels[..., SELF].sum() == 6.0
            assert f.total_flow == 6.0

    def test_ballistic_step(self):
        """Test that an agent moves by exactly its velocity"""
        config = SimConfig(shape=GridShape(4, 4, 4), n_agents=1, speed_max=1.0, entry_rate=0.0)
        state = _state(0, [[1.0, 2.0]], velocities=np.array([[0.9, 0.0]]))
        moved = step(state, config)
        assert moved.positions[0, 0] == 1.0 + 0.9
        assert moved.positions[0, 1] == 2.0
        assert moved.frame_index == 1
        assert np.array_equal(moved.ids, [0])

    def test_speed_and_bounds(self, smoke_sim, smoke_config):
        """Test that speeds stay under the cap and agents stay on the grid"""
        shape = smoke_config.shape
        for state in smoke_sim.states:
            speeds = np.hypot(state.velocities[:, 0], state.velocities[:, 1])
            assert np.all(speeds <= smoke_config.speed_max + 1e-12)
            assert np.all((state.positions >= 0) & (state.positions < [shape.cols, shape.rows]))

    def test_boundary_exchange_keeps_population(self):
        """Test that exits are replaced one for one"""
        config = SimConfig(shape=GridShape(4, 4, 4), n_agents=20, n_frames=30, entry_rate=2.0, seed=7)
        sim = simulate(config)
        assert all(s.n_agents == 20 for s in sim.states)
        assert sim.states[-1].next_id > 20

    def test_reflection_without_exits(self):
        """Test that agents bounce off the border when exits are disabled"""
        config = SimConfig(shape=GridShape(3, 3, 4), n_agents=10, n_frames=20, exit_enabled=False, seed=2)
        sim = simulate(config)
        for state in sim.states:
            assert np.array_equal(state.ids, np.arange(10))
            assert np.all((state.positions >= 0) & (state.positions < 3))

    def test_invalid_config(self):
        """Test configuration checks"""
        with pytest.raises(ConfigError):
            SimConfig(speed_max=1.5)
        with pytest.raises(ConfigError):
            SimConfig(motion_model="teleport")

    def test_ground_plane_homography(self):
        """Test that with no tilt an image cell maps onto one ground cell"""
        shape = GridShape(4, 4, 8)
        h = ground_plane_homography(shape, cell_m=0.3, tilt=0.0)
        np.testing.assert_allclose(map_points([[8.0, 16.0]], h), [[0.3, 0.6]])


class TestGroundTruth:
    """Test flows, optical flow and frames derived from agent states"""

    def test_flows_conserve_counts(self, smoke_sim):
        """Test incoming(f^{t,t+1}) = count(t+1) and outgoing(f^{t,t+1}) = count(t) exactly"""
        for t, f in enumerate(smoke_sim.flows):
            assert np.array_equal(incoming_sum(f.channels), smoke_sim.counts(t + 1).values)
            assert np.array_equal(outgoing_sum(f.channels), smoke_sim.counts(t).values)

    def test_zero_violation_and_zero_loss(self, smoke_sim):
        """Test that ground truth satisfies every constraint"""
        for t in range(1, smoke_sim.n_frames - 1):
            f_in, f_out = smoke_sim.flows[t - 1], smoke_sim.flows[t]
            assert np.all(conservation_violation_map(f_in, f_out) == 0)
            result = loss_combi(f_in, f_out, reverse_flow(f_in), reverse_flow(f_out),
                                smoke_sim.counts(t), LossWeights())
            assert result.value == 0.0

    def test_single_transition(self):
        """Test one agent crossing from (0,0) to (0,1)"""
        shape = GridShape(2, 2, 4)
        f = ground_truth_flow(_state(0, [[0.5, 0.5]]), _state(1, [[1.5, 0.5]]), shape)
        assert f.channels[0, 0, 5] == 1.0
        assert f.total_flow == 1.0

    def test_long_jump_rejected(self):
        """Test that moving more than one cell breaks the model"""
        shape = GridShape(3, 3, 4)
        with pytest.raises(AssumptionViolatedError):
            ground_truth_flow(_state(0, [[0.5, 0.5]]), _state(1, [[2.5, 0.5]]), shape)

    def test_interior_vanish_rejected(self):
        """Test that agents cannot disappear away from the border"""
        shape = GridShape(3, 3, 4)
        with pytest.raises(AssumptionViolatedError):
            ground_truth_flow(_state(0, [[1.5, 1.5]]), _state(1, np.zeros((0, 2))), shape)

    def test_exchange_uses_outside_channel(self):
        """Test a departure balanced by an arrival in the same border cell"""
        shape = GridShape(3, 3, 4)
        prev = _state(0, [[0.5, 0.5]], ids=[0])
        nxt = _state(1, [[0.2, 0.7]], ids=[1])
        f = ground_truth_flow(prev, nxt, shape)
        assert f.channels[0, 0, 9] == 1.0
        assert incoming_sum(f.channels)[0, 0] == 1.0

    def test_optical_flow(self):
        """Test uniform motion and a cell with opposite displacements"""
        shape = GridShape(3, 3, 8)
        uniform = ground_truth_optical(_state(0, [[0.5, 0.5], [1.5, 2.5]]), _state(1, [[1.5, 0.5], [2.5, 2.5]]), shape)
        assert uniform.uv[0, 0, 0] == pytest.approx(8.0)
        assert uniform.uv[2, 1, 0] == pytest.approx(8.0)
        assert uniform.uv[1, 1, 0] == 0.0
        mixed = ground_truth_optical(_state(0, [[1.2, 1.5], [1.8, 1.5]]), _state(1, [[2.2, 1.5], [0.8, 1.5]]), shape)
        np.testing.assert_allclose(mixed.uv[1, 1], [0.0, 0.0], atol=1e-12)

    def test_counts(self):
        """Test per-cell agent counts"""
        shape = GridShape(2, 2, 4)
        counts = agent_counts(_state(0, [[0.1, 0.1], [0.9, 0.9], [1.5, 1.5]]), shape)
        assert np.array_equal(counts.values, [[2.0, 0.0], [0.0, 1.0]])

    def test_rasterize(self):
        """Test blob peaks and superposition"""
        config = SimConfig(shape=GridShape(8, 8, 4), n_agents=2)
        empty = rasterize(_state(0, np.zeros((0, 2))), config)
        assert np.array_equal(empty.pixels, np.zeros((32, 32)))
        single_a = rasterize(_state(0, [[1.125, 1.125]]), config)
        assert single_a.pixels[4, 4] == 1.0
        single_b = rasterize(_state(0, [[6.5, 6.5]]), config)
        both = rasterize(_state(0, [[1.125, 1.125], [6.5, 6.5]]), config)
        np.testing.assert_allclose(both.pixels, single_a.pixels + single_b.pixels, atol=1e-12)


class TestTrajectories:
    """Test trajectory files"""

    def test_msgpack_round_trip(self, smoke_sim):
        """Test that trajectories survive encoding"""
        decoded = decode_trajectories(encode_trajectories(smoke_sim.states))
        assert len(decoded) == smoke_sim.n_frames
        for s, t in zip(smoke_sim.states, decoded):
            assert s.frame_index == t.frame_index
            assert s.next_id == t.next_id
            assert np.array_equal(s.ids, t.ids)
            assert np.array_equal(s.positions, t.positions)

    def test_bad_records(self):
        """Test parse errors on garbage"""
        with pytest.raises(ParseError):
            decode_trajectories(FieldEncoder.encode_msgpack([{"frame_index": 0}]))
