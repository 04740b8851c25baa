"""
Tests for the regressors, their gradients, optimizers and checkpoints
"""
import pytest
import numpy as np

import sys
import os
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..'))

from src.encoding import FieldEncoder
from src.errors import NumericError, ParseError, ShapeError
from src.grid_flow import DensityMap, GridShape, flow_mask
from src.regressor import (
    DensityRegressor,
    Discriminator,
    DiscriminatorParams,
    FlowRegressor,
    FlowTape,
    OpticalRegressor,
    OpticalRegressorParams,
    OptimizerState,
    ParamVector,
    RegressorParams,
    density_forward,
    discriminator_forward,
    discriminator_layout,
    flow_backward,
    flow_forward,
    init_params,
    load_checkpoint,
    optical_forward,
    optical_layout,
    optimizer_step,
    save_checkpoint,
)
from src.regressor.layers import sigmoid
from tests.helpers import check_directional


def _random_params(layout, rng, params_type, scale=0.5):
    return params_type(layout, rng.normal(0.0, scale, size=layout.size))


def _frames(rng, shape: GridShape, n: int):
    return [rng.random((shape.image_h, shape.image_w)) for _ in range(n)]


class TestFlowRegressor:
    """Test the flow regressor forward pass and its gradient"""

    def test_zero_params_give_zero_flow(self, rng, tiny_network):
        """Test the zero network"""
        model = FlowRegressor(tiny_network, cell_px=2)
        prev, cur = _frames(rng, GridShape(3, 4, 2), 2)
        f = flow_forward(RegressorParams.zeros(model.layout), prev, cur)
        assert f.total_flow == 0.0
        assert (f.shape.rows, f.shape.cols) == (3, 4)

    def test_output_respects_flow_invariants(self, rng, tiny_network):
        """Test non-negativity and boundary masking of predictions"""
        model = FlowRegressor(tiny_network, cell_px=2)
        shape = GridShape(4, 4, 2)
        params = _random_params(model.layout, rng, RegressorParams, scale=1.0)
        f = flow_forward(params, *_frames(rng, shape, 2))
        assert np.all(f.channels >= 0)
        assert np.all(f.channels[~flow_mask(shape)] == 0)

    def test_deterministic(self, rng, tiny_network):
        """Test bitwise reproducibility with seeded parameters"""
        model = FlowRegressor(tiny_network, cell_px=2)
        frames = _frames(rng, GridShape(3, 3, 2), 2)
        a = flow_forward(init_params(model.layout, 9, RegressorParams), *frames)
        b = flow_forward(init_params(model.layout, 9, RegressorParams), *frames)
        assert np.array_equal(a.channels, b.channels)

    def test_frame_size_must_match_cells(self, rng, tiny_network):
        """Test that frames must tile into whole cells"""
        model = FlowRegressor(tiny_network, cell_px=2)
        params = RegressorParams.zeros(model.layout)
        with pytest.raises(ShapeError):
            flow_forward(params, rng.random((5, 4)), rng.random((5, 4)))

    def test_zero_upstream_gradient(self, rng, tiny_network):
        """Test that grad_out = 0 gives a zero parameter gradient"""
        model = FlowRegressor(tiny_network, cell_px=2)
        shape = GridShape(2, 2, 2)
        params = _random_params(model.layout, rng, RegressorParams)
        grad = flow_backward(params, *_frames(rng, shape, 2), np.zeros((2, 2, 10)))
        assert np.array_equal(grad, np.zeros(model.layout.size))

    def test_non_finite_upstream_gradient(self, rng, tiny_network):
        """Test numeric errors on NaN gradients"""
        model = FlowRegressor(tiny_network, cell_px=2)
        shape = GridShape(2, 2, 2)
        grad_out = np.zeros((2, 2, 10))
        grad_out[0, 0, 4] = np.nan
        with pytest.raises(NumericError):
            flow_backward(RegressorParams.zeros(model.layout), *_frames(rng, shape, 2), grad_out)

    def test_gradient_matches_finite_differences(self, rng, tiny_network):
        """Test d<G, F(theta)>/d theta against central differences"""
        model = FlowRegressor(tiny_network, cell_px=2)
        shape = GridShape(2, 2, 2)
        prev, cur = _frames(rng, shape, 2)
        params = _random_params(model.layout, rng, RegressorParams)
        g = rng.normal(size=(2, 2, 10))

        def objective(theta):
            return float(np.sum(g * flow_forward(params.with_theta(theta), prev, cur).channels))

        grad = flow_backward(params, prev, cur, g)
        check_directional(objective, params.theta, grad, rng)

    def test_tape_shares_encoder_between_passes(self, rng, tiny_network):
        """Test the gradient of several passes over shared frames"""
        model = FlowRegressor(tiny_network, cell_px=2)
        shape = GridShape(3, 3, 2)
        frames = dict(enumerate(_frames(rng, shape, 3)))
        params = _random_params(model.layout, rng, RegressorParams)
        keys = [(0, 1), (1, 2), (1, 0), (2, 1)]
        weights = {k: rng.normal(size=(3, 3, 10)) for k in keys}

        def objective(theta):
            tape = FlowTape(model, params.with_theta(theta), frames)
            return float(sum(np.sum(weights[k] * tape.run(*k)) for k in keys))

        tape = FlowTape(model, params, frames)
        for k in keys:
            tape.run(*k)
        check_directional(objective, params.theta, tape.backward(weights), rng)

    def test_tape_rejects_unknown_pass(self, rng, tiny_network):
        """Test that backward needs a recorded forward pass"""
        model = FlowRegressor(tiny_network, cell_px=2)
        tape = FlowTape(model, RegressorParams.zeros(model.layout), dict(enumerate(_frames(rng, GridShape(2, 2, 2), 2))))
        with pytest.raises(KeyError):
            tape.backward({(0, 1): np.zeros((2, 2, 10))})


class TestDensityRegressor:
    """Test direct density regression from one frame or a frame pair"""

    def test_zero_params_give_zero_density(self, rng, tiny_network):
        """Test the zero network"""
        model = DensityRegressor(tiny_network, cell_px=2)
        m = density_forward(RegressorParams.zeros(model.layout), *_frames(rng, GridShape(3, 4, 2), 1))
        assert (m.shape.rows, m.shape.cols) == (3, 4)
        assert np.all(m.values == 0.0)

    def test_non_negative(self, rng, tiny_network):
        """Test rectified outputs for random parameters"""
        model = DensityRegressor(tiny_network, cell_px=2, n_frames=2)
        params = _random_params(model.layout, rng, RegressorParams, scale=1.0)
        m = density_forward(params, *_frames(rng, GridShape(3, 3, 2), 2))
        assert np.all(m.values >= 0)

    def test_frame_count_must_match(self, rng, tiny_network):
        """Test that a pair regressor refuses a single frame"""
        model = DensityRegressor(tiny_network, cell_px=2, n_frames=2)
        with pytest.raises(ShapeError):
            density_forward(RegressorParams.zeros(model.layout), *_frames(rng, GridShape(2, 2, 2), 1))


class TestOpticalRegressor:
    """Test the density-pair to optical-flow regressor"""

    def test_zero_params(self, tiny_network):
        """Test the zero network"""
        shape = GridShape(3, 3)
        params = OpticalRegressorParams.zeros(optical_layout(tiny_network))
        uv = optical_forward(params, DensityMap(shape, np.ones((3, 3))), DensityMap.zeros(shape))
        assert np.array_equal(uv.uv, np.zeros((3, 3, 2)))

    def test_gradients_match_finite_differences(self, rng, tiny_network):
        """Test parameter and input gradients"""
        params = _random_params(optical_layout(tiny_network), rng, OpticalRegressorParams)
        m_prev = rng.random((3, 4))
        m_cur = rng.random((3, 4))
        g = rng.normal(size=(3, 4, 2))
        _, cache = OpticalRegressor.forward(params, m_prev, m_cur)
        d_theta, d_prev, d_cur = OpticalRegressor.backward(params, cache, g)

        def by_theta(theta):
            return float(np.sum(g * OpticalRegressor.forward(params.with_theta(theta), m_prev, m_cur)[0]))

        def by_prev(x):
            return float(np.sum(g * OpticalRegressor.forward(params, x, m_cur)[0]))

        def by_cur(x):
            return float(np.sum(g * OpticalRegressor.forward(params, m_prev, x)[0]))

        check_directional(by_theta, params.theta, d_theta, rng)
        check_directional(by_prev, m_prev, d_prev, rng)
        check_directional(by_cur, m_cur, d_cur, rng)


class TestDiscriminator:
    """Test the patch discriminator"""

    def test_zero_params_give_one_half(self, tiny_network):
        """Test sigmoid(0)"""
        layout = discriminator_layout(tiny_network, 2, 2)
        p = discriminator_forward(DiscriminatorParams.zeros(layout), DensityMap(GridShape(2, 2), np.ones((2, 2))))
        assert p == 0.5

    def test_output_in_unit_interval(self, rng, tiny_network):
        """Test the range contract"""
        layout = discriminator_layout(tiny_network, 3, 3)
        params = _random_params(layout, rng, DiscriminatorParams)
        for _ in range(10):
            p, _ = Discriminator.forward(params, rng.random((3, 3)))
            assert 0.0 < p < 1.0

    def test_saturated_logits_stay_inside_unit_interval(self, tiny_network):
        """Test that very large logits never reach exactly 0 or 1"""
        assert 0.0 < sigmoid(-1000.0) < sigmoid(1000.0) < 1.0
        layout = discriminator_layout(tiny_network, 2, 2)
        params = DiscriminatorParams(layout, np.full(layout.size, 50.0))
        p = discriminator_forward(params, DensityMap(GridShape(2, 2), np.ones((2, 2))))
        assert 0.5 < p < 1.0

    def test_oversized_patch(self, tiny_network):
        """Test that patches larger than the input are refused"""
        params = DiscriminatorParams.zeros(discriminator_layout(tiny_network, 2, 2))
        with pytest.raises(ShapeError):
            Discriminator.forward(params, np.zeros((3, 2)))

    def test_gradients_match_finite_differences(self, rng, tiny_network):
        """Test logit gradients, including a zero-padded smaller patch"""
        layout = discriminator_layout(tiny_network, 3, 3)
        params = _random_params(layout, rng, DiscriminatorParams)
        values = rng.random((2, 3))
        _, cache = Discriminator.forward(params, values)
        d_theta, d_values = Discriminator.backward(params, cache, 1.0, values.shape)
        assert d_values.shape == (2, 3)

        def by_theta(theta):
            return Discriminator.forward(params.with_theta(theta), values)[1].logit

        def by_values(x):
            return Discriminator.forward(params, x)[1].logit

        check_directional(by_theta, params.theta, d_theta, rng)
        check_directional(by_values, values, d_values, rng)


class TestOptimizers:
    """Test Adam and RMSProp updates"""

    def test_zero_gradient_keeps_params(self):
        """Test both kinds with a zero gradient"""
        params = np.array([1.0, -2.0, 3.0])
        for state in (OptimizerState.adam(3, 0.1), OptimizerState.rmsprop(3, 0.1)):
            _, new = optimizer_step(state, params, np.zeros(3))
            assert np.array_equal(new, params)

    def test_adam_first_step(self):
        """Test the closed-form first Adam step"""
        state = OptimizerState.adam(1, 0.1, (0.9, 0.999), 1e-8)
        state, new = optimizer_step(state, np.array([0.0]), np.array([1.0]))
        assert new[0] == pytest.approx(-0.1 / (1.0 + 1e-8), rel=1e-9)
        assert state.step_count == 1

    def test_rmsprop_first_step(self):
        """Test the hand-evaluated first RMSProp step"""
        state = OptimizerState.rmsprop(1, 0.01, 0.9, 1e-8)
        _, new = optimizer_step(state, np.array([0.0]), np.array([2.0]))
        assert new[0] == pytest.approx(-0.01 * 2.0 / np.sqrt(0.4 + 1e-8), rel=1e-12)
        assert new[0] == pytest.approx(-0.03162, abs=1e-5)

    def test_zero_learning_rate(self, rng):
        """Test that lr = 0 leaves parameters untouched"""
        params = rng.normal(size=5)
        _, new = optimizer_step(OptimizerState.adam(5, 0.0), params, rng.normal(size=5))
        assert np.array_equal(new, params)

    def test_non_finite_gradient(self):
        """Test that NaN gradients are refused and the inputs stay untouched"""
        state = OptimizerState.adam(2, 0.1)
        params = np.array([1.0, 2.0])
        with pytest.raises(NumericError):
            optimizer_step(state, params, np.array([np.inf, 0.0]))
        assert state.step_count == 0
        assert np.array_equal(params, [1.0, 2.0])


class TestCheckpoints:
    """Test parameter files"""

    def test_save_and_load(self, tmp_path, tiny_network):
        """Test that layout and parameters survive a checkpoint file"""
        model = FlowRegressor(tiny_network, cell_px=4)
        params = init_params(model.layout, 11, RegressorParams)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path, {"seed": 11})
        loaded = load_checkpoint(path)
        assert isinstance(loaded, RegressorParams)
        assert loaded.layout.same_as(params.layout)
        assert np.array_equal(loaded.theta, params.theta)

    def test_optical_checkpoint_type(self, tmp_path, tiny_network):
        """Test that the parameter class follows the stored kind"""
        params = init_params(optical_layout(tiny_network), 2, OpticalRegressorParams)
        path = tmp_path / "fo.ckpt"
        save_checkpoint(params, path)
        assert isinstance(load_checkpoint(path), OpticalRegressorParams)

    def test_corrupt_checkpoint(self, tmp_path, tiny_network):
        """Test parse errors on bad magic and truncated blocks"""
        bad = tmp_path / "bad.ckpt"
        bad.write_bytes(b"NOPE" + bytes(8))
        with pytest.raises(ParseError):
            load_checkpoint(bad)
        params = init_params(optical_layout(tiny_network), 2, OpticalRegressorParams)
        data = FieldEncoder.encode_checkpoint({"version": 1, "layout": params.layout.to_descriptor()}, params.theta)
        truncated = tmp_path / "short.ckpt"
        truncated.write_bytes(data[:-8])
        with pytest.raises(ParseError):
            load_checkpoint(truncated)

    def test_param_vector_validation(self, tiny_network):
        """Test size and finiteness checks"""
        layout = optical_layout(tiny_network)
        with pytest.raises(ShapeError):
            ParamVector(layout, np.zeros(layout.size + 1))
        theta = np.zeros(layout.size)
        theta[0] = np.nan
        with pytest.raises(ShapeError):
            ParamVector(layout, theta)
