"""
Flow regressor, density regressor, optical-flow regressor and patch discriminator
"""
import logging
from dataclasses import dataclass
from typing import Dict, Hashable, List, Optional, Tuple

import numpy as np

from config.flowcount_config import NetworkConfig
from src.errors import NumericError, ShapeError
from src.grid_flow import (
    N_CHANNELS,
    DensityMap,
    FlowDirection,
    FlowField,
    GridShape,
    OpticalFlowField,
    flow_mask,
)

from .layers import (
    avgpool_backward,
    avgpool_forward,
    conv3x3_backward,
    conv3x3_forward,
    dense_backward,
    dense_forward,
    relu,
    relu_backward,
    sigmoid,
)
from .params import DiscriminatorParams, OpticalRegressorParams, ParamLayout, ParamVector, RegressorParams


logger = logging.getLogger(__name__)

FLOW_KIND = "flow"
DENSITY_KIND = "density"
OPTICAL_KIND = "optical"
DISCRIMINATOR_KIND = "discriminator"


def _conv_entry(name: str, c_out: int, c_in: int):
    return ((f"{name}_w", (c_out, c_in, 3, 3)), (f"{name}_b", (c_out,)))


def conv_regressor_layout(
    network: NetworkConfig,
    cell_px: int,
    out_channels: int = N_CHANNELS,
    n_frames: int = 2,
) -> ParamLayout:
    """Shared per-frame encoder, decoder over the concatenated frame features"""
    c1, c2, c3 = network.encoder_channels
    hidden = network.decoder_hidden
    entries = (
        _conv_entry("enc1", c1, 1) + _conv_entry("enc2", c2, c1) + _conv_entry("enc3", c3, c2)
        + _conv_entry("dec1", hidden, c3 * n_frames) + _conv_entry("dec2", out_channels, hidden)
    )
    kind = FLOW_KIND if out_channels == N_CHANNELS else DENSITY_KIND
    return ParamLayout(kind, entries, {"cell_px": int(cell_px), "out_channels": int(out_channels),
                                       "n_frames": int(n_frames)})


def optical_layout(network: NetworkConfig) -> ParamLayout:
    hidden = network.optical_hidden
    return ParamLayout(OPTICAL_KIND, _conv_entry("opt1", hidden, 2) + _conv_entry("opt2", 2, hidden), {})


def discriminator_layout(network: NetworkConfig, patch_rows: int, patch_cols: int) -> ParamLayout:
    n_in = patch_rows * patch_cols
    hidden = network.discriminator_hidden
    entries = (
        ("disc1_w", (hidden, n_in)), ("disc1_b", (hidden,)),
        ("disc2_w", (1, hidden)), ("disc2_b", (1,)),
    )
    return ParamLayout(DISCRIMINATOR_KIND, entries, {"patch_rows": int(patch_rows), "patch_cols": int(patch_cols)})


def _check_finite(grad: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(grad)):
        raise NumericError(f"non-finite upstream gradient reaching {what}", component=what)


@dataclass
class EncoderCache:
    windows1: np.ndarray
    pre1: np.ndarray
    windows2: np.ndarray
    pre2: np.ndarray
    windows3: np.ndarray
    pre3: np.ndarray


@dataclass
class DecoderCache:
    windows1: np.ndarray
    pre1: np.ndarray
    windows2: np.ndarray
    pre2: np.ndarray
    mask: np.ndarray
    split: int


class ConvRegressor:
    """
    Encoder applied to every frame with the same weights, features concatenated,
    decoder emitting out_channels rectified maps at grid resolution.
    """

    def __init__(self, layout: ParamLayout):
        self.layout = layout
        self.cell_px = int(layout.meta["cell_px"])
        self.out_channels = int(layout.meta["out_channels"])
        self.n_frames = int(layout.meta["n_frames"])

    def grid_of(self, pixels: np.ndarray) -> GridShape:
        h, w = pixels.shape
        if h % self.cell_px or w % self.cell_px:
            raise ShapeError(f"frame of {h}x{w} pixels is not a multiple of cell_px={self.cell_px}")
        return GridShape(h // self.cell_px, w // self.cell_px, self.cell_px)

    def encode(self, views: Dict[str, np.ndarray], pixels: np.ndarray) -> Tuple[np.ndarray, EncoderCache]:
        pre1, windows1 = conv3x3_forward(pixels[None], views["enc1_w"], views["enc1_b"])
        pooled = avgpool_forward(relu(pre1), self.cell_px)
        pre2, windows2 = conv3x3_forward(pooled, views["enc2_w"], views["enc2_b"])
        pre3, windows3 = conv3x3_forward(relu(pre2), views["enc3_w"], views["enc3_b"])
        return relu(pre3), EncoderCache(windows1, pre1, windows2, pre2, windows3, pre3)

    def encode_backward(self, views, cache: EncoderCache, grad: np.ndarray, dtheta: Dict[str, np.ndarray]) -> None:
        g = relu_backward(grad, cache.pre3)
        g, dw, db = conv3x3_backward(g, cache.windows3, views["enc3_w"])
        dtheta["enc3_w"] += dw
        dtheta["enc3_b"] += db
        g = relu_backward(g, cache.pre2)
        g, dw, db = conv3x3_backward(g, cache.windows2, views["enc2_w"])
        dtheta["enc2_w"] += dw
        dtheta["enc2_b"] += db
        g = relu_backward(avgpool_backward(g, self.cell_px), cache.pre1)
        _, dw, db = conv3x3_backward(g, cache.windows1, views["enc1_w"], need_input_grad=False)
        dtheta["enc1_w"] += dw
        dtheta["enc1_b"] += db

    def decode(self, views, features: List[np.ndarray], mask: np.ndarray) -> Tuple[np.ndarray, DecoderCache]:
        """Returns rows x cols x out_channels, rectified and masked"""
        stacked = np.concatenate(features, axis=0)
        pre1, windows1 = conv3x3_forward(stacked, views["dec1_w"], views["dec1_b"])
        pre2, windows2 = conv3x3_forward(relu(pre1), views["dec2_w"], views["dec2_b"])
        out = relu(pre2) * mask
        return out.transpose(1, 2, 0), DecoderCache(windows1, pre1, windows2, pre2, mask, features[0].shape[0])

    def decode_backward(self, views, cache: DecoderCache, grad: np.ndarray, dtheta) -> List[np.ndarray]:
        g = relu_backward(grad.transpose(2, 0, 1) * cache.mask, cache.pre2)
        g, dw, db = conv3x3_backward(g, cache.windows2, views["dec2_w"])
        dtheta["dec2_w"] += dw
        dtheta["dec2_b"] += db
        g = relu_backward(g, cache.pre1)
        g, dw, db = conv3x3_backward(g, cache.windows1, views["dec1_w"])
        dtheta["dec1_w"] += dw
        dtheta["dec1_b"] += db
        return [g[i * cache.split:(i + 1) * cache.split] for i in range(self.n_frames)]

    def output_mask(self, shape: GridShape, outside_mask: Optional[np.ndarray] = None) -> np.ndarray:
        if self.out_channels == N_CHANNELS:
            return flow_mask(shape, outside_mask).transpose(2, 0, 1).astype(np.float64)
        return np.ones((self.out_channels, shape.rows, shape.cols))

    def zero_grads(self) -> Dict[str, np.ndarray]:
        return {name: np.zeros(shape) for name, shape in self.layout.entries}


class FlowTape:
    """
    Records forward passes over a set of frames so that loss gradients on any
    of the produced maps can be pulled back to one parameter gradient.

    Frames are encoded once each; every pass decodes an ordered tuple of frame keys.
    """

    def __init__(
        self,
        model: ConvRegressor,
        params: ParamVector,
        frames: Dict[Hashable, np.ndarray],
        outside_mask: Optional[np.ndarray] = None,
    ):
        if not model.layout.same_as(params.layout):
            raise ShapeError("parameters do not match the regressor architecture")
        self.model = model
        self.params = params
        self.views = params.views()
        self.frames = frames
        self.outside_mask = outside_mask
        self._encoded: Dict[Hashable, Tuple[np.ndarray, EncoderCache]] = {}
        self._passes: Dict[Tuple, Tuple[np.ndarray, DecoderCache]] = {}
        self.shape: Optional[GridShape] = None

    def _features(self, key: Hashable) -> np.ndarray:
        if key not in self._encoded:
            pixels = np.asarray(self.frames[key], dtype=np.float64)
            shape = self.model.grid_of(pixels)
            if self.shape is None:
                self.shape = shape
            elif (shape.rows, shape.cols) != (self.shape.rows, self.shape.cols):
                raise ShapeError(f"frame {key!r} is {pixels.shape}, other frames give a {self.shape.rows}x{self.shape.cols} grid")
            self._encoded[key] = self.model.encode(self.views, pixels)
        return self._encoded[key][0]

    def run(self, *keys: Hashable) -> np.ndarray:
        """Output map of the pass over the given frames (rows x cols x channels)"""
        if len(keys) != self.model.n_frames:
            raise ShapeError(f"regressor takes {self.model.n_frames} frames, got {len(keys)}")
        if keys not in self._passes:
            features = [self._features(key) for key in keys]
            mask = self.model.output_mask(self.shape, self.outside_mask)
            self._passes[keys] = self.model.decode(self.views, features, mask)
        return self._passes[keys][0]

    def backward(self, grads: Dict[Tuple, np.ndarray]) -> np.ndarray:
        """Parameter gradient of sum_k <grads[k], run(*k)>"""
        dtheta = self.model.zero_grads()
        feature_grads: Dict[Hashable, np.ndarray] = {}
        for keys, grad in grads.items():
            if keys not in self._passes:
                raise KeyError(f"no recorded pass over {keys!r}")
            _check_finite(grad, "flow regressor")
            out, cache = self._passes[keys]
            if grad.shape != out.shape:
                raise ShapeError(f"gradient {grad.shape} does not match output {out.shape}")
            for key, g in zip(keys, self.model.decode_backward(self.views, cache, grad, dtheta)):
                feature_grads[key] = feature_grads[key] + g if key in feature_grads else g
        for key in sorted(feature_grads, key=repr):
            self.model.encode_backward(self.views, self._encoded[key][1], feature_grads[key], dtheta)
        return self.model.layout.flatten(dtheta)


class FlowRegressor(ConvRegressor):
    """F(I^{t-1}, I^t; theta): ten non-negative flow channels per cell"""

    def __init__(self, network: NetworkConfig = NetworkConfig(), cell_px: int = 8):
        super().__init__(conv_regressor_layout(network, cell_px, N_CHANNELS, 2))


class DensityRegressor(ConvRegressor):
    """Direct density regression from one frame, or from a frame pair"""

    def __init__(self, network: NetworkConfig = NetworkConfig(), cell_px: int = 8, n_frames: int = 1):
        super().__init__(conv_regressor_layout(network, cell_px, 1, n_frames))


def _regressor_for(params: ParamVector) -> ConvRegressor:
    return ConvRegressor(params.layout)


def _frame_pixels(frame) -> np.ndarray:
    return np.asarray(getattr(frame, "pixels", frame), dtype=np.float64)


def flow_forward(params: RegressorParams, prev, cur, outside_mask: Optional[np.ndarray] = None) -> FlowField:
    """Predicted flow field between two observation frames"""
    model = _regressor_for(params)
    if model.out_channels != N_CHANNELS:
        raise ShapeError(f"{params.layout.kind} parameters cannot predict flows")
    tape = FlowTape(model, params, {0: _frame_pixels(prev), 1: _frame_pixels(cur)}, outside_mask)
    channels = tape.run(0, 1)
    return FlowField(tape.shape, channels, FlowDirection.FORWARD, outside_mask)


def flow_backward(
    params: RegressorParams, prev, cur, grad_out: np.ndarray, outside_mask: Optional[np.ndarray] = None
) -> np.ndarray:
    """Gradient of <grad_out, flow_forward(params, prev, cur)> with respect to theta"""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    _check_finite(grad_out, "flow regressor")
    tape = FlowTape(_regressor_for(params), params, {0: _frame_pixels(prev), 1: _frame_pixels(cur)}, outside_mask)
    tape.run(0, 1)
    return tape.backward({(0, 1): grad_out})


def density_forward(params: RegressorParams, *frames) -> DensityMap:
    model = _regressor_for(params)
    tape = FlowTape(model, params, {i: _frame_pixels(f) for i, f in enumerate(frames)})
    values = tape.run(*range(len(frames)))
    return DensityMap(tape.shape, values[..., 0])


@dataclass
class OpticalCache:
    windows1: np.ndarray
    pre1: np.ndarray
    windows2: np.ndarray


class OpticalRegressor:
    """F_o(m^{t-1}, m^t; theta_o): two-channel density pair to per-cell (u, v)"""

    def __init__(self, network: NetworkConfig = NetworkConfig()):
        self.layout = optical_layout(network)

    @staticmethod
    def forward(params: OpticalRegressorParams, m_prev: np.ndarray, m_cur: np.ndarray) -> Tuple[np.ndarray, OpticalCache]:
        views = params.views()
        x = np.stack([m_prev, m_cur])
        pre1, windows1 = conv3x3_forward(x, views["opt1_w"], views["opt1_b"])
        out, windows2 = conv3x3_forward(relu(pre1), views["opt2_w"], views["opt2_b"])
        return out.transpose(1, 2, 0), OpticalCache(windows1, pre1, windows2)

    @staticmethod
    def backward(params: OpticalRegressorParams, cache: OpticalCache, grad_uv: np.ndarray):
        """Returns (d theta_o, d m_prev, d m_cur)"""
        _check_finite(grad_uv, "optical regressor")
        views = params.views()
        dtheta = {name: np.zeros(shape) for name, shape in params.layout.entries}
        g, dtheta["opt2_w"], dtheta["opt2_b"] = conv3x3_backward(grad_uv.transpose(2, 0, 1), cache.windows2, views["opt2_w"])
        g = relu_backward(g, cache.pre1)
        dx, dtheta["opt1_w"], dtheta["opt1_b"] = conv3x3_backward(g, cache.windows1, views["opt1_w"])
        return params.layout.flatten(dtheta), dx[0], dx[1]


def optical_forward(params_o: OpticalRegressorParams, m_prev: DensityMap, m_cur: DensityMap) -> OpticalFlowField:
    if (m_prev.shape.rows, m_prev.shape.cols) != (m_cur.shape.rows, m_cur.shape.cols):
        raise ShapeError("density maps of a pair must share their grid")
    uv, _ = OpticalRegressor.forward(params_o, m_prev.values, m_cur.values)
    return OpticalFlowField(m_cur.shape, uv)


@dataclass
class DiscriminatorCache:
    x: np.ndarray
    pre1: np.ndarray
    logit: float


class Discriminator:
    """MLP on a zero-padded, flattened patch density; sigmoid output"""

    def __init__(self, network: NetworkConfig, patch_rows: int, patch_cols: int):
        self.layout = discriminator_layout(network, patch_rows, patch_cols)

    @staticmethod
    def flatten_patch(layout: ParamLayout, values: np.ndarray) -> np.ndarray:
        rows, cols = int(layout.meta["patch_rows"]), int(layout.meta["patch_cols"])
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[0] > rows or values.shape[1] > cols:
            raise ShapeError(f"patch of {values.shape} does not fit the {rows}x{cols} discriminator input")
        padded = np.zeros((rows, cols))
        padded[:values.shape[0], :values.shape[1]] = values
        return padded.ravel()

    @staticmethod
    def forward(params: DiscriminatorParams, values: np.ndarray) -> Tuple[float, DiscriminatorCache]:
        views = params.views()
        x = Discriminator.flatten_patch(params.layout, values)
        pre1 = dense_forward(x, views["disc1_w"], views["disc1_b"])
        logit = float(dense_forward(relu(pre1), views["disc2_w"], views["disc2_b"])[0])
        return float(sigmoid(logit)), DiscriminatorCache(x, pre1, logit)

    @staticmethod
    def backward(params: DiscriminatorParams, cache: DiscriminatorCache, d_logit: float, patch_shape: Tuple[int, int]):
        """Returns (d theta_d, d patch values) for an upstream gradient on the logit"""
        views = params.views()
        dtheta = {}
        hidden = relu(cache.pre1)
        g_hidden, dtheta["disc2_w"], dtheta["disc2_b"] = dense_backward(np.array([d_logit]), hidden, views["disc2_w"])
        g_pre = relu_backward(g_hidden, cache.pre1)
        dx, dtheta["disc1_w"], dtheta["disc1_b"] = dense_backward(g_pre, cache.x, views["disc1_w"])
        rows, cols = int(params.layout.meta["patch_rows"]), int(params.layout.meta["patch_cols"])
        d_values = dx.reshape(rows, cols)[:patch_shape[0], :patch_shape[1]]
        return params.layout.flatten(dtheta), d_values


def discriminator_forward(params_d: DiscriminatorParams, patch_density: DensityMap) -> float:
    """Probability that the patch density comes from an annotated patch"""
    probability, _ = Discriminator.forward(params_d, patch_density.values)
    return probability
