"""
Training objectives over predicted flows and densities.

Every loss returns a LossResult: the scalar value, the gradient with respect to
each differentiable input (keyed by role) and the unweighted terms for logging.
Flow inputs may be FlowFields or raw rows x cols x 10 channel arrays.
"""
import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from dataclasses_json import dataclass_json
from numpy.lib.stride_tricks import sliding_window_view

from config.flowcount_config import LossWeights
from src.errors import NumericError, RegionError, ShapeError
from src.grid_flow import (
    N_CHANNELS,
    OUTSIDE,
    CellRegion,
    DensityMap,
    FlowField,
    broadcast_outgoing,
    incoming_sum,
    outgoing_sum,
    reverse_channels,
    scatter_incoming,
    target_cell_mask,
)
from src.regressor import Discriminator, DiscriminatorParams, OpticalRegressor, OpticalRegressorParams


logger = logging.getLogger(__name__)

MASK_EPS = 1e-4
PROB_CLAMP = 1e-7

# roles of the four flow passes around frame t
PREV_CUR = "f_prev_cur"
CUR_NEXT = "f_cur_next"
CUR_PREV = "f_cur_prev"
NEXT_CUR = "f_next_cur"

FlowLike = Union[FlowField, np.ndarray]
DensityLike = Union[DensityMap, np.ndarray]


@dataclass
class LossResult:
    value: float
    grads: Dict[str, Any] = field(default_factory=dict)
    terms: Dict[str, float] = field(default_factory=dict)


@dataclass_json
@dataclass
class LossBreakdown:
    """One row of the loss log"""
    step: int
    l_flow: float = 0.0
    l_cycle: float = 0.0
    l_uflow: float = 0.0
    l_optical: float = 0.0
    l_spatial: float = 0.0
    l_advers: float = 0.0
    total: float = 0.0

    def add_terms(self, terms: Dict[str, float]) -> None:
        for name, value in terms.items():
            if hasattr(self, name) and name not in ("step", "total"):
                setattr(self, name, getattr(self, name) + float(value))


def _channels(f: FlowLike) -> np.ndarray:
    array = f.channels if isinstance(f, FlowField) else np.asarray(f, dtype=np.float64)
    if array.ndim != 3 or array.shape[2] != N_CHANNELS:
        raise ShapeError(f"flow input must be rows x cols x {N_CHANNELS}, got {array.shape}")
    return array


def _values(m: DensityLike) -> np.ndarray:
    array = m.values if isinstance(m, DensityMap) else np.asarray(m, dtype=np.float64)
    if array.ndim != 2:
        raise ShapeError(f"density input must be rows x cols, got {array.shape}")
    return array


def _same_grid(arrays: Sequence[np.ndarray], what: str) -> Tuple[int, int]:
    grids = {a.shape[:2] for a in arrays}
    if len(grids) != 1:
        raise ShapeError(f"{what}: inputs on different grids {sorted(grids)}")
    return grids.pop()


def _cell_weights(cell_mask: Optional[np.ndarray], grid: Tuple[int, int]) -> np.ndarray:
    if cell_mask is None:
        return np.ones(grid)
    weights = np.asarray(cell_mask, dtype=np.float64)
    if weights.shape != grid:
        raise ShapeError(f"cell mask {weights.shape} does not match grid {grid}")
    return weights


def _directional(array: np.ndarray) -> np.ndarray:
    out = array.copy()
    out[..., OUTSIDE] = 0.0
    return out


def loss_combi(
    f_prev_cur: FlowLike,
    f_cur_next: FlowLike,
    f_cur_prev: FlowLike,
    f_next_cur: FlowLike,
    target: Optional[DensityLike],
    weights: LossWeights,
    cell_mask: Optional[np.ndarray] = None,
) -> LossResult:
    """
    Conservation plus cycle consistency around frame t.

    With a target m: sum_j (m_j - in_j)^2 + (m_j - out_j)^2, where in_j sums
    f^{t-1,t} into j and out_j sums f^{t,t+1} out of j. Without one the
    residual is in_j - out_j. The cycle term compares f^{t-1,t} with the
    reversed f^{t,t-1} and f^{t,t+1} with the reversed f^{t+1,t} on the nine
    neighbor channels, weighted by alpha.
    """
    a, b, ar, br = (_channels(f) for f in (f_prev_cur, f_cur_next, f_cur_prev, f_next_cur))
    grid = _same_grid([a, b, ar, br], "loss_combi")
    w = _cell_weights(cell_mask, grid)
    ones = np.ones(a.shape, dtype=bool)

    incoming = incoming_sum(a)
    outgoing = outgoing_sum(b)
    terms: Dict[str, float] = {}
    if target is not None:
        m = _values(target)
        if m.shape != grid:
            raise ShapeError(f"loss_combi: target {m.shape} vs flows {grid}")
        r_in = incoming - m
        r_out = outgoing - m
        flow_value = float(np.sum(w * r_in * r_in) + np.sum(w * r_out * r_out))
        d_a = scatter_incoming(2.0 * w * r_in, ones)
        d_b = broadcast_outgoing(2.0 * w * r_out, ones)
        terms["l_flow"] = flow_value
    else:
        r = incoming - outgoing
        flow_value = float(np.sum(w * r * r))
        d_a = scatter_incoming(2.0 * w * r, ones)
        d_b = broadcast_outgoing(-2.0 * w * r, ones)
        terms["l_uflow"] = flow_value

    # pair (i -> j) of f^{t-1,t} belongs to its target cell j, pair (j -> k) of f^{t,t+1} to its source j
    w_target = _directional(target_cell_mask(w))
    w_source = _directional(np.repeat(w[..., None], N_CHANNELS, axis=2))
    diff_a = a - reverse_channels(ar)
    diff_b = b - reverse_channels(br)
    cycle_value = float(np.sum(w_target * diff_a * diff_a) + np.sum(w_source * diff_b * diff_b))
    terms["l_cycle"] = cycle_value

    alpha = weights.alpha
    g_a = 2.0 * alpha * w_target * diff_a
    g_b = 2.0 * alpha * w_source * diff_b
    grads = {
        PREV_CUR: d_a + g_a,
        CUR_NEXT: d_b + g_b,
        CUR_PREV: -reverse_channels(g_a),
        NEXT_CUR: -reverse_channels(g_b),
    }
    return LossResult(flow_value + alpha * cycle_value, grads, terms)


def loss_optical(
    m_prev: DensityLike,
    m_cur: DensityLike,
    fo_params: OpticalRegressorParams,
    target_optical,
    beta: float,
    mask_eps: float = MASK_EPS,
    cell_mask: Optional[np.ndarray] = None,
) -> LossResult:
    """beta * sum over occupied cells of |F_o(m_prev, m_cur) - target|^2; F_o frozen"""
    prev, cur = _values(m_prev), _values(m_cur)
    target = np.asarray(getattr(target_optical, "uv", target_optical), dtype=np.float64)
    grid = _same_grid([prev, cur, target], "loss_optical")
    if target.shape != grid + (2,):
        raise ShapeError(f"loss_optical: target optical flow {target.shape} vs grid {grid}")
    occupied = (cur > mask_eps).astype(np.float64) * _cell_weights(cell_mask, grid)

    predicted, cache = OpticalRegressor.forward(fo_params, prev, cur)
    diff = predicted - target
    raw = float(np.sum(occupied[..., None] * diff * diff))
    _, d_prev, d_cur = OpticalRegressor.backward(fo_params, cache, 2.0 * beta * occupied[..., None] * diff)
    return LossResult(beta * raw, {"m_prev": d_prev, "m_cur": d_cur}, {"l_optical": raw})


def loss_spatial(
    patches: Sequence[Tuple[CellRegion, DensityLike]],
    super_region: CellRegion,
    super_density: DensityLike,
    annotated: Sequence[Tuple[CellRegion, float]] = (),
) -> LossResult:
    """
    Squared mismatch between a super-patch count and the sum of its patches' counts.

    `patches` are per-patch predictions, `annotated` lists patches of
    the super-patch whose counts are known from annotation.
    """
    super_values = _values(super_density)
    if super_values.shape != (super_region.n_rows, super_region.n_cols):
        raise RegionError(f"super-patch density {super_values.shape} does not cover {super_region}")
    regions = [region for region, _ in patches] + [region for region, _ in annotated]
    if not regions:
        raise RegionError("a super-patch needs at least one patch")
    for position, region in enumerate(regions):
        if not super_region.contains(region):
            raise RegionError(f"patch {region} lies outside super-patch {super_region}")
        for other in regions[position + 1:]:
            if (region.row0 < other.row1 and other.row0 < region.row1
                    and region.col0 < other.col1 and other.col0 < region.col1):
                raise RegionError(f"patches {region} and {other} overlap")
    if sum(region.n_cells for region in regions) != super_region.n_cells:
        raise RegionError(f"patches do not cover super-patch {super_region}")

    patch_values = []
    for region, density in patches:
        values = _values(density)
        if values.shape != (region.n_rows, region.n_cols):
            raise RegionError(f"patch density {values.shape} does not match {region}")
        patch_values.append(values)
    known = sum(float(count) for _, count in annotated)
    residual = sum(float(v.sum()) for v in patch_values) + known - float(super_values.sum())
    grads = {
        "patches": [np.full(v.shape, 2.0 * residual) for v in patch_values],
        "super": np.full(super_values.shape, -2.0 * residual),
    }
    value = residual * residual
    return LossResult(value, grads, {"l_spatial": value})


def loss_adversarial(
    disc_params: DiscriminatorParams,
    labeled_patches: Sequence[DensityLike],
    unlabeled_patches: Sequence[DensityLike],
) -> LossResult:
    """
    Discriminator loss -sum_A log D - sum_U log(1 - D) with D clamped to
    [1e-7, 1 - 1e-7]. The generator side, -sum_U log D, is reported in
    terms["generator"] with its gradient on every unlabeled patch.
    """
    d_theta = np.zeros(disc_params.layout.size)
    value = 0.0
    generator_value = 0.0
    unlabeled_grads: List[np.ndarray] = []

    for patch in labeled_patches:
        values = _values(patch)
        p, cache = Discriminator.forward(disc_params, values)
        pc = float(np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP))
        value -= np.log(pc)
        d_logit = -(1.0 - p) if pc == p else 0.0
        grad, _ = Discriminator.backward(disc_params, cache, d_logit, values.shape)
        d_theta += grad

    for patch in unlabeled_patches:
        values = _values(patch)
        p, cache = Discriminator.forward(disc_params, values)
        pc = float(np.clip(p, PROB_CLAMP, 1 - PROB_CLAMP))
        value -= np.log(1.0 - pc)
        generator_value -= np.log(pc)
        inside = pc == p
        grad, _ = Discriminator.backward(disc_params, cache, p if inside else 0.0, values.shape)
        d_theta += grad
        _, d_values = Discriminator.backward(disc_params, cache, -(1.0 - p) if inside else 0.0, values.shape)
        unlabeled_grads.append(d_values)

    return LossResult(
        float(value),
        {"theta_d": d_theta, "unlabeled": unlabeled_grads},
        {"l_advers": float(value), "generator": float(generator_value)},
    )


def generator_side(adversarial: LossResult) -> LossResult:
    """The non-saturating generator objective carried by a loss_adversarial result"""
    value = adversarial.terms["generator"]
    return LossResult(value, {"unlabeled": adversarial.grads["unlabeled"]}, {"l_advers": value})


def _add_grad(total: Dict[str, Any], key: str, grad: Any, scale: float) -> None:
    if isinstance(grad, list):
        scaled = [scale * g for g in grad]
        if key in total:
            total[key] = [a + b for a, b in zip(total[key], scaled)]
        else:
            total[key] = scaled
    else:
        total[key] = total[key] + scale * grad if key in total else scale * np.asarray(grad)


OVERALL_COEFFICIENTS = {
    "combi": lambda w: 1.0,
    "uflow": lambda w: 1.0,
    "optical": lambda w: 1.0,  # loss_optical is already beta-weighted
    "spatial": lambda w: w.gamma,
    "advers": lambda w: w.delta,
}


def loss_overall(components: Dict[str, LossResult], weights: LossWeights) -> LossResult:
    """combi + gamma * spatial + delta * advers (plus any beta-weighted optical term); gradients superpose"""
    value = 0.0
    grads: Dict[str, Any] = {}
    terms: Dict[str, float] = {}
    for name, component in components.items():
        if name not in OVERALL_COEFFICIENTS:
            raise KeyError(f"unknown loss component {name!r}")
        if not np.isfinite(component.value):
            raise NumericError(f"loss component '{name}' is not finite ({component.value})", component=name)
        scale = OVERALL_COEFFICIENTS[name](weights)
        value += scale * component.value
        for key, grad in component.grads.items():
            _add_grad(grads, key, grad, scale)
        for key, term in component.terms.items():
            terms[key] = terms.get(key, 0.0) + term
    return LossResult(value, grads, terms)


def _box_sum(values: np.ndarray) -> np.ndarray:
    padded = np.pad(values, 1)
    return sliding_window_view(padded, (3, 3)).sum(axis=(2, 3))


def loss_weak_baseline(m_prev: DensityLike, m_cur: DensityLike, m_next: DensityLike) -> LossResult:
    """Hinge on cells holding more people than their whole neighborhood held before / holds after"""
    prev, cur, nxt = _values(m_prev), _values(m_cur), _values(m_next)
    _same_grid([prev, cur, nxt], "loss_weak_baseline")
    excess_prev = cur - _box_sum(prev)
    excess_next = cur - _box_sum(nxt)
    active_prev = (excess_prev > 0).astype(np.float64)
    active_next = (excess_next > 0).astype(np.float64)
    value = float(np.sum(excess_prev * active_prev) + np.sum(excess_next * active_next))
    grads = {
        "m_prev": -_box_sum(active_prev),
        "m_cur": active_prev + active_next,
        "m_next": -_box_sum(active_next),
    }
    return LossResult(value, grads, {"l_flow": value})


def loss_density(pred: DensityLike, target: DensityLike, cell_mask: Optional[np.ndarray] = None) -> LossResult:
    """Per-cell squared error for direct density regression"""
    p, t = _values(pred), _values(target)
    grid = _same_grid([p, t], "loss_density")
    w = _cell_weights(cell_mask, grid)
    r = p - t
    value = float(np.sum(w * r * r))
    return LossResult(value, {"m": 2.0 * w * r}, {"l_flow": value})
