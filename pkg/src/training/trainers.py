"""
Training loops: F_o pre-training, three-frame flow training, density baselines
and training from patch annotations
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Dict, List, Optional, Sequence, Set, Tuple

import numpy as np

from config.flowcount_config import NetworkConfig, PatchGrid, TrainConfig, derive_seed
from src.errors import AnnotationError, ConfigError, NumericError, RegionError
from src.grid_flow import (
    CellRegion,
    DensityMap,
    OpticalFlowField,
    broadcast_outgoing,
    incoming_sum,
    outgoing_sum,
    scatter_incoming,
)
from src.losses import (
    CUR_NEXT,
    CUR_PREV,
    MASK_EPS,
    NEXT_CUR,
    PREV_CUR,
    LossBreakdown,
    LossResult,
    generator_side,
    loss_adversarial,
    loss_combi,
    loss_density,
    loss_optical,
    loss_overall,
    loss_spatial,
    loss_weak_baseline,
)
from src.regressor import (
    DensityRegressor,
    DiscriminatorParams,
    FlowRegressor,
    FlowTape,
    OpticalRegressor,
    OpticalRegressorParams,
    OptimizerState,
    ParamVector,
    RegressorParams,
    discriminator_layout,
    init_params,
    optical_layout,
    optimizer_step,
)

from .data import TrainingSequence, crop_frame, inner_mask, nominal_patch_size, pad_to, patch_regions


logger = logging.getLogger(__name__)

Pass = Tuple[int, int]
GradMap = Dict[Tuple, np.ndarray]
Validator = Callable[[ParamVector], float]

DENSITY_MODES = ("baseline", "weak", "image-pair")
PATCH_VARIANTS = ("base", "spatial", "all")


@dataclass
class TrainResult:
    """Final parameters of a training run together with its loss log"""
    params: ParamVector
    history: List[LossBreakdown] = field(default_factory=list)
    keyframes_used: List[int] = field(default_factory=list)
    best_validation: Optional[float] = None
    disc_params: Optional[DiscriminatorParams] = None

    @property
    def final_loss(self) -> float:
        return self.history[-1].total if self.history else 0.0


def _passes_around(t: int) -> Dict[str, Pass]:
    """The four flow passes of the triple centred on t, keyed by loss role"""
    return {
        PREV_CUR: (t - 1, t),
        CUR_NEXT: (t, t + 1),
        CUR_PREV: (t, t - 1),
        NEXT_CUR: (t + 1, t),
    }


def _accumulate(total: GradMap, key: Tuple, grad: np.ndarray) -> None:
    total[key] = total[key] + grad if key in total else np.array(grad, dtype=np.float64)


def _combi_on_tape(
    tape: FlowTape,
    t: int,
    target: Optional[np.ndarray],
    config: TrainConfig,
    grads: GradMap,
    cell_mask: Optional[np.ndarray] = None,
) -> LossResult:
    passes = _passes_around(t)
    result = loss_combi(
        tape.run(*passes[PREV_CUR]),
        tape.run(*passes[CUR_NEXT]),
        tape.run(*passes[CUR_PREV]),
        tape.run(*passes[NEXT_CUR]),
        target,
        config.weights,
        cell_mask,
    )
    for role, key in passes.items():
        _accumulate(grads, key, result.grads[role])
    return result


def _optical_on_tape(
    tape: FlowTape,
    pair: Pass,
    fo_params: OpticalRegressorParams,
    target: OpticalFlowField,
    beta: float,
    grads: GradMap,
) -> LossResult:
    """Optical regularizer on the densities at both ends of one forward pass"""
    channels = tape.run(*pair)
    result = loss_optical(outgoing_sum(channels), incoming_sum(channels), fo_params, target, beta)
    ones = np.ones(channels.shape, dtype=bool)
    _accumulate(grads, pair, broadcast_outgoing(result.grads["m_prev"], ones)
                + scatter_incoming(result.grads["m_cur"], ones))
    return result


def _breakdown(step: int, results: Sequence[LossResult], total: float) -> LossBreakdown:
    row = LossBreakdown(step=step, total=float(total))
    for result in results:
        row.add_terms(result.terms)
    return row


def _check_total(total: float, name: str) -> None:
    if not np.isfinite(total):
        raise NumericError(f"{name}: loss became non-finite ({total})", component=name)


def _log_progress(name: str, config: TrainConfig, row: LossBreakdown, steps: int) -> None:
    if config.log_every and (row.step + 1) % config.log_every == 0:
        logger.info(
            f"{name} step {row.step + 1}/{steps}: total={row.total:.4f} flow={row.l_flow:.4f} "
            f"cycle={row.l_cycle:.4f} uflow={row.l_uflow:.4f} optical={row.l_optical:.4f} "
            f"spatial={row.l_spatial:.4f} advers={row.l_advers:.4f}"
        )


class _BestTracker:
    """Keeps the parameters with the lowest validation score seen so far"""

    def __init__(self, validate: Optional[Validator], every: int):
        self.validate = validate
        self.every = every
        self.best_score: Optional[float] = None
        self.best_params: Optional[ParamVector] = None

    def check(self, step: int, params: ParamVector, final: bool = False) -> None:
        if self.validate is None:
            return
        if not final and (self.every <= 0 or (step + 1) % self.every):
            return
        score = float(self.validate(params))
        if self.best_score is None or score < self.best_score:
            self.best_score = score
            self.best_params = params
            logger.debug(f"New best validation score {score:.4f} at step {step + 1}")

    def pick(self, params: ParamVector) -> ParamVector:
        return self.best_params if self.best_params is not None else params


def optical_samples(sequence: TrainingSequence) -> List[Tuple[np.ndarray, np.ndarray, OpticalFlowField]]:
    """(m^{t-1}, m^t, optical flow) triples for every consecutive annotated pair"""
    if sequence.optical is None:
        raise ConfigError("sequence carries no optical flow fields")
    return [
        (sequence.targets[t].values, sequence.targets[t + 1].values, sequence.optical[t])
        for t in range(sequence.n_frames - 1)
        if t in sequence.targets and t + 1 in sequence.targets
    ]


def pretrain_fo(
    samples: Sequence[Tuple[np.ndarray, np.ndarray, OpticalFlowField]],
    steps: int,
    learning_rate: float = 1e-4,
    network: NetworkConfig = NetworkConfig(),
    seed: int = 0,
    initial: Optional[OpticalRegressorParams] = None,
    mask_eps: float = MASK_EPS,
) -> TrainResult:
    """
    Fit F_o to ground-truth density pairs: full-batch Adam on the squared
    optical-flow error over cells occupied in the second map.
    """
    if not samples:
        raise ConfigError("F_o pre-training needs at least one density pair")
    params = initial if initial is not None else init_params(
        optical_layout(network), derive_seed(seed, "pretrain_fo"), OpticalRegressorParams
    )
    state = OptimizerState.adam(params.layout.size, learning_rate)
    history: List[LossBreakdown] = []

    for step in range(steps):
        value = 0.0
        grad = np.zeros(params.layout.size)
        for m_prev, m_cur, target in samples:
            uv, cache = OpticalRegressor.forward(params, np.asarray(m_prev), np.asarray(m_cur))
            occupied = (np.asarray(m_cur) > mask_eps)[..., None]
            diff = np.where(occupied, uv - np.asarray(getattr(target, "uv", target)), 0.0)
            value += float(np.sum(diff * diff))
            grad += OpticalRegressor.backward(params, cache, 2.0 * diff)[0]
        _check_total(value, "pretrain_fo")
        history.append(LossBreakdown(step=step, l_optical=value, total=value))
        state, theta = optimizer_step(state, params.theta, grad)
        params = params.with_theta(theta)

    logger.info(f"Pre-trained F_o on {len(samples)} pairs for {steps} steps"
                + (f", final loss {history[-1].total:.6f}" if history else ""))
    return TrainResult(params, history)


def _sample_keyframes(rng: np.random.Generator, keyframes: Sequence[int], batch: int) -> List[int]:
    picks = rng.integers(0, len(keyframes), size=batch)
    return [int(keyframes[i]) for i in picks]


def train_three_frame(
    sequence: TrainingSequence,
    config: TrainConfig,
    network: NetworkConfig = NetworkConfig(),
    fo_params: Optional[OpticalRegressorParams] = None,
    initial: Optional[RegressorParams] = None,
    validate: Optional[Validator] = None,
    validate_every: int = 0,
) -> TrainResult:
    """
    Train the flow regressor on triples centred on keyframes.

    With V=1 every step evaluates the four passes of the triple and minimizes
    the supervised combined loss. With V>1 the neighbouring triples t-1 and
    t+1 join through the target-free conservation residual. A pre-trained F_o
    adds the optical regularizer on the forward pairs.
    """
    if sequence.n_frames < 3:
        raise ConfigError(f"three-frame training needs >= 3 frames, got {sequence.n_frames}")
    keyframes = sequence.keyframes(config.keyframe_interval)
    if not keyframes:
        raise AnnotationError(f"no keyframes at interval V={config.keyframe_interval}")
    sequence.require_targets(keyframes)
    if fo_params is not None and sequence.optical is None:
        raise ConfigError("the optical term needs optical flow fields on the sequence")

    model = FlowRegressor(network, sequence.shape.cell_px)
    params = initial if initial is not None else init_params(
        model.layout, derive_seed(config.seed, "train.three_frame.init"), RegressorParams
    )
    state = OptimizerState.adam(params.layout.size, config.learning_rate, config.adam_betas, config.adam_eps)
    rng = np.random.default_rng(derive_seed(config.seed, "train.three_frame"))
    tracker = _BestTracker(validate, validate_every)
    history: List[LossBreakdown] = []
    used: List[int] = []
    last = sequence.n_frames - 1

    for step in range(config.max_steps):
        batch = _sample_keyframes(rng, keyframes, config.batch)
        used.extend(batch)
        needed = {c + d for t in batch for c in (t - 1, t, t + 1) for d in (-1, 0, 1)}
        frames = {k: sequence.frames[k] for k in needed if 0 <= k <= last}
        tape = FlowTape(model, params, frames)
        grads: GradMap = {}
        results: List[LossResult] = []

        for t in batch:
            results.append(_combi_on_tape(tape, t, sequence.targets[t].values, config, grads))
            if config.keyframe_interval > 1:
                for c in (t - 1, t + 1):
                    if 1 <= c <= last - 1:
                        results.append(_combi_on_tape(tape, c, None, config, grads))
            if fo_params is not None:
                for pair in ((t - 1, t), (t, t + 1)):
                    results.append(_optical_on_tape(
                        tape, pair, fo_params, sequence.optical[pair[0]], config.weights.beta, grads
                    ))

        total = sum(r.value for r in results)
        _check_total(total, "train_three_frame")
        row = _breakdown(step, results, total)
        history.append(row)
        state, theta = optimizer_step(state, params.theta, tape.backward(grads))
        params = params.with_theta(theta)
        _log_progress("three-frame", config, row, config.max_steps)
        tracker.check(step, params)

    tracker.check(config.max_steps - 1, params, final=True)
    logger.info(f"Three-frame training finished after {config.max_steps} steps on {len(set(used))} keyframes")
    return TrainResult(tracker.pick(params), history, used, tracker.best_score)


def train_density_regressor(
    sequence: TrainingSequence,
    config: TrainConfig,
    mode: str = "baseline",
    network: NetworkConfig = NetworkConfig(),
    initial: Optional[RegressorParams] = None,
) -> TrainResult:
    """
    Direct density regression at keyframes. `baseline` regresses single frames,
    `image-pair` regresses from (I^{t-1}, I^t), `weak` adds the neighbourhood
    hinge on the unannotated neighbours of each keyframe.
    """
    if mode not in DENSITY_MODES:
        raise ConfigError(f"density mode must be one of {DENSITY_MODES}, got {mode!r}")
    keyframes = sequence.keyframes(config.keyframe_interval)
    if not keyframes:
        raise AnnotationError(f"no keyframes at interval V={config.keyframe_interval}")
    sequence.require_targets(keyframes)

    n_frames = 2 if mode == "image-pair" else 1
    model = DensityRegressor(network, sequence.shape.cell_px, n_frames)
    params = initial if initial is not None else init_params(
        model.layout, derive_seed(config.seed, f"train.density.{mode}.init"), RegressorParams
    )
    state = OptimizerState.adam(params.layout.size, config.learning_rate, config.adam_betas, config.adam_eps)
    rng = np.random.default_rng(derive_seed(config.seed, f"train.density.{mode}"))
    history: List[LossBreakdown] = []
    used: List[int] = []

    def keys_at(t: int) -> Tuple[int, ...]:
        return (t - 1, t) if n_frames == 2 else (t,)

    for step in range(config.max_steps):
        batch = _sample_keyframes(rng, keyframes, config.batch)
        used.extend(batch)
        tape = FlowTape(model, params, {k: sequence.frames[k] for t in batch for k in (t - 1, t, t + 1)})
        grads: GradMap = {}
        results: List[LossResult] = []
        for t in batch:
            supervised = loss_density(tape.run(*keys_at(t))[..., 0], sequence.targets[t].values)
            _accumulate(grads, keys_at(t), supervised.grads["m"][..., None])
            results.append(supervised)
            if mode == "weak":
                # the hinge term is logged under l_uflow to keep it apart from the supervised error
                weak = loss_weak_baseline(tape.run(t - 1)[..., 0], tape.run(t)[..., 0], tape.run(t + 1)[..., 0])
                for key, role in (((t - 1,), "m_prev"), ((t,), "m_cur"), ((t + 1,), "m_next")):
                    _accumulate(grads, key, weak.grads[role][..., None])
                results.append(LossResult(weak.value, {}, {"l_uflow": weak.value}))

        total = sum(r.value for r in results)
        _check_total(total, f"train_density[{mode}]")
        row = _breakdown(step, results, total)
        history.append(row)
        state, theta = optimizer_step(state, params.theta, tape.backward(grads))
        params = params.with_theta(theta)
        _log_progress(f"density[{mode}]", config, row, config.max_steps)

    return TrainResult(params, history, used)


def train_discriminator(
    disc_params: DiscriminatorParams,
    state: OptimizerState,
    labeled: Sequence[np.ndarray],
    unlabeled: Sequence[np.ndarray],
) -> Tuple[DiscriminatorParams, OptimizerState, LossResult]:
    """One RMSProp step of the discriminator on labeled vs unlabeled patch densities"""
    result = loss_adversarial(disc_params, labeled, unlabeled)
    state, theta = optimizer_step(state, disc_params.theta, result.grads["theta_d"])
    return disc_params.with_theta(theta), state, result


class _PatchCrop:
    """A patch cropped out of the frames together with a halo, and its flow tape"""

    def __init__(self, model: FlowRegressor, params: RegressorParams, sequence: TrainingSequence,
                 region: CellRegion, halo: int, frame_keys: Set[int]):
        self.region = region
        self.outer = region.expanded(halo, sequence.shape)
        self.mask = inner_mask(region, self.outer)
        cell_px = sequence.shape.cell_px
        frames = {k: crop_frame(sequence.frames[k], self.outer, cell_px) for k in frame_keys}
        self.tape = FlowTape(model, params, frames)
        self.grads: GradMap = {}

    def inner(self, values: np.ndarray) -> np.ndarray:
        return values[self.region.relative_to(self.outer).slices]

    def padded_target(self, target: DensityMap) -> np.ndarray:
        return pad_to(target.values[self.region.slices], self.region, self.outer)

    def density(self, t: int) -> np.ndarray:
        """Averaged forward/backward reconstruction at t over the patch cells"""
        forward = incoming_sum(self.tape.run(t - 1, t))
        backward = incoming_sum(self.tape.run(t + 1, t))
        return self.inner((forward + backward) / 2.0)

    def density_backward(self, t: int, grad: np.ndarray) -> None:
        ones = np.ones(self.tape.run(t - 1, t).shape, dtype=bool)
        spread = scatter_incoming(0.5 * pad_to(grad, self.region, self.outer), ones)
        _accumulate(self.grads, (t - 1, t), spread)
        _accumulate(self.grads, (t + 1, t), spread)

    def backward(self) -> np.ndarray:
        return self.tape.backward(self.grads)


def _prefixed(result: LossResult, prefix: str) -> LossResult:
    return LossResult(result.value, {f"{prefix}/{k}": v for k, v in result.grads.items()}, result.terms)


def _draw_super_patch(rng: np.random.Generator, n: int, max_patches: int) -> Tuple[int, int, int, int]:
    """Random rectangle of patch indices holding between 2 and max_patches patches"""
    while True:
        h = int(rng.integers(1, n + 1))
        w = int(rng.integers(1, n + 1))
        if 2 <= h * w <= max_patches:
            break
    r0 = int(rng.integers(0, n - h + 1))
    c0 = int(rng.integers(0, n - w + 1))
    return r0, r0 + h, c0, c0 + w


def train_patch_annotated(
    sequence: TrainingSequence,
    labeled: Set[Tuple[int, int]],
    config: TrainConfig,
    patch_grid: PatchGrid = PatchGrid(),
    variant: str = "all",
    network: NetworkConfig = NetworkConfig(),
    initial: Optional[RegressorParams] = None,
    disc_initial: Optional[DiscriminatorParams] = None,
    validate: Optional[Validator] = None,
    validate_every: int = 0,
) -> TrainResult:
    """
    Train from annotated patches. Each step combines the supervised combined
    loss on a labeled patch, the target-free conservation residual on an
    unlabeled patch, the super-patch consistency term (`spatial` and `all`)
    and the adversarial term against a patch discriminator (`all`).
    """
    if variant not in PATCH_VARIANTS:
        raise ConfigError(f"patch variant must be one of {PATCH_VARIANTS}, got {variant!r}")
    if not labeled:
        raise ConfigError("patch training needs at least one labeled patch")
    n = patch_grid.n
    regions = patch_regions(sequence.shape, n)
    keyframes = sequence.keyframes(config.keyframe_interval)
    keyframe_set = set(keyframes)
    for t, p in labeled:
        if t not in keyframe_set:
            raise RegionError(f"labeled patch ({t}, {p}) is not on a keyframe")
        if not 0 <= p < len(regions):
            raise RegionError(f"patch index {p} outside the {n}x{n} grid")
    sequence.require_targets(sorted({t for t, _ in labeled}))

    labeled_list = sorted(labeled)
    unlabeled_list = [(t, p) for t in keyframes for p in range(len(regions)) if (t, p) not in labeled]
    weights = config.weights
    use_spatial = variant in ("spatial", "all")
    use_advers = variant == "all" and bool(unlabeled_list)

    model = FlowRegressor(network, sequence.shape.cell_px)
    params = initial if initial is not None else init_params(
        model.layout, derive_seed(config.seed, "train.patch.init"), RegressorParams
    )
    disc = disc_initial
    if disc is None and variant == "all":
        disc = init_params(
            discriminator_layout(network, *nominal_patch_size(sequence.shape, n)),
            derive_seed(config.seed, "train.patch.discriminator"),
            DiscriminatorParams,
        )
    state = OptimizerState.adam(params.layout.size, config.learning_rate, config.adam_betas, config.adam_eps)
    disc_state = None
    if disc is not None:
        disc_state = OptimizerState.rmsprop(disc.layout.size, config.discriminator_learning_rate,
                                            config.rmsprop_decay, config.rmsprop_eps)
    rng = np.random.default_rng(derive_seed(config.seed, "train.patch"))
    tracker = _BestTracker(validate, validate_every)
    history: List[LossBreakdown] = []
    used: List[int] = []

    def crop(t: int, p: int) -> _PatchCrop:
        return _PatchCrop(model, params, sequence, regions[p], patch_grid.halo, {t - 1, t, t + 1})

    for step in range(config.max_steps):
        components: Dict[str, LossResult] = {}

        t_l, p_l = labeled_list[int(rng.integers(len(labeled_list)))]
        used.append(t_l)
        lab = crop(t_l, p_l)
        lab_result = _combi_on_tape(lab.tape, t_l, lab.padded_target(sequence.targets[t_l]),
                                    config, {}, lab.mask)
        components["combi"] = _prefixed(lab_result, "labeled")

        unl = None
        if unlabeled_list:
            t_u, p_u = unlabeled_list[int(rng.integers(len(unlabeled_list)))]
            unl = crop(t_u, p_u)
            components["uflow"] = _prefixed(_combi_on_tape(unl.tape, t_u, None, config, {}, unl.mask), "unlabeled")

        if use_advers:
            m_lab = lab.density(t_l)
            m_unl = unl.density(t_u)
            disc, disc_state, _ = train_discriminator(disc, disc_state, [m_lab], [m_unl])
            components["advers"] = _prefixed(generator_side(loss_adversarial(disc, [m_lab], [m_unl])), "advers")

        super_crop = None
        patch_crops: List[Tuple[int, _PatchCrop]] = []
        t_s = 0
        if use_spatial:
            t_s = keyframes[int(rng.integers(len(keyframes)))]
            r0, r1, c0, c1 = _draw_super_patch(rng, n, patch_grid.max_super_patches)
            members = [r * n + c for r in range(r0, r1) for c in range(c0, c1)]
            super_region = CellRegion(regions[members[0]].row0, regions[members[-1]].row1,
                                      regions[members[0]].col0, regions[members[-1]].col1)
            super_crop = _PatchCrop(model, params, sequence, super_region, patch_grid.halo, {t_s - 1, t_s, t_s + 1})
            annotated = []
            for q in members:
                if (t_s, q) in labeled:
                    annotated.append((regions[q], sequence.targets[t_s].region_total(regions[q])))
                else:
                    patch_crops.append((q, crop(t_s, q)))
            components["spatial"] = _prefixed(loss_spatial(
                [(regions[q], pc.density(t_s)) for q, pc in patch_crops],
                super_region,
                super_crop.density(t_s),
                annotated,
            ), "spatial")

        overall = loss_overall(components, weights)
        for role, key in _passes_around(t_l).items():
            _accumulate(lab.grads, key, overall.grads[f"labeled/{role}"])
        if unl is not None:
            for role, key in _passes_around(t_u).items():
                _accumulate(unl.grads, key, overall.grads[f"unlabeled/{role}"])
        if use_advers:
            unl.density_backward(t_u, overall.grads["advers/unlabeled"][0])
        if super_crop is not None:
            for (q, pc), grad in zip(patch_crops, overall.grads["spatial/patches"]):
                pc.density_backward(t_s, grad)
            super_crop.density_backward(t_s, overall.grads["spatial/super"])

        dtheta = lab.backward()
        for extra in [unl, super_crop] + [pc for _, pc in patch_crops]:
            if extra is not None:
                dtheta = dtheta + extra.backward()

        row = LossBreakdown(step=step, total=float(overall.value))
        row.add_terms(overall.terms)
        history.append(row)
        state, theta = optimizer_step(state, params.theta, dtheta)
        params = params.with_theta(theta)
        _log_progress(f"patch[{variant}]", config, row, config.max_steps)
        tracker.check(step, params)

    tracker.check(config.max_steps - 1, params, final=True)
    logger.info(f"Patch training [{variant}] finished: {len(labeled)} labeled, "
                f"{len(unlabeled_list)} unlabeled patches, {config.max_steps} steps")
    return TrainResult(tracker.pick(params), history, used, tracker.best_score, disc)


def with_steps(config: TrainConfig, steps: int) -> TrainConfig:
    return replace(config, max_steps=int(steps))
