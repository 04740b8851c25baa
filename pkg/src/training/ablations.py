"""
Named training variants and the runner that compares them on a simulated sequence
"""
import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List

from dataclasses_json import dataclass_json

from config.flowcount_config import (
    ActiveLearningConfig,
    KernelSpec,
    NetworkConfig,
    PatchGrid,
    RuntimeConfig,
    SimConfig,
    TrainConfig,
)
from src.crowd_sim import simulate
from src.errors import ConfigError
from src.grid_flow import ReconstructionMode

from .active import run_active_learning
from .data import TrainingSequence
from .metrics import ConstantMeanPredictor, EvalResult, ModelDensityPredictor, ModelFlowPredictor, evaluate
from .trainers import optical_samples, pretrain_fo, train_density_regressor, train_three_frame


logger = logging.getLogger(__name__)

FLOW_FAMILY = "flow"
DENSITY_FAMILY = "density"
PATCH_FAMILY = "patch"
CONSTANT_FAMILY = "constant"


@dataclass(frozen=True)
class Variant:
    name: str
    family: str
    description: str
    cycle: bool = True
    reconstruction: ReconstructionMode = ReconstructionMode.AVERAGED
    optical: bool = False
    density_mode: str = "baseline"
    patch_variant: str = "all"
    selector: str = "random"


def _patch_variants() -> List[Variant]:
    variants = []
    for patch_variant in ("base", "spatial", "all"):
        for selector, suffix in (("random", ""), ("active", "-al")):
            variants.append(Variant(
                f"patch-{patch_variant}{suffix}", PATCH_FAMILY,
                f"patch annotations ({patch_variant} losses), {selector} selection",
                patch_variant=patch_variant, selector=selector,
            ))
    return variants


VARIANTS: Dict[str, Variant] = {v.name: v for v in [
    Variant("flow", FLOW_FAMILY, "flows with conservation only", cycle=False),
    Variant("combi", FLOW_FAMILY, "flows with conservation and cycle consistency"),
    Variant("combi-for", FLOW_FAMILY, "combi, densities from forward flows only",
            reconstruction=ReconstructionMode.FORWARD),
    Variant("combi-back", FLOW_FAMILY, "combi, densities from backward flows only",
            reconstruction=ReconstructionMode.BACKWARD),
    Variant("all-est", FLOW_FAMILY, "combi plus the optical-flow regularizer", optical=True),
    Variant("baseline", DENSITY_FAMILY, "direct density regression from one frame"),
    Variant("image-pair", DENSITY_FAMILY, "direct density regression from a frame pair", density_mode="image-pair"),
    Variant("weak", DENSITY_FAMILY, "density regression with the neighbourhood hinge", density_mode="weak"),
    Variant("constant-mean", CONSTANT_FAMILY, "mean training count spread over the grid"),
] + _patch_variants()}


@dataclass(frozen=True)
class AblationSettings:
    """Everything a variant run needs besides its name and seed"""
    sim: SimConfig = field(default_factory=SimConfig.for_benchmark)
    kernel: KernelSpec = field(default_factory=KernelSpec)
    train: TrainConfig = field(default_factory=TrainConfig)
    patches: PatchGrid = field(default_factory=PatchGrid)
    active: ActiveLearningConfig = field(default_factory=ActiveLearningConfig)
    network: NetworkConfig = field(default_factory=NetworkConfig)
    runtime: RuntimeConfig = field(default_factory=RuntimeConfig)
    train_fraction: float = 0.5
    fo_steps: int = 200


@dataclass_json
@dataclass
class VariantResult:
    variant: str
    seed: int
    mae: float
    rmse: float


def get_variant(name: str) -> Variant:
    try:
        return VARIANTS[name]
    except KeyError:
        raise ConfigError(f"unknown variant {name!r}; known: {', '.join(sorted(VARIANTS))}") from None


def split_sequence(sequence: TrainingSequence, train_fraction: float):
    """Leading frames for training, the rest for testing"""
    n_train = int(sequence.n_frames * train_fraction)
    if n_train < 3 or sequence.n_frames - n_train < 1:
        raise ConfigError(f"cannot split {sequence.n_frames} frames at fraction {train_fraction}")
    return sequence.slice(0, n_train), sequence.slice(n_train, sequence.n_frames)


def run_variant(name: str, seed: int, settings: AblationSettings = AblationSettings()) -> VariantResult:
    variant = get_variant(name)
    sim = simulate(replace(settings.sim, seed=seed))
    sequence = TrainingSequence.from_simulation(sim, settings.kernel)
    train, test = split_sequence(sequence, settings.train_fraction)
    config = replace(settings.train, seed=seed, reconstruction=variant.reconstruction.value)
    if not variant.cycle:
        config = replace(config, weights=replace(config.weights, alpha=0.0))
    test_targets = {t: test.eval_target(t) for t in range(test.n_frames)}

    logger.info(f"Running variant {variant.name} (seed {seed}): {variant.description}")
    if variant.family == FLOW_FAMILY:
        fo_params = None
        if variant.optical:
            fo_params = pretrain_fo(optical_samples(train), settings.fo_steps, config.learning_rate,
                                    settings.network, seed).params
        trained = train_three_frame(train, config, settings.network, fo_params)
        metrics = evaluate(ModelFlowPredictor(trained.params, test.frames, variant.reconstruction), test_targets)
    elif variant.family == DENSITY_FAMILY:
        trained = train_density_regressor(train, config, variant.density_mode, settings.network)
        metrics = evaluate(ModelDensityPredictor(trained.params, test.frames), test_targets)
    elif variant.family == PATCH_FAMILY:
        al_config = replace(settings.active, selector=variant.selector)
        outcome = run_active_learning(train, test, config, settings.patches, al_config,
                                      variant.patch_variant, settings.network, settings.runtime)
        final = outcome.records[-1]
        metrics = EvalResult(final.mae, final.rmse)
    else:
        predictor = ConstantMeanPredictor.fit(train, train.keyframes(config.keyframe_interval))
        metrics = evaluate(predictor, test_targets)

    logger.info(f"Variant {variant.name} seed {seed}: MAE={metrics.mae:.4f} RMSE={metrics.rmse:.4f}")
    return VariantResult(variant.name, seed, metrics.mae, metrics.rmse)


def run_ablation(names: List[str], seeds: List[int],
                 settings: AblationSettings = AblationSettings()) -> List[VariantResult]:
    for name in names:
        get_variant(name)
    return [run_variant(name, seed, settings) for name in names for seed in seeds]


def summarize(results: List[VariantResult]) -> Dict[str, Dict[str, float]]:
    """Per-variant mean MAE and RMSE over seeds"""
    summary: Dict[str, Dict[str, float]] = {}
    for name in dict.fromkeys(r.variant for r in results):
        rows = [r for r in results if r.variant == name]
        summary[name] = {
            "mae": sum(r.mae for r in rows) / len(rows),
            "rmse": sum(r.rmse for r in rows) / len(rows),
            "seeds": float(len(rows)),
        }
    return summary
