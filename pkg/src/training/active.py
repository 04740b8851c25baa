"""
Active patch selection driven by conservation violations
"""
import asyncio
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Set, Tuple

import numpy as np
from dataclasses_json import dataclass_json

from config.flowcount_config import (
    ActiveLearningConfig,
    NetworkConfig,
    PatchGrid,
    RuntimeConfig,
    TrainConfig,
    derive_seed,
)
from src.errors import ConfigError, ExhaustedError
from src.grid_flow import CellRegion, FlowField, ReconstructionMode, conservation_violation_map
from src.regressor import RegressorParams

from .data import TrainingSequence, patch_regions
from .metrics import FlowPredictor, ModelFlowPredictor, evaluate
from .trainers import train_patch_annotated, with_steps


logger = logging.getLogger(__name__)

Patch = Tuple[int, int]


def violation_score(f_in: FlowField, f_out: FlowField, region: CellRegion) -> float:
    """Summed |incoming - outgoing| over the cells of a patch"""
    region.check_within(f_in.shape)
    return float(conservation_violation_map(f_in, f_out)[region.slices].sum())


@dataclass
class AnnotationBudgetState:
    """Which keyframe patches carry annotations, and which keyframes are still open"""
    labeled: Set[Patch]
    unlabeled_keyframes: Set[int]
    validation: Set[Patch] = field(default_factory=set)
    iteration: int = 0

    @property
    def labeled_keyframes(self) -> Set[int]:
        return {t for t, _ in self.labeled} | {t for t, _ in self.validation}

    def n_annotated(self) -> int:
        return len(self.labeled) + len(self.validation)


def split_labeled(keyframes: Sequence[int], train_fraction: float = 0.6, seed: int = 0) -> Tuple[List[int], List[int]]:
    """Seeded split of annotated keyframes into training and validation"""
    if not 0 < train_fraction <= 1:
        raise ConfigError(f"train_fraction must lie in (0, 1], got {train_fraction}")
    ordered = sorted(keyframes)
    if not ordered:
        return [], []
    rng = np.random.default_rng(derive_seed(seed, "active.split"))
    shuffled = [ordered[i] for i in rng.permutation(len(ordered))]
    n_train = min(len(ordered), max(1, round(train_fraction * len(ordered))))
    return sorted(shuffled[:n_train]), sorted(shuffled[n_train:])


def initial_budget(
    keyframes: Sequence[int],
    n_patches: int,
    config: ActiveLearningConfig,
    seed: int = 0,
) -> AnnotationBudgetState:
    """One random patch annotated in ceil(initial_fraction * U) random keyframes, split train/validation"""
    if not keyframes:
        raise ConfigError("active learning needs at least one keyframe")
    rng = np.random.default_rng(derive_seed(seed, "active.initial"))
    n_initial = min(len(keyframes), math.ceil(config.initial_fraction * len(keyframes)))
    chosen = sorted(int(t) for t in rng.choice(np.asarray(keyframes), size=n_initial, replace=False))
    patches = {t: int(rng.integers(n_patches)) for t in chosen}
    train, validation = split_labeled(chosen, config.train_fraction, seed)
    return AnnotationBudgetState(
        labeled={(t, patches[t]) for t in train},
        unlabeled_keyframes=set(keyframes) - set(chosen),
        validation={(t, patches[t]) for t in validation},
    )


def _score_keyframe(predictor: FlowPredictor, t: int, regions: Sequence[CellRegion]) -> np.ndarray:
    f_in = FlowField(predictor.shape, predictor.flow(t - 1, t))
    f_out = FlowField(predictor.shape, predictor.flow(t, t + 1))
    violations = conservation_violation_map(f_in, f_out)
    return np.array([violations[region.slices].sum() for region in regions])


async def score_keyframes_async(
    predictor: FlowPredictor,
    keyframes: Sequence[int],
    regions: Sequence[CellRegion],
    threads: int = 1,
) -> Dict[int, np.ndarray]:
    """Per-patch violation scores of every keyframe, computed on a thread pool"""
    loop = asyncio.get_running_loop()
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [loop.run_in_executor(pool, _score_keyframe, predictor, t, regions) for t in keyframes]
        results = await asyncio.gather(*futures)
    return dict(zip(keyframes, results))


def score_keyframes(
    predictor: FlowPredictor,
    keyframes: Sequence[int],
    regions: Sequence[CellRegion],
    threads: int = 1,
) -> Dict[int, np.ndarray]:
    return asyncio.run(score_keyframes_async(predictor, list(keyframes), regions, threads))


def choose_from_scores(
    scores: Dict[int, np.ndarray],
    state: AnnotationBudgetState,
    n_select: int,
) -> AnnotationBudgetState:
    """
    Rank unlabeled keyframes by their worst patch and annotate that patch in
    the top n_select. Ties go to the lower frame index, then the lower patch index.
    """
    if n_select < 1:
        raise ConfigError(f"must select at least one keyframe per round, got {n_select}")
    candidates = sorted(t for t in state.unlabeled_keyframes if t in scores)
    if not candidates:
        raise ExhaustedError("no unlabeled keyframes left to select from")
    worst = {t: (float(np.max(scores[t])), int(np.argmax(scores[t]))) for t in candidates}
    ranked = sorted(candidates, key=lambda t: (-worst[t][0], t))
    picked = ranked[:n_select]
    logger.info(f"Selected keyframes {picked} (max violation {worst[picked[0]][0]:.4f})")
    return replace(
        state,
        labeled=state.labeled | {(t, worst[t][1]) for t in picked},
        unlabeled_keyframes=state.unlabeled_keyframes - set(picked),
        iteration=state.iteration + 1,
    )


def select_patches(
    predictor: FlowPredictor,
    state: AnnotationBudgetState,
    regions: Sequence[CellRegion],
    n_select: int,
    threads: int = 1,
) -> AnnotationBudgetState:
    if not state.unlabeled_keyframes:
        raise ExhaustedError("every keyframe already carries an annotated patch")
    scores = score_keyframes(predictor, sorted(state.unlabeled_keyframes), regions, threads)
    return choose_from_scores(scores, state, n_select)


def random_select(
    state: AnnotationBudgetState,
    n_patches: int,
    n_select: int,
    rng: np.random.Generator,
) -> AnnotationBudgetState:
    """Control selector: uniformly random keyframes, uniformly random patch in each"""
    if not state.unlabeled_keyframes:
        raise ExhaustedError("every keyframe already carries an annotated patch")
    candidates = np.asarray(sorted(state.unlabeled_keyframes))
    picked = sorted(int(t) for t in rng.choice(candidates, size=min(n_select, len(candidates)), replace=False))
    return replace(
        state,
        labeled=state.labeled | {(t, int(rng.integers(n_patches))) for t in picked},
        unlabeled_keyframes=state.unlabeled_keyframes - set(picked),
        iteration=state.iteration + 1,
    )


@dataclass_json
@dataclass
class IterationRecord:
    """Metrics after one round of training"""
    iteration: int
    annotation_ratio: float
    keyframe_ratio: float
    people_ratio: float
    val_mae: Optional[float]
    mae: float
    rmse: float
    labeled: List[List[int]] = field(default_factory=list)


@dataclass
class ActiveLearningResult:
    records: List[IterationRecord]
    params: RegressorParams
    state: AnnotationBudgetState


def _validation_mae(sequence: TrainingSequence, patches: Set[Patch], regions: Sequence[CellRegion], mode):
    if not patches:
        return None

    def score(params) -> float:
        predictor = ModelFlowPredictor(params, sequence.frames, mode)
        errors = [
            abs(predictor.density(t).region_total(regions[p]) - sequence.targets[t].region_total(regions[p]))
            for t, p in sorted(patches)
        ]
        return float(np.mean(errors))

    return score


def _people_ratio(sequence: TrainingSequence, state: AnnotationBudgetState, keyframes, regions) -> float:
    total = sum(sequence.eval_target(t).total_count for t in keyframes)
    if total <= 0:
        return 0.0
    annotated = sum(sequence.eval_target(t).region_total(regions[p]) for t, p in state.labeled | state.validation)
    return float(annotated / total)


def run_active_learning(
    train: TrainingSequence,
    test: TrainingSequence,
    config: TrainConfig,
    patch_grid: PatchGrid = PatchGrid(),
    al_config: ActiveLearningConfig = ActiveLearningConfig(),
    variant: str = "all",
    network: NetworkConfig = NetworkConfig(),
    runtime: Optional[RuntimeConfig] = None,
) -> ActiveLearningResult:
    """
    Train on an initial random annotation budget, then alternate between
    selecting new patches and retraining, evaluating on the test sequence
    after every round.
    """
    runtime = runtime or RuntimeConfig()
    regions = patch_regions(train.shape, patch_grid.n)
    keyframes = train.keyframes(config.keyframe_interval)
    if not keyframes:
        raise ConfigError(f"no keyframes at interval V={config.keyframe_interval}")
    mode = ReconstructionMode(config.reconstruction)
    state = initial_budget(keyframes, len(regions), al_config, config.seed)
    n_select = math.ceil(al_config.select_fraction * len(keyframes))
    rng = np.random.default_rng(derive_seed(config.seed, "active.random"))
    round_config = with_steps(config, al_config.steps_per_round)
    test_frames = sorted(set(test.counts) | set(test.targets))
    test_targets = {t: test.eval_target(t) for t in test_frames}

    params, disc = None, None
    records: List[IterationRecord] = []
    for iteration in range(al_config.iterations + 1):
        validate = _validation_mae(train, state.validation, regions, mode)
        result = train_patch_annotated(
            train, state.labeled, round_config, patch_grid, variant, network,
            initial=params, disc_initial=disc, validate=validate, validate_every=al_config.validate_every,
        )
        params, disc = result.params, result.disc_params
        metrics = evaluate(ModelFlowPredictor(params, test.frames, mode), test_targets)
        record = IterationRecord(
            iteration=iteration,
            annotation_ratio=state.n_annotated() / (len(keyframes) * len(regions)),
            keyframe_ratio=len(state.labeled_keyframes) / len(keyframes),
            people_ratio=_people_ratio(train, state, keyframes, regions),
            val_mae=result.best_validation,
            mae=metrics.mae,
            rmse=metrics.rmse,
            labeled=[[t, p] for t, p in sorted(state.labeled)],
        )
        records.append(record)
        logger.info(f"Active round {iteration}: ratio={record.annotation_ratio:.4f} "
                    f"MAE={record.mae:.4f} RMSE={record.rmse:.4f}")

        if iteration == al_config.iterations:
            break
        if not state.unlabeled_keyframes:
            logger.warning(f"All {len(keyframes)} keyframes annotated after round {iteration}, stopping")
            break
        if al_config.selector == "active":
            predictor = ModelFlowPredictor(params, train.frames, mode)
            state = select_patches(predictor, state, regions, n_select, runtime.threads)
        else:
            state = random_select(state, len(regions), n_select, rng)

    return ActiveLearningResult(records, params, state)
