"""
Training, active learning and evaluation package initialization
"""
from .ablations import (
    VARIANTS,
    AblationSettings,
    Variant,
    VariantResult,
    get_variant,
    run_ablation,
    run_variant,
    split_sequence,
    summarize,
)
from .active import (
    ActiveLearningResult,
    AnnotationBudgetState,
    IterationRecord,
    choose_from_scores,
    initial_budget,
    random_select,
    run_active_learning,
    score_keyframes,
    score_keyframes_async,
    select_patches,
    split_labeled,
    violation_score,
)
from .data import TrainingSequence, crop_frame, inner_mask, nominal_patch_size, pad_to, patch_regions
from .metrics import (
    ConstantMeanPredictor,
    EvalResult,
    ModelDensityPredictor,
    ModelFlowPredictor,
    OracleFlowPredictor,
    evaluate,
    mae_rmse,
    reconstruct_at,
)
from .trainers import (
    DENSITY_MODES,
    PATCH_VARIANTS,
    TrainResult,
    optical_samples,
    pretrain_fo,
    train_density_regressor,
    train_discriminator,
    train_patch_annotated,
    train_three_frame,
    with_steps,
)

__all__ = [
    "DENSITY_MODES",
    "PATCH_VARIANTS",
    "VARIANTS",
    "AblationSettings",
    "ActiveLearningResult",
    "AnnotationBudgetState",
    "ConstantMeanPredictor",
    "EvalResult",
    "IterationRecord",
    "ModelDensityPredictor",
    "ModelFlowPredictor",
    "OracleFlowPredictor",
    "TrainResult",
    "TrainingSequence",
    "Variant",
    "VariantResult",
    "choose_from_scores",
    "crop_frame",
    "evaluate",
    "get_variant",
    "initial_budget",
    "inner_mask",
    "mae_rmse",
    "nominal_patch_size",
    "optical_samples",
    "pad_to",
    "patch_regions",
    "pretrain_fo",
    "random_select",
    "reconstruct_at",
    "run_ablation",
    "run_active_learning",
    "run_variant",
    "score_keyframes",
    "score_keyframes_async",
    "select_patches",
    "split_labeled",
    "split_sequence",
    "summarize",
    "train_density_regressor",
    "train_discriminator",
    "train_patch_annotated",
    "train_three_frame",
    "violation_score",
    "with_steps",
]
