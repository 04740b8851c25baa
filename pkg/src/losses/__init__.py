"""
Loss suite package initialization
"""
from .losses import (
    CUR_NEXT,
    CUR_PREV,
    MASK_EPS,
    NEXT_CUR,
    PREV_CUR,
    PROB_CLAMP,
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

__all__ = [
    "CUR_NEXT",
    "CUR_PREV",
    "MASK_EPS",
    "NEXT_CUR",
    "PREV_CUR",
    "PROB_CLAMP",
    "LossBreakdown",
    "LossResult",
    "generator_side",
    "loss_adversarial",
    "loss_combi",
    "loss_density",
    "loss_optical",
    "loss_overall",
    "loss_spatial",
    "loss_weak_baseline",
]
