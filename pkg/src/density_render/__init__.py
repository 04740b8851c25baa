"""
Density rendering package initialization
"""
from .annotations import AnnotationSequence, load_annotations, render_sequence_targets, save_annotations
from .renderer import (
    GROUND_CELL_M,
    AnnotationFrame,
    Homography,
    count_map,
    kernel_sum,
    map_points,
    render_density,
    render_ground_density,
    warp_heads,
)

__all__ = [
    "GROUND_CELL_M",
    "AnnotationFrame",
    "AnnotationSequence",
    "Homography",
    "count_map",
    "kernel_sum",
    "load_annotations",
    "map_points",
    "render_density",
    "render_ground_density",
    "render_sequence_targets",
    "save_annotations",
    "warp_heads",
]
