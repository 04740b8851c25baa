"""
Experiment harness package initialization
"""
from .artifacts import CURVE_COLUMNS, LOCK_NAME, output_lock, run_manifest, write_manifest, write_table
from .cli import COMMANDS, EXIT_OK, EXIT_RUNTIME, EXIT_USAGE, build_parser, cmd_dispatch, main
from .dataset import Dataset, export_dataset, infer_keyframe_interval, load_dataset
from .plots import export_plots, read_curve, render_curve, tidy_curve

__all__ = [
    "COMMANDS",
    "CURVE_COLUMNS",
    "EXIT_OK",
    "EXIT_RUNTIME",
    "EXIT_USAGE",
    "LOCK_NAME",
    "Dataset",
    "build_parser",
    "cmd_dispatch",
    "export_dataset",
    "export_plots",
    "infer_keyframe_interval",
    "load_dataset",
    "main",
    "output_lock",
    "read_curve",
    "render_curve",
    "run_manifest",
    "tidy_curve",
    "write_manifest",
    "write_table",
]
