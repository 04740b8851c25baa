"""
Metric curves as tidy CSV tables and small grayscale raster plots
"""
import logging
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np
import pandas as pd

from src.encoding import FieldEncoder, FieldValidator
from src.errors import ParseError

from .artifacts import CURVE_COLUMNS


logger = logging.getLogger(__name__)

PLOT_W = 160
PLOT_H = 120
MARGIN = 8
BACKGROUND = 255
AXIS = 128
LINE = 0


def read_curve(path: Union[str, Path]) -> pd.DataFrame:
    path = Path(path)
    try:
        table = pd.read_csv(path)
    except pd.errors.EmptyDataError:
        raise ParseError("empty metric table", str(path)) from None
    except (OSError, pd.errors.ParserError) as e:
        raise ParseError(f"unreadable metric table: {e}", str(path)) from e
    FieldValidator.validate_metric_table(table, CURVE_COLUMNS, str(path))
    for column in CURVE_COLUMNS:
        if not pd.api.types.is_numeric_dtype(table[column]) and len(table):
            raise ParseError(f"column '{column}' is not numeric", str(path))
    return table


def tidy_curve(table: pd.DataFrame) -> pd.DataFrame:
    """Rows sorted by annotation ratio, then iteration; only the curve columns"""
    return table[CURVE_COLUMNS].sort_values(["annotation_ratio", "iteration"], kind="mergesort").reset_index(drop=True)


def _draw_segment(canvas: np.ndarray, r0: int, c0: int, r1: int, c1: int) -> None:
    n = max(abs(r1 - r0), abs(c1 - c0)) + 1
    rows = np.rint(np.linspace(r0, r1, n)).astype(int)
    cols = np.rint(np.linspace(c0, c1, n)).astype(int)
    canvas[rows, cols] = LINE


def render_curve(x: Sequence[float], y: Sequence[float]) -> np.ndarray:
    """Raster of y against x: axes along the left and bottom edges, curve as a polyline"""
    canvas = np.full((PLOT_H, PLOT_W), BACKGROUND, dtype=np.uint8)
    bottom, left = PLOT_H - MARGIN, MARGIN
    canvas[MARGIN:bottom + 1, left] = AXIS
    canvas[bottom, left:PLOT_W - MARGIN + 1] = AXIS

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.size == 0:
        return canvas
    x_span = x.max() - x.min()
    y_top = y.max() if y.max() > 0 else 1.0
    width = PLOT_W - 2 * MARGIN - 2
    height = bottom - MARGIN - 1
    cols = left + 1 + np.rint((x - x.min()) / x_span * width if x_span > 0 else np.zeros_like(x)).astype(int)
    rows = bottom - 1 - np.rint(np.clip(y, 0.0, None) / y_top * height).astype(int)
    if x.size == 1:
        canvas[rows[0], cols[0]] = LINE
    for i in range(x.size - 1):
        _draw_segment(canvas, rows[i], cols[i], rows[i + 1], cols[i + 1])
    return canvas


def export_plots(csv_paths: Sequence[Union[str, Path]], out_dir: Union[str, Path]) -> List[Path]:
    """For every curve CSV write <stem>_tidy.csv and <stem>_mae.pgm into out_dir"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for csv_path in csv_paths:
        csv_path = Path(csv_path)
        table = tidy_curve(read_curve(csv_path))
        tidy_path = out_dir / f"{csv_path.stem}_tidy.csv"
        FieldEncoder.write_csv(table, tidy_path)
        raster = render_curve(table["annotation_ratio"].to_numpy(), table["mae"].to_numpy())
        plot_path = out_dir / f"{csv_path.stem}_mae.pgm"
        FieldEncoder.write_pgm(plot_path, raster / 255.0)
        written.extend([tidy_path, plot_path])
        logger.info(f"Plotted {len(table)} points from {csv_path}")
    return written
