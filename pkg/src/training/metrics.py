"""
Density predictors and counting metrics
"""
import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Protocol, Sequence, Tuple

import numpy as np

from src.errors import ConfigError, ShapeError
from src.grid_flow import (
    DensityMap,
    FlowField,
    GridShape,
    ReconstructionMode,
    incoming_sum,
    reverse_channels,
)
from src.regressor import ConvRegressor, FlowTape, ParamVector, density_forward

from .data import TrainingSequence


logger = logging.getLogger(__name__)


class DensityPredictor(Protocol):
    def density(self, t: int) -> DensityMap:
        ...


class FlowPredictor(Protocol):
    shape: GridShape
    n_frames: int

    def flow(self, t_from: int, t_to: int) -> np.ndarray:
        ...


def reconstruct_at(predictor: FlowPredictor, t: int, mode: ReconstructionMode) -> DensityMap:
    """Density at frame t from predicted flows; sequence ends fall back to the one available side"""
    mode = ReconstructionMode(mode)
    has_prev = t - 1 >= 0
    has_next = t + 1 < predictor.n_frames
    if not (has_prev or has_next):
        raise ConfigError("a sequence of one frame has no flows")
    use_forward = has_prev and (mode is not ReconstructionMode.BACKWARD or not has_next)
    use_backward = has_next and (mode is not ReconstructionMode.FORWARD or not has_prev)
    parts = []
    if use_forward:
        parts.append(incoming_sum(predictor.flow(t - 1, t)))
    if use_backward:
        parts.append(incoming_sum(predictor.flow(t + 1, t)))
    values = parts[0] if len(parts) == 1 else (parts[0] + parts[1]) / 2.0
    return DensityMap(predictor.shape, values)


class ModelFlowPredictor:
    """Flows from a trained regressor, computed on demand and memoized"""

    def __init__(self, params: ParamVector, frames: Sequence[np.ndarray],
                 mode: ReconstructionMode = ReconstructionMode.AVERAGED):
        self.model = ConvRegressor(params.layout)
        self.params = params
        self.frames = list(frames)
        self.n_frames = len(self.frames)
        self.mode = ReconstructionMode(mode)
        self.shape = self.model.grid_of(np.asarray(self.frames[0]))
        self._cache: Dict[Tuple[int, int], np.ndarray] = {}

    def flow(self, t_from: int, t_to: int) -> np.ndarray:
        key = (t_from, t_to)
        if key not in self._cache:
            tape = FlowTape(self.model, self.params, {0: self.frames[t_from], 1: self.frames[t_to]})
            self._cache[key] = tape.run(0, 1)
        return self._cache[key]

    def density(self, t: int) -> DensityMap:
        return reconstruct_at(self, t, self.mode)


class OracleFlowPredictor:
    """Ground-truth flows standing in for a model"""

    def __init__(self, flows: Sequence[FlowField], mode: ReconstructionMode = ReconstructionMode.AVERAGED):
        if not flows:
            raise ConfigError("oracle predictor needs at least one flow field")
        self.flows = list(flows)
        self.shape = self.flows[0].shape
        self.n_frames = len(self.flows) + 1
        self.mode = ReconstructionMode(mode)

    def flow(self, t_from: int, t_to: int) -> np.ndarray:
        if t_to == t_from + 1:
            return self.flows[t_from].channels
        if t_to == t_from - 1:
            return reverse_channels(self.flows[t_to].channels)
        raise ConfigError(f"frames {t_from} and {t_to} are not consecutive")

    def density(self, t: int) -> DensityMap:
        return reconstruct_at(self, t, self.mode)


class ModelDensityPredictor:
    """Direct density regression from one frame (or a window of frames ending at t)"""

    def __init__(self, params: ParamVector, frames: Sequence[np.ndarray]):
        self.model = ConvRegressor(params.layout)
        self.params = params
        self.frames = list(frames)

    def density(self, t: int) -> DensityMap:
        n = self.model.n_frames
        keys = [max(0, t - n + 1 + i) for i in range(n)]
        return density_forward(self.params, *(self.frames[k] for k in keys))


class ConstantMeanPredictor:
    """Predicts the mean training count spread evenly over the grid"""

    def __init__(self, shape: GridShape, mean_count: float):
        self.shape = shape
        self.mean_count = float(mean_count)

    @classmethod
    def fit(cls, sequence: TrainingSequence, frames: Sequence[int]) -> "ConstantMeanPredictor":
        if not frames:
            raise ConfigError("constant-mean predictor needs training frames")
        totals = [sequence.eval_target(t).total_count for t in frames]
        return cls(sequence.shape, float(np.mean(totals)))

    def density(self, t: int) -> DensityMap:
        return DensityMap(self.shape, np.full((self.shape.rows, self.shape.cols), self.mean_count / self.shape.n_cells))


@dataclass
class EvalResult:
    mae: float
    rmse: float
    true_counts: List[float] = field(default_factory=list)
    predicted_counts: List[float] = field(default_factory=list)


def mae_rmse(true_counts: Sequence[float], predicted_counts: Sequence[float]) -> Tuple[float, float]:
    z = np.asarray(true_counts, dtype=np.float64)
    z_hat = np.asarray(predicted_counts, dtype=np.float64)
    if z.size == 0:
        raise ConfigError("cannot compute metrics on an empty test set")
    if z.shape != z_hat.shape:
        raise ShapeError(f"{z.size} true counts vs {z_hat.size} predictions")
    errors = z - z_hat
    return float(np.mean(np.abs(errors))), float(np.sqrt(np.mean(errors * errors)))


def evaluate(
    predictor: DensityPredictor,
    targets: Dict[int, DensityMap],
    frames: Optional[Sequence[int]] = None,
    roi: Optional[np.ndarray] = None,
) -> EvalResult:
    """MAE and RMSE of per-frame counts inside the ROI"""
    frames = sorted(targets) if frames is None else list(frames)
    if not frames:
        raise ConfigError("cannot evaluate on an empty test set")
    true_counts, predicted_counts = [], []
    for t in frames:
        target = targets[t]
        predicted = predictor.density(t)
        if predicted.values.shape != target.values.shape:
            raise ShapeError(f"frame {t}: prediction {predicted.values.shape} vs target {target.values.shape}")
        mask = np.ones(target.values.shape, dtype=bool) if roi is None else np.asarray(roi, dtype=bool)
        true_counts.append(float(target.values[mask].sum()))
        predicted_counts.append(float(predicted.values[mask].sum()))
    mae, rmse = mae_rmse(true_counts, predicted_counts)
    return EvalResult(mae, rmse, true_counts, predicted_counts)
