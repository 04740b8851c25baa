"""
Adam and RMSProp over flat parameter vectors
"""
import logging
from dataclasses import dataclass, replace
from typing import Tuple

import numpy as np

from src.errors import ConfigError, NumericError, ShapeError


logger = logging.getLogger(__name__)

ADAM = "adam"
RMSPROP = "rmsprop"


@dataclass(frozen=True, eq=False)
class OptimizerState:
    """Moment accumulators and hyper-parameters of one optimizer"""
    kind: str
    learning_rate: float
    first_moment: np.ndarray
    second_moment: np.ndarray
    step_count: int = 0

    # Adam
    beta1: float = 0.9
    beta2: float = 0.999
    # RMSProp
    decay: float = 0.9

    eps: float = 1e-8

    def __post_init__(self):
        if self.kind not in (ADAM, RMSPROP):
            raise ConfigError(f"optimizer kind must be '{ADAM}' or '{RMSPROP}', got {self.kind!r}")
        if self.first_moment.shape != self.second_moment.shape:
            raise ShapeError("moment accumulators must have the same length")

    @property
    def size(self) -> int:
        return int(self.first_moment.size)

    @classmethod
    def adam(cls, size: int, learning_rate: float = 1e-4, betas: Tuple[float, float] = (0.9, 0.999),
             eps: float = 1e-8) -> "OptimizerState":
        return cls(ADAM, learning_rate, np.zeros(size), np.zeros(size), 0, beta1=betas[0], beta2=betas[1], eps=eps)

    @classmethod
    def rmsprop(cls, size: int, learning_rate: float = 1e-3, decay: float = 0.9,
                eps: float = 1e-8) -> "OptimizerState":
        return cls(RMSPROP, learning_rate, np.zeros(size), np.zeros(size), 0, decay=decay, eps=eps)


def optimizer_step(state: OptimizerState, params: np.ndarray, grads: np.ndarray) -> Tuple[OptimizerState, np.ndarray]:
    """One update; returns the new state and new parameters, leaving the inputs untouched"""
    params = np.asarray(params, dtype=np.float64)
    grads = np.asarray(grads, dtype=np.float64)
    if params.shape != grads.shape or params.size != state.size:
        raise ShapeError(f"{state.kind}: params {params.shape}, grads {grads.shape}, state of {state.size}")
    if not np.all(np.isfinite(grads)):
        raise NumericError(f"{state.kind}: non-finite gradient", component=state.kind)

    t = state.step_count + 1
    if state.kind == ADAM:
        m = state.beta1 * state.first_moment + (1 - state.beta1) * grads
        v = state.beta2 * state.second_moment + (1 - state.beta2) * grads * grads
        m_hat = m / (1 - state.beta1 ** t)
        v_hat = v / (1 - state.beta2 ** t)
        new_params = params - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.eps)
    else:
        m = state.first_moment
        v = state.decay * state.second_moment + (1 - state.decay) * grads * grads
        new_params = params - state.learning_rate * grads / np.sqrt(v + state.eps)
    return replace(state, first_moment=m, second_moment=v, step_count=t), new_params
