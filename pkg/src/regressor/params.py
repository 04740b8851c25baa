"""
Flat parameter vectors with named layer views, initialization and checkpoints
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Tuple, Type, TypeVar, Union

import numpy as np

from src.encoding import FieldEncoder
from src.errors import ParseError, ShapeError


logger = logging.getLogger(__name__)

CHECKPOINT_VERSION = 1

Entry = Tuple[str, Tuple[int, ...]]


@dataclass(frozen=True, eq=False)
class ParamLayout:
    """Ordered layer shapes of one model plus the settings that define its architecture"""
    kind: str
    entries: Tuple[Entry, ...]
    meta: Dict[str, Any] = field(default_factory=dict)

    @property
    def size(self) -> int:
        return int(sum(np.prod(shape) for _, shape in self.entries))

    def views(self, theta: np.ndarray) -> Dict[str, np.ndarray]:
        """Reshaped views into theta, one per layer tensor"""
        views = {}
        offset = 0
        for name, shape in self.entries:
            n = int(np.prod(shape))
            views[name] = theta[offset:offset + n].reshape(shape)
            offset += n
        return views

    def flatten(self, tensors: Dict[str, np.ndarray]) -> np.ndarray:
        return np.concatenate([np.asarray(tensors[name], dtype=np.float64).ravel() for name, _ in self.entries])

    def same_as(self, other: "ParamLayout") -> bool:
        return self.to_descriptor() == other.to_descriptor()

    def to_descriptor(self) -> Dict[str, Any]:
        return {
            "kind": self.kind,
            "entries": [[name, list(shape)] for name, shape in self.entries],
            "meta": dict(self.meta),
        }

    @classmethod
    def from_descriptor(cls, descriptor: Dict[str, Any]) -> "ParamLayout":
        entries = tuple((str(name), tuple(int(d) for d in shape)) for name, shape in descriptor["entries"])
        return cls(str(descriptor["kind"]), entries, dict(descriptor.get("meta", {})))


@dataclass(frozen=True, eq=False)
class ParamVector:
    """Finite parameter vector laid out according to a ParamLayout"""
    layout: ParamLayout
    theta: np.ndarray

    def __post_init__(self):
        theta = np.array(self.theta, dtype=np.float64, copy=True).reshape(-1)
        if theta.size != self.layout.size:
            raise ShapeError(f"{self.layout.kind}: {theta.size} parameters for a layout of {self.layout.size}")
        if not np.all(np.isfinite(theta)):
            raise ShapeError(f"{self.layout.kind}: parameters must be finite")
        theta.setflags(write=False)
        object.__setattr__(self, "theta", theta)

    def views(self) -> Dict[str, np.ndarray]:
        return self.layout.views(self.theta)

    def with_theta(self, theta: np.ndarray):
        return type(self)(self.layout, theta)

    @classmethod
    def zeros(cls, layout: ParamLayout):
        return cls(layout, np.zeros(layout.size))


class RegressorParams(ParamVector):
    """Flow (or density) regressor weights: shared encoder plus decoder"""


class OpticalRegressorParams(ParamVector):
    """Weights of the density-pair to optical-flow regressor"""


class DiscriminatorParams(ParamVector):
    """Weights of the patch discriminator MLP"""


P = TypeVar("P", bound=ParamVector)


def _fans(shape: Tuple[int, ...]) -> Tuple[int, int]:
    if len(shape) == 4:
        receptive = shape[2] * shape[3]
        return shape[1] * receptive, shape[0] * receptive
    return shape[1], shape[0]


def init_params(layout: ParamLayout, seed: int, params_type: Type[P] = ParamVector) -> P:
    """Glorot-uniform weights, zero biases"""
    rng = np.random.default_rng(seed)
    tensors = {}
    for name, shape in layout.entries:
        if len(shape) == 1:
            tensors[name] = np.zeros(shape)
            continue
        fan_in, fan_out = _fans(shape)
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        tensors[name] = rng.uniform(-limit, limit, size=shape)
    return params_type(layout, layout.flatten(tensors))


_PARAM_TYPES = {
    "flow": RegressorParams,
    "density": RegressorParams,
    "optical": OpticalRegressorParams,
    "discriminator": DiscriminatorParams,
}


def save_checkpoint(params: ParamVector, path: Union[str, Path], extra: Dict[str, Any] = None) -> None:
    descriptor = {"version": CHECKPOINT_VERSION, "layout": params.layout.to_descriptor()}
    if extra:
        descriptor["extra"] = extra
    Path(path).write_bytes(FieldEncoder.encode_checkpoint(descriptor, params.theta))
    logger.info(f"Saved {params.layout.kind} checkpoint ({params.layout.size} parameters) to {path}")


def load_checkpoint(path: Union[str, Path]) -> ParamVector:
    path = Path(path)
    descriptor, theta = FieldEncoder.decode_checkpoint(path.read_bytes(), str(path))
    try:
        layout = ParamLayout.from_descriptor(descriptor["layout"])
    except (KeyError, TypeError, ValueError) as e:
        raise ParseError(f"bad checkpoint descriptor: {e}", str(path)) from e
    if theta.size != layout.size:
        raise ParseError(f"checkpoint holds {theta.size} parameters, layout needs {layout.size}", str(path))
    return _PARAM_TYPES.get(layout.kind, ParamVector)(layout, theta)
