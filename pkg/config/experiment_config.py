"""
Experiment configuration documents: one JSON file, strict keys, flag overrides
"""
import hashlib
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import orjson
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from config.flowcount_config import (
    ActiveLearningConfig,
    KernelSpec,
    LossWeights,
    NetworkConfig,
    PatchGrid,
    SimConfig,
    TrainConfig,
)
from src.errors import ConfigError
from src.grid_flow import GridShape


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class SimSection(_Section):
    rows: int = Field(16, ge=1)
    cols: int = Field(16, ge=1)
    cell_px: int = Field(8, ge=1)
    n_agents: int = Field(200, ge=0)
    n_frames: int = Field(300, ge=1)
    speed_max: float = 0.8
    motion_model: Literal["lanes", "swirl", "random-walk"] = "lanes"
    entry_rate: float = 0.5
    exit_enabled: bool = True


class KernelSection(_Section):
    sigma: float = 2.0
    truncation_radius: float = 4.0


class WeightsSection(_Section):
    alpha: float = 1.0
    beta: float = 0.0001
    gamma: float = 1.0
    delta: float = 0.01


class TrainSection(_Section):
    keyframe_interval: int = 1
    batch: int = 1
    max_steps: int = 2000
    learning_rate: float = 1e-4
    discriminator_learning_rate: float = 1e-3
    reconstruction: Literal["forward", "backward", "averaged"] = "averaged"
    log_every: int = 100
    fo_steps: int = 200


class PatchSection(_Section):
    n: int = 4
    halo: int = 1
    max_super_patches: int = 15


class ActiveSection(_Section):
    initial_fraction: float = 0.25
    select_fraction: float = 0.15
    iterations: int = 5
    train_fraction: float = 0.6
    selector: Literal["active", "random"] = "active"
    steps_per_round: int = 200
    validate_every: int = 50


class NetworkSection(_Section):
    encoder_channels: Tuple[int, int, int] = (8, 16, 16)
    decoder_hidden: int = 16
    optical_hidden: int = 8
    discriminator_hidden: int = 16


class PathsSection(_Section):
    dataset: Optional[str] = None
    checkpoint: Optional[str] = None
    fo_checkpoint: Optional[str] = None


class AblationSection(_Section):
    variants: List[str] = Field(default_factory=lambda: ["flow", "combi", "weak", "constant-mean"])
    seeds: int = Field(5, ge=1)
    train_fraction: float = 0.5


class ExperimentConfig(_Section):
    """Everything one command needs, in canonical form for hashing"""

    seed: int = 0
    sim: SimSection = SimSection()
    kernel: KernelSection = KernelSection()
    train: TrainSection = TrainSection()
    weights: WeightsSection = WeightsSection()
    patches: PatchSection = PatchSection()
    active: ActiveSection = ActiveSection()
    network: NetworkSection = NetworkSection()
    paths: PathsSection = PathsSection()
    ablation: AblationSection = AblationSection()

    @classmethod
    def from_document(cls, document: Any, source: str = "<config>") -> "ExperimentConfig":
        try:
            return cls.model_validate(document)
        except ValidationError as e:
            raise ConfigError(f"{source}: {e}") from e

    @classmethod
    def load(cls, path: Union[str, Path]) -> "ExperimentConfig":
        """Read a JSON config; relative paths are resolved against the config file and must exist"""
        path = Path(path)
        try:
            document = orjson.loads(path.read_bytes())
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}") from e
        except orjson.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON at offset {e.pos}: {e.msg}") from e
        config = cls.from_document(document, str(path))
        return config.resolve_paths(path.parent)

    def resolve_paths(self, base: Path) -> "ExperimentConfig":
        resolved = {}
        for name, value in self.paths.model_dump().items():
            if value is None:
                continue
            candidate = Path(value)
            if not candidate.is_absolute():
                candidate = base / candidate
            if not candidate.exists():
                raise ConfigError(f"paths.{name} does not exist: {candidate}")
            resolved[name] = str(candidate)
        return self.model_copy(update={"paths": self.paths.model_copy(update=resolved)})

    def with_overrides(self, overrides: Dict[str, Any]) -> "ExperimentConfig":
        """Apply dotted-key overrides (e.g. 'train.keyframe_interval') and re-validate"""
        document = self.model_dump(mode="python")
        for dotted, value in overrides.items():
            if value is None:
                continue
            node = document
            *parents, leaf = dotted.split(".")
            for key in parents:
                if key not in node or not isinstance(node[key], dict):
                    raise ConfigError(f"unknown config section in override {dotted!r}")
                node = node[key]
            if leaf not in node:
                raise ConfigError(f"unknown config key in override {dotted!r}")
            node[leaf] = value
        return ExperimentConfig.from_document(document, "<overrides>")

    def canonical_json(self) -> bytes:
        return orjson.dumps(self.model_dump(mode="json"), option=orjson.OPT_SORT_KEYS)

    def digest(self) -> str:
        return hashlib.sha256(self.canonical_json()).hexdigest()

    # Conversion to the runtime dataclasses; their own invariants apply here

    def grid_shape(self) -> GridShape:
        return GridShape(self.sim.rows, self.sim.cols, self.sim.cell_px)

    def sim_config(self) -> SimConfig:
        s = self.sim
        return SimConfig(
            shape=self.grid_shape(), n_agents=s.n_agents, n_frames=s.n_frames, speed_max=s.speed_max,
            motion_model=s.motion_model, entry_rate=s.entry_rate, exit_enabled=s.exit_enabled, seed=self.seed,
        )

    def kernel_spec(self) -> KernelSpec:
        return KernelSpec(self.kernel.sigma, self.kernel.truncation_radius)

    def loss_weights(self) -> LossWeights:
        w = self.weights
        return LossWeights(w.alpha, w.beta, w.gamma, w.delta)

    def train_config(self) -> TrainConfig:
        t = self.train
        return TrainConfig(
            keyframe_interval=t.keyframe_interval, batch=t.batch, max_steps=t.max_steps,
            learning_rate=t.learning_rate, weights=self.loss_weights(), seed=self.seed,
            discriminator_learning_rate=t.discriminator_learning_rate,
            reconstruction=t.reconstruction, log_every=t.log_every,
        )

    def patch_grid(self) -> PatchGrid:
        return PatchGrid(self.patches.n, self.patches.halo, self.patches.max_super_patches)

    def active_config(self) -> ActiveLearningConfig:
        a = self.active
        return ActiveLearningConfig(
            initial_fraction=a.initial_fraction, select_fraction=a.select_fraction, iterations=a.iterations,
            train_fraction=a.train_fraction, selector=a.selector, steps_per_round=a.steps_per_round,
            validate_every=a.validate_every,
        )

    def network_config(self) -> NetworkConfig:
        n = self.network
        return NetworkConfig(tuple(n.encoder_channels), n.decoder_hidden, n.optical_hidden, n.discriminator_hidden)
