"""
Runtime configuration for simulation, rendering, training and active learning
"""
import hashlib
import os
from dataclasses import dataclass, field
from typing import Tuple

from src.errors import ConfigError
from src.grid_flow import GridShape


MOTION_MODELS = ("lanes", "swirl", "random-walk")
SELECTORS = ("active", "random")


def derive_seed(root_seed: int, label: str) -> int:
    """Split the root seed into an independent 63-bit seed per labelled consumer"""
    digest = hashlib.sha256(f"{root_seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") >> 1


@dataclass(frozen=True)
class SimConfig:
    """Configuration of the synthetic crowd simulator"""

    shape: GridShape = field(default_factory=lambda: GridShape(16, 16, 8))
    n_agents: int = 200
    n_frames: int = 300

    # Motion, in cells per frame
    speed_max: float = 0.8
    motion_model: str = "lanes"

    # Boundary exchange with the outside world
    entry_rate: float = 0.5
    exit_enabled: bool = True

    seed: int = 0

    def __post_init__(self):
        if not 0 <= self.speed_max <= 1:
            raise ConfigError(f"speed_max must lie in [0, 1] cells/frame, got {self.speed_max}")
        if self.entry_rate < 0:
            raise ConfigError(f"entry_rate must be >= 0, got {self.entry_rate}")
        if self.motion_model not in MOTION_MODELS:
            raise ConfigError(f"motion_model must be one of {MOTION_MODELS}, got {self.motion_model!r}")
        if self.n_agents < 0 or self.n_frames < 1:
            raise ConfigError("n_agents must be >= 0 and n_frames >= 1")

    @classmethod
    def for_benchmark(cls, seed: int = 0) -> "SimConfig":
        """The seeded lanes benchmark: 16x16 grid, 200 agents, 300 frames"""
        return cls(shape=GridShape(16, 16, 8), n_agents=200, n_frames=300, motion_model="lanes", seed=seed)

    @classmethod
    def for_smoke_test(cls, seed: int = 0) -> "SimConfig":
        """Tiny scene for quick checks"""
        return cls(shape=GridShape(4, 4, 4), n_agents=12, n_frames=8, seed=seed)


@dataclass(frozen=True)
class KernelSpec:
    """Gaussian kernel used to render head annotations"""

    sigma: float = 2.0  # cells in the image plane, meters on the ground plane
    truncation_radius: float = 4.0  # multiples of sigma

    def __post_init__(self):
        if self.sigma <= 0:
            raise ConfigError(f"kernel sigma must be > 0, got {self.sigma}")
        if self.truncation_radius < 3:
            raise ConfigError(f"truncation_radius must be >= 3, got {self.truncation_radius}")

    @classmethod
    def for_ground_plane(cls) -> "KernelSpec":
        """One 30 cm cell wide kernel for the whole scene"""
        return cls(sigma=0.3, truncation_radius=4.0)


@dataclass(frozen=True)
class LossWeights:
    """Weights of the cycle, optical, spatial and adversarial terms"""

    alpha: float = 1.0
    beta: float = 0.0001
    gamma: float = 1.0
    delta: float = 0.01

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "delta"):
            if getattr(self, name) < 0:
                raise ConfigError(f"loss weight {name} must be >= 0")


@dataclass(frozen=True)
class NetworkConfig:
    """Channel widths of the regressors"""

    encoder_channels: Tuple[int, int, int] = (8, 16, 16)
    decoder_hidden: int = 16
    optical_hidden: int = 8
    discriminator_hidden: int = 16


@dataclass(frozen=True)
class TrainConfig:
    """Three-frame and patch training settings"""

    keyframe_interval: int = 1
    batch: int = 1
    max_steps: int = 2000
    learning_rate: float = 1e-4
    weights: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    # Adam / RMSProp hyper-parameters
    adam_betas: Tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    rmsprop_decay: float = 0.9
    rmsprop_eps: float = 1e-8
    discriminator_learning_rate: float = 1e-3

    reconstruction: str = "averaged"
    log_every: int = 100

    def __post_init__(self):
        if self.keyframe_interval < 1:
            raise ConfigError(f"keyframe interval V must be >= 1, got {self.keyframe_interval}")
        if self.learning_rate < 0:
            raise ConfigError("learning_rate must be >= 0")
        if self.batch < 1 or self.max_steps < 0:
            raise ConfigError("batch must be >= 1 and max_steps >= 0")


@dataclass(frozen=True)
class PatchGrid:
    """n x n partition of every keyframe into annotation patches"""

    n: int = 4
    halo: int = 1
    max_super_patches: int = 15

    def __post_init__(self):
        if self.n < 2:
            raise ConfigError(f"patch grid n must be >= 2, got {self.n}")
        if self.halo < 0:
            raise ConfigError("patch halo must be >= 0")


@dataclass(frozen=True)
class ActiveLearningConfig:
    """Selection schedule of the active-learning loop"""

    initial_fraction: float = 0.25
    select_fraction: float = 0.15
    iterations: int = 5
    train_fraction: float = 0.6
    selector: str = "active"
    steps_per_round: int = 200
    validate_every: int = 50

    def __post_init__(self):
        if self.selector not in SELECTORS:
            raise ConfigError(f"selector must be one of {SELECTORS}, got {self.selector!r}")
        if not 0 < self.initial_fraction <= 1 or not 0 < self.select_fraction <= 1:
            raise ConfigError("selection fractions must lie in (0, 1]")
        if not 0 < self.train_fraction <= 1:
            raise ConfigError("train_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class RuntimeConfig:
    """Process-level knobs"""

    threads: int = 1

    @classmethod
    def from_env(cls) -> "RuntimeConfig":
        raw = os.environ.get("FLOWCOUNT_THREADS", "").strip()
        if not raw:
            return cls(threads=os.cpu_count() or 1)
        try:
            threads = int(raw)
        except ValueError as e:
            raise ConfigError(f"FLOWCOUNT_THREADS must be an integer, got {raw!r}") from e
        return cls(threads=max(1, threads))
