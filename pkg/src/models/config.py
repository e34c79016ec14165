"""
Configuration records for preprocessing, the network and training.
"""
import hashlib
import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union


@dataclass(frozen=True)
class PreprocessConfig:
    """How a cloud is cut into partitions and patches."""

    patch_size: int = 512
    partitions: Union[str, int] = "auto"  # "auto" or an explicit slab count
    min_partitions: int = 8
    max_partitions: int = 24
    points_per_partition_target: int = 100_000
    slice_axis: Optional[int] = None  # None = longest bounding-box axis

    def __post_init__(self):
        if self.patch_size < 8:
            raise ValueError(f"patch_size must be >= 8, got {self.patch_size}")
        if not 0 < self.min_partitions <= self.max_partitions:
            raise ValueError(
                f"Need 0 < min_partitions <= max_partitions, got "
                f"{self.min_partitions}..{self.max_partitions}"
            )
        if self.points_per_partition_target < 1:
            raise ValueError("points_per_partition_target must be positive")
        if isinstance(self.partitions, str):
            if self.partitions != "auto":
                raise ValueError(f"partitions must be 'auto' or an integer, got {self.partitions!r}")
        elif int(self.partitions) < 1:
            raise ValueError(f"partitions must be >= 1, got {self.partitions}")
        if self.slice_axis is not None and self.slice_axis not in (0, 1, 2):
            raise ValueError(f"slice_axis must be 0, 1 or 2, got {self.slice_axis}")

    def to_dict(self) -> Dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict) -> "PreprocessConfig":
        return cls(**data)

    def config_hash(self) -> bytes:
        """16-byte digest of the canonical JSON form; keys the patch cache."""
        canonical = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.md5(canonical.encode("utf-8")).digest()


@dataclass(frozen=True)
class ModelConfig:
    """Shape of the two-stream network."""

    block_widths: Tuple[int, int, int] = (64, 128, 256)
    heads: int = 4
    patch_size: int = 512
    head_hidden: Tuple[int, ...] = (128, 32)
    seed: int = 0
    input_features: int = 3
    norm_eps: float = 1e-5

    def __post_init__(self):
        # tuples keep the config hashable when built from JSON lists
        object.__setattr__(self, "block_widths", tuple(int(w) for w in self.block_widths))
        object.__setattr__(self, "head_hidden", tuple(int(w) for w in self.head_hidden))

        if len(self.block_widths) != 3:
            raise ValueError(f"Exactly 3 block widths required, got {len(self.block_widths)}")
        if self.heads < 1:
            raise ValueError(f"heads must be positive, got {self.heads}")
        for width in self.attention_widths():
            if width % self.heads != 0:
                raise ValueError(f"heads={self.heads} does not divide attention width {width}")
        if self.patch_size < 1 or self.input_features < 1:
            raise ValueError("patch_size and input_features must be positive")
        if any(w < 1 for w in self.head_hidden):
            raise ValueError(f"head_hidden widths must be positive, got {self.head_hidden}")
        if self.norm_eps <= 0:
            raise ValueError(f"norm_eps must be > 0, got {self.norm_eps}")

    @property
    def aggregation_dim(self) -> int:
        return 2 * self.block_widths[2]

    def attention_widths(self) -> List[int]:
        return list(self.block_widths) + [self.aggregation_dim]

    def to_dict(self) -> Dict:
        data = asdict(self)
        data["block_widths"] = list(self.block_widths)
        data["head_hidden"] = list(self.head_hidden)
        return data

    @classmethod
    def from_dict(cls, data: Dict) -> "ModelConfig":
        return cls(**data)


@dataclass(frozen=True)
class TrainConfig:
    """Adam hyperparameters and the experiment protocol."""

    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps_adam: float = 1e-8
    epochs: int = 120
    seed: int = 0
    fold_count: int = 6
    checkpoint_every: Optional[int] = None
    checkpoint_dir: Optional[str] = None

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError(f"learning_rate must be >= 0, got {self.learning_rate}")
        for name in ("beta1", "beta2"):
            value = getattr(self, name)
            if not 0.0 <= value < 1.0:
                raise ValueError(f"{name} must lie in [0, 1), got {value}")
        if self.eps_adam <= 0:
            raise ValueError(f"eps_adam must be > 0, got {self.eps_adam}")
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        if self.fold_count < 1:
            raise ValueError(f"fold_count must be >= 1, got {self.fold_count}")
        if self.checkpoint_every is not None and self.checkpoint_every < 1:
            raise ValueError("checkpoint_every must be a positive epoch count")

    def to_dict(self) -> Dict:
        return asdict(self)

    def checkpoint_path(self, epoch: int) -> Optional[Path]:
        if not self.checkpoint_every or not self.checkpoint_dir:
            return None
        if epoch % self.checkpoint_every != 0:
            return None
        return Path(self.checkpoint_dir) / f"checkpoint_epoch{epoch:04d}.weights"
