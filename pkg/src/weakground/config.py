"""Training configuration and JSON config files."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields
from importlib import resources
from pathlib import Path
from typing import Optional

METHODS = ("full", "mil_nce", "mil_margin")


@dataclass
class TrainConfig:
    method: str = "full"
    # loss weights for cls, match and recon
    lambda_cls: float = 2.0
    lambda_match: float = 2.0
    lambda_recon: float = 1.0
    lr: float = 1e-3
    lr_min: float = 0.0
    weight_decay: float = 5e-4
    epochs: int = 20
    batch_scenes: int = 12
    queries_per_scene: int = 8
    mask_ratio: float = 0.3
    num_candidates: int = 4
    num_proposals: int = 32
    hidden_dim: int = 64
    embed_dim: int = 32
    num_heads: int = 4
    encoder_layers: int = 2
    decoder_layers: int = 2
    coord_scale: float = 0.2
    sentence_pooling: str = "last"
    similarity: str = "dot"
    feature_scale: Optional[float] = None
    use_cls: bool = True
    use_match: bool = True
    use_recon: bool = True
    reward_squared: bool = True
    distill_temperature: float = 1.0
    autoregressive_recon: bool = False
    recon_start_epoch: int = 2
    ignore_topk_half_after_epoch: int = 3
    mil_margin: float = 0.2
    mil_pooling: str = "max"
    embedding_seed: int = 0
    embedding_file: Optional[str] = None
    val_fraction: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")
        if min(self.lambda_cls, self.lambda_match, self.lambda_recon) < 0:
            raise ValueError("loss weights must be non-negative")
        if not 1 <= self.num_candidates <= self.num_proposals:
            raise ValueError("need 1 <= num_candidates <= num_proposals")
        if self.epochs < self.recon_start_epoch:
            raise ValueError("epochs must be >= recon_start_epoch")
        if not 0.0 < self.mask_ratio <= 1.0:
            raise ValueError("mask_ratio must lie in (0, 1]")
        if self.hidden_dim % self.num_heads:
            raise ValueError("hidden_dim must be divisible by num_heads")
        if self.similarity not in ("dot", "cosine"):
            raise ValueError("similarity must be 'dot' or 'cosine'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def load(cls, path: str | Path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    def replace(self, **changes) -> "TrainConfig":
        return TrainConfig.from_dict({**self.to_dict(), **changes})

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:12]

    # epochs are counted from 0; recon_start_epoch is a 1-based ordinal
    def recon_active(self, epoch: int) -> bool:
        return self.use_recon and epoch + 1 >= self.recon_start_epoch

    def ignore_active(self, epoch: int) -> bool:
        return epoch >= self.ignore_topk_half_after_epoch


def bundled_config_path(name: str) -> Path:
    return Path(str(resources.files("weakground") / "configs" / name))


def load_bundled(name: str) -> TrainConfig:
    """Load one of the shipped configs: ``desk.json`` or ``full.json``."""
    return TrainConfig.load(bundled_config_path(name))
