"""Training/model configuration with a plain-text (YAML) on-disk form."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, fields

import yaml


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    # optimizer / schedule
    lr_main: float = 5e-5
    lr_aux: float = 1e-3
    batch_main: int = 4
    batch_aux: int = 16
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    epochs: int = 50
    image_size: int = 256
    seed: int = 0

    # loss weights: total = adv + alpha*l1 + beta*perc + gamma*cyc
    loss_alpha: float = 1.0
    loss_beta: float = 0.05
    loss_gamma: float = 1.0
    perceptual_extractor: str = "stub"  # none | stub | vgg16

    # augmentation ranges
    aug_hue: float = math.pi
    aug_chroma: tuple[float, float] = (0.5, 1.5)
    aug_rotation: float = math.pi / 12.0
    aug_scale: tuple[float, float] = (0.9, 1.1)
    aug_translation: float = 0.05
    aug_flip_prob: float = 0.5

    # architecture
    d_w: int = 32
    repr_channels: tuple[int, ...] = (64, 128, 256, 256)
    gray_channels: tuple[int, ...] = (64, 128, 256, 256)
    disc_channels: tuple[int, ...] = (64, 128, 256, 512)
    gw_hidden: int = 256
    spade_hidden: int = 128
    flow_blocks: int = 4
    flow_hidden: int = 64
    context_dim: int = 64

    # ablation switches
    grouped_design: bool = True
    chromatic_aug: bool = True
    spatial_aug: bool = True
    repr_branch: bool = True

    # evaluation
    fid_embedding: str = "pixels16"  # identity | pixelsN

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        positive = (
            "lr_main", "lr_aux", "batch_main", "batch_aux", "epochs",
            "image_size", "d_w", "gw_hidden", "spade_hidden", "flow_blocks",
            "flow_hidden", "context_dim",
        )
        for name in positive:
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive")
        for name in ("loss_alpha", "loss_beta", "loss_gamma"):
            v = getattr(self, name)
            if not math.isfinite(v) or v < 0:
                raise ConfigError(f"{name} must be finite and non-negative")
        if not 0.0 < self.adam_beta1 < 1.0 or not 0.0 < self.adam_beta2 < 1.0:
            raise ConfigError("adam betas must lie in (0, 1)")
        if self.image_size % 16:
            raise ConfigError("image_size must be divisible by 16")
        if self.d_w % 2:
            raise ConfigError("d_w must be even (flow couplings split it in half)")
        if self.perceptual_extractor not in ("none", "stub", "vgg16"):
            raise ConfigError(f"unknown perceptual extractor {self.perceptual_extractor!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, tuple):
                d[k] = list(v)
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        unknown = set(data) - set(known)
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        kwargs = {}
        for k, v in data.items():
            if isinstance(v, list):
                v = tuple(v)
            kwargs[k] = v
        return cls(**kwargs)


# YAML section -> config field prefix; keeps the file readable while the
# in-memory config stays a flat dataclass.
_SECTIONS = {
    "train": (
        "lr_main", "lr_aux", "batch_main", "batch_aux", "adam_beta1",
        "adam_beta2", "epochs", "image_size", "seed",
    ),
    "loss": ("loss_alpha", "loss_beta", "loss_gamma", "perceptual_extractor"),
    "augment": (
        "aug_hue", "aug_chroma", "aug_rotation", "aug_scale",
        "aug_translation", "aug_flip_prob",
    ),
    "model": (
        "d_w", "repr_channels", "gray_channels", "disc_channels", "gw_hidden",
        "spade_hidden", "flow_blocks", "flow_hidden", "context_dim",
    ),
    "ablation": ("grouped_design", "chromatic_aug", "spatial_aug", "repr_branch"),
    "eval": ("fid_embedding",),
}


def config_to_yaml(config: TrainConfig) -> str:
    flat = config.to_dict()
    nested = {s: {k: flat[k] for k in keys} for s, keys in _SECTIONS.items()}
    return yaml.safe_dump(nested, sort_keys=False)


def config_from_yaml(text: str) -> TrainConfig:
    try:
        nested = yaml.safe_load(text) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse config: {exc}") from exc
    if not isinstance(nested, dict):
        raise ConfigError("config root must be a mapping")
    flat: dict = {}
    for section, content in nested.items():
        if section not in _SECTIONS:
            raise ConfigError(f"unknown config section {section!r}")
        if not isinstance(content, dict):
            raise ConfigError(f"section {section!r} must be a mapping")
        for k, v in content.items():
            if k not in _SECTIONS[section]:
                raise ConfigError(f"unknown key {k!r} in section {section!r}")
            flat[k] = v
    return TrainConfig.from_dict(flat)


def load_config(path: str) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_yaml(fh.read())


def save_config(config: TrainConfig, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(config_to_yaml(config))


def desk_config(**overrides) -> TrainConfig:
    """A small CPU-friendly configuration used by tests and smoke runs."""
    base = dict(
        image_size=64,
        d_w=8,
        repr_channels=(16, 24, 32, 32),
        gray_channels=(16, 24, 32, 32),
        disc_channels=(16, 32, 48, 64),
        gw_hidden=32,
        spade_hidden=16,
        flow_hidden=32,
        context_dim=16,
        batch_main=4,
        batch_aux=8,
        epochs=1,
    )
    base.update(overrides)
    return TrainConfig(**base)
