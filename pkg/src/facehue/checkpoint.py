"""Checkpoint archives and the inference-time model bundle.

A checkpoint is one torch archive holding a format version, the full config,
the step counter, every model's weights, optimizer states, and RNG states, so
loading never needs out-of-band information.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path

import torch

from .config import TrainConfig
from .colorizer import Colorizer, PatchDiscriminator
from .noref import AutoEncoderHead, FlowModel
from .representation import ColorEncoder

CHECKPOINT_VERSION = 1
CHECKPOINT_KIND = "facehue-checkpoint"


class CheckpointError(RuntimeError):
    pass


def build_color_encoder(config: TrainConfig) -> ColorEncoder:
    return ColorEncoder(config.d_w, config.repr_channels)


def build_colorizer(config: TrainConfig) -> Colorizer:
    return Colorizer(
        width=config.d_w,
        gray_channels=config.gray_channels,
        gw_hidden=config.gw_hidden,
        spade_hidden=config.spade_hidden,
        grouped=config.grouped_design,
        repr_branch=config.repr_branch,
    )


def build_discriminator(config: TrainConfig) -> PatchDiscriminator:
    return PatchDiscriminator(config.disc_channels)


def build_auto_head(config: TrainConfig) -> AutoEncoderHead:
    return AutoEncoderHead(config.d_w, config.repr_channels)


def build_flow_model(config: TrainConfig) -> FlowModel:
    return FlowModel(
        config.d_w, config.context_dim, config.flow_blocks, config.flow_hidden
    )


@dataclass
class Checkpoint:
    """In-memory checkpoint payload with a single-file on-disk form."""

    payload: dict

    @property
    def config(self) -> TrainConfig:
        return TrainConfig.from_dict(self.payload["config"])

    @property
    def step(self) -> int:
        return self.payload["step"]

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        torch.save(self.payload, path)
        return path

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        try:
            payload = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if not isinstance(payload, dict) or payload.get("kind") != CHECKPOINT_KIND:
            raise CheckpointError(f"{path} is not a facehue checkpoint")
        if payload.get("version") != CHECKPOINT_VERSION:
            raise CheckpointError(
                f"unsupported checkpoint version {payload.get('version')}"
            )
        return cls(payload)


def make_checkpoint(
    config: TrainConfig,
    step: int,
    models: dict,
    optimizers: dict | None = None,
    rng: dict | None = None,
) -> Checkpoint:
    payload = {
        "kind": CHECKPOINT_KIND,
        "version": CHECKPOINT_VERSION,
        "config": config.to_dict(),
        "step": int(step),
        "models": {
            name: (m.state_dict() if m is not None else None)
            for name, m in models.items()
        },
        "optimizers": {
            name: opt.state_dict() for name, opt in (optimizers or {}).items()
        },
        "rng": rng or {},
    }
    return Checkpoint(payload)


@dataclass
class ModelBundle:
    """Models rebuilt from a checkpoint, ready for inference."""

    config: TrainConfig
    color_encoder: ColorEncoder
    colorizer: Colorizer
    discriminator: PatchDiscriminator | None = None
    auto_head: AutoEncoderHead | None = None
    flow_model: FlowModel | None = None
    source_hash: str | None = None

    def eval(self) -> "ModelBundle":
        for m in (
            self.color_encoder,
            self.colorizer,
            self.discriminator,
            self.auto_head,
            self.flow_model,
        ):
            if m is not None:
                m.eval()
        return self


def bundle_from_checkpoint(ckpt: Checkpoint, source_hash: str | None = None) -> ModelBundle:
    config = ckpt.config
    models = ckpt.payload["models"]

    def _load(builder, key):
        sd = models.get(key)
        if sd is None:
            return None
        module = builder(config)
        module.load_state_dict(sd)
        return module

    encoder = _load(build_color_encoder, "color_encoder")
    colorizer = _load(build_colorizer, "colorizer")
    if colorizer is None:
        raise CheckpointError("checkpoint is missing the colorizer weights")
    if encoder is None and config.repr_branch:
        raise CheckpointError("checkpoint is missing the color encoder weights")
    bundle = ModelBundle(
        config=config,
        color_encoder=encoder,
        colorizer=colorizer,
        discriminator=_load(build_discriminator, "discriminator"),
        auto_head=_load(build_auto_head, "auto_head"),
        flow_model=_load(build_flow_model, "flow_model"),
        source_hash=source_hash,
    )
    return bundle.eval()


def load_bundle(path: str | Path) -> ModelBundle:
    ckpt = Checkpoint.load(path)
    return bundle_from_checkpoint(ckpt, source_hash=sha256_file(path))


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def state_dicts_equal(a: dict, b: dict) -> bool:
    if a.keys() != b.keys():
        return False
    for k in a:
        ta, tb = a[k], b[k]
        if ta.shape != tb.shape or not torch.equal(ta, tb):
            return False
    return True
