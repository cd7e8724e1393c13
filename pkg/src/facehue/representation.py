"""Per-component color representations and the reference encoder.

A representation is five fixed-width vectors, one per facial component,
extracted from a reference's chrominance planes under its parsing masks.
The encoder trunk is deliberately normalization-free: masked average pooling
over a purely convolutional feature map is what restricts which pixels can
influence each component's vector (a global norm layer would leak content
across the whole frame).
"""

from __future__ import annotations

import base64
import json
import struct
from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .parsing import COMPONENT_INDEX, COMPONENTS, ComponentMasks

D_W_DEFAULT = 32


class RepresentationError(ValueError):
    pass


@dataclass
class ColorRepresentation:
    """Five component color vectors of equal width plus presence flags.

    Absent components (empty mask in the source reference) hold the all-zeros
    sentinel and present[c] == False.
    """

    vectors: dict[str, np.ndarray]
    present: dict[str, bool]

    def __post_init__(self):
        if set(self.vectors) != set(COMPONENTS) or set(self.present) != set(COMPONENTS):
            raise RepresentationError("representation must carry all five components")
        widths = {self.vectors[c].shape for c in COMPONENTS}
        if len(widths) != 1 or len(next(iter(widths))) != 1:
            raise RepresentationError(f"inconsistent vector shapes: {widths}")
        self.vectors = {
            c: np.asarray(self.vectors[c], dtype=np.float32) for c in COMPONENTS
        }
        for c in COMPONENTS:  # absent components hold the zero sentinel
            if not self.present[c]:
                self.vectors[c] = np.zeros_like(self.vectors[c])

    @property
    def width(self) -> int:
        return self.vectors[COMPONENTS[0]].shape[0]

    @classmethod
    def zeros(cls, width: int = D_W_DEFAULT) -> "ColorRepresentation":
        return cls(
            vectors={c: np.zeros(width, dtype=np.float32) for c in COMPONENTS},
            present={c: False for c in COMPONENTS},
        )

    def slice(self, component: str) -> np.ndarray:
        """Copy of one component's vector."""
        if component not in COMPONENT_INDEX:
            raise RepresentationError(f"unknown component {component!r}")
        return self.vectors[component].copy()

    def to_array(self) -> np.ndarray:
        """Flat (5 * width,) float32 vector in COMPONENTS order."""
        return np.concatenate([self.vectors[c] for c in COMPONENTS])

    def present_array(self) -> np.ndarray:
        return np.array([self.present[c] for c in COMPONENTS], dtype=bool)

    @classmethod
    def from_array(
        cls, flat: np.ndarray, present: np.ndarray | None = None
    ) -> "ColorRepresentation":
        flat = np.asarray(flat, dtype=np.float32)
        if flat.ndim != 1 or flat.size % len(COMPONENTS):
            raise RepresentationError(f"flat vector size {flat.shape} not 5*width")
        width = flat.size // len(COMPONENTS)
        if present is None:
            present = np.ones(len(COMPONENTS), dtype=bool)
        return cls(
            vectors={
                c: flat[i * width : (i + 1) * width].copy()
                for i, c in enumerate(COMPONENTS)
            },
            present={c: bool(present[i]) for i, c in enumerate(COMPONENTS)},
        )

    def to_bytes(self) -> bytes:
        """Little-endian float32 flat vector followed by one presence-bits byte."""
        flat = self.to_array()
        payload = struct.pack(f"<{flat.size}f", *flat.tolist())
        bits = 0
        for i, c in enumerate(COMPONENTS):
            if self.present[c]:
                bits |= 1 << i
        return payload + struct.pack("<B", bits)

    @classmethod
    def from_bytes(cls, data: bytes) -> "ColorRepresentation":
        if (len(data) - 1) % (4 * len(COMPONENTS)):
            raise RepresentationError("binary representation has unexpected length")
        n = (len(data) - 1) // 4
        flat = np.array(struct.unpack(f"<{n}f", data[:-1]), dtype=np.float32)
        bits = data[-1]
        present = np.array([(bits >> i) & 1 for i in range(len(COMPONENTS))], dtype=bool)
        return cls.from_array(flat, present)

    def to_json(self) -> dict:
        return {
            "width": self.width,
            "vectors": {c: self.vectors[c].tolist() for c in COMPONENTS},
            "present": {c: self.present[c] for c in COMPONENTS},
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ColorRepresentation":
        return cls(
            vectors={c: np.array(obj["vectors"][c], dtype=np.float32) for c in COMPONENTS},
            present={c: bool(obj["present"][c]) for c in COMPONENTS},
        )

    def to_json_str(self) -> str:
        return json.dumps(self.to_json())

    def to_base64(self) -> str:
        return base64.b64encode(self.to_bytes()).decode("ascii")

    @classmethod
    def from_base64(cls, text: str) -> "ColorRepresentation":
        return cls.from_bytes(base64.b64decode(text))


def recombine(parts: dict[str, ColorRepresentation]) -> ColorRepresentation:
    """Assemble a representation taking each component from its own source."""
    missing = [c for c in COMPONENTS if c not in parts]
    if missing:
        raise RepresentationError(f"recombine is missing components: {missing}")
    return ColorRepresentation(
        vectors={c: parts[c].vectors[c].copy() for c in COMPONENTS},
        present={c: parts[c].present[c] for c in COMPONENTS},
    )


class ColorEncoder(nn.Module):
    """Convolutional trunk over ab planes + masked pooling + per-component heads.

    The trunk has four stride-2 stages; pooled features are weighted by the
    average-pooled component masks, so an empty mask yields the zero sentinel.
    """

    def __init__(
        self,
        width: int = D_W_DEFAULT,
        channels: tuple[int, ...] = (64, 128, 256, 256),
    ):
        super().__init__()
        self.width = width
        self.channels = channels
        layers: list[nn.Module] = []
        in_ch = 2
        for ch in channels:
            layers += [nn.Conv2d(in_ch, ch, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            in_ch = ch
        self.trunk = nn.Sequential(*layers)
        self.stride = 2 ** len(channels)
        # the pooled vector is trunk features plus the cell-averaged raw ab,
        # so each component's mean color reaches its head directly
        feat_dim = in_ch + 2
        # per-(sample, component) feature normalization: keeps vector scales
        # O(1) so the modulation path is live from the first step; acts on one
        # pooled vector at a time, so mask-locality is untouched
        self.pool_norm = nn.LayerNorm(feat_dim)
        self.heads = nn.ModuleList(
            [
                nn.Sequential(
                    nn.Linear(feat_dim, feat_dim),
                    nn.LeakyReLU(0.2),
                    nn.Linear(feat_dim, width),
                )
                for _ in COMPONENTS
            ]
        )

    def receptive_field_radius(self) -> int:
        """Input-pixel radius that can influence one trunk output cell."""
        rf = 1
        jump = 1
        for _ in self.channels:
            rf += 2 * jump
            jump *= 2
        return rf // 2

    def forward(
        self, ab_net: torch.Tensor, mask_stack: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """ab_net: (B,2,H,W) normalized; mask_stack: (B,5,H,W) binary.

        Returns (vectors (B,5,width), present (B,5) bool).
        """
        if ab_net.shape[-2:] != mask_stack.shape[-2:]:
            raise RepresentationError(
                f"ab/mask shapes differ: {tuple(ab_net.shape)} vs {tuple(mask_stack.shape)}"
            )
        if ab_net.shape[-1] % self.stride or ab_net.shape[-2] % self.stride:
            raise RepresentationError(
                f"spatial size must be divisible by {self.stride}"
            )
        feat = self.trunk(ab_net)  # (B,C,h,w)
        feat = torch.cat([feat, F.avg_pool2d(ab_net, self.stride)], dim=1)
        weights = F.avg_pool2d(mask_stack, self.stride)  # (B,5,h,w) cell fractions
        denom = weights.sum(dim=(2, 3))  # (B,5)
        present = denom > 0
        pooled = torch.einsum("bchw,bkhw->bkc", feat, weights)
        safe = denom.clamp(min=1.0)
        pooled = self.pool_norm(pooled / safe.unsqueeze(-1))
        vecs = torch.stack(
            [head(pooled[:, i]) for i, head in enumerate(self.heads)], dim=1
        )
        # zero sentinel for absent components
        vecs = vecs * present.unsqueeze(-1).to(vecs.dtype)
        return vecs, present


def encode(
    ab: np.ndarray, masks: ComponentMasks, encoder: ColorEncoder
) -> ColorRepresentation:
    """Extract a ColorRepresentation from native-range ab planes and masks."""
    from .colorspace import normalize_ab

    ab = np.asarray(ab, dtype=np.float32)
    if ab.shape[:2] != (masks.height, masks.width):
        raise RepresentationError(
            f"ab/mask shapes differ: {ab.shape[:2]} vs {(masks.height, masks.width)}"
        )
    ab_t = torch.from_numpy(np.ascontiguousarray(ab.transpose(2, 0, 1)))[None]
    mask_t = torch.from_numpy(masks.onehot())[None]
    encoder.eval()
    with torch.no_grad():
        vecs, present = encoder(normalize_ab(ab_t), mask_t)
    return representation_from_tensors(vecs[0], present[0])


def representation_from_tensors(
    vecs: torch.Tensor, present: torch.Tensor
) -> ColorRepresentation:
    """(5,width) tensor + (5,) bool tensor -> ColorRepresentation."""
    v = vecs.detach().cpu().numpy().astype(np.float32)
    p = present.detach().cpu().numpy().astype(bool)
    return ColorRepresentation(
        vectors={c: v[i].copy() for i, c in enumerate(COMPONENTS)},
        present={c: bool(p[i]) for i, c in enumerate(COMPONENTS)},
    )


def representation_to_tensors(
    w: ColorRepresentation, device: torch.device | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """ColorRepresentation -> ((1,5,width) float tensor, (1,5) bool tensor)."""
    vecs = torch.from_numpy(
        np.stack([w.vectors[c] for c in COMPONENTS]).astype(np.float32)
    )[None]
    present = torch.from_numpy(w.present_array())[None]
    if device is not None:
        vecs, present = vecs.to(device), present.to(device)
    return vecs, present
