"""The colorization network: grouped modulation from color vectors, a gray
encoder, a mask-conditioned decoder, and a conditional patch discriminator.

The color representation enters the network at exactly one place: the
bottleneck, where per-component vectors are broadcast over their own low-res
mask support and turned into (gamma, beta) modulation maps by grouped 1x1
convolutions. With the grouped design a pixel of component c receives values
computed only from that component's vector, so the modulation Jacobian is
block-sparse by construction. Mask structure is re-injected at every decoder
scale through spatially-adaptive normalization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .colorspace import LabImage, denormalize_ab, normalize_ab, normalize_l
from .parsing import _PRIORITY_BY_INDEX, COMPONENTS, ComponentMasks, downscale_masks
from .representation import (
    ColorRepresentation,
    representation_to_tensors,
)

N_COMP = len(COMPONENTS)


class ColorizerError(ValueError):
    pass


@dataclass
class ModulationMaps:
    """Bottleneck affine modulation: gamma/beta arrays of shape (h, w, C)."""

    gamma: np.ndarray
    beta: np.ndarray


@dataclass
class GrayFeatures:
    """Feature pyramid from the gray encoder: bottleneck plus per-scale skips."""

    bottleneck: np.ndarray
    skips: list[np.ndarray]


def downscale_mask_stack(mask_stack: torch.Tensor, factor: int) -> torch.Tensor:
    """Majority-vote downscale of a (B,5,H,W) one-hot stack, tie-broken by
    the fixed component priority. Mirrors parsing.downscale_masks."""
    if factor == 1:
        return mask_stack
    counts = torch.round(F.avg_pool2d(mask_stack, factor) * factor * factor)
    prio = mask_stack.new_tensor(_PRIORITY_BY_INDEX.astype(np.float32))
    score = counts * 8.0 + prio.view(1, -1, 1, 1)
    idx = score.argmax(dim=1)
    return (
        F.one_hot(idx, N_COMP).permute(0, 3, 1, 2).to(mask_stack.dtype)
    )


class ReprDecoder(nn.Module):
    """Turns per-component color vectors into bottleneck (gamma, beta) maps.

    grouped=True: vectors are broadcast over their own low-res mask support
    and processed by grouped 1x1 convolutions (one group per component); the
    per-group outputs are collapsed through the masks, so component isolation
    is exact. grouped=False: the full vector is broadcast everywhere and
    processed by ordinary convolutions (the ablation topology).
    """

    def __init__(
        self,
        width: int,
        out_channels: int,
        hidden: int = 256,
        grouped: bool = True,
    ):
        super().__init__()
        self.width = width
        self.out_channels = out_channels
        self.grouped = grouped
        self.default_embed = nn.Parameter(torch.randn(N_COMP, width) * 0.1)
        if grouped:
            self.conv1 = nn.Conv2d(N_COMP * width, N_COMP * hidden, 1, groups=N_COMP)
            self.conv2 = nn.Conv2d(
                N_COMP * hidden, N_COMP * 2 * out_channels, 1, groups=N_COMP
            )
        else:
            self.conv1 = nn.Conv2d(N_COMP * width + N_COMP, hidden, 1)
            self.conv2 = nn.Conv2d(hidden, 2 * out_channels, 1)
        self.act = nn.LeakyReLU(0.2)

    def forward(
        self, vecs: torch.Tensor, present: torch.Tensor, masks_low: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """vecs: (B,5,width); present: (B,5) bool; masks_low: (B,5,h,w) one-hot.

        Returns (gamma, beta), each (B,C,h,w).
        """
        b, k, d = vecs.shape
        if k != N_COMP or d != self.width:
            raise ColorizerError(f"expected (B,{N_COMP},{self.width}) vectors, got {tuple(vecs.shape)}")
        if masks_low.shape[1] != N_COMP:
            raise ColorizerError("mask stack must have five channels")
        default = self.default_embed.unsqueeze(0).to(vecs.dtype)
        w_eff = torch.where(present.unsqueeze(-1), vecs, default)
        h, w = masks_low.shape[-2:]
        if self.grouped:
            layout = w_eff.reshape(b, k * d, 1, 1) * masks_low.repeat_interleave(d, dim=1)
            hidden = self.act(self.conv1(layout))
            out = self.conv2(hidden)  # (B, 5*2C, h, w)
            out = out.view(b, k, 2 * self.out_channels, h, w)
            out = (out * masks_low.unsqueeze(2)).sum(dim=1)
        else:
            tiled = w_eff.reshape(b, k * d, 1, 1).expand(b, k * d, h, w)
            layout = torch.cat([tiled, masks_low], dim=1)
            hidden = self.act(self.conv1(layout))
            out = self.conv2(hidden)
        gamma_raw, beta = out.chunk(2, dim=1)
        return 1.0 + gamma_raw, beta


class GrayEncoder(nn.Module):
    """Stride-2 pyramid over the normalized luminance plane."""

    def __init__(self, channels: tuple[int, ...] = (64, 128, 256, 256)):
        super().__init__()
        self.channels = channels
        self.stem = nn.Sequential(
            nn.Conv2d(1, channels[0], 3, padding=1), nn.LeakyReLU(0.2)
        )
        stages = []
        in_ch = channels[0]
        for ch in channels:
            stages.append(
                nn.Sequential(
                    nn.Conv2d(in_ch, ch, 3, stride=2, padding=1),
                    nn.InstanceNorm2d(ch, affine=False),
                    nn.LeakyReLU(0.2),
                )
            )
            in_ch = ch
        self.stages = nn.ModuleList(stages)
        self.stride = 2 ** len(channels)

    @property
    def bottleneck_channels(self) -> int:
        return self.channels[-1]

    def forward(self, l_net: torch.Tensor) -> tuple[torch.Tensor, list[torch.Tensor]]:
        if l_net.shape[-1] % self.stride or l_net.shape[-2] % self.stride:
            raise ColorizerError(f"spatial size must be divisible by {self.stride}")
        x = self.stem(l_net)
        skips = [x]
        for stage in self.stages[:-1]:
            x = stage(x)
            skips.append(x)
        x = self.stages[-1](x)
        return x, skips


class ChannelNorm(nn.Module):
    """Parameter-free normalization over channels at each position.

    Unlike instance norm there is no spatial pooling, so a local change to
    the input can never leak to distant pixels through normalization
    statistics; the decoder's receptive field stays finite.
    """

    def __init__(self, eps: float = 1e-5):
        super().__init__()
        self.eps = eps

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        mu = x.mean(dim=1, keepdim=True)
        var = x.var(dim=1, keepdim=True, unbiased=False)
        return (x - mu) / torch.sqrt(var + self.eps)


class SpadeNorm(nn.Module):
    """Normalization whose scale/shift are spatial functions of the masks."""

    def __init__(self, norm_ch: int, mask_ch: int = N_COMP, hidden: int = 128):
        super().__init__()
        self.param_free = ChannelNorm()
        self.shared = nn.Sequential(
            nn.Conv2d(mask_ch, hidden, 3, padding=1), nn.ReLU()
        )
        self.gamma = nn.Conv2d(hidden, norm_ch, 3, padding=1)
        self.beta = nn.Conv2d(hidden, norm_ch, 3, padding=1)

    def forward(self, x: torch.Tensor, mask_stack: torch.Tensor) -> torch.Tensor:
        normed = self.param_free(x)
        m = F.interpolate(mask_stack, size=x.shape[-2:], mode="nearest")
        emb = self.shared(m)
        return normed * (1.0 + self.gamma(emb)) + self.beta(emb)


class SpadeResBlock(nn.Module):
    def __init__(self, in_ch: int, out_ch: int, hidden: int = 128):
        super().__init__()
        mid = min(in_ch, out_ch)
        self.norm1 = SpadeNorm(in_ch, hidden=hidden)
        self.conv1 = nn.Conv2d(in_ch, mid, 3, padding=1)
        self.norm2 = SpadeNorm(mid, hidden=hidden)
        self.conv2 = nn.Conv2d(mid, out_ch, 3, padding=1)
        self.learned_skip = in_ch != out_ch
        if self.learned_skip:
            self.norm_s = SpadeNorm(in_ch, hidden=hidden)
            self.conv_s = nn.Conv2d(in_ch, out_ch, 1, bias=False)
        self.act = nn.LeakyReLU(0.2)

    def forward(self, x: torch.Tensor, mask_stack: torch.Tensor) -> torch.Tensor:
        dx = self.conv1(self.act(self.norm1(x, mask_stack)))
        dx = self.conv2(self.act(self.norm2(dx, mask_stack)))
        xs = self.conv_s(self.norm_s(x, mask_stack)) if self.learned_skip else x
        return xs + dx


class AbDecoder(nn.Module):
    """Upsampling decoder emitting normalized ab planes, conditioned on masks
    at every scale and on the gray encoder's skip features."""

    def __init__(
        self, channels: tuple[int, ...] = (64, 128, 256, 256), spade_hidden: int = 128
    ):
        super().__init__()
        # mirror the encoder: skips arrive at stem width then each stage width
        skip_chs = [channels[0]] + list(channels[:-1])
        blocks = []
        in_ch = channels[-1]
        for skip_ch in reversed(skip_chs):
            blocks.append(SpadeResBlock(in_ch + skip_ch, skip_ch, hidden=spade_hidden))
            in_ch = skip_ch
        self.blocks = nn.ModuleList(blocks)
        self.head = nn.Conv2d(in_ch, 2, 3, padding=1)

    def forward(
        self,
        x: torch.Tensor,
        skips: list[torch.Tensor],
        mask_stack: torch.Tensor,
    ) -> torch.Tensor:
        for block, skip in zip(self.blocks, reversed(skips)):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = block(torch.cat([x, skip], dim=1), mask_stack)
        return torch.tanh(self.head(x))


class Colorizer(nn.Module):
    """Full colorization network; emits normalized ab given luminance, a color
    representation, and component masks. With repr_branch=False the network
    reduces to the plain encoder/decoder baseline (no modulation path)."""

    def __init__(
        self,
        width: int = 32,
        gray_channels: tuple[int, ...] = (64, 128, 256, 256),
        gw_hidden: int = 256,
        spade_hidden: int = 128,
        grouped: bool = True,
        repr_branch: bool = True,
    ):
        super().__init__()
        self.gray_encoder = GrayEncoder(gray_channels)
        self.repr_decoder = (
            ReprDecoder(
                width,
                self.gray_encoder.bottleneck_channels,
                hidden=gw_hidden,
                grouped=grouped,
            )
            if repr_branch
            else None
        )
        self.decoder = AbDecoder(gray_channels, spade_hidden=spade_hidden)

    @property
    def stride(self) -> int:
        return self.gray_encoder.stride

    def forward(
        self,
        l_net: torch.Tensor,
        vecs: torch.Tensor | None,
        present: torch.Tensor | None,
        mask_stack: torch.Tensor,
    ) -> torch.Tensor:
        bottleneck, skips = self.gray_encoder(l_net)
        if self.repr_decoder is not None:
            masks_low = downscale_mask_stack(mask_stack, self.stride)
            gamma, beta = self.repr_decoder(vecs, present, masks_low)
            bottleneck = gamma * bottleneck + beta
        return self.decoder(bottleneck, skips, mask_stack)


class PatchDiscriminator(nn.Module):
    """Conditional patch discriminator over (L, ab); emits a logit map of
    stride equal to 2**len(channels) (16x16 patches for a 256 input)."""

    def __init__(self, channels: tuple[int, ...] = (64, 128, 256, 512)):
        super().__init__()
        layers: list[nn.Module] = []
        in_ch = 3
        for i, ch in enumerate(channels):
            layers.append(nn.Conv2d(in_ch, ch, 4, stride=2, padding=1))
            if i > 0:
                layers.append(nn.InstanceNorm2d(ch, affine=False))
            layers.append(nn.LeakyReLU(0.2))
            in_ch = ch
        layers.append(nn.Conv2d(in_ch, 1, 3, padding=1))
        self.net = nn.Sequential(*layers)
        self.stride = 2 ** len(channels)

    def forward(self, l_net: torch.Tensor, ab_net: torch.Tensor) -> torch.Tensor:
        return self.net(torch.cat([l_net, ab_net], dim=1))


# ---------------------------------------------------------------------------
# numpy-facing contract operations

def decode_repr(
    w: ColorRepresentation, masks_low: ComponentMasks, decoder: ReprDecoder
) -> ModulationMaps:
    """Decode a representation into modulation maps on a low-res partition."""
    vecs, present = representation_to_tensors(w)
    mask_t = torch.from_numpy(masks_low.onehot())[None]
    decoder.eval()
    with torch.no_grad():
        gamma, beta = decoder(vecs, present, mask_t)
    return ModulationMaps(
        gamma=gamma[0].numpy().transpose(1, 2, 0),
        beta=beta[0].numpy().transpose(1, 2, 0),
    )


def encode_gray(l: np.ndarray, encoder: GrayEncoder) -> GrayFeatures:
    """Extract the gray feature pyramid from a native-range L plane."""
    l = np.asarray(l, dtype=np.float32)
    if l.ndim == 2:
        l = l[:, :, None]
    l_t = torch.from_numpy(l.transpose(2, 0, 1))[None]
    encoder.eval()
    with torch.no_grad():
        bottleneck, skips = encoder(normalize_l(l_t))
    return GrayFeatures(
        bottleneck=bottleneck[0].numpy().transpose(1, 2, 0),
        skips=[s[0].numpy().transpose(1, 2, 0) for s in skips],
    )


def generate(
    l: np.ndarray,
    w: ColorRepresentation,
    masks: ComponentMasks,
    model: Colorizer,
) -> LabImage:
    """Colorize a luminance plane; the output keeps l bit-identical."""
    l = np.asarray(l, dtype=np.float32)
    if l.ndim == 2:
        l = l[:, :, None]
    if l.shape[:2] != (masks.height, masks.width):
        raise ColorizerError(
            f"l/mask shapes differ: {l.shape[:2]} vs {(masks.height, masks.width)}"
        )
    l_t = torch.from_numpy(np.ascontiguousarray(l.transpose(2, 0, 1)))[None]
    vecs, present = representation_to_tensors(w)
    mask_t = torch.from_numpy(masks.onehot())[None]
    model.eval()
    with torch.no_grad():
        ab_net = model(normalize_l(l_t), vecs, present, mask_t)
    ab = denormalize_ab(ab_net)[0].numpy().transpose(1, 2, 0)
    return LabImage(l.copy(), ab)


def discriminate(x: LabImage, disc: PatchDiscriminator) -> np.ndarray:
    """Patch-level realness logits for a Lab image."""
    l_t = torch.from_numpy(x.l.transpose(2, 0, 1))[None]
    ab_t = torch.from_numpy(x.ab.transpose(2, 0, 1))[None]
    disc.eval()
    with torch.no_grad():
        logits = disc(normalize_l(l_t), normalize_ab(ab_t))
    return logits[0, 0].numpy()


def masks_low_for(model_stride: int, masks: ComponentMasks) -> ComponentMasks:
    """Convenience: the bottleneck-resolution partition for a given stride."""
    return downscale_masks(masks, model_stride)
