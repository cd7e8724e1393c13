"""CIE-Lab color handling: conversions, plane management, and the LabImage type.

Every stage of the pipeline works on images split into a luminance plane (L,
range [0, 100]) and two chrominance planes (a/b, range [-128, 127]). sRGB with
a D65 white point and the 2-degree standard observer is assumed throughout;
grayscale inputs are treated directly as L channels scaled to [0, 100].
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

AB_MIN = -128.0
AB_MAX = 127.0
AB_SCALE = 127.0  # normalization divisor for network-side ab planes
L_SCALE = 50.0

# sRGB (linear) -> XYZ, D65
_RGB2XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ],
    dtype=np.float64,
)
_XYZ2RGB = np.linalg.inv(_RGB2XYZ)
# white point taken from the matrix row sums so that RGB (1,1,1) maps to
# L=100, a=b=0 exactly (equals D65 to the matrix's precision)
_WHITE = _RGB2XYZ.sum(axis=1)

_DELTA = 6.0 / 29.0


class ColorspaceError(ValueError):
    pass


@dataclass
class LabImage:
    """An image as separable L and ab planes.

    l: (H, W, 1) float32 in [0, 100]; ab: (H, W, 2) float32 in [-128, 127].
    """

    l: np.ndarray
    ab: np.ndarray

    def __post_init__(self):
        self.l = np.asarray(self.l, dtype=np.float32)
        self.ab = np.asarray(self.ab, dtype=np.float32)
        if self.l.ndim == 2:
            self.l = self.l[:, :, None]
        if self.l.ndim != 3 or self.l.shape[2] != 1:
            raise ColorspaceError(f"l plane must be HxWx1, got {self.l.shape}")
        if self.ab.ndim != 3 or self.ab.shape[2] != 2:
            raise ColorspaceError(f"ab planes must be HxWx2, got {self.ab.shape}")
        if self.l.shape[:2] != self.ab.shape[:2]:
            raise ColorspaceError(
                f"l/ab spatial shapes differ: {self.l.shape[:2]} vs {self.ab.shape[:2]}"
            )

    @property
    def height(self) -> int:
        return self.l.shape[0]

    @property
    def width(self) -> int:
        return self.l.shape[1]

    def copy(self) -> "LabImage":
        return LabImage(self.l.copy(), self.ab.copy())


def _srgb_to_linear(c: np.ndarray) -> np.ndarray:
    return np.where(c > 0.04045, ((c + 0.055) / 1.055) ** 2.4, c / 12.92)


def _linear_to_srgb(c: np.ndarray) -> np.ndarray:
    c = np.clip(c, 0.0, 1.0)
    return np.where(c > 0.0031308, 1.055 * c ** (1.0 / 2.4) - 0.055, 12.92 * c)


def _lab_f(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA**3, np.cbrt(t), t / (3.0 * _DELTA**2) + 4.0 / 29.0)


def _lab_f_inv(t: np.ndarray) -> np.ndarray:
    return np.where(t > _DELTA, t**3, 3.0 * _DELTA**2 * (t - 4.0 / 29.0))


def rgb_to_lab(rgb: np.ndarray) -> LabImage:
    """Convert an 8-bit sRGB image (H, W, 3) to a LabImage."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ColorspaceError(f"expected HxWx3 RGB, got {rgb.shape}")
    rgb = rgb.astype(np.float64)
    if not np.isfinite(rgb).all():
        raise ColorspaceError("RGB input contains non-finite values")
    lin = _srgb_to_linear(rgb / 255.0)
    xyz = lin @ _RGB2XYZ.T
    fxyz = _lab_f(xyz / _WHITE)
    lum = np.clip(116.0 * fxyz[..., 1] - 16.0, 0.0, 100.0)
    a = 500.0 * (fxyz[..., 0] - fxyz[..., 1])
    b = 200.0 * (fxyz[..., 1] - fxyz[..., 2])
    ab = np.clip(np.stack([a, b], axis=-1), AB_MIN, AB_MAX)
    return LabImage(lum[..., None].astype(np.float32), ab.astype(np.float32))


def lab_to_rgb(img: LabImage) -> np.ndarray:
    """Convert a LabImage back to 8-bit sRGB; out-of-gamut values are clipped."""
    lum = img.l[..., 0].astype(np.float64)
    a = img.ab[..., 0].astype(np.float64)
    b = img.ab[..., 1].astype(np.float64)
    fy = (lum + 16.0) / 116.0
    fx = fy + a / 500.0
    fz = fy - b / 200.0
    xyz = np.stack([_lab_f_inv(fx), _lab_f_inv(fy), _lab_f_inv(fz)], axis=-1) * _WHITE
    lin = xyz @ _XYZ2RGB.T
    srgb = _linear_to_srgb(lin)
    return np.clip(np.round(srgb * 255.0), 0, 255).astype(np.uint8)


def assemble(l: np.ndarray, ab: np.ndarray) -> LabImage:
    """Pair a luminance plane with chrominance planes; l is kept bit-identical."""
    l = np.asarray(l, dtype=np.float32)
    ab = np.asarray(ab, dtype=np.float32)
    if l.ndim == 2:
        l = l[:, :, None]
    if l.shape[:2] != ab.shape[:2]:
        raise ColorspaceError(
            f"l/ab spatial shapes differ: {l.shape[:2]} vs {ab.shape[:2]}"
        )
    return LabImage(l, ab)


def gray_to_l(gray: np.ndarray) -> np.ndarray:
    """Interpret an 8-bit single-channel image as an L plane in [0, 100]."""
    gray = np.asarray(gray)
    if gray.ndim == 3 and gray.shape[2] == 1:
        gray = gray[:, :, 0]
    if gray.ndim != 2:
        raise ColorspaceError(f"expected single-channel image, got {gray.shape}")
    return (gray.astype(np.float32) / 255.0 * 100.0)[:, :, None]


def l_to_gray(l: np.ndarray) -> np.ndarray:
    """Render an L plane back to an 8-bit single-channel image."""
    l = np.asarray(l)
    if l.ndim == 3:
        l = l[:, :, 0]
    return np.clip(np.round(l / 100.0 * 255.0), 0, 255).astype(np.uint8)


# ---------------------------------------------------------------------------
# torch-side helpers for the training path (differentiable, batched, NCHW)

def normalize_l(l: torch.Tensor) -> torch.Tensor:
    return l / L_SCALE - 1.0


def normalize_ab(ab: torch.Tensor) -> torch.Tensor:
    return ab / AB_SCALE


def denormalize_ab(ab_net: torch.Tensor) -> torch.Tensor:
    return ab_net * AB_SCALE


def lab_to_rgb_t(l: torch.Tensor, ab: torch.Tensor) -> torch.Tensor:
    """Differentiable Lab -> sRGB for (B,1,H,W) L and (B,2,H,W) ab, output in [0,1]."""
    fy = (l + 16.0) / 116.0
    fx = fy + ab[:, 0:1] / 500.0
    fz = fy - ab[:, 1:2] / 200.0
    f = torch.cat([fx, fy, fz], dim=1)
    xyz = torch.where(f > _DELTA, f**3, 3.0 * _DELTA**2 * (f - 4.0 / 29.0))
    xyz = xyz * xyz.new_tensor(_WHITE).view(1, 3, 1, 1)
    m = xyz.new_tensor(_XYZ2RGB)
    lin = torch.einsum("ij,bjhw->bihw", m, xyz).clamp(0.0, 1.0)
    return torch.where(
        lin > 0.0031308, 1.055 * lin.clamp(min=1e-8) ** (1.0 / 2.4) - 0.055, 12.92 * lin
    )
