"""Chromatic and spatial augmentation of training images.

One color image is turned into five differently-augmented references plus a
composite ground truth assembled in the original geometry: each component
region of the composite carries the chromatic transform of "its" reference.
Chromatic jitter is a hue rotation + chroma scaling in the ab plane, which
provably never touches the luminance plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import cv2
import numpy as np

from .colorspace import AB_MAX, AB_MIN, LabImage
from .parsing import COMPONENT_INDEX, COMPONENTS, ComponentMasks

BORDER_L = 50.0  # out-of-frame luminance fill
N_REFS = len(COMPONENTS)

# reference i supplies component ASSIGNMENT[i] of the composite
ASSIGNMENT = {i: c for i, c in enumerate(COMPONENTS)}


@dataclass
class AugmentRanges:
    """Sampling ranges for the augmentation transforms."""

    hue: float = math.pi  # hue angle drawn from [-hue, hue]
    chroma: tuple[float, float] = (0.5, 1.5)
    rotation: float = math.pi / 12.0
    scale: tuple[float, float] = (0.9, 1.1)
    translation: float = 0.05  # fraction of H, W
    flip_prob: float = 0.5


@dataclass(frozen=True)
class ChromaticTransform:
    """Rotation by hue_angle about the ab origin followed by chroma scaling."""

    hue_angle: float = 0.0
    chroma_scale: float = 1.0

    def is_identity(self) -> bool:
        return self.hue_angle == 0.0 and self.chroma_scale == 1.0


@dataclass(frozen=True)
class SpatialWarp:
    """Horizontal flip plus a small affine warp (rotation, scale, translation)."""

    flip: bool = False
    rotation: float = 0.0
    scale: float = 1.0
    translation: tuple[float, float] = (0.0, 0.0)

    def is_identity(self) -> bool:
        return (
            not self.flip
            and self.rotation == 0.0
            and self.scale == 1.0
            and self.translation == (0.0, 0.0)
        )

    def has_affine(self) -> bool:
        return (
            self.rotation != 0.0
            or self.scale != 1.0
            or self.translation != (0.0, 0.0)
        )


@dataclass
class AugmentationBundle:
    """Five augmented references, their transforms, and the composite target."""

    refs: list[tuple[LabImage, ComponentMasks]]
    transforms: list[tuple[ChromaticTransform, SpatialWarp]]
    composite: LabImage
    assignment: dict[int, str] = field(default_factory=lambda: dict(ASSIGNMENT))


def apply_chromatic(ab: np.ndarray, t: ChromaticTransform) -> np.ndarray:
    """Rotate + scale chrominance planes, clipped to the valid ab range."""
    if t.is_identity():
        return np.asarray(ab, dtype=np.float32).copy()
    c, s = math.cos(t.hue_angle), math.sin(t.hue_angle)
    a = ab[..., 0].astype(np.float32)
    b = ab[..., 1].astype(np.float32)
    a2 = t.chroma_scale * (c * a - s * b)
    b2 = t.chroma_scale * (s * a + c * b)
    out = np.stack([a2, b2], axis=-1)
    return np.clip(out, AB_MIN, AB_MAX).astype(np.float32)


def _affine_matrix(warp: SpatialWarp, h: int, w: int) -> np.ndarray:
    center = (w / 2.0 - 0.5, h / 2.0 - 0.5)
    m = cv2.getRotationMatrix2D(center, math.degrees(warp.rotation), warp.scale)
    m[0, 2] += warp.translation[1] * w
    m[1, 2] += warp.translation[0] * h
    return m


def apply_spatial(
    img: LabImage, masks: ComponentMasks, warp: SpatialWarp
) -> tuple[LabImage, ComponentMasks]:
    """Warp image and masks identically.

    Image planes use bilinear interpolation, masks nearest-neighbor (so the
    partition survives). Out-of-frame pixels become background with L=50,
    ab=0. A flip alone is an exact array reversal.
    """
    l, ab = img.l, img.ab
    idx = masks.index_map
    if warp.flip:
        l, ab, idx = l[:, ::-1], ab[:, ::-1], idx[:, ::-1]
    if not warp.has_affine():
        return (
            LabImage(np.ascontiguousarray(l), np.ascontiguousarray(ab)),
            ComponentMasks(np.ascontiguousarray(idx), masks.source_label_count),
        )
    h, w = idx.shape
    m = _affine_matrix(warp, h, w)
    planes = np.concatenate([l, ab], axis=2).astype(np.float32)
    warped = cv2.warpAffine(
        np.ascontiguousarray(planes),
        m,
        (w, h),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=(BORDER_L, 0.0, 0.0),
    )
    warped_idx = cv2.warpAffine(
        np.ascontiguousarray(idx),
        m,
        (w, h),
        flags=cv2.INTER_NEAREST,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=COMPONENT_INDEX["background"],
    )
    out_img = LabImage(warped[:, :, 0:1], np.clip(warped[:, :, 1:3], AB_MIN, AB_MAX))
    return out_img, ComponentMasks(warped_idx.astype(np.uint8), masks.source_label_count)


def sample_transforms(
    rng: np.random.Generator,
    ranges: AugmentRanges,
    chromatic: bool = True,
    spatial: bool = True,
) -> tuple[ChromaticTransform, SpatialWarp]:
    """Draw one (chromatic, spatial) transform pair from the given ranges."""
    if chromatic:
        t = ChromaticTransform(
            hue_angle=float(rng.uniform(-ranges.hue, ranges.hue)),
            chroma_scale=float(rng.uniform(*ranges.chroma)),
        )
    else:
        t = ChromaticTransform()
    if spatial:
        s = SpatialWarp(
            flip=bool(rng.random() < ranges.flip_prob),
            rotation=float(rng.uniform(-ranges.rotation, ranges.rotation)),
            scale=float(rng.uniform(*ranges.scale)),
            translation=(
                float(rng.uniform(-ranges.translation, ranges.translation)),
                float(rng.uniform(-ranges.translation, ranges.translation)),
            ),
        )
    else:
        s = SpatialWarp()
    return t, s


def bundle_from_transforms(
    x: LabImage,
    masks: ComponentMasks,
    transforms: list[tuple[ChromaticTransform, SpatialWarp]],
) -> AugmentationBundle:
    """Assemble a bundle from five explicit transform pairs.

    refs[i] = spatial_i(chromatic_i(x)); the composite is assembled in the
    original geometry by pasting chromatic_i(x.ab) under the original mask of
    component ASSIGNMENT[i], so the composite matches the chromatic part of
    each transform pixel-exactly.
    """
    if len(transforms) != N_REFS:
        raise ValueError(f"need {N_REFS} transform pairs, got {len(transforms)}")
    refs: list[tuple[LabImage, ComponentMasks]] = []
    composite_ab = np.zeros_like(x.ab)
    for i, (t, s) in enumerate(transforms):
        chrom_ab = apply_chromatic(x.ab, t)
        refs.append(apply_spatial(LabImage(x.l, chrom_ab), masks, s))
        region = masks.mask(ASSIGNMENT[i])
        composite_ab[region] = chrom_ab[region]
    composite = LabImage(x.l.copy(), composite_ab)
    return AugmentationBundle(refs, list(transforms), composite)


def make_bundle(
    x: LabImage,
    masks: ComponentMasks,
    seed: int,
    ranges: AugmentRanges | None = None,
    chromatic: bool = True,
    spatial: bool = True,
) -> AugmentationBundle:
    """Build the five-reference bundle for one training image.

    Transform parameters are drawn from `ranges`; deterministic for a fixed
    seed. The chromatic/spatial switches force the respective part of every
    transform to the identity.
    """
    ranges = ranges or AugmentRanges()
    rng = np.random.default_rng(seed)
    transforms = [
        sample_transforms(rng, ranges, chromatic, spatial) for _ in range(N_REFS)
    ]
    return bundle_from_transforms(x, masks, transforms)
