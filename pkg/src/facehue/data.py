"""Dataset ingestion and procedural synthetic faces.

On-disk layout: `images/*.png` (color) and `parsing/*.png` (label maps with
matching stems). Parsing maps whose values stay within 0..4 are read as
component-index maps directly; anything else goes through the CelebAMask-19
mapping table.

The synthetic generator produces aligned "faces" made of colored regions with
known masks. The region template is sized so that every component survives a
factor-16 majority downscale (each owns at least one bottleneck cell) for
sizes >= 64, which the training-time modulation path relies on.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from PIL import Image

from .colorspace import LabImage, lab_to_rgb, rgb_to_lab
from .parsing import (
    CELEBAMASK_19,
    COMPONENTS,
    ComponentMasks,
    map_labels,
    save_component_masks,
)


class DatasetError(ValueError):
    pass


@dataclass
class Sample:
    image: LabImage
    masks: ComponentMasks
    stem: str


class FolderDataset:
    """images/*.png + parsing/*.png with matching stems."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        img_dir = self.root / "images"
        parse_dir = self.root / "parsing"
        if not img_dir.is_dir() or not parse_dir.is_dir():
            raise DatasetError(f"{self.root} must contain images/ and parsing/")
        self.stems = sorted(
            p.stem for p in img_dir.glob("*.png") if (parse_dir / p.name).exists()
        )
        if not self.stems:
            raise DatasetError(f"no paired samples under {self.root}")

    def __len__(self) -> int:
        return len(self.stems)

    def __getitem__(self, i: int) -> Sample:
        stem = self.stems[i]
        rgb = np.asarray(Image.open(self.root / "images" / f"{stem}.png").convert("RGB"))
        raw = np.asarray(Image.open(self.root / "parsing" / f"{stem}.png"))
        if raw.ndim == 3:
            raw = raw[:, :, 0]
        if raw.max(initial=0) < len(COMPONENTS):
            masks = ComponentMasks(raw.astype(np.uint8))
        else:
            masks = map_labels(raw, CELEBAMASK_19)
        if (masks.height, masks.width) != rgb.shape[:2]:
            raise DatasetError(f"image/parsing resolution mismatch for {stem}")
        return Sample(rgb_to_lab(rgb), masks, stem)


class MemoryDataset:
    def __init__(self, samples: list[Sample]):
        self.samples = samples

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]


def resize_sample(sample: Sample, size: int) -> Sample:
    """Fit a sample to size x size (bilinear planes, nearest masks)."""
    import cv2

    if (sample.image.height, sample.image.width) == (size, size):
        return sample
    l = cv2.resize(sample.image.l[:, :, 0], (size, size), interpolation=cv2.INTER_LINEAR)
    ab = cv2.resize(sample.image.ab, (size, size), interpolation=cv2.INTER_LINEAR)
    idx = cv2.resize(
        sample.masks.index_map, (size, size), interpolation=cv2.INTER_NEAREST
    )
    return Sample(
        LabImage(l[:, :, None], ab),
        ComponentMasks(idx, sample.masks.source_label_count),
        sample.stem,
    )


# region template in 1/64 units of the image side
_T = {
    "hair_rows": (0, 16),
    "face_rows": (16, 52),
    "face_cols": (4, 60),
    "eyes_rows": (17, 28),
    "eyes_cols": (16, 48),
    "lips_rows": (38, 48),
    "lips_cols": (16, 48),
}


def synthetic_index_map(size: int) -> np.ndarray:
    """Fixed component layout scaled to `size` (values 0..4)."""
    if size % 16:
        raise DatasetError("synthetic size must be divisible by 16")
    s = size / 64.0
    pix = {k: (int(a * s), int(b * s)) for k, (a, b) in _T.items()}
    idx = np.full((size, size), COMPONENTS.index("background"), dtype=np.uint8)
    idx[pix["hair_rows"][0] : pix["hair_rows"][1], :] = COMPONENTS.index("hair")
    fr, fc = pix["face_rows"], pix["face_cols"]
    idx[fr[0] : fr[1], fc[0] : fc[1]] = COMPONENTS.index("skin")
    er, ec = pix["eyes_rows"], pix["eyes_cols"]
    idx[er[0] : er[1], ec[0] : ec[1]] = COMPONENTS.index("eyes")
    lr, lc = pix["lips_rows"], pix["lips_cols"]
    idx[lr[0] : lr[1], lc[0] : lc[1]] = COMPONENTS.index("lips")
    return idx


_BASE_L = {"lips": 52.0, "skin": 68.0, "eyes": 42.0, "hair": 32.0, "background": 85.0}


def synthetic_face(seed: int, size: int = 64) -> Sample:
    """One synthetic face: fixed region layout, per-image component colors."""
    rng = np.random.default_rng(seed)
    idx = synthetic_index_map(size)
    masks = ComponentMasks(idx)
    l = np.zeros((size, size), dtype=np.float32)
    ab = np.zeros((size, size, 2), dtype=np.float32)
    for i, comp in enumerate(COMPONENTS):
        region = idx == i
        l[region] = _BASE_L[comp] + float(rng.uniform(-6.0, 6.0))
        hue = float(rng.uniform(-math.pi, math.pi))
        chroma = float(rng.uniform(10.0, 28.0))
        ab[region, 0] = chroma * math.cos(hue)
        ab[region, 1] = chroma * math.sin(hue)
    # gentle luminance gradient so the gray encoder sees structure
    ramp = np.linspace(-4.0, 4.0, size, dtype=np.float32)
    l = np.clip(l + ramp[None, :] + ramp[:, None] * 0.5, 0.0, 100.0)
    return Sample(LabImage(l[:, :, None], ab), masks, f"synthetic_{seed:05d}")


def make_synthetic_dataset(n: int, size: int = 64, seed: int = 0) -> MemoryDataset:
    return MemoryDataset([synthetic_face(seed * 100_003 + i, size) for i in range(n)])


def write_synthetic_dataset(root: str | Path, n: int, size: int = 64, seed: int = 0) -> Path:
    """Materialize a synthetic dataset in the on-disk folder layout."""
    root = Path(root)
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "parsing").mkdir(parents=True, exist_ok=True)
    ds = make_synthetic_dataset(n, size, seed)
    for i in range(len(ds)):
        sample = ds[i]
        rgb = lab_to_rgb(sample.image)
        Image.fromarray(rgb).save(root / "images" / f"{sample.stem}.png")
        save_component_masks(sample.masks, root / "parsing" / f"{sample.stem}.png")
    return root
