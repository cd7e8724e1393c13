"""Facial component masks derived from face-parsing label maps.

A face parser is an external dependency: we ship a small HTTP client and
support precomputed label maps on disk, then fold the parser's fine labels
into the five components {lips, skin, eyes, hair, background} that the rest
of the pipeline keys on. Masks are mutually exclusive and jointly exhaustive
by construction (stored as a single component-index map).
"""

from __future__ import annotations

import io
import logging
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

COMPONENTS = ("lips", "skin", "eyes", "hair", "background")
COMPONENT_INDEX = {name: i for i, name in enumerate(COMPONENTS)}

# tie-break order for downscaling: lips > eyes > hair > skin > background
_TIE_PRIORITY = {"lips": 4, "eyes": 3, "hair": 2, "skin": 1, "background": 0}
_PRIORITY_BY_INDEX = np.array(
    [_TIE_PRIORITY[c] for c in COMPONENTS], dtype=np.int64
)

# preview colors for mask overlays (RGB)
PREVIEW_COLORS = {
    "lips": (220, 40, 90),
    "skin": (250, 200, 150),
    "eyes": (60, 120, 230),
    "hair": (110, 60, 20),
    "background": (40, 40, 40),
}


class ParsingError(ValueError):
    pass


class UnknownLabelError(ParsingError):
    pass


class ParserUnavailableError(ParsingError):
    """Raised when neither a parser endpoint nor a precomputed map is usable."""


@dataclass
class LabelMapping:
    """Total map from raw parser label ids to the five component keys."""

    table: dict[int, str]

    def __post_init__(self):
        for raw, comp in self.table.items():
            if comp not in COMPONENT_INDEX:
                raise ParsingError(f"label {raw} maps to unknown component {comp!r}")

    @property
    def label_count(self) -> int:
        return len(self.table)


# CelebAMask-HQ-style 19-class vocabulary:
# 0 background, 1 skin, 2 l_brow, 3 r_brow, 4 l_eye, 5 r_eye, 6 eyeglasses,
# 7 l_ear, 8 r_ear, 9 earring, 10 nose, 11 mouth, 12 u_lip, 13 l_lip,
# 14 neck, 15 necklace, 16 cloth, 17 hair, 18 hat
CELEBAMASK_19 = LabelMapping(
    table={
        0: "background",
        1: "skin",
        2: "hair",  # eyebrows share hair pigmentation
        3: "hair",
        4: "eyes",
        5: "eyes",
        6: "background",
        7: "skin",
        8: "skin",
        9: "background",
        10: "skin",
        11: "lips",
        12: "lips",
        13: "lips",
        14: "skin",
        15: "background",
        16: "background",
        17: "hair",
        18: "background",
    }
)


@dataclass
class ComponentMasks:
    """Five-way partition of an image into facial components.

    Backed by a component-index map (values 0..4 following COMPONENTS order),
    which makes the partition invariant structural: exactly one component per
    pixel, all five keys always present.
    """

    index_map: np.ndarray
    source_label_count: int = field(default=len(COMPONENTS))

    def __post_init__(self):
        self.index_map = np.asarray(self.index_map)
        if self.index_map.ndim != 2:
            raise ParsingError(f"index map must be HxW, got {self.index_map.shape}")
        if self.index_map.dtype.kind not in "iu":
            raise ParsingError("index map must be integral")
        if self.index_map.size and (
            self.index_map.min() < 0 or self.index_map.max() >= len(COMPONENTS)
        ):
            raise ParsingError("index map values outside component range 0..4")
        self.index_map = self.index_map.astype(np.uint8)

    @classmethod
    def from_masks(cls, masks: dict[str, np.ndarray], source_label_count: int = 5):
        """Build from explicit per-component binary masks (must partition)."""
        stack = np.stack([np.asarray(masks[c], dtype=bool) for c in COMPONENTS])
        if not (stack.sum(axis=0) == 1).all():
            raise ParsingError("masks do not partition the frame")
        return cls(np.argmax(stack, axis=0), source_label_count)

    @property
    def height(self) -> int:
        return self.index_map.shape[0]

    @property
    def width(self) -> int:
        return self.index_map.shape[1]

    @property
    def masks(self) -> dict[str, np.ndarray]:
        return {c: self.index_map == i for i, c in enumerate(COMPONENTS)}

    def mask(self, component: str) -> np.ndarray:
        return self.index_map == COMPONENT_INDEX[component]

    def onehot(self) -> np.ndarray:
        """(5, H, W) float32 stack in COMPONENTS order."""
        return np.stack(
            [(self.index_map == i).astype(np.float32) for i in range(len(COMPONENTS))]
        )

    def preview_rgb(self) -> np.ndarray:
        """Render the partition as a color overlay image for inspection."""
        out = np.zeros((*self.index_map.shape, 3), dtype=np.uint8)
        for i, c in enumerate(COMPONENTS):
            out[self.index_map == i] = PREVIEW_COLORS[c]
        return out


def load_label_mapping(text: str) -> LabelMapping:
    """Parse a plain-text mapping section: one `raw_id: component` per line.

    Blank lines and `#` comments are allowed.
    """
    table: dict[int, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        try:
            raw_id, comp = line.split(":", 1)
            table[int(raw_id.strip())] = comp.strip()
        except ValueError as exc:
            raise ParsingError(f"bad mapping line {lineno}: {line!r}") from exc
    if not table:
        raise ParsingError("empty label mapping")
    return LabelMapping(table)


def load_label_mapping_file(path: str) -> LabelMapping:
    with open(path, "r", encoding="utf-8") as fh:
        return load_label_mapping(fh.read())


def map_labels(raw: np.ndarray, mapping: LabelMapping) -> ComponentMasks:
    """Fold a raw parser label map into the five-component partition."""
    raw = np.asarray(raw)
    if raw.ndim == 3:
        raw = raw[:, :, 0]
    if raw.ndim != 2:
        raise ParsingError(f"label map must be HxW, got {raw.shape}")
    present = np.unique(raw)
    unknown = [int(v) for v in present if int(v) not in mapping.table]
    if unknown:
        raise UnknownLabelError(f"label ids without a mapping entry: {unknown}")
    lut = np.zeros(int(max(mapping.table)) + 1, dtype=np.uint8)
    for raw_id, comp in mapping.table.items():
        lut[raw_id] = COMPONENT_INDEX[comp]
    return ComponentMasks(lut[raw.astype(np.int64)], mapping.label_count)


def fetch_parsing(image: np.ndarray, source: str, timeout: float = 10.0) -> np.ndarray:
    """Obtain a raw label map for an image.

    `source` is either a path to a precomputed single-channel PNG (loaded
    verbatim) or an http(s) endpoint that accepts a POSTed PNG and returns a
    label PNG. A resolution mismatch is resolved by nearest-neighbor resize.
    """
    image = np.asarray(image)
    h, w = image.shape[:2]
    if source.startswith("http://") or source.startswith("https://"):
        raw = _fetch_remote(image, source, timeout)
    else:
        try:
            raw = np.asarray(Image.open(source))
        except OSError as exc:
            raise ParserUnavailableError(f"cannot read label map {source}: {exc}") from exc
    if raw.ndim == 3:
        raw = raw[:, :, 0]
    if raw.shape != (h, w):
        log.warning("label map %s resized %s -> %s", source, raw.shape, (h, w))
        pil = Image.fromarray(raw.astype(np.uint8))
        raw = np.asarray(pil.resize((w, h), Image.NEAREST))
    return raw.astype(np.int64)


def _fetch_remote(image: np.ndarray, endpoint: str, timeout: float) -> np.ndarray:
    import requests

    buf = io.BytesIO()
    Image.fromarray(image.astype(np.uint8)).save(buf, format="PNG")
    try:
        resp = requests.post(
            endpoint,
            data=buf.getvalue(),
            headers={"Content-Type": "image/png"},
            timeout=timeout,
        )
        resp.raise_for_status()
    except requests.RequestException as exc:
        raise ParserUnavailableError(f"parser endpoint {endpoint} failed: {exc}") from exc
    try:
        return np.asarray(Image.open(io.BytesIO(resp.content)))
    except OSError as exc:
        raise ParserUnavailableError(
            f"parser endpoint {endpoint} returned an unreadable payload"
        ) from exc


def downscale_index_map(index_map: np.ndarray, factor: int) -> np.ndarray:
    """Majority-vote downscale of a component-index map.

    Ties go to the higher-priority component (lips > eyes > hair > skin >
    background), making the result deterministic.
    """
    if factor == 1:
        return index_map.copy()
    h, w = index_map.shape
    if h % factor or w % factor:
        raise ParsingError(f"factor {factor} does not divide {h}x{w}")
    cells = index_map.reshape(h // factor, factor, w // factor, factor)
    counts = np.stack(
        [(cells == i).sum(axis=(1, 3)) for i in range(len(COMPONENTS))], axis=0
    ).astype(np.int64)
    score = counts * 8 + _PRIORITY_BY_INDEX[:, None, None]
    return np.argmax(score, axis=0).astype(np.uint8)


def downscale_masks(masks: ComponentMasks, factor: int) -> ComponentMasks:
    """Downscale a partition by an integer factor (majority vote per cell)."""
    return ComponentMasks(
        downscale_index_map(masks.index_map, factor), masks.source_label_count
    )


def load_component_masks(path: str) -> ComponentMasks:
    """Load a component-index PNG (values 0..4) from disk."""
    raw = np.asarray(Image.open(path))
    if raw.ndim == 3:
        raw = raw[:, :, 0]
    return ComponentMasks(raw.astype(np.uint8))


def save_component_masks(masks: ComponentMasks, path: str) -> None:
    Image.fromarray(masks.index_map).save(path)
