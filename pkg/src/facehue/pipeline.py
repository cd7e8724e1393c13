"""High-level inference paths shared by the CLI and the HTTP service:
loading inputs, resolving per-component reference assignments, and running
the three colorization modes against a model bundle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .checkpoint import ModelBundle
from .colorspace import LabImage, gray_to_l, lab_to_rgb, rgb_to_lab
from .colorizer import generate
from .data import resize_sample, Sample
from .noref import auto_predict, sample as flow_sample
from .parsing import (
    CELEBAMASK_19,
    COMPONENTS,
    ComponentMasks,
    ParsingError,
    fetch_parsing,
    map_labels,
)
from .representation import ColorRepresentation, encode, recombine


class PipelineError(RuntimeError):
    pass


class MissingParsingError(PipelineError):
    pass


@dataclass
class ReferenceAssignment:
    """component -> (reference image path, optional parsing map path), plus a
    policy for components without an explicit reference."""

    refs: dict[str, tuple[str, str | None]] = field(default_factory=dict)
    fallback: str = "first"  # first | auto | sample
    seed: int = 0

    def validate(self) -> None:
        unknown = set(self.refs) - set(COMPONENTS)
        if unknown:
            raise PipelineError(f"unknown components in assignment: {sorted(unknown)}")
        if self.fallback not in ("first", "auto", "sample"):
            raise PipelineError(f"unknown fallback policy {self.fallback!r}")
        if not self.refs and self.fallback == "first":
            raise PipelineError("no references assigned and fallback policy is 'first'")


def load_gray(path: str | Path) -> np.ndarray:
    """Load a grayscale PNG as an L plane (single-channel interpreted as L)."""
    img = Image.open(path)
    if img.mode != "L":
        img = img.convert("L")
    return gray_to_l(np.asarray(img))


def load_rgb(path: str | Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def masks_from_label_array(raw: np.ndarray, mapping=None) -> ComponentMasks:
    """Component-index maps (values <= 4) pass through; anything else is
    folded through `mapping` (default: the CelebAMask-19 table)."""
    raw = np.asarray(raw)
    if raw.ndim == 3:
        raw = raw[:, :, 0]
    if mapping is None and raw.max(initial=0) < len(COMPONENTS):
        return ComponentMasks(raw.astype(np.uint8))
    return map_labels(raw, mapping or CELEBAMASK_19)


def obtain_masks(
    image_rgb: np.ndarray | None,
    parsing_path: str | Path | None,
    endpoint: str | None,
) -> ComponentMasks:
    """Resolve masks from a precomputed map or a parser endpoint.

    No silent fallback: failing both paths is an error.
    """
    if parsing_path is not None:
        raw = np.asarray(Image.open(parsing_path))
        return masks_from_label_array(raw)
    if endpoint:
        if image_rgb is None:
            raise MissingParsingError("parser endpoint requires the image payload")
        raw = fetch_parsing(image_rgb, endpoint)
        return masks_from_label_array(raw)
    raise MissingParsingError(
        "no parsing map provided and no parser endpoint configured"
    )


def encode_reference(
    bundle: ModelBundle,
    rgb: np.ndarray,
    masks: ComponentMasks,
) -> ColorRepresentation:
    """Encode a reference image (resized to the model size) into a representation."""
    lab = rgb_to_lab(rgb)
    fitted = resize_sample(Sample(lab, masks, "ref"), bundle.config.image_size)
    return encode(fitted.image.ab, fitted.masks, bundle.color_encoder)


def resolve_assignment(
    bundle: ModelBundle,
    gray_l: np.ndarray,
    gray_masks: ComponentMasks,
    assignment: ReferenceAssignment,
    parser_endpoint: str | None = None,
) -> ColorRepresentation:
    """Turn a reference assignment into one recombined representation."""
    assignment.validate()
    # encode each distinct reference once
    by_path: dict[str, ColorRepresentation] = {}
    comp_repr: dict[str, ColorRepresentation] = {}
    for comp, (img_path, parse_path) in assignment.refs.items():
        key = f"{img_path}::{parse_path}"
        if key not in by_path:
            rgb = load_rgb(img_path)
            masks = obtain_masks(rgb, parse_path, parser_endpoint)
            if (masks.height, masks.width) != rgb.shape[:2]:
                raise ParsingError("reference parsing resolution mismatch")
            by_path[key] = encode_reference(bundle, rgb, masks)
        comp_repr[comp] = by_path[key]

    missing = [c for c in COMPONENTS if c not in comp_repr]
    if missing:
        fb = _fallback_representation(bundle, gray_l, gray_masks, assignment, comp_repr)
        for c in missing:
            comp_repr[c] = fb
    return recombine(comp_repr)


def _fallback_representation(
    bundle: ModelBundle,
    gray_l: np.ndarray,
    gray_masks: ComponentMasks,
    assignment: ReferenceAssignment,
    comp_repr: dict[str, ColorRepresentation],
) -> ColorRepresentation:
    if assignment.fallback == "first":
        for c in COMPONENTS:
            if c in comp_repr:
                return comp_repr[c]
        raise PipelineError("fallback 'first' needs at least one assigned reference")
    if assignment.fallback == "auto":
        if bundle.auto_head is None:
            raise PipelineError("fallback 'auto' needs a trained automatic head")
        return auto_predict(gray_l, gray_masks, bundle.auto_head)
    # sample
    if bundle.flow_model is None:
        raise PipelineError("fallback 'sample' needs trained flows")
    zero = ColorRepresentation.zeros(bundle.config.d_w)
    return flow_sample(
        gray_l, gray_masks, assignment.seed, set(COMPONENTS), zero, bundle.flow_model
    )


def colorize_with_repr(
    bundle: ModelBundle,
    gray_l: np.ndarray,
    masks: ComponentMasks,
    w: ColorRepresentation,
) -> LabImage:
    fitted = _fit_gray(bundle, gray_l, masks)
    return generate(fitted.image.l, w, fitted.masks, bundle.colorizer)


def auto_colorize(
    bundle: ModelBundle, gray_l: np.ndarray, masks: ComponentMasks
) -> tuple[LabImage, ColorRepresentation]:
    if bundle.auto_head is None:
        raise PipelineError("checkpoint has no automatic predictor head")
    fitted = _fit_gray(bundle, gray_l, masks)
    w = auto_predict(fitted.image.l, fitted.masks, bundle.auto_head)
    return generate(fitted.image.l, w, fitted.masks, bundle.colorizer), w


def sample_colorize(
    bundle: ModelBundle,
    gray_l: np.ndarray,
    masks: ComponentMasks,
    seed: int,
    subset: set[str],
    fallback: ColorRepresentation | None = None,
) -> tuple[LabImage, ColorRepresentation]:
    if bundle.flow_model is None:
        raise PipelineError("checkpoint has no trained flows")
    fitted = _fit_gray(bundle, gray_l, masks)
    if fallback is None:
        if bundle.auto_head is not None:
            fallback = auto_predict(fitted.image.l, fitted.masks, bundle.auto_head)
        else:
            fallback = ColorRepresentation.zeros(bundle.config.d_w)
    w = flow_sample(fitted.image.l, fitted.masks, seed, subset, fallback, bundle.flow_model)
    return generate(fitted.image.l, w, fitted.masks, bundle.colorizer), w


def _fit_gray(bundle: ModelBundle, gray_l: np.ndarray, masks: ComponentMasks) -> Sample:
    gray_l = np.asarray(gray_l, dtype=np.float32)
    if gray_l.ndim == 2:
        gray_l = gray_l[:, :, None]
    if gray_l.shape[:2] != (masks.height, masks.width):
        raise PipelineError(
            f"gray/mask shapes differ: {gray_l.shape[:2]} vs {(masks.height, masks.width)}"
        )
    ab = np.zeros((*gray_l.shape[:2], 2), dtype=np.float32)
    return resize_sample(
        Sample(LabImage(gray_l, ab), masks, "input"), bundle.config.image_size
    )


def save_image_outputs(
    out_path: str | Path,
    image: LabImage,
    w: ColorRepresentation | None,
    provenance: dict,
) -> Path:
    """Write the PNG plus its representation and provenance sidecars."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(lab_to_rgb(image)).save(out_path)
    if w is not None:
        sidecar = out_path.with_suffix(out_path.suffix + ".repr.json")
        sidecar.write_text(json.dumps(w.to_json(), indent=2))
    prov = out_path.with_suffix(out_path.suffix + ".provenance.json")
    prov.write_text(json.dumps(provenance, indent=2, sort_keys=True))
    return out_path
