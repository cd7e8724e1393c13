"""Stateless HTTP inference API: parse, encode, colorize, sample, mix.

All payloads are JSON with base64 PNG images; representations travel in
their JSON form so clients can store, swap, and recombine them. Responses
echo a request id, every random draw is seed-surfaced, and the loaded model
snapshot can be hot-swapped atomically between requests.
"""

from __future__ import annotations

import base64
import io
import uuid

import numpy as np
from fastapi import FastAPI, HTTPException, Request
from PIL import Image
from pydantic import BaseModel, Field

from .checkpoint import ModelBundle, load_bundle
from .colorspace import gray_to_l, lab_to_rgb
from .parsing import COMPONENTS, ComponentMasks, ParsingError, fetch_parsing
from .pipeline import (
    colorize_with_repr,
    encode_reference,
    masks_from_label_array,
    sample_colorize,
)
from .representation import ColorRepresentation, RepresentationError, recombine

MAX_IMAGE_BYTES = 8 * 1024 * 1024


class BundleHolder:
    """Atomic-swap holder for the active model snapshot."""

    def __init__(self, bundle: ModelBundle | None = None):
        self.bundle = bundle

    def swap(self, bundle: ModelBundle) -> None:
        self.bundle = bundle

    def require(self) -> ModelBundle:
        if self.bundle is None:
            raise HTTPException(status_code=503, detail="model not loaded")
        return self.bundle


class ReprModel(BaseModel):
    width: int
    vectors: dict[str, list[float]]
    present: dict[str, bool]


class ParseIn(BaseModel):
    image_b64: str
    request_id: str | None = None


class EncodeIn(BaseModel):
    image_b64: str
    masks_b64: str
    request_id: str | None = None


class ColorizeIn(BaseModel):
    gray_b64: str
    masks_b64: str
    representation: ReprModel
    request_id: str | None = None


class SampleIn(BaseModel):
    gray_b64: str
    masks_b64: str
    seed: int
    subset: list[str] = Field(default_factory=lambda: list(COMPONENTS))
    fallback: ReprModel | None = None
    request_id: str | None = None


class MixIn(BaseModel):
    parts: dict[str, ReprModel]
    request_id: str | None = None


def _decode_image(b64: str, mode: str | None = None) -> np.ndarray:
    try:
        raw = base64.b64decode(b64, validate=True)
    except Exception as exc:
        raise HTTPException(status_code=400, detail=f"malformed base64: {exc}") from exc
    if len(raw) > MAX_IMAGE_BYTES:
        raise HTTPException(status_code=413, detail="image payload exceeds 8 MB")
    try:
        img = Image.open(io.BytesIO(raw))
        img.load()
    except Exception as exc:
        raise HTTPException(status_code=400, detail=f"undecodable image: {exc}") from exc
    if mode and img.mode != mode:
        img = img.convert(mode)
    return np.asarray(img)


def _encode_png(arr: np.ndarray) -> str:
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def _decode_masks(b64: str) -> ComponentMasks:
    raw = _decode_image(b64)
    try:
        return masks_from_label_array(raw)
    except ParsingError as exc:
        raise HTTPException(status_code=422, detail=f"invalid masks: {exc}") from exc


def _repr_from_model(m: ReprModel) -> ColorRepresentation:
    try:
        return ColorRepresentation.from_json(m.model_dump())
    except (RepresentationError, KeyError) as exc:
        raise HTTPException(status_code=422, detail=f"invalid representation: {exc}") from exc


def _repr_out(w: ColorRepresentation) -> dict:
    return w.to_json()


def _rid(request_id: str | None) -> str:
    return request_id or uuid.uuid4().hex


def create_app(
    bundle: ModelBundle | None = None,
    checkpoint_path: str | None = None,
    parser_endpoint: str | None = None,
) -> FastAPI:
    if bundle is None and checkpoint_path is not None:
        bundle = load_bundle(checkpoint_path)
    holder = BundleHolder(bundle)
    app = FastAPI(title="facehue inference service", version="0.1.0")
    app.state.holder = holder
    app.state.parser_endpoint = parser_endpoint

    @app.get("/health")
    def health():
        b = holder.bundle
        return {
            "status": "ok" if b is not None else "no-model",
            "checkpoint_sha256": b.source_hash if b else None,
        }

    @app.post("/parse")
    def parse(body: ParseIn, request: Request):
        endpoint = request.app.state.parser_endpoint
        if not endpoint:
            raise HTTPException(status_code=503, detail="no parser endpoint configured")
        rgb = _decode_image(body.image_b64, mode="RGB")
        try:
            masks = masks_from_label_array(fetch_parsing(rgb, endpoint))
        except ParsingError as exc:
            raise HTTPException(status_code=503, detail=str(exc)) from exc
        return {
            "request_id": _rid(body.request_id),
            "labels_b64": _encode_png(masks.index_map),
            "preview_b64": _encode_png(masks.preview_rgb()),
        }

    @app.post("/encode")
    def encode_ep(body: EncodeIn):
        b = holder.require()
        rgb = _decode_image(body.image_b64, mode="RGB")
        masks = _decode_masks(body.masks_b64)
        if (masks.height, masks.width) != rgb.shape[:2]:
            raise HTTPException(status_code=422, detail="image/mask resolution mismatch")
        w = encode_reference(b, rgb, masks)
        return {"request_id": _rid(body.request_id), "representation": _repr_out(w)}

    @app.post("/colorize")
    def colorize_ep(body: ColorizeIn):
        b = holder.require()
        gray = _decode_image(body.gray_b64, mode="L")
        masks = _decode_masks(body.masks_b64)
        if (masks.height, masks.width) != gray.shape[:2]:
            raise HTTPException(status_code=422, detail="gray/mask resolution mismatch")
        w = _repr_from_model(body.representation)
        if w.width != b.config.d_w:
            raise HTTPException(
                status_code=422,
                detail=f"representation width {w.width} != model width {b.config.d_w}",
            )
        result = colorize_with_repr(b, gray_to_l(gray), masks, w)
        return {
            "request_id": _rid(body.request_id),
            "image_b64": _encode_png(lab_to_rgb(result)),
        }

    @app.post("/sample")
    def sample_ep(body: SampleIn):
        b = holder.require()
        gray = _decode_image(body.gray_b64, mode="L")
        masks = _decode_masks(body.masks_b64)
        if (masks.height, masks.width) != gray.shape[:2]:
            raise HTTPException(status_code=422, detail="gray/mask resolution mismatch")
        unknown = set(body.subset) - set(COMPONENTS)
        if unknown:
            raise HTTPException(status_code=422, detail=f"unknown components: {sorted(unknown)}")
        if b.flow_model is None or not b.flow_model.is_trained:
            raise HTTPException(status_code=503, detail="flows not loaded/trained")
        fallback = _repr_from_model(body.fallback) if body.fallback else None
        result, w = sample_colorize(
            b, gray_to_l(gray), masks, body.seed, set(body.subset), fallback
        )
        return {
            "request_id": _rid(body.request_id),
            "seed": body.seed,
            "image_b64": _encode_png(lab_to_rgb(result)),
            "representation": _repr_out(w),
        }

    @app.post("/mix")
    def mix_ep(body: MixIn):
        missing = [c for c in COMPONENTS if c not in body.parts]
        if missing:
            raise HTTPException(status_code=422, detail=f"missing components: {missing}")
        parts = {c: _repr_from_model(m) for c, m in body.parts.items() if c in COMPONENTS}
        mixed = recombine(parts)
        return {"request_id": _rid(body.request_id), "representation": _repr_out(mixed)}

    return app
