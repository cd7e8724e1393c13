"""Command-line entry points: train, colorize, auto, sample, eval, parse,
serve, plus dataset/config scaffolding helpers.

Every failure exits nonzero with a machine-readable error JSON on stderr.
Every image output is accompanied by a representation sidecar and a
provenance sidecar (inputs, checkpoint hash, seeds).
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click
import numpy as np
from PIL import Image

from . import __version__
from .checkpoint import load_bundle
from .config import TrainConfig, config_to_yaml, load_config
from .data import FolderDataset, write_synthetic_dataset
from .parsing import COMPONENTS, fetch_parsing, save_component_masks
from .pipeline import (
    ReferenceAssignment,
    auto_colorize,
    colorize_with_repr,
    load_gray,
    load_rgb,
    masks_from_label_array,
    obtain_masks,
    resolve_assignment,
    sample_colorize,
    save_image_outputs,
)
from .representation import ColorRepresentation

PARSER_ENDPOINT_ENV = "FACEHUE_PARSER_ENDPOINT"


def _fail(exc: BaseException) -> None:
    payload = {"error": {"type": type(exc).__name__, "message": str(exc)}}
    click.echo(json.dumps(payload), err=True)
    sys.exit(1)


def cli_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except Exception as exc:
            _fail(exc)

    return wrapper


@click.group()
@click.version_option(__version__)
def main():
    """Component-aware facial image colorization."""


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--steps", type=int, default=None, help="Cap on optimization steps.")
@cli_errors
def train(config_path, dataset_dir, out_dir, steps):
    """Train the main colorization pipeline."""
    from .training import train as run_train

    config = load_config(config_path) if config_path else TrainConfig()
    dataset = FolderDataset(dataset_dir)
    ckpt = run_train(config, dataset, out_dir=out_dir, max_steps=steps)
    click.echo(json.dumps({"checkpoint": str(Path(out_dir) / "checkpoint.pt"), "step": ckpt.step}))


@main.command("train-flow")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--steps", type=int, default=None)
@cli_errors
def train_flow_cmd(config_path, dataset_dir, ckpt_path, out_path, steps):
    """Train the per-component sampling flows against a main checkpoint."""
    from .noref import train_flow

    config = load_config(config_path) if config_path else load_bundle(ckpt_path).config
    bundle = load_bundle(ckpt_path)
    ckpt = train_flow(config, FolderDataset(dataset_dir), bundle, max_steps=steps)
    ckpt.save(out_path)
    click.echo(json.dumps({"checkpoint": out_path}))


@main.command("train-auto")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True), required=True)
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--steps", type=int, default=None)
@cli_errors
def train_auto_cmd(config_path, dataset_dir, ckpt_path, out_path, steps):
    """Train the automatic predictor head against a main checkpoint."""
    from .noref import train_auto

    config = load_config(config_path) if config_path else load_bundle(ckpt_path).config
    bundle = load_bundle(ckpt_path)
    ckpt = train_auto(config, FolderDataset(dataset_dir), bundle, max_steps=steps)
    ckpt.save(out_path)
    click.echo(json.dumps({"checkpoint": out_path}))


def _ref_options(fn):
    fn = click.option(
        "--ref",
        "ref_all",
        default=None,
        help="Reference for all components: IMG[:PARSING]",
    )(fn)
    for comp in reversed(COMPONENTS):
        fn = click.option(
            f"--ref.{comp}",
            f"ref_{comp}",
            default=None,
            help=f"Reference for {comp}: IMG[:PARSING]",
        )(fn)
    return fn


def _split_ref(value: str) -> tuple[str, str | None]:
    if ":" in value:
        img, parse = value.rsplit(":", 1)
        return img, parse
    return value, None


@main.command()
@click.option("--gray", "gray_path", type=click.Path(exists=True), required=True)
@click.option("--parsing", "parsing_path", type=click.Path(exists=True), default=None)
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@_ref_options
@click.option(
    "--fallback",
    type=click.Choice(["first", "auto", "sample"]),
    default="first",
    help="Policy for components without an assigned reference.",
)
@click.option("--seed", type=int, default=0)
@click.option("--parser-endpoint", envvar=PARSER_ENDPOINT_ENV, default=None)
@cli_errors
def colorize(gray_path, parsing_path, ckpt_path, out_path, fallback, seed,
             parser_endpoint, ref_all, **ref_kwargs):
    """Reference-guided colorization with per-component assignment."""
    bundle = load_bundle(ckpt_path)
    gray_l = load_gray(gray_path)
    masks = obtain_masks(_gray_rgb(gray_l), parsing_path, parser_endpoint)
    refs: dict[str, tuple[str, str | None]] = {}
    if ref_all:
        for comp in COMPONENTS:
            refs[comp] = _split_ref(ref_all)
    for comp in COMPONENTS:
        value = ref_kwargs.get(f"ref_{comp}")
        if value:
            refs[comp] = _split_ref(value)
    assignment = ReferenceAssignment(refs=refs, fallback=fallback, seed=seed)
    w = resolve_assignment(bundle, gray_l, masks, assignment, parser_endpoint)
    result = colorize_with_repr(bundle, gray_l, masks, w)
    save_image_outputs(
        out_path,
        result,
        w,
        provenance={
            "command": "colorize",
            "version": __version__,
            "gray": str(gray_path),
            "parsing": str(parsing_path),
            "parser_endpoint": parser_endpoint,
            "refs": {c: list(v) for c, v in refs.items()},
            "fallback": fallback,
            "seed": seed,
            "checkpoint_sha256": bundle.source_hash,
        },
    )
    click.echo(json.dumps({"out": str(out_path)}))


def _gray_rgb(gray_l: np.ndarray) -> np.ndarray:
    from .colorspace import l_to_gray

    g = l_to_gray(gray_l)
    return np.stack([g, g, g], axis=-1)


@main.command()
@click.option("--gray", "gray_path", type=click.Path(exists=True), required=True)
@click.option("--parsing", "parsing_path", type=click.Path(exists=True), default=None)
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--parser-endpoint", envvar=PARSER_ENDPOINT_ENV, default=None)
@cli_errors
def auto(gray_path, parsing_path, ckpt_path, out_path, parser_endpoint):
    """Automatic colorization (no reference)."""
    bundle = load_bundle(ckpt_path)
    gray_l = load_gray(gray_path)
    masks = obtain_masks(_gray_rgb(gray_l), parsing_path, parser_endpoint)
    result, w = auto_colorize(bundle, gray_l, masks)
    save_image_outputs(
        out_path,
        result,
        w,
        provenance={
            "command": "auto",
            "version": __version__,
            "gray": str(gray_path),
            "parsing": str(parsing_path),
            "checkpoint_sha256": bundle.source_hash,
        },
    )
    click.echo(json.dumps({"out": str(out_path)}))


@main.command()
@click.option("--gray", "gray_path", type=click.Path(exists=True), required=True)
@click.option("--parsing", "parsing_path", type=click.Path(exists=True), default=None)
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--seed", type=int, required=True)
@click.option(
    "--subset",
    default=",".join(COMPONENTS),
    help="Comma-separated components to sample; the rest use the fallback.",
)
@click.option(
    "--fallback-repr",
    "fallback_path",
    type=click.Path(exists=True),
    default=None,
    help="Representation JSON for non-sampled components (default: auto head).",
)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--parser-endpoint", envvar=PARSER_ENDPOINT_ENV, default=None)
@cli_errors
def sample(gray_path, parsing_path, ckpt_path, seed, subset, fallback_path,
           out_path, parser_endpoint):
    """Flow-sampled (diverse) colorization; deterministic per seed."""
    bundle = load_bundle(ckpt_path)
    gray_l = load_gray(gray_path)
    masks = obtain_masks(_gray_rgb(gray_l), parsing_path, parser_endpoint)
    subset_set = {s.strip() for s in subset.split(",") if s.strip()}
    fallback = None
    if fallback_path:
        fallback = ColorRepresentation.from_json(json.loads(Path(fallback_path).read_text()))
    result, w = sample_colorize(bundle, gray_l, masks, seed, subset_set, fallback)
    save_image_outputs(
        out_path,
        result,
        w,
        provenance={
            "command": "sample",
            "version": __version__,
            "gray": str(gray_path),
            "parsing": str(parsing_path),
            "seed": seed,
            "subset": sorted(subset_set),
            "checkpoint_sha256": bundle.source_hash,
        },
    )
    click.echo(json.dumps({"out": str(out_path)}))


@main.command("eval")
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--dataset", "dataset_dir", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--mode", type=click.Choice(["auto", "self", "oracle"]), default=None)
@click.option("--limit", type=int, default=None)
@cli_errors
def eval_cmd(ckpt_path, dataset_dir, out_dir, mode, limit):
    """Score a checkpoint on a dataset; writes metrics.json, per_image.csv,
    and figures/ under --out."""
    from .training import evaluate

    bundle = load_bundle(ckpt_path)
    report = evaluate(bundle, FolderDataset(dataset_dir), mode=mode, out_dir=out_dir, limit=limit)
    click.echo(report.to_json())


@main.command()
@click.option("--image", "image_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--endpoint", envvar=PARSER_ENDPOINT_ENV, default=None)
@click.option("--labels", "labels_path", type=click.Path(exists=True), default=None,
              help="Precomputed raw label map (skips the endpoint).")
@click.option("--mapping", "mapping_path", type=click.Path(exists=True), default=None,
              help="Plain-text label mapping ('raw_id: component' lines); "
                   "defaults to the 19-class CelebAMask table.")
@click.option("--preview", "preview_path", type=click.Path(), default=None)
@cli_errors
def parse(image_path, out_path, endpoint, labels_path, mapping_path, preview_path):
    """Produce the five-component parsing for an image."""
    from .parsing import load_label_mapping_file

    mapping = load_label_mapping_file(mapping_path) if mapping_path else None
    rgb = load_rgb(image_path)
    if labels_path:
        raw = np.asarray(Image.open(labels_path))
        masks = masks_from_label_array(raw, mapping)
    else:
        if not endpoint:
            raise click.ClickException(
                f"no --labels file and no parser endpoint (set {PARSER_ENDPOINT_ENV})"
            )
        masks = masks_from_label_array(fetch_parsing(rgb, endpoint), mapping)
    save_component_masks(masks, out_path)
    if preview_path:
        Image.fromarray(masks.preview_rgb()).save(preview_path)
    click.echo(json.dumps({"out": str(out_path)}))


@main.command()
@click.option("--checkpoint", "ckpt_path", type=click.Path(exists=True), required=True)
@click.option("--port", type=int, default=8000)
@click.option("--host", default="127.0.0.1")
@click.option("--parser-endpoint", envvar=PARSER_ENDPOINT_ENV, default=None)
@cli_errors
def serve(ckpt_path, port, host, parser_endpoint):
    """Run the HTTP inference service."""
    import uvicorn

    from .service import create_app

    app = create_app(checkpoint_path=ckpt_path, parser_endpoint=parser_endpoint)
    uvicorn.run(app, host=host, port=port)


@main.command("init-config")
@click.option("--out", "out_path", type=click.Path(), required=True)
@cli_errors
def init_config(out_path):
    """Write the default training configuration."""
    Path(out_path).write_text(config_to_yaml(TrainConfig()))
    click.echo(json.dumps({"out": str(out_path)}))


@main.command()
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--count", type=int, default=32)
@click.option("--size", type=int, default=64)
@click.option("--seed", type=int, default=0)
@cli_errors
def synth(out_dir, count, size, seed):
    """Write a synthetic face dataset (colored regions with known masks)."""
    write_synthetic_dataset(out_dir, count, size, seed)
    click.echo(json.dumps({"out": str(out_dir), "count": count}))


if __name__ == "__main__":
    main()
