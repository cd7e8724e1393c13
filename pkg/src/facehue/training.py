"""Losses, the main training loop, and corpus evaluation.

Every training image contributes three kinds of supervision, cycled round-
robin across samples: the original image referencing itself, one augmented
copy referencing itself, and the composite target whose representation is
recombined from all five augmented references. The total objective is
adv + alpha*l1 + beta*perceptual + gamma*cycle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .augment import AugmentRanges, make_bundle
from .checkpoint import (
    Checkpoint,
    ModelBundle,
    build_color_encoder,
    build_colorizer,
    build_discriminator,
    make_checkpoint,
)
from .colorspace import AB_SCALE, LabImage, lab_to_rgb, lab_to_rgb_t, normalize_ab, normalize_l
from .colorizer import generate
from .config import ConfigError, TrainConfig
from .data import Sample, resize_sample
from .metrics import MetricsReport, colorfulness, frechet_distance, make_embedding, psnr, ssim
from .noref import auto_predict
from .parsing import COMPONENTS, ComponentMasks
from .representation import ColorRepresentation, encode

SOURCES = ("original", "augmented", "composite")


class TrainingError(RuntimeError):
    pass


class TrainingDivergedError(TrainingError):
    def __init__(self, message: str, dump_path: Path | None = None):
        super().__init__(message)
        self.dump_path = dump_path


# ---------------------------------------------------------------------------
# perceptual feature extractors

class StubExtractor(nn.Module):
    """Identity tap: the perceptual loss reduces to mean-squared RGB distance."""

    def features(self, rgb: torch.Tensor) -> list[torch.Tensor]:
        return [rgb]


class Vgg16Extractor(nn.Module):
    """Frozen VGG16 feature taps at four depths for the perceptual loss."""

    TAPS = (3, 8, 15, 22)

    def __init__(self):
        super().__init__()
        try:
            from torchvision.models import VGG16_Weights, vgg16

            net = vgg16(weights=VGG16_Weights.IMAGENET1K_V1).features
        except Exception as exc:  # download or import failure
            raise ConfigError(f"vgg16 extractor unavailable: {exc}") from exc
        self.slices = nn.ModuleList()
        prev = 0
        for tap in self.TAPS:
            self.slices.append(nn.Sequential(*list(net.children())[prev : tap + 1]))
            prev = tap + 1
        for p in self.parameters():
            p.requires_grad_(False)
        self.register_buffer("mean", torch.tensor([0.485, 0.456, 0.406]).view(1, 3, 1, 1))
        self.register_buffer("std", torch.tensor([0.229, 0.224, 0.225]).view(1, 3, 1, 1))

    def features(self, rgb: torch.Tensor) -> list[torch.Tensor]:
        x = (rgb - self.mean) / self.std
        out = []
        for sl in self.slices:
            x = sl(x)
            out.append(x)
        return out


def make_perceptual_extractor(name: str):
    if name == "none":
        return None
    if name == "stub":
        return StubExtractor()
    if name == "vgg16":
        return Vgg16Extractor()
    raise ConfigError(f"unknown perceptual extractor {name!r}")


# ---------------------------------------------------------------------------
# losses (native units: ab in Lab range, representations unnormalized)

def _l1_ab_t(pred_ab_net: torch.Tensor, target_ab_net: torch.Tensor) -> torch.Tensor:
    """Per-sample mean absolute ab error in native Lab units: (B,)."""
    return (pred_ab_net - target_ab_net).abs().mean(dim=(1, 2, 3)) * AB_SCALE


def loss_l1(pred: LabImage, target: LabImage) -> float:
    """Mean absolute error over the ab planes."""
    if pred.ab.shape != target.ab.shape:
        raise TrainingError(
            f"shape mismatch: {pred.ab.shape} vs {target.ab.shape}"
        )
    return float(np.mean(np.abs(pred.ab - target.ab)))


def _perceptual_t(
    pred_rgb: torch.Tensor, target_rgb: torch.Tensor, extractor
) -> torch.Tensor:
    total = pred_rgb.new_zeros(())
    fp = extractor.features(pred_rgb)
    ft = extractor.features(target_rgb)
    for a, b in zip(fp, ft):
        total = total + F.mse_loss(a, b)
    return total


def loss_perceptual(pred: LabImage, target: LabImage, extractor) -> float:
    """Sum over extractor taps of mean-squared feature distance (RGB inputs)."""
    if extractor is None:
        raise ConfigError("perceptual extractor is not configured")
    lp = torch.from_numpy(pred.l.transpose(2, 0, 1))[None]
    ap = torch.from_numpy(pred.ab.transpose(2, 0, 1))[None]
    lt = torch.from_numpy(target.l.transpose(2, 0, 1))[None]
    at = torch.from_numpy(target.ab.transpose(2, 0, 1))[None]
    with torch.no_grad():
        val = _perceptual_t(lab_to_rgb_t(lp, ap), lab_to_rgb_t(lt, at), extractor)
    return float(val)


def _cycle_t(
    pred_ab_net: torch.Tensor,
    mask_stack: torch.Tensor,
    vecs_in: torch.Tensor,
    present_in: torch.Tensor,
    encoder,
) -> torch.Tensor:
    vecs_out, _ = encoder(pred_ab_net, mask_stack)
    diff = (vecs_out - vecs_in).abs().mean(dim=2)  # (B,5)
    weight = present_in.to(diff.dtype)
    denom = weight.sum()
    if float(denom) == 0.0:
        return diff.new_zeros(())
    return (diff * weight).sum() / denom


def loss_cycle(
    pred: LabImage, masks: ComponentMasks, w_in: ColorRepresentation, encoder
) -> float:
    """Mean absolute gap between the re-extracted representation and the one
    that produced the image, over present components."""
    w_out = encode(pred.ab, masks, encoder)
    diffs = [
        np.abs(w_out.vectors[c] - w_in.vectors[c]).mean()
        for c in COMPONENTS
        if w_in.present[c]
    ]
    return float(np.mean(diffs)) if diffs else 0.0


def loss_adversarial(logits_real, logits_fake, side: str) -> float:
    """Hinge adversarial loss on patch logits."""
    fake = torch.as_tensor(np.asarray(logits_fake, dtype=np.float32))
    if side == "generator":
        return float(-fake.mean())
    if side == "discriminator":
        real = torch.as_tensor(np.asarray(logits_real, dtype=np.float32))
        return float(F.relu(1.0 - real).mean() + F.relu(1.0 + fake).mean())
    raise TrainingError(f"side must be generator|discriminator, got {side!r}")


@dataclass
class LossReport:
    adv: float
    l1: float
    perc: float
    cyc: float
    total: float
    disc: float = 0.0
    per_source: dict = field(default_factory=dict)

    def check_identity(self, config: TrainConfig, tol: float = 1e-6) -> bool:
        expect = (
            self.adv
            + config.loss_alpha * self.l1
            + config.loss_beta * self.perc
            + config.loss_gamma * self.cyc
        )
        return abs(expect - self.total) <= tol

    def to_dict(self) -> dict:
        return {
            "adv": self.adv,
            "l1": self.l1,
            "perc": self.perc,
            "cyc": self.cyc,
            "total": self.total,
            "disc": self.disc,
            "per_source": self.per_source,
        }


# ---------------------------------------------------------------------------
# training state

@dataclass
class TrainState:
    config: TrainConfig
    color_encoder: nn.Module | None
    colorizer: nn.Module
    discriminator: nn.Module
    opt_g: torch.optim.Optimizer
    opt_d: torch.optim.Optimizer
    extractor: nn.Module | None
    rng: np.random.Generator
    step: int = 0
    sample_counter: int = 0
    order: list[int] = field(default_factory=list)
    cursor: int = 0
    run_dir: Path | None = None

    def aug_ranges(self) -> AugmentRanges:
        c = self.config
        return AugmentRanges(
            hue=c.aug_hue,
            chroma=c.aug_chroma,
            rotation=c.aug_rotation,
            scale=c.aug_scale,
            translation=c.aug_translation,
            flip_prob=c.aug_flip_prob,
        )


def init_train_state(config: TrainConfig, run_dir: str | Path | None = None) -> TrainState:
    torch.manual_seed(config.seed)
    color_encoder = build_color_encoder(config) if config.repr_branch else None
    colorizer = build_colorizer(config)
    discriminator = build_discriminator(config)
    g_params = list(colorizer.parameters())
    if color_encoder is not None:
        g_params += list(color_encoder.parameters())
    betas = (config.adam_beta1, config.adam_beta2)
    opt_g = torch.optim.Adam(g_params, lr=config.lr_main, betas=betas)
    opt_d = torch.optim.Adam(discriminator.parameters(), lr=config.lr_main, betas=betas)
    return TrainState(
        config=config,
        color_encoder=color_encoder,
        colorizer=colorizer,
        discriminator=discriminator,
        opt_g=opt_g,
        opt_d=opt_d,
        extractor=make_perceptual_extractor(config.perceptual_extractor),
        rng=np.random.default_rng(config.seed),
        run_dir=Path(run_dir) if run_dir else None,
    )


def _sample_to_tensors(img: LabImage) -> tuple[torch.Tensor, torch.Tensor]:
    l = torch.from_numpy(img.l.transpose(2, 0, 1))
    ab = torch.from_numpy(np.ascontiguousarray(img.ab.transpose(2, 0, 1)))
    return normalize_l(l), normalize_ab(ab)


def _assemble_batch(batch: list[Sample], state: TrainState):
    """Expand samples into supervision items and encoder jobs (round-robin)."""
    cfg = state.config
    items = []  # per-sample dicts
    jobs_ab, jobs_mask = [], []
    for sample in batch:
        source = SOURCES[state.sample_counter % len(SOURCES)]
        aug_index = (state.sample_counter // len(SOURCES)) % 5
        state.sample_counter += 1
        seed = int(state.rng.integers(0, 2**62))
        bundle = (
            make_bundle(
                sample.image,
                sample.masks,
                seed,
                ranges=state.aug_ranges(),
                chromatic=cfg.chromatic_aug,
                spatial=cfg.spatial_aug,
            )
            if source != "original"
            else None
        )
        if source == "original":
            gray_img, target_img, gen_masks = sample.image, sample.image, sample.masks
            job_ids = [len(jobs_ab)]
            jobs_ab.append(sample.image.ab)
            jobs_mask.append(sample.masks)
        elif source == "augmented":
            ref_img, ref_masks = bundle.refs[aug_index]
            gray_img, target_img, gen_masks = ref_img, ref_img, ref_masks
            job_ids = [len(jobs_ab)]
            jobs_ab.append(ref_img.ab)
            jobs_mask.append(ref_masks)
        else:  # composite
            gray_img, target_img, gen_masks = sample.image, bundle.composite, sample.masks
            job_ids = []
            for ref_img, ref_masks in bundle.refs:
                job_ids.append(len(jobs_ab))
                jobs_ab.append(ref_img.ab)
                jobs_mask.append(ref_masks)
        l_net, _ = _sample_to_tensors(gray_img)
        _, target_ab_net = _sample_to_tensors(target_img)
        items.append(
            {
                "source": source,
                "l_net": l_net,
                "target_ab_net": target_ab_net,
                "mask_stack": torch.from_numpy(gen_masks.onehot()),
                "job_ids": job_ids,
            }
        )
    return items, jobs_ab, jobs_mask


def _encode_jobs(state: TrainState, jobs_ab, jobs_mask):
    ab = torch.stack(
        [
            normalize_ab(torch.from_numpy(np.ascontiguousarray(a.transpose(2, 0, 1))))
            for a in jobs_ab
        ]
    )
    masks = torch.stack([torch.from_numpy(m.onehot()) for m in jobs_mask])
    return state.color_encoder(ab, masks)


def _compose_representation(item, vecs_all, present_all):
    ids = item["job_ids"]
    if len(ids) == 1:
        return vecs_all[ids[0]], present_all[ids[0]]
    # composite: component i comes from reference i
    vecs = torch.stack([vecs_all[ids[i], i] for i in range(len(COMPONENTS))])
    present = torch.stack([present_all[ids[i], i] for i in range(len(COMPONENTS))])
    return vecs, present


def train_step(batch: list[Sample], state: TrainState) -> tuple[TrainState, LossReport]:
    """One generator update plus one discriminator update."""
    cfg = state.config
    state.colorizer.train()
    state.discriminator.train()
    if state.color_encoder is not None:
        state.color_encoder.train()

    items, jobs_ab, jobs_mask = _assemble_batch(batch, state)
    l_net = torch.stack([it["l_net"] for it in items])
    target_ab = torch.stack([it["target_ab_net"] for it in items])
    mask_stack = torch.stack([it["mask_stack"] for it in items])

    if state.color_encoder is not None:
        vecs_all, present_all = _encode_jobs(state, jobs_ab, jobs_mask)
        pairs = [_compose_representation(it, vecs_all, present_all) for it in items]
        vecs = torch.stack([p[0] for p in pairs])
        present = torch.stack([p[1] for p in pairs])
    else:
        vecs, present = None, None

    pred_ab = state.colorizer(l_net, vecs, present, mask_stack)

    per_sample_l1 = _l1_ab_t(pred_ab, target_ab)
    l1_t = per_sample_l1.mean()
    adv_t = -state.discriminator(l_net, pred_ab).mean()
    if state.extractor is not None and cfg.loss_beta > 0:
        l_native = (l_net + 1.0) * 50.0
        perc_t = _perceptual_t(
            lab_to_rgb_t(l_native, pred_ab * AB_SCALE),
            lab_to_rgb_t(l_native, target_ab * AB_SCALE),
            state.extractor,
        )
    else:
        perc_t = pred_ab.new_zeros(())
    if state.color_encoder is not None and cfg.loss_gamma > 0:
        cyc_t = _cycle_t(pred_ab, mask_stack, vecs, present, state.color_encoder)
    else:
        cyc_t = pred_ab.new_zeros(())

    total_t = (
        adv_t + cfg.loss_alpha * l1_t + cfg.loss_beta * perc_t + cfg.loss_gamma * cyc_t
    )
    state.opt_g.zero_grad()
    total_t.backward()
    state.opt_g.step()

    real_logits = state.discriminator(l_net, target_ab)
    fake_logits = state.discriminator(l_net, pred_ab.detach())
    d_t = F.relu(1.0 - real_logits).mean() + F.relu(1.0 + fake_logits).mean()
    state.opt_d.zero_grad()
    d_t.backward()
    state.opt_d.step()

    per_source: dict[str, dict] = {}
    for it, s_l1 in zip(items, per_sample_l1.detach().tolist()):
        entry = per_source.setdefault(it["source"], {"l1": 0.0, "count": 0})
        entry["l1"] += s_l1
        entry["count"] += 1
    for entry in per_source.values():
        entry["l1"] /= entry["count"]

    adv, l1, perc, cyc = (
        float(adv_t.detach()),
        float(l1_t.detach()),
        float(perc_t.detach()),
        float(cyc_t.detach()),
    )
    report = LossReport(
        adv=adv,
        l1=l1,
        perc=perc,
        cyc=cyc,
        total=adv + cfg.loss_alpha * l1 + cfg.loss_beta * perc + cfg.loss_gamma * cyc,
        disc=float(d_t.detach()),
        per_source=per_source,
    )
    state.step += 1

    if not all(map(math.isfinite, (report.adv, report.l1, report.perc, report.cyc, report.disc))):
        dump = {
            "step": state.step,
            "losses": report.to_dict(),
            "sources": [it["source"] for it in items],
        }
        dump_dir = state.run_dir or Path.cwd()
        dump_path = Path(dump_dir) / f"diverged_step{state.step}.json"
        dump_path.write_text(json.dumps(dump, indent=2))
        raise TrainingDivergedError(
            f"non-finite loss at step {state.step}", dump_path
        )
    return state, report


def next_batch(state: TrainState, dataset) -> list[Sample]:
    """Shuffled epoch batching, resumable from checkpointed order/cursor."""
    n = len(dataset)
    size = state.config.batch_main
    batch = []
    while len(batch) < size:
        if state.cursor >= len(state.order):
            state.order = state.rng.permutation(n).tolist()
            state.cursor = 0
        batch.append(dataset[state.order[state.cursor]])
        state.cursor += 1
    return [resize_sample(s, state.config.image_size) for s in batch]


def checkpoint_from_state(state: TrainState) -> Checkpoint:
    models = {
        "color_encoder": state.color_encoder,
        "colorizer": state.colorizer,
        "discriminator": state.discriminator,
        "auto_head": None,
        "flow_model": None,
    }
    rng = {
        "numpy": state.rng.bit_generator.state,
        "torch": torch.get_rng_state(),
        "order": list(state.order),
        "cursor": state.cursor,
        "sample_counter": state.sample_counter,
    }
    return make_checkpoint(
        state.config,
        state.step,
        models,
        optimizers={"g": state.opt_g, "d": state.opt_d},
        rng=rng,
    )


def restore_train_state(ckpt: Checkpoint, run_dir: str | Path | None = None) -> TrainState:
    config = ckpt.config
    state = init_train_state(config, run_dir=run_dir)
    models = ckpt.payload["models"]
    if state.color_encoder is not None:
        state.color_encoder.load_state_dict(models["color_encoder"])
    state.colorizer.load_state_dict(models["colorizer"])
    state.discriminator.load_state_dict(models["discriminator"])
    opts = ckpt.payload.get("optimizers", {})
    if "g" in opts:
        state.opt_g.load_state_dict(opts["g"])
    if "d" in opts:
        state.opt_d.load_state_dict(opts["d"])
    rng = ckpt.payload.get("rng", {})
    if "numpy" in rng:
        state.rng.bit_generator.state = rng["numpy"]
    if "torch" in rng:
        torch.set_rng_state(rng["torch"].to(torch.uint8))
    state.order = list(rng.get("order", []))
    state.cursor = int(rng.get("cursor", 0))
    state.sample_counter = int(rng.get("sample_counter", 0))
    state.step = ckpt.step
    return state


def train(
    config: TrainConfig,
    dataset,
    out_dir: str | Path | None = None,
    max_steps: int | None = None,
    log_every: int = 10,
    state: TrainState | None = None,
) -> Checkpoint:
    """Run the training loop and return (and optionally write) a checkpoint."""
    if state is None:
        state = init_train_state(config, run_dir=out_dir)
    out = Path(out_dir) if out_dir else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    steps_per_epoch = max(1, math.ceil(len(dataset) / config.batch_main))
    total = max_steps if max_steps is not None else config.epochs * steps_per_epoch
    rows = []
    log_fh = open(out / "log.jsonl", "a", encoding="utf-8") if out else None
    try:
        while state.step < total:
            batch = next_batch(state, dataset)
            state, report = train_step(batch, state)
            row = {"step": state.step, **report.to_dict()}
            rows.append(row)
            if log_fh:
                log_fh.write(json.dumps(row) + "\n")
            if log_every and state.step % log_every == 0 and log_fh:
                log_fh.flush()
    finally:
        if log_fh:
            log_fh.close()
    ckpt = checkpoint_from_state(state)
    if out:
        ckpt.save(out / "checkpoint.pt")
        from .report import save_loss_curves

        save_loss_curves(rows, out / "figures" / "loss_curves.png")
    return ckpt


# ---------------------------------------------------------------------------
# evaluation

def _predict_for_eval(bundle: ModelBundle, sample: Sample, mode: str) -> LabImage:
    if mode == "oracle":
        return sample.image
    if mode == "auto":
        if bundle.auto_head is None:
            raise TrainingError("checkpoint has no automatic predictor head")
        w = auto_predict(sample.image.l, sample.masks, bundle.auto_head)
    elif mode == "self":
        w = encode(sample.image.ab, sample.masks, bundle.color_encoder)
    else:
        raise TrainingError(f"unknown eval mode {mode!r}")
    return generate(sample.image.l, w, sample.masks, bundle.colorizer)


def evaluate(
    bundle: ModelBundle,
    dataset,
    mode: str | None = None,
    out_dir: str | Path | None = None,
    limit: int | None = None,
) -> MetricsReport:
    """Colorize a dataset and score it: FID, CF, PSNR, SSIM.

    mode: 'auto' (automatic predictor), 'self' (ground truth as its own
    reference), or 'oracle' (score ground truth against itself; harness
    sanity check). Defaults to 'auto' when the head exists, else 'self'.
    """
    if mode is None:
        mode = "auto" if bundle.auto_head is not None else "self"
    n = len(dataset) if limit is None else min(limit, len(dataset))
    size = bundle.config.image_size
    rows = []
    preds_rgb, reals_rgb = [], []
    for i in range(n):
        sample = resize_sample(dataset[i], size)
        pred = _predict_for_eval(bundle, sample, mode)
        pred_rgb = lab_to_rgb(pred)
        real_rgb = lab_to_rgb(sample.image)
        preds_rgb.append(pred_rgb)
        reals_rgb.append(real_rgb)
        rows.append(
            {
                "stem": sample.stem,
                "psnr": psnr(pred_rgb, real_rgb),
                "ssim": ssim(pred_rgb, real_rgb),
                "cf": colorfulness(pred_rgb),
                "cf_real": colorfulness(real_rgb),
            }
        )
    embed = make_embedding(bundle.config.fid_embedding)
    if n >= 2:
        fid = frechet_distance(embed(reals_rgb), embed(preds_rgb))
    else:
        fid = None  # a one-image corpus has no Gaussian fit
    report = MetricsReport(
        fid=fid,
        cf=float(np.mean([r["cf"] for r in rows])),
        psnr=float(np.mean([r["psnr"] for r in rows])),
        ssim=float(np.mean([r["ssim"] for r in rows])),
        n_images=n,
    )
    if out_dir:
        from .report import write_eval_outputs

        write_eval_outputs(Path(out_dir), report, rows, preds_rgb, reals_rgb)
    return report
