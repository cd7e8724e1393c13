import numpy as np
import pytest
import torch

from facehue.colorizer import (
    Colorizer,
    ColorizerError,
    GrayEncoder,
    ReprDecoder,
    decode_repr,
    discriminate,
    downscale_mask_stack,
    encode_gray,
    generate,
    masks_low_for,
)
from facehue.colorspace import LabImage
from facehue.parsing import COMPONENTS, ComponentMasks, downscale_masks
from facehue.representation import ColorRepresentation


def _random_repr(rng, width=8, present=True):
    return ColorRepresentation(
        vectors={c: rng.normal(size=width).astype(np.float32) for c in COMPONENTS},
        present={c: present for c in COMPONENTS},
    )


def _masks_low(synthetic_sample):
    return downscale_masks(synthetic_sample.masks, 16)


def test_grouped_jacobian_sparsity(synthetic_sample, rng):
    """Perturbing one component's vector changes (gamma, beta) only on that
    component's low-res support; exact forward-difference check."""
    masks_low = _masks_low(synthetic_sample)
    for trial in range(3):
        torch.manual_seed(trial)
        dec = ReprDecoder(width=8, out_channels=16, hidden=16, grouped=True)
        w = _random_repr(rng)
        base = decode_repr(w, masks_low, dec)
        for comp in ("skin", "lips"):
            w2 = ColorRepresentation(
                vectors={c: w.vectors[c].copy() for c in COMPONENTS},
                present=dict(w.present),
            )
            w2.vectors[comp] = w2.vectors[comp] + rng.normal(size=8).astype(np.float32)
            pert = decode_repr(w2, masks_low, dec)
            dgamma = np.abs(pert.gamma - base.gamma).sum(axis=2)
            dbeta = np.abs(pert.beta - base.beta).sum(axis=2)
            outside = ~masks_low.mask(comp)
            assert dgamma[outside].max() == 0.0
            assert dbeta[outside].max() == 0.0
            inside = masks_low.mask(comp)
            if inside.any():
                assert dgamma[inside].max() > 0.0


def test_default_embedding_path_finite(synthetic_sample):
    torch.manual_seed(0)
    dec = ReprDecoder(width=8, out_channels=16, hidden=16, grouped=True)
    w = ColorRepresentation.zeros(8)  # all absent
    maps = decode_repr(w, _masks_low(synthetic_sample), dec)
    assert np.isfinite(maps.gamma).all()
    assert np.isfinite(maps.beta).all()


def test_uniform_mask_constant_maps(rng):
    torch.manual_seed(0)
    dec = ReprDecoder(width=8, out_channels=16, hidden=16, grouped=True)
    masks_low = ComponentMasks(
        np.full((4, 4), COMPONENTS.index("hair"), dtype=np.uint8)
    )
    maps = decode_repr(_random_repr(rng), masks_low, dec)
    assert np.allclose(maps.gamma, maps.gamma[:1, :1, :], atol=1e-6)
    assert np.allclose(maps.beta, maps.beta[:1, :1, :], atol=1e-6)


def test_ungrouped_variant_runs(synthetic_sample, rng):
    torch.manual_seed(0)
    dec = ReprDecoder(width=8, out_channels=16, hidden=16, grouped=False)
    maps = decode_repr(_random_repr(rng), _masks_low(synthetic_sample), dec)
    assert np.isfinite(maps.gamma).all() and np.isfinite(maps.beta).all()


def test_downscale_mask_stack_matches_numpy(synthetic_sample):
    stack = torch.from_numpy(synthetic_sample.masks.onehot())[None]
    low_t = downscale_mask_stack(stack, 16)[0]
    low_np = downscale_masks(synthetic_sample.masks, 16).onehot()
    assert np.array_equal(low_t.numpy(), low_np)


def test_encode_gray_determinism(synthetic_sample):
    torch.manual_seed(0)
    enc = GrayEncoder((16, 24, 32, 32))
    f1 = encode_gray(synthetic_sample.image.l, enc)
    f2 = encode_gray(synthetic_sample.image.l, enc)
    assert np.array_equal(f1.bottleneck, f2.bottleneck)
    for a, b in zip(f1.skips, f2.skips):
        assert np.array_equal(a, b)


def test_encode_gray_batch_identical_rows(synthetic_sample):
    torch.manual_seed(0)
    enc = GrayEncoder((16, 24, 32, 32))
    l = torch.from_numpy(synthetic_sample.image.l.transpose(2, 0, 1))
    batch = torch.stack([l, l])
    bneck, _ = enc(batch / 50.0 - 1.0)
    assert torch.equal(bneck[0], bneck[1])


def test_encode_gray_zero_input_finite():
    torch.manual_seed(0)
    enc = GrayEncoder((16, 24, 32, 32))
    feats = encode_gray(np.zeros((64, 64, 1), dtype=np.float32), enc)
    assert np.isfinite(feats.bottleneck).all()


def test_encode_gray_shape_error():
    enc = GrayEncoder((16, 24, 32, 32))
    with pytest.raises(ColorizerError):
        enc(torch.zeros(1, 1, 60, 64))


def test_generate_preserves_l(models, synthetic_sample, rng):
    out = generate(
        synthetic_sample.image.l,
        _random_repr(rng),
        synthetic_sample.masks,
        models["colorizer"],
    )
    assert np.array_equal(out.l, synthetic_sample.image.l)
    assert out.ab.min() >= -128.0 and out.ab.max() <= 127.0


def test_generate_shape_mismatch(models, rng):
    with pytest.raises(ColorizerError):
        generate(
            np.zeros((32, 32, 1), dtype=np.float32),
            _random_repr(rng),
            ComponentMasks(np.zeros((64, 64), dtype=np.uint8)),
            models["colorizer"],
        )


def test_discriminator_patch_shape(models, synthetic_sample):
    disc = models["discriminator"]
    logits = discriminate(synthetic_sample.image, disc)
    assert logits.shape == (64 // disc.stride, 64 // disc.stride)


def test_discriminator_deterministic_and_finite(models, rng):
    disc = models["discriminator"]
    extreme = LabImage(
        np.full((64, 64, 1), 100.0, dtype=np.float32),
        np.full((64, 64, 2), 127.0, dtype=np.float32),
    )
    a = discriminate(extreme, disc)
    b = discriminate(extreme, disc)
    assert np.array_equal(a, b)
    assert np.isfinite(a).all()


def test_baseline_topology_without_repr_branch(synthetic_sample):
    torch.manual_seed(0)
    model = Colorizer(width=8, gray_channels=(16, 24, 32, 32), repr_branch=False)
    assert model.repr_decoder is None
    l = torch.from_numpy(synthetic_sample.image.l.transpose(2, 0, 1))[None] / 50.0 - 1.0
    masks = torch.from_numpy(synthetic_sample.masks.onehot())[None]
    ab = model(l, None, None, masks)
    assert ab.shape == (1, 2, 64, 64)
    assert torch.isfinite(ab).all()


def test_modulation_support_within_masks(synthetic_sample, rng):
    """Contribution of each vector stays inside its downscaled mask."""
    torch.manual_seed(1)
    dec = ReprDecoder(width=8, out_channels=16, hidden=16, grouped=True)
    masks_low = masks_low_for(16, synthetic_sample.masks)
    zero = ColorRepresentation.zeros(8)
    base = decode_repr(zero, masks_low, dec)
    for comp in COMPONENTS:
        w = ColorRepresentation.zeros(8)
        w.vectors[comp] = rng.normal(size=8).astype(np.float32)
        w.present[comp] = True
        maps = decode_repr(w, masks_low, dec)
        outside = ~masks_low.mask(comp)
        assert np.abs(maps.gamma - base.gamma).sum(axis=2)[outside].max() == 0.0
