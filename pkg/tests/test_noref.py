import math

import numpy as np
import pytest
import torch

from facehue.config import desk_config
from facehue.checkpoint import bundle_from_checkpoint, build_flow_model
from facehue.noref import (
    AutoEncoderHead,
    ComponentFlow,
    FlowModel,
    FlowSingularError,
    UntrainedFlowError,
    auto_predict,
    flow_forward,
    flow_nll,
    sample,
    train_auto,
    train_flow,
)
from facehue.parsing import COMPONENTS
from facehue.representation import ColorRepresentation


def _randomize(flow: ComponentFlow, seed: int, scale: float = 0.4):
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in flow.parameters():
            p.copy_(torch.randn(p.shape, generator=gen) * scale)
    return flow


def test_identity_initialized_flow_is_identity(rng):
    torch.manual_seed(0)
    flow = ComponentFlow(dim=8, ctx_dim=4, blocks=4, hidden=16)
    # couplings are zero-initialized; force the linear blocks to identity too
    with torch.no_grad():
        for lin in flow.linears:
            lin.log_d.zero_()
            lin.lower.zero_()
            lin.upper.zero_()
        for cpl in flow.couplings:
            for p in cpl.net.parameters():
                p.zero_()
    z = rng.normal(size=8).astype(np.float32)
    ctx = torch.zeros(1, 4)
    w, logdet = flow_forward(z, ctx, flow)
    assert np.allclose(w, z, atol=1e-6)
    assert logdet == pytest.approx(0.0, abs=1e-7)


def test_bijection(rng):
    for seed in range(5):
        flow = _randomize(ComponentFlow(dim=8, ctx_dim=4, blocks=4, hidden=16), seed)
        ctx = torch.randn(1, 4, generator=torch.Generator().manual_seed(seed + 50))
        z = torch.randn(1, 8, generator=torch.Generator().manual_seed(seed + 99))
        with torch.no_grad():
            w, ld_f = flow(z, ctx)
            z2, ld_i = flow.inverse(w, ctx)
        assert torch.abs(z2 - z).max() < 1e-5
        assert float(ld_f[0] + ld_i[0]) == pytest.approx(0.0, abs=1e-5)


def test_logdet_matches_fd_jacobian():
    torch.manual_seed(0)
    for seed in range(5):
        flow = _randomize(ComponentFlow(dim=4, ctx_dim=3, blocks=4, hidden=8), seed).double()
        ctx = torch.randn(1, 3, generator=torch.Generator().manual_seed(seed)).double()
        z0 = torch.randn(4, generator=torch.Generator().manual_seed(seed + 7)).double()
        with torch.no_grad():
            _, logdet = flow(z0[None], ctx)
        h = 1e-6
        jac = np.zeros((4, 4))
        with torch.no_grad():
            for j in range(4):
                zp, zm = z0.clone(), z0.clone()
                zp[j] += h
                zm[j] -= h
                fp, _ = flow(zp[None], ctx)
                fm, _ = flow(zm[None], ctx)
                jac[:, j] = ((fp - fm) / (2 * h))[0].numpy()
        fd_logdet = math.log(abs(np.linalg.det(jac)))
        assert float(logdet[0]) == pytest.approx(fd_logdet, rel=1e-4, abs=1e-6)


def test_nll_identity_flow_gaussian_algebra():
    flow = ComponentFlow(dim=4, ctx_dim=3, blocks=4, hidden=8)
    with torch.no_grad():
        for lin in flow.linears:
            lin.log_d.zero_()
            lin.lower.zero_()
            lin.upper.zero_()
    ctx = torch.zeros(1, 3)
    at_mode = flow_nll(np.zeros(4, dtype=np.float32), ctx, flow)
    assert at_mode == pytest.approx(2.0 * math.log(2 * math.pi), abs=1e-5)
    w = np.array([1.0, -2.0, 0.5, 1.5], dtype=np.float32)
    s = float((w**2).sum())
    assert flow_nll(w, ctx, flow) == pytest.approx(
        2.0 * math.log(2 * math.pi) + s / 2.0, abs=1e-4
    )


def test_nll_matches_monte_carlo_density():
    """Histogram oracle on a 2-d toy flow: exp(-nll) should match the
    empirical density of pushed-forward base samples."""
    flow = _randomize(ComponentFlow(dim=2, ctx_dim=2, blocks=2, hidden=8), seed=3, scale=0.3)
    ctx = torch.zeros(1, 2)
    n = 400_000
    z = torch.randn(n, 2, generator=torch.Generator().manual_seed(11))
    with torch.no_grad():
        w, _ = flow(z, ctx.expand(n, 2))
    w = w.numpy()
    # probe near the bulk of the pushed-forward mass
    probe = np.median(w, axis=0)
    half = 0.25
    inside = (np.abs(w - probe) < half).all(axis=1)
    mc_density = inside.mean() / (2 * half) ** 2
    model_density = math.exp(-flow_nll(probe.astype(np.float32), ctx, flow))
    assert model_density == pytest.approx(mc_density, rel=0.15)


def test_singular_linear_block_errors():
    flow = ComponentFlow(dim=4, ctx_dim=2, blocks=1, hidden=8)
    with torch.no_grad():
        flow.linears[0].log_d.fill_(-10.0)  # det = exp(-40) < 1e-12
    with pytest.raises(FlowSingularError):
        flow(torch.zeros(1, 4), torch.zeros(1, 2))


def _trained_flow_model(width=4):
    fm = FlowModel(width=width, ctx_dim=4, blocks=2, hidden=8)
    for c in COMPONENTS:
        _randomize(fm.flows[c], seed=hash(c) % 1000, scale=0.2)
    fm.mark_trained()
    return fm


def test_sample_empty_subset_returns_fallback(synthetic_sample, rng):
    fm = _trained_flow_model()
    fallback = ColorRepresentation(
        vectors={c: rng.normal(size=4).astype(np.float32) for c in COMPONENTS},
        present={c: True for c in COMPONENTS},
    )
    out = sample(synthetic_sample.image.l, synthetic_sample.masks, 7, set(), fallback, fm)
    assert np.array_equal(out.to_array(), fallback.to_array())


def test_sample_seed_determinism(synthetic_sample):
    fm = _trained_flow_model()
    fb = ColorRepresentation.zeros(4)
    a = sample(synthetic_sample.image.l, synthetic_sample.masks, 42, set(COMPONENTS), fb, fm)
    b = sample(synthetic_sample.image.l, synthetic_sample.masks, 42, set(COMPONENTS), fb, fm)
    assert np.array_equal(a.to_array(), b.to_array())
    c = sample(synthetic_sample.image.l, synthetic_sample.masks, 43, set(COMPONENTS), fb, fm)
    assert not np.array_equal(c.to_array(), a.to_array())


def test_sample_component_independence(synthetic_sample):
    """Sampling a larger subset must not change what another component draws."""
    fm = _trained_flow_model()
    fb = ColorRepresentation.zeros(4)
    only_lips = sample(synthetic_sample.image.l, synthetic_sample.masks, 9, {"lips"}, fb, fm)
    lips_and_more = sample(
        synthetic_sample.image.l, synthetic_sample.masks, 9, {"lips", "skin", "hair"}, fb, fm
    )
    assert np.array_equal(only_lips.vectors["lips"], lips_and_more.vectors["lips"])
    assert np.array_equal(only_lips.vectors["eyes"], fb.vectors["eyes"])


def test_sample_untrained_errors(synthetic_sample):
    fm = FlowModel(width=4, ctx_dim=4, blocks=2, hidden=8)
    with pytest.raises(UntrainedFlowError):
        sample(
            synthetic_sample.image.l,
            synthetic_sample.masks,
            1,
            {"lips"},
            ColorRepresentation.zeros(4),
            fm,
        )


def test_auto_predict_deterministic_and_compatible(cfg, models, synthetic_sample):
    torch.manual_seed(0)
    head = AutoEncoderHead(cfg.d_w, cfg.repr_channels)
    w1 = auto_predict(synthetic_sample.image.l, synthetic_sample.masks, head)
    w2 = auto_predict(synthetic_sample.image.l, synthetic_sample.masks, head)
    assert np.array_equal(w1.to_array(), w2.to_array())
    assert all(w1.present.values())
    # feeds generate() without adaptation
    from facehue.colorizer import generate

    out = generate(synthetic_sample.image.l, w1, synthetic_sample.masks, models["colorizer"])
    assert np.array_equal(out.l, synthetic_sample.image.l)


def _mini_main_checkpoint(cfg, synthetic_set):
    from facehue.training import init_train_state, train_step, next_batch, checkpoint_from_state

    state = init_train_state(cfg)
    for _ in range(2):
        state, _ = train_step(next_batch(state, synthetic_set), state)
    return checkpoint_from_state(state)


def test_train_flow_smoke_and_nll_decrease(cfg, synthetic_set):
    from facehue.data import make_synthetic_dataset
    from facehue.noref import _teacher_tensors, flow_nll_batch

    ckpt = _mini_main_checkpoint(cfg, synthetic_set)
    bundle = bundle_from_checkpoint(ckpt)
    held_out = make_synthetic_dataset(6, 64, seed=777)  # disjoint seeds

    def mean_nll(fm):
        samples = [held_out[i] for i in range(len(held_out))]
        l_net, _, mask_stack, vecs, present = _teacher_tensors(samples, bundle.color_encoder)
        with torch.no_grad():
            ctx = fm.context_encoder(l_net, mask_stack)
            return float(flow_nll_batch(fm, vecs, present, ctx))

    fresh = build_flow_model(cfg)
    before = mean_nll(fresh)
    out_ckpt = train_flow(cfg, synthetic_set, bundle, max_steps=40)
    after = mean_nll(bundle.flow_model)
    assert bundle.flow_model.is_trained
    assert after < before
    assert out_ckpt.payload["models"]["flow_model"] is not None


def test_train_auto_regression_improves(cfg, synthetic_set):
    """Teacher-representation l1 of the auto head drops >= 30% in 200 steps."""
    from facehue.noref import _teacher_tensors

    ckpt = _mini_main_checkpoint(cfg, synthetic_set)
    bundle = bundle_from_checkpoint(ckpt)

    def teacher_l1(head):
        samples = [synthetic_set[i] for i in range(len(synthetic_set))]
        l_net, _, mask_stack, teacher_vecs, _ = _teacher_tensors(
            samples, bundle.color_encoder
        )
        with torch.no_grad():
            pred = head(l_net, mask_stack)
        return float((pred - teacher_vecs).abs().mean())

    torch.manual_seed(cfg.seed + 2)
    fresh = AutoEncoderHead(cfg.d_w, cfg.repr_channels)
    before = teacher_l1(fresh)
    train_auto(cfg, synthetic_set, bundle, max_steps=200)
    after = teacher_l1(bundle.auto_head)
    assert after < 0.7 * before, f"auto regression {before:.4f} -> {after:.4f}"


def test_train_auto_freezes_main_network(cfg, synthetic_set):
    ckpt = _mini_main_checkpoint(cfg, synthetic_set)
    bundle = bundle_from_checkpoint(ckpt)
    before = {k: v.clone() for k, v in bundle.colorizer.state_dict().items()}
    out_ckpt = train_auto(cfg, synthetic_set, bundle, max_steps=5)
    after = bundle.colorizer.state_dict()
    for k in before:
        assert torch.equal(before[k], after[k]), f"colorizer weight {k} changed"
    assert out_ckpt.payload["models"]["auto_head"] is not None
    assert bundle.auto_head is not None


def test_aux_defaults_match_paper_settings(cfg):
    assert cfg.lr_aux == pytest.approx(1e-3)
    # the desk config shrinks batches for CPU; the full default keeps 16
    assert desk_config().lr_aux == pytest.approx(1e-3)
    from facehue.config import TrainConfig

    full = TrainConfig()
    assert full.lr_aux == pytest.approx(1e-3)
    assert full.batch_aux == 16
