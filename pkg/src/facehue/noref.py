"""No-reference color prediction: per-component normalizing flows for diverse
sampling and a deterministic regressor for automatic colorization.

Each facial component gets its own flow over its color vector; a flow is a
stack of LU-parameterized invertible linear maps interleaved with affine
couplings conditioned on a context vector pooled from the grayscale image and
its masks. Log-determinants are exact (sum of linear log-diagonals plus
coupling scale sums), which makes likelihoods exact as well.
"""

from __future__ import annotations

import math

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .colorspace import AB_SCALE, normalize_l
from .parsing import COMPONENTS, ComponentMasks
from .representation import (
    ColorRepresentation,
    RepresentationError,
    representation_from_tensors,
)

_DET_FLOOR = 1e-12


class FlowError(RuntimeError):
    pass


class FlowSingularError(FlowError):
    pass


class UntrainedFlowError(FlowError):
    pass


class InvertibleLinear(nn.Module):
    """LU-parameterized linear bijection with O(d) log-determinant.

    W = L (diag(exp(log_d)) + U) with unit lower-triangular L and strictly
    upper-triangular U; no pivoting, identity at init.
    """

    def __init__(self, dim: int):
        super().__init__()
        self.dim = dim
        self.log_d = nn.Parameter(torch.zeros(dim))
        self.lower = nn.Parameter(torch.zeros(dim, dim))
        self.upper = nn.Parameter(torch.zeros(dim, dim))
        self.register_buffer("mask_l", torch.tril(torch.ones(dim, dim), -1))
        self.register_buffer("mask_u", torch.triu(torch.ones(dim, dim), 1))

    def _factors(self) -> tuple[torch.Tensor, torch.Tensor]:
        eye = torch.eye(self.dim, dtype=self.log_d.dtype, device=self.log_d.device)
        l = eye + self.lower * self.mask_l
        u = torch.diag(torch.exp(self.log_d)) + self.upper * self.mask_u
        return l, u

    def _check(self) -> None:
        if float(self.log_d.detach().sum()) < math.log(_DET_FLOOR):
            raise FlowSingularError(
                f"linear block determinant below {_DET_FLOOR:g}"
            )

    def logdet(self) -> torch.Tensor:
        return self.log_d.sum()

    def forward(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self._check()
        l, u = self._factors()
        return z @ (l @ u).T, self.logdet().expand(z.shape[0])

    def inverse(self, y: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        self._check()
        l, u = self._factors()
        mid = torch.linalg.solve_triangular(l, y.T, upper=False, unitriangular=True)
        z = torch.linalg.solve_triangular(u, mid, upper=True)
        return z.T, (-self.logdet()).expand(y.shape[0])


class AffineCoupling(nn.Module):
    """Half-split affine coupling conditioned on a context vector.

    The final layer is zero-initialized so the block starts as the identity;
    scales are tanh-bounded for numerical invertibility.
    """

    def __init__(
        self, dim: int, ctx_dim: int, hidden: int = 64, swap: bool = False,
        s_cap: float = 2.0,
    ):
        super().__init__()
        self.dim = dim
        self.d1 = dim // 2
        self.d2 = dim - self.d1
        self.swap = swap
        self.s_cap = s_cap
        self.net = nn.Sequential(
            nn.Linear(self.d1 + ctx_dim, hidden),
            nn.Tanh(),
            nn.Linear(hidden, hidden),
            nn.Tanh(),
            nn.Linear(hidden, 2 * self.d2),
        )
        nn.init.zeros_(self.net[-1].weight)
        nn.init.zeros_(self.net[-1].bias)

    def _split(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if self.swap:
            return z[:, self.d2 :], z[:, : self.d2]
        return z[:, : self.d1], z[:, self.d1 :]

    def _merge(self, za: torch.Tensor, zb: torch.Tensor) -> torch.Tensor:
        if self.swap:
            return torch.cat([zb, za], dim=1)
        return torch.cat([za, zb], dim=1)

    def _scale_shift(self, za: torch.Tensor, ctx: torch.Tensor):
        h = self.net(torch.cat([za, ctx], dim=1))
        s_raw, t = h.chunk(2, dim=1)
        s = self.s_cap * torch.tanh(s_raw / self.s_cap)
        return s, t

    def forward(self, z, ctx) -> tuple[torch.Tensor, torch.Tensor]:
        za, zb = self._split(z)
        s, t = self._scale_shift(za, ctx)
        return self._merge(za, zb * torch.exp(s) + t), s.sum(dim=1)

    def inverse(self, y, ctx) -> tuple[torch.Tensor, torch.Tensor]:
        ya, yb = self._split(y)
        s, t = self._scale_shift(ya, ctx)
        return self._merge(ya, (yb - t) * torch.exp(-s)), -s.sum(dim=1)


class ComponentFlow(nn.Module):
    """K blocks of (invertible linear, conditional coupling) for one component.

    Computation runs in float64 regardless of the input dtype: the vectors
    are tiny, and double precision is what keeps inverse(forward(z)) within
    the 1e-5 bijectivity contract under arbitrary trained weights.
    """

    def __init__(self, dim: int, ctx_dim: int, blocks: int = 4, hidden: int = 64):
        super().__init__()
        self.dim = dim
        self.linears = nn.ModuleList(InvertibleLinear(dim) for _ in range(blocks))
        self.couplings = nn.ModuleList(
            AffineCoupling(dim, ctx_dim, hidden, swap=k % 2 == 1)
            for k in range(blocks)
        )
        self.double()

    @property
    def dtype(self) -> torch.dtype:
        return self.linears[0].log_d.dtype

    def forward(self, z: torch.Tensor, ctx: torch.Tensor):
        z = z.to(self.dtype)
        ctx = ctx.to(self.dtype)
        logdet = z.new_zeros(z.shape[0])
        for linear, coupling in zip(self.linears, self.couplings):
            z, ld = linear(z)
            logdet = logdet + ld
            z, ld = coupling(z, ctx)
            logdet = logdet + ld
        return z, logdet

    def inverse(self, w: torch.Tensor, ctx: torch.Tensor):
        w = w.to(self.dtype)
        ctx = ctx.to(self.dtype)
        logdet = w.new_zeros(w.shape[0])
        for linear, coupling in zip(reversed(self.linears), reversed(self.couplings)):
            w, ld = coupling.inverse(w, ctx)
            logdet = logdet + ld
            w, ld = linear.inverse(w)
            logdet = logdet + ld
        return w, logdet

    def nll(self, w: torch.Tensor, ctx: torch.Tensor) -> torch.Tensor:
        z, logdet_inv = self.inverse(w, ctx)
        return (
            0.5 * (z**2).sum(dim=1)
            + 0.5 * self.dim * math.log(2 * math.pi)
            - logdet_inv
        )


class ContextEncoder(nn.Module):
    """Pools (luminance, masks) into a context vector for the couplings."""

    def __init__(self, ctx_dim: int = 64):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv2d(1 + len(COMPONENTS), 32, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
            nn.Conv2d(32, 64, 3, stride=2, padding=1),
            nn.LeakyReLU(0.2),
        )
        self.proj = nn.Linear(64, ctx_dim)

    def forward(self, l_net: torch.Tensor, mask_stack: torch.Tensor) -> torch.Tensor:
        x = self.convs(torch.cat([l_net, mask_stack], dim=1))
        return self.proj(x.mean(dim=(2, 3)))


class FlowModel(nn.Module):
    """Five independent per-component flows plus the shared context encoder."""

    def __init__(
        self, width: int, ctx_dim: int = 64, blocks: int = 4, hidden: int = 64
    ):
        super().__init__()
        self.width = width
        self.context_encoder = ContextEncoder(ctx_dim)
        self.flows = nn.ModuleDict(
            {c: ComponentFlow(width, ctx_dim, blocks, hidden) for c in COMPONENTS}
        )
        self.register_buffer("trained_flag", torch.zeros(1, dtype=torch.uint8))

    @property
    def is_trained(self) -> bool:
        return bool(self.trained_flag.item())

    def mark_trained(self) -> None:
        self.trained_flag.fill_(1)

    def context(self, l: np.ndarray, masks: ComponentMasks) -> torch.Tensor:
        l = np.asarray(l, dtype=np.float32)
        if l.ndim == 2:
            l = l[:, :, None]
        l_t = torch.from_numpy(l.transpose(2, 0, 1))[None]
        mask_t = torch.from_numpy(masks.onehot())[None]
        return self.context_encoder(normalize_l(l_t), mask_t)


class AutoEncoderHead(nn.Module):
    """Predicts a full color representation from luminance and masks."""

    def __init__(
        self, width: int, channels: tuple[int, ...] = (64, 128, 256, 256)
    ):
        super().__init__()
        self.width = width
        layers: list[nn.Module] = []
        in_ch = 1 + len(COMPONENTS)
        for ch in channels:
            layers += [nn.Conv2d(in_ch, ch, 3, stride=2, padding=1), nn.LeakyReLU(0.2)]
            in_ch = ch
        self.trunk = nn.Sequential(*layers)
        self.stride = 2 ** len(channels)
        feat_dim = in_ch + 1  # trunk features + cell-averaged luminance
        self.pool_norm = nn.LayerNorm(feat_dim)
        self.heads = nn.ModuleList(
            nn.Sequential(
                nn.Linear(feat_dim, feat_dim),
                nn.LeakyReLU(0.2),
                nn.Linear(feat_dim, width),
            )
            for _ in COMPONENTS
        )

    def forward(self, l_net: torch.Tensor, mask_stack: torch.Tensor) -> torch.Tensor:
        feat = self.trunk(torch.cat([l_net, mask_stack], dim=1))
        feat = torch.cat([feat, F.avg_pool2d(l_net, self.stride)], dim=1)
        weights = F.avg_pool2d(mask_stack, self.stride)
        denom = weights.sum(dim=(2, 3)).clamp(min=1e-6)
        pooled = self.pool_norm(
            torch.einsum("bchw,bkhw->bkc", feat, weights) / denom.unsqueeze(-1)
        )
        return torch.stack([h(pooled[:, i]) for i, h in enumerate(self.heads)], dim=1)


# ---------------------------------------------------------------------------
# operations

def flow_forward(
    z: np.ndarray, context: torch.Tensor, flow: ComponentFlow
) -> tuple[np.ndarray, float]:
    """Push a base sample through one component flow; exact log-determinant."""
    z_t = torch.as_tensor(np.asarray(z, dtype=np.float32))[None]
    with torch.no_grad():
        w, logdet = flow(z_t.to(next(flow.parameters()).dtype), context)
    return w[0].numpy(), float(logdet[0])


def flow_nll(
    w_c: np.ndarray, context: torch.Tensor, flow: ComponentFlow
) -> float:
    """Exact negative log-likelihood of one component vector."""
    w_t = torch.as_tensor(np.asarray(w_c, dtype=np.float32))[None]
    with torch.no_grad():
        nll = flow.nll(w_t.to(next(flow.parameters()).dtype), context)
    return float(nll[0])


def _component_seed(seed: int, index: int) -> int:
    return (int(seed) * 1_000_003 + index) % (2**63)


def sample(
    l: np.ndarray,
    masks: ComponentMasks,
    seed: int,
    subset: set[str],
    fallback: ColorRepresentation,
    flow_model: FlowModel,
) -> ColorRepresentation:
    """Sample color vectors for `subset` components; copy the rest from
    `fallback`. Deterministic per seed; each component draws from its own
    seeded stream, so sampling one never perturbs another."""
    unknown = set(subset) - set(COMPONENTS)
    if unknown:
        raise RepresentationError(f"unknown components in subset: {sorted(unknown)}")
    if not subset:
        return ColorRepresentation(
            vectors={c: fallback.vectors[c].copy() for c in COMPONENTS},
            present=dict(fallback.present),
        )
    if not flow_model.is_trained:
        raise UntrainedFlowError("flow model has not been trained")
    flow_model.eval()
    with torch.no_grad():
        ctx = flow_model.context(l, masks)
        vectors, present = {}, {}
        for i, c in enumerate(COMPONENTS):
            if c in subset:
                gen = torch.Generator().manual_seed(_component_seed(seed, i))
                z = torch.randn(1, flow_model.width, generator=gen)
                w, _ = flow_model.flows[c](z, ctx)
                vectors[c] = w[0].numpy().astype(np.float32)
                present[c] = True
            else:
                vectors[c] = fallback.vectors[c].copy()
                present[c] = fallback.present[c]
    return ColorRepresentation(vectors=vectors, present=present)


def auto_predict(
    l: np.ndarray, masks: ComponentMasks, head: AutoEncoderHead
) -> ColorRepresentation:
    """Deterministic representation prediction from grayscale + masks."""
    l = np.asarray(l, dtype=np.float32)
    if l.ndim == 2:
        l = l[:, :, None]
    if l.shape[:2] != (masks.height, masks.width):
        raise RepresentationError("l/mask shape mismatch")
    l_t = torch.from_numpy(l.transpose(2, 0, 1))[None]
    mask_t = torch.from_numpy(masks.onehot())[None]
    head.eval()
    with torch.no_grad():
        vecs = head(normalize_l(l_t), mask_t)
    return representation_from_tensors(
        vecs[0], torch.ones(len(COMPONENTS), dtype=torch.bool)
    )


# ---------------------------------------------------------------------------
# aux training (the main colorization pipeline stays frozen throughout)

def _aux_batches(dataset, batch_size: int, size: int, steps: int, rng: np.random.Generator):
    from .data import resize_sample

    n = len(dataset)
    for _ in range(steps):
        idx = rng.integers(0, n, size=batch_size)
        yield [resize_sample(dataset[int(i)], size) for i in idx]


def _teacher_tensors(samples, encoder):
    from .colorspace import normalize_ab

    l_net = torch.stack(
        [normalize_l(torch.from_numpy(s.image.l.transpose(2, 0, 1))) for s in samples]
    )
    ab_net = torch.stack(
        [
            normalize_ab(
                torch.from_numpy(np.ascontiguousarray(s.image.ab.transpose(2, 0, 1)))
            )
            for s in samples
        ]
    )
    mask_stack = torch.stack([torch.from_numpy(s.masks.onehot()) for s in samples])
    with torch.no_grad():
        teacher_vecs, teacher_present = encoder(ab_net, mask_stack)
    return l_net, ab_net, mask_stack, teacher_vecs, teacher_present


def train_flow(config, dataset, bundle, max_steps: int | None = None):
    """Fit per-component flows by exact NLL on teacher representations.

    Requires a trained main checkpoint (the color encoder is the frozen
    teacher). Returns a checkpoint that also carries the main weights.
    """
    from .checkpoint import make_checkpoint

    if bundle.color_encoder is None:
        raise FlowError("main checkpoint has no color encoder; train it first")
    cfg = bundle.config
    torch.manual_seed(config.seed + 1)
    flow_model = FlowModel(cfg.d_w, cfg.context_dim, cfg.flow_blocks, cfg.flow_hidden)
    opt = torch.optim.Adam(
        flow_model.parameters(),
        lr=config.lr_aux,
        betas=(config.adam_beta1, config.adam_beta2),
    )
    bundle.color_encoder.eval()
    rng = np.random.default_rng(config.seed + 1)
    steps = max_steps if max_steps is not None else config.epochs * max(
        1, len(dataset) // config.batch_aux
    )
    for samples in _aux_batches(dataset, config.batch_aux, cfg.image_size, steps, rng):
        l_net, _, mask_stack, teacher_vecs, teacher_present = _teacher_tensors(
            samples, bundle.color_encoder
        )
        ctx = flow_model.context_encoder(l_net, mask_stack)
        loss = flow_nll_batch(flow_model, teacher_vecs, teacher_present, ctx)
        opt.zero_grad()
        loss.backward()
        opt.step()
    flow_model.mark_trained()
    models = {
        "color_encoder": bundle.color_encoder,
        "colorizer": bundle.colorizer,
        "discriminator": bundle.discriminator,
        "auto_head": bundle.auto_head,
        "flow_model": flow_model,
    }
    bundle.flow_model = flow_model
    return make_checkpoint(cfg, steps, models)


def flow_nll_batch(
    flow_model: FlowModel,
    vecs: torch.Tensor,
    present: torch.Tensor,
    ctx: torch.Tensor,
) -> torch.Tensor:
    """Mean NLL over present (sample, component) pairs."""
    total = ctx.new_zeros(())
    count = 0
    for i, c in enumerate(COMPONENTS):
        rows = present[:, i]
        if not bool(rows.any()):
            continue
        nll = flow_model.flows[c].nll(vecs[rows, i], ctx[rows])
        total = total + nll.sum()
        count += int(rows.sum())
    if count == 0:
        return total
    return total / count


def train_auto(config, dataset, bundle, max_steps: int | None = None):
    """Fit the automatic predictor against teacher representations, with a
    small image-space term through the frozen colorization network."""
    from .checkpoint import make_checkpoint

    if bundle.color_encoder is None:
        raise FlowError("main checkpoint has no color encoder; train it first")
    cfg = bundle.config
    torch.manual_seed(config.seed + 2)
    head = AutoEncoderHead(cfg.d_w, cfg.repr_channels)
    opt = torch.optim.Adam(
        head.parameters(), lr=config.lr_aux, betas=(config.adam_beta1, config.adam_beta2)
    )
    bundle.color_encoder.eval()
    bundle.colorizer.eval()
    frozen = [p for p in bundle.colorizer.parameters()]
    for p in frozen:
        p.requires_grad_(False)
    rng = np.random.default_rng(config.seed + 2)
    steps = max_steps if max_steps is not None else config.epochs * max(
        1, len(dataset) // config.batch_aux
    )
    all_present = None
    for samples in _aux_batches(dataset, config.batch_aux, cfg.image_size, steps, rng):
        l_net, ab_net, mask_stack, teacher_vecs, _ = _teacher_tensors(
            samples, bundle.color_encoder
        )
        pred_vecs = head(l_net, mask_stack)
        w_term = (pred_vecs - teacher_vecs).abs().mean()
        if all_present is None or all_present.shape[0] != l_net.shape[0]:
            all_present = torch.ones(
                l_net.shape[0], len(COMPONENTS), dtype=torch.bool
            )
        pred_ab = bundle.colorizer(l_net, pred_vecs, all_present, mask_stack)
        img_term = (pred_ab - ab_net).abs().mean() * AB_SCALE
        loss = w_term + 0.1 * img_term
        opt.zero_grad()
        loss.backward()
        opt.step()
    for p in frozen:
        p.requires_grad_(True)
    models = {
        "color_encoder": bundle.color_encoder,
        "colorizer": bundle.colorizer,
        "discriminator": bundle.discriminator,
        "auto_head": head,
        "flow_model": bundle.flow_model,
    }
    bundle.auto_head = head
    return make_checkpoint(cfg, steps, models)
