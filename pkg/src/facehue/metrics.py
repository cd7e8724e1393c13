"""Evaluation metrics: colorfulness, PSNR, SSIM, and Fréchet feature distance.

All four are pure functions over numpy arrays. The Fréchet distance takes
pre-embedded feature sets so the embedding stays pluggable: conventional
deep features for full-scale evaluation, identity or downsampled-pixel
embeddings for desk-scale tests where no large model download is wanted.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import cv2
import numpy as np
from scipy.signal import convolve2d

PSNR_CAP = 99.0


class MetricsError(ValueError):
    pass


@dataclass
class MetricsReport:
    fid: float | None  # None when the set is too small to fit a Gaussian
    cf: float
    psnr: float
    ssim: float
    n_images: int

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)


def colorfulness(rgb: np.ndarray) -> float:
    """Hasler-Suesstrunk colorfulness of an 8-bit RGB image."""
    rgb = np.asarray(rgb, dtype=np.float64)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    rg = r - g
    yb = 0.5 * (r + g) - b
    sigma = np.hypot(rg.std(), yb.std())
    mu = np.hypot(rg.mean(), yb.mean())
    return float(sigma + 0.3 * mu)


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB between 8-bit images, capped at 99."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise MetricsError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0.0:
        return PSNR_CAP
    return float(min(PSNR_CAP, 10.0 * np.log10(255.0**2 / mse)))


def _to_gray(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 2:
        return img
    if img.ndim == 3 and img.shape[2] == 3:
        return img @ np.array([0.2126, 0.7152, 0.0722])
    if img.ndim == 3 and img.shape[2] == 1:
        return img[:, :, 0]
    raise MetricsError(f"cannot grayscale shape {img.shape}")


def gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    k = np.outer(g, g)
    return k / k.sum()


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM over grayscale-converted inputs.

    11x11 Gaussian window (sigma 1.5), stabilizers C1=(0.01*255)^2 and
    C2=(0.03*255)^2, valid-window statistics.
    """
    x = _to_gray(a)
    y = _to_gray(b)
    if x.shape != y.shape:
        raise MetricsError(f"shape mismatch: {x.shape} vs {y.shape}")
    if min(x.shape) < 11:
        raise MetricsError("images smaller than the 11x11 window")
    w = gaussian_window()
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    mu_x = convolve2d(x, w, mode="valid")
    mu_y = convolve2d(y, w, mode="valid")
    xx = convolve2d(x * x, w, mode="valid") - mu_x**2
    yy = convolve2d(y * y, w, mode="valid") - mu_y**2
    xy = convolve2d(x * y, w, mode="valid") - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + c1) * (2.0 * xy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (xx + yy + c2)
    return float(np.mean(num / den))


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Frechet distance between Gaussian fits of two (N, D) feature sets.

    The covariance-product square root is taken through eigenvalues with
    negative values clipped to zero; the product is symmetrized as
    sqrt(B) A sqrt(B) so the decomposition stays numerically exact for
    identical sets.
    """
    fa = np.asarray(feats_a, dtype=np.float64)
    fb = np.asarray(feats_b, dtype=np.float64)
    if fa.ndim != 2 or fb.ndim != 2:
        raise MetricsError("feature sets must be (N, D) arrays")
    if fa.shape[0] < 2 or fb.shape[0] < 2:
        raise MetricsError("need at least 2 samples per set")
    fa, fb = _project_to_joint_span(fa, fb)
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(fa, rowvar=False))
    cov_b = np.atleast_2d(np.cov(fb, rowvar=False))
    vals_b, vecs_b = np.linalg.eigh(cov_b)
    sqrt_b = (vecs_b * np.sqrt(np.clip(vals_b, 0.0, None))) @ vecs_b.T
    prod = sqrt_b @ cov_a @ sqrt_b
    eig = np.linalg.eigvalsh(prod)
    trace_sqrt = np.sqrt(np.clip(eig, 0.0, None)).sum()
    diff = mu_a - mu_b
    return float(diff @ diff + np.trace(cov_a) + np.trace(cov_b) - 2.0 * trace_sqrt)


def _project_to_joint_span(fa: np.ndarray, fb: np.ndarray):
    """Rotate both sets into the span of their centered samples and mean gap.

    The Frechet distance only depends on that subspace, so this is exact; it
    keeps the eigen-problems at rank <= n_a + n_b + 1 instead of D, which is
    what makes degenerate high-D/low-N cases numerically clean.
    """
    d = fa.shape[1]
    rank_bound = fa.shape[0] + fb.shape[0] + 1
    if d <= rank_bound:
        return fa, fb
    mu_a, mu_b = fa.mean(axis=0), fb.mean(axis=0)
    stacked = np.concatenate([fa - mu_a, fb - mu_b, (mu_a - mu_b)[None]])
    _, s, vt = np.linalg.svd(stacked, full_matrices=False)
    basis = vt[s > s.max(initial=1.0) * 1e-12]
    return fa @ basis.T, fb @ basis.T


# ---------------------------------------------------------------------------
# embeddings for the Frechet metric

def identity_embedding(images: list[np.ndarray]) -> np.ndarray:
    """Flatten images as-is (desk-scale sets only)."""
    return np.stack([np.asarray(im, dtype=np.float64).ravel() for im in images])


def pixel_embedding(images: list[np.ndarray], size: int = 16) -> np.ndarray:
    """Area-downsample to size x size and flatten; cheap stand-in embedding."""
    out = []
    for im in images:
        small = cv2.resize(
            np.asarray(im, dtype=np.float32), (size, size), interpolation=cv2.INTER_AREA
        )
        out.append(small.astype(np.float64).ravel() / 255.0)
    return np.stack(out)


def make_embedding(name: str):
    """Resolve an embedding spec: 'identity' or 'pixelsN' (e.g. pixels16)."""
    if name == "identity":
        return identity_embedding
    if name.startswith("pixels"):
        size = int(name[len("pixels"):] or 16)
        return lambda images: pixel_embedding(images, size)
    raise MetricsError(f"unknown embedding {name!r}")
