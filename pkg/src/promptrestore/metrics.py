"""Quantitative evaluation: PSNR, SSIM, embedding cluster diagnostics."""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
from scipy.ndimage import gaussian_filter

# SSIM constants from the standard formulation: 11x11 gaussian window
# (sigma 1.5), K1=0.01, K2=0.03, population (not sample) covariance.
_SSIM_SIGMA = 1.5
_SSIM_TRUNCATE = 3.5  # radius int(3.5 * 1.5 + 0.5) = 5 -> 11-tap window
_SSIM_K1 = 0.01
_SSIM_K2 = 0.03


@dataclass
class EvalRecord:
    task: str
    dataset: str
    psnr: float
    ssim: float
    n_images: int
    n_identical: int = 0

    def to_dict(self) -> dict:
        d = asdict(self)
        if math.isinf(self.psnr):
            d["psnr"] = "inf"
        return d


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """10*log10(peak^2 / MSE); +inf for identical images."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _ssim_plane(a: np.ndarray, b: np.ndarray, c1: float, c2: float) -> float:
    filt = lambda x: gaussian_filter(x, _SSIM_SIGMA, truncate=_SSIM_TRUNCATE)
    ua, ub = filt(a), filt(b)
    uaa, ubb, uab = filt(a * a), filt(b * b), filt(a * b)
    va = uaa - ua * ua
    vb = ubb - ub * ub
    cov = uab - ua * ub
    s = ((2 * ua * ub + c1) * (2 * cov + c2)) / ((ua * ua + ub * ub + c1) * (va + vb + c2))
    # keep only windows fully inside the image
    pad = int(_SSIM_TRUNCATE * _SSIM_SIGMA + 0.5)
    return float(np.mean(s[pad:-pad, pad:-pad]))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Mean local SSIM, computed per channel and averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if min(a.shape[0], a.shape[1]) < 11:
        raise ValueError("image too small for the 11x11 SSIM window")
    c1 = (_SSIM_K1 * peak) ** 2
    c2 = (_SSIM_K2 * peak) ** 2
    if a.ndim == 2:
        return _ssim_plane(a, b, c1, c2)
    return float(np.mean([_ssim_plane(a[..., c], b[..., c], c1, c2) for c in range(a.shape[-1])]))


def evaluate(model, encoder, pairs, task: str, rng, dataset: str = "synthetic") -> EvalRecord:
    """Average PSNR/SSIM of model restorations over (degraded, clean) pairs.

    A correct-category instruction is sampled per image from the encoder's
    corpus; `pairs` is a sequence of objects with .degraded/.clean arrays.
    """
    from .backbone import restore_image  # local import to avoid cycle

    if not pairs:
        raise ValueError("pairs must be non-empty")
    psnrs, ssims = [], []
    n_identical = 0
    for pair in pairs:
        z = encoder.guidance_for_category(task, rng)
        restored = restore_image(model, pair.degraded, z)
        p = psnr(restored, pair.clean)
        if math.isinf(p):
            n_identical += 1
        psnrs.append(p)
        ssims.append(ssim(restored, pair.clean))
    return EvalRecord(
        task=task,
        dataset=dataset,
        psnr=float(np.mean(psnrs)),
        ssim=float(np.mean(ssims)),
        n_images=len(pairs),
        n_identical=n_identical,
    )


def cluster_score(embeddings, labels) -> float:
    """Mean silhouette coefficient under Euclidean distance."""
    x = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    uniq = np.unique(labels)
    if len(uniq) < 2:
        raise ValueError("need at least 2 labels")
    for u in uniq:
        if np.sum(labels == u) < 2:
            raise ValueError(f"label {u!r} has fewer than 2 points")
    diff = x[:, None, :] - x[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    scores = np.empty(len(x))
    for i in range(len(x)):
        same = labels == labels[i]
        a = dist[i, same].sum() / (same.sum() - 1)
        b = min(dist[i, labels == u].mean() for u in uniq if u != labels[i])
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())


def project_2d(embeddings) -> np.ndarray:
    """Deterministic principal-component projection to 2-D."""
    x = np.asarray(embeddings, dtype=np.float64)
    centered = x - x.mean(axis=0, keepdims=True)
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:2]
    # fix component signs so the projection is reproducible
    for k in range(comps.shape[0]):
        j = np.argmax(np.abs(comps[k]))
        if comps[k, j] < 0:
            comps[k] = -comps[k]
    if comps.shape[0] < 2:  # rank-deficient input: pad with a zero axis
        comps = np.vstack([comps, np.zeros_like(comps[0])])
    return centered @ comps.T


def pca_basis(embeddings):
    """(mean, 2xD components) reusable to project new points consistently."""
    x = np.asarray(embeddings, dtype=np.float64)
    mean = x.mean(axis=0)
    _, _, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:2].copy()
    for k in range(comps.shape[0]):
        j = np.argmax(np.abs(comps[k]))
        if comps[k, j] < 0:
            comps[k] = -comps[k]
    if comps.shape[0] < 2:
        comps = np.vstack([comps, np.zeros_like(comps[0])])
    return mean, comps
