"""Quantitative measures: Inception Score, SSIM, PSNR, sharpness difference,
and CMC curves with AUC.

All functions are pure and safe to call from multiple threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.ndimage import correlate1d

from .errors import (
    DegenerateClassifier,
    EmptyInput,
    MixedGallerySizes,
    SchemaError,
    ShapeError,
)

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass(frozen=True)
class MetricConfig:
    dynamic_range: float = 255.0
    c1: float = (0.01 * 255.0) ** 2
    c2: float = (0.03 * 255.0) ** 2
    window_size: int = 11
    window_sigma: float = 1.5
    max_value: float = 255.0
    cap_db: float = 100.0  # returned when the error term is exactly zero
    eps: float = 1e-12

    def __post_init__(self):
        if self.c1 <= 0 or self.c2 <= 0:
            raise SchemaError("SSIM constants c1, c2 must be positive")
        if self.window_size < 1 or self.window_size % 2 == 0:
            raise SchemaError("SSIM window size must be odd and positive")


def to_gray(frame: np.ndarray) -> np.ndarray:
    """Luma conversion (0.299 R + 0.587 G + 0.114 B), float64 output."""
    arr = np.asarray(frame, dtype=np.float64)
    if arr.ndim == 2:
        return arr
    if arr.ndim == 3 and arr.shape[2] == 3:
        return arr @ LUMA_WEIGHTS
    raise ShapeError(f"expected HxW or HxWx3 image, got shape {arr.shape}")


# ---------------------------------------------------------------------------
# classifiers

class ToyColorClassifier:
    """Deterministic 8-way classifier over RGB octants.

    Class c in [0, 8) corresponds to the corner of the RGB cube with bits
    (R>127, G>127, B>127); the predicted distribution is the smoothed
    fraction of pixels falling in each octant. Intended as the test-time
    stand-in for a pretrained scene classifier.
    """

    n_classes = 8

    def __init__(self, smoothing: float = 1e-3):
        self.smoothing = smoothing

    def __call__(self, frame: np.ndarray) -> np.ndarray:
        arr = np.asarray(frame)
        if arr.ndim != 3 or arr.shape[2] != 3:
            raise ShapeError(f"expected HxWx3 frame, got shape {arr.shape}")
        bits = (arr > 127).astype(np.intp)
        octant = bits[..., 0] * 4 + bits[..., 1] * 2 + bits[..., 2]
        counts = np.bincount(octant.ravel(), minlength=8).astype(np.float64)
        probs = counts + self.smoothing
        return probs / probs.sum()


def _validate_distribution(p: np.ndarray, n: Optional[int] = None) -> np.ndarray:
    p = np.asarray(p, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise DegenerateClassifier(f"probability vector has shape {p.shape}")
    if n is not None and p.size != n:
        raise DegenerateClassifier(f"expected {n} classes, got {p.size}")
    if (p < 0).any() or abs(p.sum() - 1.0) > 1e-6:
        raise DegenerateClassifier(
            f"output is not a distribution (min {p.min():.3g}, sum {p.sum():.9g})"
        )
    return p


def smooth_topk(p: np.ndarray, k: int) -> np.ndarray:
    """Keep the k largest entries, spread the leftover mass uniformly over
    the remaining n-k entries."""
    p = _validate_distribution(p)
    n = p.size
    if not 1 <= k < n:
        raise SchemaError(f"topk must be in [1, {n - 1}], got {k}")
    top_idx = np.argsort(p, kind="stable")[::-1][:k]
    eps = (1.0 - p[top_idx].sum()) / (n - k)
    out = np.full(n, eps)
    out[top_idx] = p[top_idx]
    return out


def inception_score_from_probs(probs: np.ndarray, topk: Optional[int] = None) -> float:
    """Inception Score of a matrix of per-sample class distributions:
    exp of the mean KL divergence to the marginal distribution."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.ndim != 2 or probs.shape[0] == 0:
        raise EmptyInput("need a nonempty (samples x classes) matrix")
    probs = np.stack([_validate_distribution(row) for row in probs])
    if topk is not None:
        probs = np.stack([smooth_topk(row, topk) for row in probs])
    marginal = probs.mean(axis=0)
    ratio = np.zeros_like(probs)
    mask = probs > 0
    ratio[mask] = np.log(probs[mask]) - np.log(marginal[np.nonzero(mask)[1]])
    kl = (probs * ratio).sum(axis=1)
    return float(np.exp(kl.mean()))


def inception_score(
    frames: Sequence[np.ndarray],
    classifier: Callable[[np.ndarray], np.ndarray],
    topk: Optional[int] = None,
) -> float:
    if len(frames) == 0:
        raise EmptyInput("no frames given")
    n = getattr(classifier, "n_classes", None)
    probs = np.stack([_validate_distribution(classifier(f), n) for f in frames])
    return inception_score_from_probs(probs, topk=topk)


# ---------------------------------------------------------------------------
# image quality

def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    half = size // 2
    x = np.arange(-half, half + 1, dtype=np.float64)
    k = np.exp(-(x**2) / (2.0 * sigma**2))
    return k / k.sum()


def _window_mean(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    half = kernel.size // 2
    t = correlate1d(img, kernel, axis=0, mode="constant")
    t = correlate1d(t, kernel, axis=1, mode="constant")
    return t[half:-half, half:-half]


def ssim(a: np.ndarray, b: np.ndarray, cfg: MetricConfig = MetricConfig()) -> float:
    """Mean local structural similarity over Gaussian-weighted windows.

    Images are converted to luma first; windows are the standard 11x11
    Gaussian (sigma 1.5) evaluated at every position fully inside the image.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    ya = to_gray(a)
    yb = to_gray(b)
    if min(ya.shape) < cfg.window_size:
        raise ShapeError(
            f"image {ya.shape} smaller than the {cfg.window_size}x{cfg.window_size} window"
        )
    kernel = _gaussian_kernel(cfg.window_size, cfg.window_sigma)
    mu_a = _window_mean(ya, kernel)
    mu_b = _window_mean(yb, kernel)
    e_aa = _window_mean(ya * ya, kernel)
    e_bb = _window_mean(yb * yb, kernel)
    e_ab = _window_mean(ya * yb, kernel)
    var_a = e_aa - mu_a * mu_a
    var_b = e_bb - mu_b * mu_b
    cov = e_ab - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + cfg.c1) * (2.0 * cov + cfg.c2)
    den = (mu_a * mu_a + mu_b * mu_b + cfg.c1) * (var_a + var_b + cfg.c2)
    return float(np.mean(num / den))


def psnr(truth: np.ndarray, test: np.ndarray, cfg: MetricConfig = MetricConfig()) -> float:
    """Peak signal-to-noise ratio in dB; identical images return the cap."""
    truth = np.asarray(truth)
    test = np.asarray(test)
    if truth.shape != test.shape:
        raise ShapeError(f"shape mismatch {truth.shape} vs {test.shape}")
    diff = truth.astype(np.float64) - test.astype(np.float64)
    mse = float(np.mean(diff * diff))
    if mse == 0.0:
        return cfg.cap_db
    return float(10.0 * np.log10(cfg.max_value**2 / mse))


def sharpness_difference(
    truth: np.ndarray, test: np.ndarray, cfg: MetricConfig = MetricConfig()
) -> float:
    """Gradient-agreement score in dB between two images.

    Per pixel the row and column forward differences (zero padded at the
    last row/column) are summed; the score is 10*log10(max^2 / S) where S is
    the mean absolute difference of those sums between the two images.
    """
    truth = np.asarray(truth)
    test = np.asarray(test)
    if truth.shape != test.shape:
        raise ShapeError(f"shape mismatch {truth.shape} vs {test.shape}")
    g_truth = _grad_sum(to_gray(truth))
    g_test = _grad_sum(to_gray(test))
    s = float(np.mean(np.abs(g_truth - g_test)))
    if s == 0.0:
        return cfg.cap_db
    return float(10.0 * np.log10(cfg.max_value**2 / s))


def _grad_sum(y: np.ndarray) -> np.ndarray:
    gi = np.zeros_like(y)
    gj = np.zeros_like(y)
    gi[:-1, :] = y[1:, :] - y[:-1, :]
    gj[:, :-1] = y[:, 1:] - y[:, :-1]
    return gi + gj


# ---------------------------------------------------------------------------
# retrieval curves

@dataclass(frozen=True)
class CMCCurve:
    """Cumulative matching curve: values[k-1] is the fraction of queries whose
    true match ranks within the top k of a size-N gallery."""

    values: tuple[float, ...]
    gallery_size: int
    auc: float = field(default=0.0)

    def __post_init__(self):
        if len(self.values) != self.gallery_size:
            raise SchemaError("CMC must have one value per gallery rank")

    @staticmethod
    def from_values(values: np.ndarray, gallery_size: int) -> "CMCCurve":
        values = np.asarray(values, dtype=np.float64)
        return CMCCurve(tuple(values.tolist()), gallery_size, float(values.mean()))


def cmc(results: Sequence) -> CMCCurve:
    """Build the CMC curve (and its normalized AUC) from ranking results.

    Accepts any objects exposing ``rank_of_truth`` and ``gallery_size``.
    """
    if len(results) == 0:
        raise EmptyInput("no ranking results")
    sizes = {r.gallery_size for r in results}
    if len(sizes) > 1:
        raise MixedGallerySizes(f"gallery sizes differ: {sorted(sizes)}")
    n = sizes.pop()
    ranks = np.array([r.rank_of_truth for r in results], dtype=np.intp)
    if (ranks < 1).any() or (ranks > n).any():
        raise SchemaError("rank_of_truth outside [1, gallery size]")
    hits = np.bincount(ranks, minlength=n + 1)[1:]
    values = np.cumsum(hits) / len(results)
    return CMCCurve.from_values(values, n)


def chance_cmc(gallery_size: int) -> CMCCurve:
    """Analytic CMC of uniformly random ranking (the chance baseline)."""
    ks = np.arange(1, gallery_size + 1, dtype=np.float64)
    return CMCCurve.from_values(ks / gallery_size, gallery_size)
