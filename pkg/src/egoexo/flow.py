"""Momentary optical flow and temporal smoothing of flow sequences.

The estimator is a coarse-to-fine iterative gradient method (3 pyramid
levels, 10 warp/solve iterations per level) solving a locally windowed
2x2 system per pixel. It sits behind ``compute_flow`` so a higher-fidelity
external estimator can be swapped in without touching callers.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from . import data
from .errors import NegativeSigma, SizeMismatch
from .metrics import to_gray


@dataclass(frozen=True)
class FlowSequence:
    """Ordered per-frame flows of one video (length = frames - 1)."""

    flows: tuple[np.ndarray, ...]
    smoothing_sigma: float = 0.0

    def __post_init__(self):
        shapes = {f.shape for f in self.flows}
        if len(shapes) > 1:
            raise SizeMismatch(f"flow fields have mixed shapes: {sorted(shapes)}")

    def __len__(self) -> int:
        return len(self.flows)

    def stacked(self) -> np.ndarray:
        return np.stack(self.flows)


def _pyramid(img: np.ndarray, levels: int) -> list[np.ndarray]:
    pyr = [img]
    for _ in range(levels - 1):
        blurred = ndimage.gaussian_filter(pyr[-1], 1.0, mode="nearest")
        pyr.append(blurred[::2, ::2])
    return pyr


def _warp(img: np.ndarray, flow: np.ndarray) -> np.ndarray:
    h, w = img.shape
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    coords = np.stack([ys + flow[..., 1], xs + flow[..., 0]])
    return ndimage.map_coordinates(img, coords, order=1, mode="nearest")


def _upsample_flow(flow: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    zy = h / flow.shape[0]
    zx = w / flow.shape[1]
    up = np.stack(
        [ndimage.zoom(flow[..., c], (zy, zx), order=1, mode="nearest", grid_mode=True)
         for c in range(2)],
        axis=-1,
    )
    up[..., 0] *= zx
    up[..., 1] *= zy
    return up


def compute_flow(
    prev: np.ndarray,
    next: np.ndarray,
    levels: int = 3,
    iterations: int = 10,
    window_sigma: float = 2.5,
    regularization: float = 1e-4,
) -> np.ndarray:
    """Estimate per-pixel displacement (x, y in pixels) from prev to next.

    Identical frames yield an exactly zero field. Accuracy target: median
    endpoint error below 0.5 px for pure translations up to ~4 px on
    textured imagery.
    """
    prev = np.asarray(prev)
    next = np.asarray(next)
    if prev.shape != next.shape:
        raise SizeMismatch(f"frame shapes differ: {prev.shape} vs {next.shape}")
    i1 = to_gray(prev) / 255.0
    i2 = to_gray(next) / 255.0

    levels = max(1, min(levels, int(np.log2(max(1, min(i1.shape)))) - 2))
    pyr1 = _pyramid(i1, levels)
    pyr2 = _pyramid(i2, levels)

    flow = np.zeros(pyr1[-1].shape + (2,))
    for lvl in range(levels - 1, -1, -1):
        a, b = pyr1[lvl], pyr2[lvl]
        if flow.shape[:2] != a.shape:
            flow = _upsample_flow(flow, a.shape)
        for _ in range(iterations):
            bw = _warp(b, flow)
            avg = 0.5 * (a + bw)
            ix = np.gradient(avg, axis=1)
            iy = np.gradient(avg, axis=0)
            it = bw - a

            def win(x):
                return ndimage.gaussian_filter(x, window_sigma, mode="nearest")

            a11 = win(ix * ix) + regularization
            a12 = win(ix * iy)
            a22 = win(iy * iy) + regularization
            b1 = -win(ix * it)
            b2 = -win(iy * it)
            det = a11 * a22 - a12 * a12
            flow[..., 0] += (a22 * b1 - a12 * b2) / det
            flow[..., 1] += (a11 * b2 - a12 * b1) / det
    return flow.astype(np.float32)


def smooth_temporal(fs: FlowSequence, sigma: float) -> FlowSequence:
    """Per-pixel 1-D Gaussian smoothing along time.

    The kernel is truncated at +-3 sigma and normalized; near the sequence
    ends it is renormalized over the frames actually available. sigma = 0
    returns the input unchanged.
    """
    if sigma < 0:
        raise NegativeSigma(f"sigma must be >= 0, got {sigma}")
    if sigma == 0 or len(fs) == 0:
        return FlowSequence(tuple(f.copy() for f in fs.flows), smoothing_sigma=0.0)

    radius = int(np.ceil(3.0 * sigma))
    offsets = np.arange(-radius, radius + 1)
    weights = np.exp(-(offsets.astype(np.float64) ** 2) / (2.0 * sigma**2))
    weights /= weights.sum()

    stack = fs.stacked().astype(np.float64)
    T = stack.shape[0]
    out = np.zeros_like(stack)
    wsum = np.zeros(T)
    for off, wgt in zip(offsets, weights):
        src_lo = max(0, -off)
        src_hi = min(T, T - off)
        if src_lo >= src_hi:
            continue
        out[src_lo:src_hi] += wgt * stack[src_lo + off : src_hi + off]
        wsum[src_lo:src_hi] += wgt
    out /= wsum[:, None, None, None]
    return FlowSequence(tuple(out.astype(np.float32)), smoothing_sigma=sigma)


def resize_flow(flow: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Bilinear flow resize; displacement magnitudes are rescaled by the
    spatial scale factors so motion keeps its meaning at the new size."""
    flow = np.asarray(flow, dtype=np.float64)
    h_in, w_in = flow.shape[:2]
    h_out, w_out = out_hw
    if (h_in, w_in) == (h_out, w_out):
        return flow.astype(np.float32)
    ys = np.linspace(0.0, h_in - 1.0, h_out) if h_out > 1 else np.zeros(1)
    xs = np.linspace(0.0, w_in - 1.0, w_out) if w_out > 1 else np.zeros(1)
    grid = np.meshgrid(ys, xs, indexing="ij")
    out = np.stack(
        [ndimage.map_coordinates(flow[..., c], grid, order=1, mode="nearest") for c in range(2)],
        axis=-1,
    )
    out[..., 0] *= w_out / w_in
    out[..., 1] *= h_out / h_in
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# manifest-level flow extraction

def flow_dir_for(frame_dir: Path) -> Path:
    return frame_dir.parent / (frame_dir.name + "_flow")


def flow_path(frame_dir: Path, t: int) -> Path:
    return flow_dir_for(Path(frame_dir)) / f"{t:06d}.eflo"


def compute_sequence_flows(
    seq: data.PairedSequence,
    view: str,
    sigma: float = 1.5,
    estimator=compute_flow,
) -> FlowSequence:
    """Momentary flows for every consecutive frame pair of one view, already
    temporally smoothed. Flow t maps frame t onto frame t+1."""
    frames = [data.load_frame(seq.frame_path(view, t)) for t in range(seq.length)]
    flows = tuple(estimator(frames[t], frames[t + 1]) for t in range(len(frames) - 1))
    fs = FlowSequence(flows)
    if sigma > 0 and len(flows) > 0:
        fs = smooth_temporal(fs, sigma)
    return fs


def write_sequence_flows(seq: data.PairedSequence, view: str, fs: FlowSequence) -> int:
    frame_dir = seq.ego_dir if view == "ego" else seq.exo_dir
    for t, fl in enumerate(fs.flows):
        data.write_flow(fl, flow_path(frame_dir, t))
    return len(fs)


def _sequence_flow_job(args) -> int:
    seq, view, sigma = args
    fs = compute_sequence_flows(seq, view, sigma)
    return write_sequence_flows(seq, view, fs)


def compute_manifest_flows(
    manifest: data.Manifest,
    split: str = "all",
    sigma: float = 1.5,
    views: Sequence[str] = ("ego", "exo"),
    workers: int = 1,
) -> int:
    """Compute and store smoothed flows for every sequence of a split.
    Returns the number of flow fields written."""
    seqs = manifest.split_sequences(split)
    jobs = [(seq, view, sigma) for seq in seqs for view in views]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=workers) as pool:
            counts = list(pool.map(_sequence_flow_job, jobs))
    else:
        counts = [_sequence_flow_job(job) for job in jobs]
    return int(sum(counts))


def load_sequence_flows(seq: data.PairedSequence, view: str) -> FlowSequence:
    frame_dir = seq.ego_dir if view == "ego" else seq.exo_dir
    flows = tuple(data.read_flow(flow_path(frame_dir, t)) for t in range(seq.length - 1))
    return FlowSequence(flows)
