"""Ego/exo cross-view toolkit.

Modules:
    data       paired-sequence manifests, frames, flow files
    toygen     procedural paired-scene generator
    flow       momentary optical flow and temporal smoothing
    synthesis  exo-to-ego conditional GAN
    retrieval  two-stream contrastive embedding and galleries
    metrics    IS, SSIM, PSNR, sharpness difference, CMC/AUC
    probes     view-invariance and synthesized-retrieval experiments
    cli        command-line entry point
"""

__version__ = "0.1.0"

from .errors import EgoExoError

__all__ = ["EgoExoError", "__version__"]
