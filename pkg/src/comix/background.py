"""Background extraction (temporal median filtering) and convex mixing.

A video's background is the per-pixel median of its frames along time; mixing
blends that single frame into every frame of a video from the other domain:

    out[t] = (1 - lam) * video[t] + lam * background

which keeps frame-to-frame differences proportional to (1 - lam), i.e. it
never alters the motion pattern.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .synthvideo import MIXED, Dataset, Video


@dataclass
class BackgroundFrame:
    pixels: np.ndarray  # (H, W, C) float64 in [0, 1]
    source_video_id: int


def extract_background_tmf(video: Video) -> BackgroundFrame:
    """Per-pixel temporal median over all frames (even T: mean of the two
    middle order statistics)."""
    return BackgroundFrame(
        pixels=np.median(video.frames, axis=0),
        source_video_id=video.video_id,
    )


def build_background_cache(dataset: Dataset) -> dict[int, BackgroundFrame]:
    """Backgrounds for a whole dataset, keyed by video_id. Computed once."""
    return {v.video_id: extract_background_tmf(v) for v in dataset.videos}


def sample_mix_coefficient(gamma: float, rng) -> float:
    """Uniform draw from [0, gamma]."""
    if not 0.0 <= gamma <= 1.0:
        raise ValueError(f"gamma must lie in [0, 1], got {gamma}")
    return float(rng.uniform(0.0, gamma))


def mix_background(video: Video, bg: BackgroundFrame, lam: float) -> Video:
    """Convex combination of a background frame with every frame of a video.

    The result is marked provenance=mixed and keeps the video's id, domain and
    label: mixing changes the background, not the action.
    """
    if not 0.0 <= lam <= 1.0:
        raise ValueError(f"mix coefficient must lie in [0, 1], got {lam}")
    if video.frames.shape[1:] != bg.pixels.shape:
        raise ValueError(
            f"spatial dims mismatch: video {video.frames.shape[1:]} vs "
            f"background {bg.pixels.shape}"
        )
    if lam == 0.0:
        frames = video.frames.copy()
    else:
        frames = (1.0 - lam) * video.frames + lam * bg.pixels[None, :, :, :]
    return Video(
        frames=frames,
        domain=video.domain,
        video_id=video.video_id,
        label=video.label,
        provenance=MIXED,
    )


def combine_backgrounds(a: BackgroundFrame, b: BackgroundFrame, weight: float = 0.5) -> BackgroundFrame:
    """Convex combination of two backgrounds (the mixed-background ablation
    variant, which blends one generalized background into both domains)."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError(f"weight must lie in [0, 1], got {weight}")
    if a.pixels.shape != b.pixels.shape:
        raise ValueError(f"spatial dims mismatch: {a.pixels.shape} vs {b.pixels.shape}")
    return BackgroundFrame(
        pixels=weight * a.pixels + (1.0 - weight) * b.pixels,
        source_video_id=-1,
    )
