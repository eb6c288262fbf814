"""Confidence-thresholded pseudo-labels from fused fast/slow logits.

Both branch logits of a target video are averaged, softmaxed, and the video is
admitted when the max probability clears the threshold. All of this runs on
plain arrays (no gradients flow through pseudo-label selection).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class PseudoLabelEntry:
    video_id: int
    label: int
    confidence: float


@dataclass
class PseudoLabelSet:
    entries: list[PseudoLabelEntry]
    threshold: float

    def __post_init__(self):
        self._by_id = {e.video_id: e for e in self.entries}
        if len(self._by_id) != len(self.entries):
            raise ValueError("duplicate video_id in pseudo-label set")

    def __contains__(self, video_id: int) -> bool:
        return video_id in self._by_id

    def __len__(self) -> int:
        return len(self.entries)

    def label_of(self, video_id: int) -> int:
        return self._by_id[video_id].label

    def confidence_of(self, video_id: int) -> float:
        return self._by_id[video_id].confidence


def fuse_logits(z_fast: np.ndarray, z_slow: np.ndarray) -> np.ndarray:
    """Elementwise mean of the base- and auxiliary-branch logits."""
    z_fast = np.asarray(z_fast, dtype=np.float64)
    z_slow = np.asarray(z_slow, dtype=np.float64)
    if z_fast.shape != z_slow.shape:
        raise ValueError(f"logit shapes differ: {z_fast.shape} vs {z_slow.shape}")
    return 0.5 * (z_fast + z_slow)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def assign_pseudo_labels(fused_batch, threshold: float) -> PseudoLabelSet:
    """Admit each (video_id, fused logits) pair whose max softmax probability
    reaches the threshold; the label is the argmax, ties broken by lowest
    class index. An empty result is valid."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError(f"threshold must lie in (0, 1], got {threshold}")
    entries = []
    seen = set()
    for video_id, fused in fused_batch:
        if video_id in seen:
            raise ValueError(f"duplicate video_id {video_id} in fused batch")
        seen.add(video_id)
        probs = _softmax(np.asarray(fused, dtype=np.float64))
        confidence = float(probs.max())
        if confidence >= threshold:
            entries.append(
                PseudoLabelEntry(
                    video_id=video_id,
                    label=int(np.argmax(probs)),
                    confidence=confidence,
                )
            )
    return PseudoLabelSet(entries=entries, threshold=threshold)
