"""Synthetic paired-domain video data: generation, clip sampling, CVD1 files.

Source and target domains share the same motion classes (a small bright
pattern moving along a class-specific trajectory) but differ in background
texture by construction. Foreground rendering depends only on the motion spec,
so the same spec composited over two different backgrounds yields identical
foreground pixels.

Frames are stored as float64 in memory but snapped to the float32 grid at
generation time, so the CVD1 round trip (which stores f32) is bit-exact.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import (
    BadMagicError,
    FileFormatError,
    ShapeOverflowError,
    TruncatedFileError,
)

SOURCE = "source"
TARGET = "target"
FAST = "fast"
SLOW = "slow"
ORIGINAL = "original"
MIXED = "mixed"

_DOMAIN_CODES = {SOURCE: 0, TARGET: 1}
_DOMAIN_NAMES = {0: SOURCE, 1: TARGET}
_SPLIT_CODES = {"train": 0, "test": 1}

# One trajectory per motion class, in class-id order.
TRAJECTORIES = (
    "slide-right",
    "slide-down",
    "sway",
    "orbit",
    "slide-left",
    "slide-up",
    "bounce",
    "diagonal",
)

BACKGROUND_STYLES = ("gradient", "checker", "stripes", "noise")


@dataclass
class Video:
    frames: np.ndarray  # (T, H, W, C) float64 intensities in [0, 1]
    domain: str
    video_id: int
    label: Optional[int] = None
    provenance: str = ORIGINAL

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Video):
            return NotImplemented
        return (
            self.domain == other.domain
            and self.video_id == other.video_id
            and self.label == other.label
            and self.provenance == other.provenance
            and self.frames.shape == other.frames.shape
            and np.array_equal(self.frames, other.frames)
        )


@dataclass
class Dataset:
    videos: list[Video]
    num_classes: int
    split: str = "train"

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.num_classes == other.num_classes
            and self.split == other.split
            and len(self.videos) == len(other.videos)
            and all(a == b for a, b in zip(self.videos, other.videos))
        )

    def __len__(self):
        return len(self.videos)


@dataclass
class ClipBatch:
    video_id: int
    clips: np.ndarray  # (n, clip_len, H, W, C) float64
    speed: str  # FAST or SLOW
    provenance: str = ORIGINAL

    @property
    def num_clips(self) -> int:
        return self.clips.shape[0]


@dataclass(frozen=True)
class MotionSpec:
    """Everything that determines the foreground: class, path, texture, phase."""

    class_id: int
    trajectory: str
    texture_seed: int
    phase: float
    lane: float  # cross-track offset in [0, 1]


@dataclass
class SplitPair:
    train: Dataset
    test: Dataset


@dataclass
class GenConfig:
    num_classes: int = 4
    videos_per_class: int = 20
    test_videos_per_class: int = 5
    frames: int = 64
    height: int = 16
    width: int = 16
    channels: int = 1
    bg_source: str = "gradient"
    bg_target: str = "checker"
    fg_size: int = 5
    seed: int = 0

    def validate(self):
        if self.num_classes < 2:
            raise ValueError("num_classes must be at least 2")
        if self.num_classes > len(TRAJECTORIES):
            raise ValueError(
                f"num_classes={self.num_classes} exceeds the {len(TRAJECTORIES)} "
                "available motion trajectories"
            )
        if self.videos_per_class < 1 or self.test_videos_per_class < 0:
            raise ValueError("videos_per_class must be >= 1, test_videos_per_class >= 0")
        if min(self.height, self.width) <= self.fg_size:
            raise ValueError("foreground patch must be smaller than the frame")
        if self.channels < 1:
            raise ValueError("channels must be >= 1")
        for style in (self.bg_source, self.bg_target):
            if style not in BACKGROUND_STYLES:
                raise ValueError(f"unknown background style '{style}'")


# ---------------------------------------------------------------------------
# rendering


def make_background(style: str, height: int, width: int, channels: int, rng) -> np.ndarray:
    """Per-video background texture, (H, W, C) float64. Styles occupy distinct
    intensity bands so a domain pair using different styles shifts both texture
    and brightness."""
    i = np.arange(height)[:, None]
    j = np.arange(width)[None, :]
    if style == "gradient":
        lo, hi = 0.05, 0.40
        theta = rng.uniform(0.0, 2.0 * np.pi)
        freq = rng.uniform(0.5, 2.0)
        phase = rng.uniform(0.0, 2.0 * np.pi)
        proj = (i * np.cos(theta) + j * np.sin(theta)) / max(height, width)
        plane = 0.5 + 0.5 * np.sin(2.0 * np.pi * freq * proj + phase)
        tex = lo + (hi - lo) * plane
    elif style == "checker":
        lo, hi = 0.50, 0.80
        cell = int(rng.choice([2, 4]))
        a = rng.uniform(lo, lo + 0.1)
        b = rng.uniform(hi - 0.1, hi)
        tex = np.where((i // cell + j // cell) % 2 == 0, a, b)
    elif style == "stripes":
        lo, hi = 0.45, 0.80
        width_ = int(rng.choice([2, 4]))
        a = rng.uniform(lo, lo + 0.1)
        b = rng.uniform(hi - 0.1, hi)
        sign = 1 if rng.uniform() < 0.5 else -1
        tex = np.where(((i + sign * j) // width_) % 2 == 0, a, b)
    elif style == "noise":
        lo, hi = 0.25, 0.70
        raw = rng.uniform(lo, hi, size=(height + 2, width + 2))
        # 3x3 box blur to keep the texture spatially coherent
        tex = sum(
            raw[di : di + height, dj : dj + width] for di in range(3) for dj in range(3)
        ) / 9.0
    else:
        raise ValueError(f"unknown background style '{style}'")
    bg = np.repeat(tex[:, :, None], channels, axis=2)
    if channels > 1:
        bg = bg * rng.uniform(0.85, 1.0, size=channels)[None, None, :]
    return np.clip(bg, 0.0, 1.0)


def _foreground_patch(spec: MotionSpec, fg_size: int, channels: int) -> np.ndarray:
    rng = np.random.default_rng(spec.texture_seed)
    return 0.85 + 0.15 * rng.uniform(size=(fg_size, fg_size, channels))


def motion_positions(spec: MotionSpec, frames: int, height: int, width: int, fg_size: int):
    """Top-left (row, col) of the foreground patch for each frame."""
    rmax = height - fg_size
    cmax = width - fg_size
    rows = np.empty(frames, dtype=np.int64)
    cols = np.empty(frames, dtype=np.int64)
    for t in range(frames):
        u = (t / frames + spec.phase) % 1.0
        if spec.trajectory == "slide-right":
            r, c = spec.lane * rmax, u * cmax
        elif spec.trajectory == "slide-left":
            r, c = spec.lane * rmax, (1.0 - u) * cmax
        elif spec.trajectory == "slide-down":
            r, c = u * rmax, spec.lane * cmax
        elif spec.trajectory == "slide-up":
            r, c = (1.0 - u) * rmax, spec.lane * cmax
        elif spec.trajectory == "sway":
            r, c = spec.lane * rmax, (0.5 + 0.5 * np.sin(2.0 * np.pi * u)) * cmax
        elif spec.trajectory == "bounce":
            r, c = (0.5 + 0.5 * np.sin(2.0 * np.pi * u)) * rmax, spec.lane * cmax
        elif spec.trajectory == "orbit":
            r = (0.5 + 0.45 * np.sin(2.0 * np.pi * u)) * rmax
            c = (0.5 + 0.45 * np.cos(2.0 * np.pi * u)) * cmax
        elif spec.trajectory == "diagonal":
            r, c = u * rmax, ((u + spec.lane) % 1.0) * cmax
        else:
            raise ValueError(f"unknown trajectory '{spec.trajectory}'")
        rows[t] = int(round(r))
        cols[t] = int(round(c))
    return rows, cols


def render_motion(
    spec: MotionSpec, background: np.ndarray, frames: int, fg_size: int
) -> np.ndarray:
    """Composite the foreground patch over a background, frame by frame.

    The patch is opaque, so pixels under it depend only on the spec; everything
    outside it is the untouched background.
    """
    height, width, channels = background.shape
    patch = _foreground_patch(spec, fg_size, channels)
    rows, cols = motion_positions(spec, frames, height, width, fg_size)
    out = np.empty((frames, height, width, channels), dtype=np.float64)
    for t in range(frames):
        out[t] = background
        r, c = rows[t], cols[t]
        out[t, r : r + fg_size, c : c + fg_size, :] = patch
    return np.clip(out, 0.0, 1.0)


def foreground_masks(
    spec: MotionSpec, frames: int, height: int, width: int, fg_size: int
) -> np.ndarray:
    """(T, H, W) bool mask of foreground-occupied pixels per frame."""
    rows, cols = motion_positions(spec, frames, height, width, fg_size)
    mask = np.zeros((frames, height, width), dtype=bool)
    for t in range(frames):
        mask[t, rows[t] : rows[t] + fg_size, cols[t] : cols[t] + fg_size] = True
    return mask


def _snap_f32(frames: np.ndarray) -> np.ndarray:
    return frames.astype(np.float32).astype(np.float64)


def _video_rng(seed: int, domain_code: int, split_code: int, class_id: int, index: int):
    return np.random.default_rng([seed, domain_code, split_code, class_id, index])


def _draw_motion_spec(class_id: int, rng) -> MotionSpec:
    return MotionSpec(
        class_id=class_id,
        trajectory=TRAJECTORIES[class_id],
        texture_seed=int(rng.integers(0, 2**31)),
        phase=float(rng.uniform()),
        lane=float(rng.uniform()),
    )


def make_motion_spec(
    cfg: GenConfig, domain: str, split: str, class_id: int, index: int
) -> MotionSpec:
    """The exact motion spec `generate_domain_pair` uses for this video slot."""
    rng = _video_rng(cfg.seed, _DOMAIN_CODES[domain], _SPLIT_CODES[split], class_id, index)
    return _draw_motion_spec(class_id, rng)


def generate_domain_pair(cfg: GenConfig, min_frames: int = 64) -> tuple[SplitPair, SplitPair]:
    """Generate matched source/target datasets with train and test splits.

    Deterministic under `cfg.seed`: every video draws from an rng derived from
    (seed, domain, split, class, index), so generation order and worker count
    cannot change the result. `min_frames` is the frame count the fast clip
    sampler will need (fast clips x clip length).
    """
    cfg.validate()
    if cfg.frames < min_frames:
        raise ValueError(
            f"frames={cfg.frames} is too small for fast clip sampling; "
            f"need at least {min_frames}"
        )

    styles = {SOURCE: cfg.bg_source, TARGET: cfg.bg_target}
    counts = {"train": cfg.videos_per_class, "test": cfg.test_videos_per_class}
    pairs = {}
    next_id = 0
    for domain in (SOURCE, TARGET):
        dcode = _DOMAIN_CODES[domain]
        splits = {}
        for split in ("train", "test"):
            videos = []
            for class_id in range(cfg.num_classes):
                for index in range(counts[split]):
                    rng = _video_rng(cfg.seed, dcode, _SPLIT_CODES[split], class_id, index)
                    spec = _draw_motion_spec(class_id, rng)
                    background = make_background(
                        styles[domain], cfg.height, cfg.width, cfg.channels, rng
                    )
                    frames = render_motion(spec, background, cfg.frames, cfg.fg_size)
                    videos.append(
                        Video(
                            frames=_snap_f32(frames),
                            domain=domain,
                            video_id=next_id,
                            label=class_id,
                        )
                    )
                    next_id += 1
            splits[split] = Dataset(videos=videos, num_classes=cfg.num_classes, split=split)
        pairs[domain] = SplitPair(train=splits["train"], test=splits["test"])
    return pairs[SOURCE], pairs[TARGET]


def generator_background(
    cfg: GenConfig, domain: str, split: str, class_id: int, index: int
) -> np.ndarray:
    """Re-derive the exact background a generated video was composited over."""
    rng = _video_rng(cfg.seed, _DOMAIN_CODES[domain], _SPLIT_CODES[split], class_id, index)
    _draw_motion_spec(class_id, rng)
    style = cfg.bg_source if domain == SOURCE else cfg.bg_target
    return make_background(style, cfg.height, cfg.width, cfg.channels, rng)


# ---------------------------------------------------------------------------
# clip sampling


def sample_clips(
    video: Video,
    n: int,
    clip_len: int,
    rng=None,
    speed: str = FAST,
    jitter: bool = False,
) -> ClipBatch:
    """Sample `n` clips of `clip_len` consecutive frames, uniformly spaced.

    Fewer clips over the same span means a slower effective playback. With
    n > 1 the start stride is floor((T - clip_len) / (n - 1)) from frame 0;
    `jitter` (opt-in) shifts the whole grid by one shared random offset so
    starts stay strictly increasing.
    """
    total = video.num_frames
    if n < 1:
        raise ValueError("need at least one clip")
    if n * clip_len > total:
        raise ValueError(
            f"cannot sample {n} clips of length {clip_len} from {total} frames; "
            f"need at least {n * clip_len}"
        )
    if n == 1:
        starts = np.array([0])
        stride = 0
    else:
        stride = (total - clip_len) // (n - 1)
        starts = stride * np.arange(n)
    if jitter:
        if rng is None:
            raise ValueError("jitter sampling requires an rng")
        slack = total - clip_len - int(starts[-1])
        if slack > 0:
            starts = starts + int(rng.integers(0, slack + 1))
    clips = np.stack([video.frames[s : s + clip_len] for s in starts])
    return ClipBatch(
        video_id=video.video_id,
        clips=clips.astype(np.float64),
        speed=speed,
        provenance=video.provenance,
    )


def choose_slow_speed(candidates, rng) -> int:
    """Uniform draw from the slow-speed candidate set."""
    candidates = tuple(candidates)
    if not candidates:
        raise ValueError("slow-speed candidate set is empty")
    return int(candidates[rng.integers(len(candidates))])


# ---------------------------------------------------------------------------
# CVD1 on-disk format
#
# little-endian: magic "CVD1"; u32 version=1; u32 num_videos; u32 num_classes;
# then per video: u32 video_id; u8 domain (0=source, 1=target); i32 label
# (-1 = unlabeled); u32 T,H,W,C; T*H*W*C f32 intensities, row-major.

_MAGIC = b"CVD1"
_MAX_ELEMENTS = 1 << 28
_MAX_EXTENT = 1 << 20


def dataset_to_bytes(ds: Dataset) -> bytes:
    out = [_MAGIC, struct.pack("<III", 1, len(ds.videos), ds.num_classes)]
    for v in ds.videos:
        t, h, w, c = v.frames.shape
        label = -1 if v.label is None else int(v.label)
        out.append(
            struct.pack("<IBiIIII", v.video_id, _DOMAIN_CODES[v.domain], label, t, h, w, c)
        )
        out.append(np.ascontiguousarray(v.frames, dtype="<f4").tobytes())
    return b"".join(out)


def save_dataset(ds: Dataset, path):
    with open(path, "wb") as f:
        f.write(dataset_to_bytes(ds))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.buf):
            raise TruncatedFileError("unexpected EOF")
        chunk = self.buf[self.off : self.off + n]
        self.off += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def dataset_from_bytes(buf: bytes, split: str = "train") -> Dataset:
    r = _Reader(buf)
    if r.take(4) != _MAGIC:
        raise BadMagicError("bad magic")
    version, num_videos, num_classes = r.unpack("<III")
    if version != 1:
        raise FileFormatError(f"unsupported version {version}")
    videos = []
    for _ in range(num_videos):
        video_id, domain_code, label, t, h, w, c = r.unpack("<IBiIIII")
        if domain_code not in _DOMAIN_NAMES:
            raise FileFormatError(f"invalid domain tag {domain_code}")
        extents = (t, h, w, c)
        if any(e == 0 or e > _MAX_EXTENT for e in extents) or t * h * w * c > _MAX_ELEMENTS:
            raise ShapeOverflowError(f"implausible video extents {extents}")
        payload = r.take(t * h * w * c * 4)
        frames = np.frombuffer(payload, dtype="<f4").reshape(t, h, w, c).astype(np.float64)
        videos.append(
            Video(
                frames=frames,
                domain=_DOMAIN_NAMES[domain_code],
                video_id=video_id,
                label=None if label < 0 else label,
            )
        )
    if r.off != len(buf):
        raise FileFormatError(f"{len(buf) - r.off} trailing bytes after last video")
    return Dataset(videos=videos, num_classes=num_classes, split=split)


def load_dataset(path, split: str = "train") -> Dataset:
    with open(path, "rb") as f:
        return dataset_from_bytes(f.read(), split=split)
