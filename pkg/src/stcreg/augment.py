"""Clip-to-clip augmentations: frame mixing and its ablation variants.

The main augmentation interpolates every frame of a clip with one fixed
frame drawn from the clip itself, which perturbs static appearance while
scaling frame-to-frame differences by a constant factor (motion is
dimmed, never reordered).  The other four variants exist purely for
side-by-side comparison: mixing against another clip's frame, whole-clip
interpolation, per-frame patch replacement, and additive noise shared by
all frames.

All functions are pure given an owned ``numpy.random.Generator``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import DimensionError


class AugmentVariant(str, Enum):
    INTRA = "intra"
    INTER = "inter"
    VIDEO_MIXUP = "video-mixup"
    CUTMIX = "cutmix"
    GAUSSIAN_NOISE = "gaussian-noise"


@dataclass(frozen=True)
class MixupRecord:
    """What a stochastic augmentation actually drew, for the step logs."""

    variant: AugmentVariant
    lam: float
    source_frame_index: int

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lam must be in [0, 1], got {self.lam}")
        if self.source_frame_index < 0:
            raise ValueError("source_frame_index must be non-negative")


def _check_clip(clip: np.ndarray) -> np.ndarray:
    clip = np.asarray(clip, dtype=np.float64)
    if clip.ndim != 4:
        raise DimensionError(f"expected a C,T,H,W clip, got shape {clip.shape}")
    return clip


def _check_pair(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = _check_clip(a), _check_clip(b)
    if a.shape != b.shape:
        raise DimensionError(f"clip shapes differ: {a.shape} vs {b.shape}")
    return a, b


def mix_frames(clip: np.ndarray, lam: float, frame: np.ndarray) -> np.ndarray:
    """Blend one fixed C,H,W frame into every frame of the clip."""
    return (1.0 - lam) * clip + lam * frame[:, None]


def intra_video_mixup(
    clip: np.ndarray, alpha: float, rng: np.random.Generator
) -> tuple[np.ndarray, MixupRecord]:
    """Mix every frame with one frame drawn from the clip itself.

    lam ~ Beta(alpha, alpha) and the source index k is uniform; the same
    (lam, k) applies to all frames, so frame k itself is a fixed point.
    """
    clip = _check_clip(clip)
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    t = clip.shape[1]
    if t < 2:
        raise ValueError("clip has a single frame; no distinct frame to mix with")
    lam = float(rng.beta(alpha, alpha))
    k = int(rng.integers(t))
    out = mix_frames(clip, lam, clip[:, k])
    return out, MixupRecord(AugmentVariant.INTRA, lam, k)


def inter_video_mixup(
    clip: np.ndarray, other: np.ndarray, alpha: float, rng: np.random.Generator
) -> tuple[np.ndarray, MixupRecord]:
    """Mix every frame with one fixed frame drawn from another clip."""
    clip, other = _check_pair(clip, other)
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    lam = float(rng.beta(alpha, alpha))
    k = int(rng.integers(other.shape[1]))
    out = mix_frames(clip, lam, other[:, k])
    return out, MixupRecord(AugmentVariant.INTER, lam, k)


def video_mixup(
    clip_a: np.ndarray, clip_b: np.ndarray, alpha: float, rng: np.random.Generator
) -> np.ndarray:
    """Frame-wise interpolation of two whole clips with a single lam."""
    clip_a, clip_b = _check_pair(clip_a, clip_b)
    lam = float(rng.beta(alpha, alpha))
    return (1.0 - lam) * clip_a + lam * clip_b


def video_cutmix(
    clip_a: np.ndarray, clip_b: np.ndarray, rng: np.random.Generator
) -> np.ndarray:
    """Per frame, paste one random rectangle from a random frame of clip_b.

    The rectangle covers a fraction of the area drawn uniformly from
    [0.1, 0.5] and is sampled independently for every frame.
    """
    clip_a, clip_b = _check_pair(clip_a, clip_b)
    _, t, h, w = clip_a.shape
    if h < 2 or w < 2:
        raise DimensionError(f"frames must be at least 2x2 for cutmix, got {h}x{w}")
    out = clip_a.copy()
    for j in range(t):
        frac = rng.uniform(0.1, 0.5)
        rh = max(1, int(round(h * np.sqrt(frac))))
        rw = max(1, int(round(w * np.sqrt(frac))))
        r0 = int(rng.integers(h - rh + 1))
        c0 = int(rng.integers(w - rw + 1))
        k = int(rng.integers(t))
        out[:, j, r0 : r0 + rh, c0 : c0 + rw] = clip_b[:, k, r0 : r0 + rh, c0 : c0 + rw]
    return out


def gaussian_noise(
    clip: np.ndarray, sigma: float, rng: np.random.Generator
) -> np.ndarray:
    """Add one C,H,W Gaussian field to every frame (identical per frame)."""
    clip = _check_clip(clip)
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    field = rng.normal(0.0, sigma, size=(clip.shape[0],) + clip.shape[2:])
    return clip + field[:, None]
