"""Diagnostic visualizations: the 16×T' consistency matrix and response
heatmaps.

The matrix probes how stable descriptors are under the whole transform
set: each row applies one transform to the clip, runs the backbone,
undoes the transform on the feature grid, pools, and averages over
channels.  Row i and row i+8 differ only by temporal reversal of the
input, so their gap measures temporal-flip consistency directly.

Heatmaps collapse a feature map to input-sized grayscale (temporal max,
channel mean, nearest-neighbor upscale) and are written as binary PGM.
"""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from .model import ModelParams, backbone_forward, spatial_max_pool
from .transforms import ALL_TRANSFORMS, invert_transform_on_feature, transform_clip


def consistency_matrix(params: ModelParams, clip: np.ndarray) -> np.ndarray:
    """One row per transform (fixed enumeration order), length T'."""
    rows = []
    for t in ALL_TRANSFORMS:
        feature = backbone_forward(params, transform_clip(np.asarray(clip, np.float64), t))
        descriptor = spatial_max_pool(invert_transform_on_feature(feature, t))
        rows.append(descriptor.value.mean(axis=0))
    return np.asarray(rows)


def write_consistency_csv(path, matrix: np.ndarray) -> None:
    """CSV with the transform identity (flip, rotation ints) leading each row."""
    t_prime = matrix.shape[1]
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["flip", "rotation"] + [f"t{i}" for i in range(t_prime)])
        for t, row in zip(ALL_TRANSFORMS, matrix):
            flip, rot = t.as_ints()
            writer.writerow([flip, rot] + [repr(v) for v in row.tolist()])


def viz_consistency_matrix(params: ModelParams, clip: np.ndarray, out_csv) -> np.ndarray:
    matrix = consistency_matrix(params, clip)
    write_consistency_csv(out_csv, matrix)
    return matrix


def temporal_flip_gap(matrix: np.ndarray) -> float:
    """Mean |row i − row i+8| over the eight transform pairs.

    Rows are already grid-aligned by the inverse transform, so the pairs
    compare directly; smaller means more consistent under time reversal.
    """
    half = matrix.shape[0] // 2
    return float(np.abs(matrix[:half] - matrix[half:]).mean())


def _nearest_neighbor_upscale(img: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """Upscale the last two axes by floor index mapping."""
    h, w = img.shape[-2:]
    out_h, out_w = out_hw
    rows = (np.arange(out_h) * h) // out_h
    cols = (np.arange(out_w) * w) // out_w
    return img[..., rows[:, None], cols[None, :]]


def heatmap_from_feature(feature: np.ndarray, out_hw: tuple[int, int]) -> np.ndarray:
    """C',T',H',W' feature -> uint8 grayscale of the requested size.

    Temporal max per channel, per-channel nearest-neighbor upscale, mean
    over channels, then min-max scaling to [0, 255].  A constant feature
    has nothing to normalize and maps to uniform mid-gray (128).
    """
    per_channel = feature.max(axis=1)  # C',H',W'
    enlarged = _nearest_neighbor_upscale(per_channel, out_hw)
    merged = enlarged.mean(axis=0)
    span = merged.max() - merged.min()
    if span == 0.0:
        return np.full(out_hw, 128, dtype=np.uint8)
    scaled = (merged - merged.min()) / span * 255.0
    return np.rint(scaled).astype(np.uint8)


def write_pgm(path, image: np.ndarray) -> None:
    """Binary (P5) grayscale with maxval 255."""
    image = np.ascontiguousarray(image, dtype=np.uint8)
    h, w = image.shape
    with open(path, "wb") as f:
        f.write(b"P5\n%d %d\n255\n" % (w, h))
        f.write(image.tobytes())


def viz_heatmap(params: ModelParams, clip: np.ndarray, out_pgm) -> np.ndarray:
    """Render and write the response heatmap; returns the uint8 image."""
    feature = backbone_forward(params, np.asarray(clip, np.float64)).value
    image = heatmap_from_feature(feature, tuple(clip.shape[2:]))
    write_pgm(out_pgm, image)
    return image
