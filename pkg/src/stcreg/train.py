"""Siamese pretraining loop: double crop, augment, forward both branches,
consistency losses, SGD with momentum.

One logical thread owns the state; every stochastic choice comes from a
single seeded generator, so a whole run is a pure function of (dataset,
config).  Parameter updates rebind node values to fresh arrays; graphs
built during a step capture the old arrays and stay valid.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Node
from .augment import (
    AugmentVariant,
    MixupRecord,
    gaussian_noise,
    inter_video_mixup,
    intra_video_mixup,
    video_cutmix,
    video_mixup,
)
from .errors import DimensionError
from .losses import (
    DEFAULT_ALPHA,
    DEFAULT_GAMMA,
    LossReport,
    channel_consistency_loss,
    combined_loss,
    temporal_consistency_loss,
)
from .model import (
    ModelParams,
    backbone_forward,
    channel_head,
    spatial_max_pool,
)
from .transforms import (
    TransformId,
    invert_transform_on_feature,
    sample_transform,
    transform_clip,
)

# optional extension point: a callable mapping the clean-branch feature
# node to an extra scalar loss node (any pretext task built on top)
PretextHead = Callable[[Node], Node]

LOG_COLUMNS = (
    "step",
    "epoch",
    "lr",
    "l_tw",
    "l_cw",
    "total",
    "gamma",
    "collapse",
    "variant",
    "lambda",
    "k",
)


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    weight_decay: float = 5e-4
    momentum: float = 0.9
    epochs: int = 10
    lr_decay_every: int = 10
    lr_decay_factor: float = 0.1
    batch_size: int = 8
    gamma: float = DEFAULT_GAMMA
    alpha: float = DEFAULT_ALPHA
    crop_size: tuple[int, int, int] = (8, 16, 16)
    seed: int = 0
    augment_variant: AugmentVariant = AugmentVariant.INTRA
    noise_sigma: float = 0.1

    def __post_init__(self):
        object.__setattr__(self, "crop_size", tuple(int(v) for v in self.crop_size))
        object.__setattr__(
            self, "augment_variant", AugmentVariant(self.augment_variant)
        )
        for name in ("learning_rate", "weight_decay", "momentum", "gamma", "noise_sigma"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.epochs < 0 or self.batch_size < 1 or self.lr_decay_every < 1:
            raise ValueError("epochs, batch_size and lr_decay_every must be positive")
        if not 0 < self.lr_decay_factor <= 1:
            raise ValueError("lr_decay_factor must be in (0, 1]")
        if len(self.crop_size) != 3 or self.crop_size[1] != self.crop_size[2]:
            raise ValueError(f"crop must be (T, H, W) with H == W, got {self.crop_size}")


@dataclass
class TrainState:
    params: ModelParams
    velocities: dict[Node, np.ndarray] = field(default_factory=dict)
    step: int = 0
    epoch: int = 0


@dataclass(frozen=True)
class StepResult:
    """Everything one optimization step reports back for logging."""

    report: LossReport
    lr: float
    collapse: float
    records: tuple[MixupRecord, ...]
    transforms: tuple[TransformId, ...]


def learning_rate_for_epoch(config: TrainConfig, epoch: int) -> float:
    """Stepwise decay: lr0 * factor^(epoch // every)."""
    return config.learning_rate * config.lr_decay_factor ** (epoch // config.lr_decay_every)


def double_crop(
    video: np.ndarray, crop: tuple[int, int, int], rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Two crops sharing one temporal window but independent spatial offsets.

    The second offset is redrawn once if it collides with the first, so
    the branches see different spatial locations whenever the video is
    larger than the crop.
    """
    if video.ndim != 4:
        raise DimensionError(f"expected a C,T,H,W video, got {video.shape}")
    tc, hc, wc = crop
    _, t, h, w = video.shape
    if tc > t or hc > h or wc > w:
        raise DimensionError(f"crop {crop} larger than video {video.shape[1:]}")
    t0 = int(rng.integers(t - tc + 1))
    r1 = int(rng.integers(h - hc + 1))
    c1 = int(rng.integers(w - wc + 1))
    r2 = int(rng.integers(h - hc + 1))
    c2 = int(rng.integers(w - wc + 1))
    if (r2, c2) == (r1, c1):
        r2 = int(rng.integers(h - hc + 1))
        c2 = int(rng.integers(w - wc + 1))
    x_c = video[:, t0 : t0 + tc, r1 : r1 + hc, c1 : c1 + wc].copy()
    x_n = video[:, t0 : t0 + tc, r2 : r2 + hc, c2 : c2 + wc].copy()
    return x_c, x_n


def _augment_noise_clip(
    clip: np.ndarray,
    donor: np.ndarray,
    config: TrainConfig,
    rng: np.random.Generator,
) -> tuple[np.ndarray, MixupRecord]:
    """Dispatch on the configured variant; synthesize a record when the
    variant has no natural (lambda, k) to report."""
    variant = config.augment_variant
    if variant is AugmentVariant.INTRA:
        return intra_video_mixup(clip, config.alpha, rng)
    if variant is AugmentVariant.INTER:
        return inter_video_mixup(clip, donor, config.alpha, rng)
    if variant is AugmentVariant.VIDEO_MIXUP:
        out = video_mixup(clip, donor, config.alpha, rng)
        return out, MixupRecord(variant, 0.0, 0)
    if variant is AugmentVariant.CUTMIX:
        out = video_cutmix(clip, donor, rng)
        return out, MixupRecord(variant, 0.0, 0)
    if variant is AugmentVariant.GAUSSIAN_NOISE:
        out = gaussian_noise(clip, config.noise_sigma, rng)
        return out, MixupRecord(variant, 0.0, 0)
    raise ValueError(f"unknown augmentation variant {variant!r}")


def collapse_metric(descriptors: Sequence[np.ndarray] | np.ndarray) -> float:
    """Mean across-batch standard deviation of descriptor coordinates.

    Zero means every clip maps to the same descriptor, the degenerate
    solution a consistency-only objective can fall into.
    """
    stack = np.asarray(descriptors, dtype=np.float64)
    if stack.ndim < 2 or stack.shape[0] < 2:
        raise ValueError("collapse metric needs at least two descriptors")
    return float(stack.std(axis=0).mean())


def _mean_of(nodes: list[Node]) -> Node:
    acc = nodes[0]
    for n in nodes[1:]:
        acc = ad.add(acc, n)
    return ad.scale(acc, 1.0 / len(nodes))


def pretrain_step(
    state: TrainState,
    batch: Sequence[np.ndarray],
    config: TrainConfig,
    rng: np.random.Generator,
    pretext_head: PretextHead | None = None,
) -> tuple[TrainState, StepResult]:
    """One SGD step over a batch of raw videos.

    Per clip: crop twice, transform + augment the noise crop, run both
    branches through the shared backbone, realign the noise feature with
    the inverse transform, pool, and score both losses.  Per-clip losses
    are averaged over the batch before the update.
    """
    if not len(batch):
        raise ValueError("batch must be non-empty")
    params = state.params
    lr = learning_rate_for_epoch(config, state.epoch)

    crops = [double_crop(np.asarray(v, dtype=np.float64), config.crop_size, rng) for v in batch]

    noise_clips: list[np.ndarray] = []
    transforms: list[TransformId] = []
    records: list[MixupRecord] = []
    for i, (_, x_n) in enumerate(crops):
        t = sample_transform(rng)
        donor = crops[(i + 1) % len(crops)][1]
        augmented, record = _augment_noise_clip(transform_clip(x_n, t), donor, config, rng)
        noise_clips.append(augmented)
        transforms.append(t)
        records.append(record)

    temporal_terms: list[Node] = []
    channel_terms: list[Node] = []
    pretext_terms: list[Node] = []
    clean_descriptors: list[np.ndarray] = []
    for (x_c, _), x_n, t in zip(crops, noise_clips, transforms):
        f_clean = backbone_forward(params, x_c)
        f_noise = backbone_forward(params, x_n)
        d_clean = spatial_max_pool(f_clean)
        d_noise = spatial_max_pool(invert_transform_on_feature(f_noise, t))
        temporal_terms.append(temporal_consistency_loss(d_clean, d_noise))
        z_clean = channel_head(params.head_1, d_clean)
        z_noise = channel_head(params.head_2, d_noise)
        channel_terms.append(channel_consistency_loss(z_clean, z_noise))
        clean_descriptors.append(d_clean.value)
        if pretext_head is not None:
            pretext_terms.append(pretext_head(f_clean))

    l_temporal = _mean_of(temporal_terms)
    l_channel = _mean_of(channel_terms)
    total, report = combined_loss(l_temporal, l_channel, config.gamma)
    objective = total
    if pretext_terms:
        objective = ad.add(objective, _mean_of(pretext_terms))

    grads = ad.backward(objective)
    _sgd_update(state, grads, lr, config)

    collapse = (
        collapse_metric(clean_descriptors) if len(clean_descriptors) >= 2 else float("nan")
    )
    state.step += 1
    return state, StepResult(
        report=report,
        lr=lr,
        collapse=collapse,
        records=tuple(records),
        transforms=tuple(transforms),
    )


def _sgd_update(state: TrainState, grads: dict[Node, np.ndarray], lr: float, config: TrainConfig):
    """buffer <- momentum*buffer + grad + wd*param;  param <- param - lr*buffer."""
    for node in state.params.unique_parameters():
        g = grads.get(node)
        if g is None:
            g = np.zeros_like(node.value)
        buf = state.velocities.get(node)
        if buf is None:
            buf = np.zeros_like(node.value)
        buf = config.momentum * buf + g + config.weight_decay * node.value
        state.velocities[node] = buf
        node.value = node.value - lr * buf


def run_pretraining(
    videos: Sequence[np.ndarray],
    params: ModelParams,
    config: TrainConfig,
    log_path=None,
    pretext_head: PretextHead | None = None,
) -> tuple[TrainState, list[StepResult]]:
    """Full pretraining: epochs of shuffled batches from one seeded stream.

    Writes one CSV row per step when ``log_path`` is given (columns
    ``LOG_COLUMNS``; the variant/lambda/k columns describe the first clip
    of the batch).  Deterministic: reruns with the same inputs produce
    byte-identical logs.
    """
    rng = np.random.default_rng(config.seed)
    state = TrainState(params=params)
    history: list[StepResult] = []

    writer = None
    handle = None
    if log_path is not None:
        handle = open(log_path, "w", newline="")
        writer = csv.writer(handle)
        writer.writerow(LOG_COLUMNS)
    try:
        for epoch in range(config.epochs):
            state.epoch = epoch
            order = rng.permutation(len(videos))
            for start in range(0, len(order), config.batch_size):
                batch = [videos[i] for i in order[start : start + config.batch_size]]
                state, result = pretrain_step(state, batch, config, rng, pretext_head)
                history.append(result)
                if writer is not None:
                    first = result.records[0]
                    writer.writerow(
                        [
                            state.step,
                            epoch,
                            repr(result.lr),
                            repr(result.report.temporal),
                            repr(result.report.channel),
                            repr(result.report.total),
                            repr(result.report.gamma),
                            repr(result.collapse),
                            first.variant.value,
                            repr(first.lam),
                            first.source_frame_index,
                        ]
                    )
    finally:
        if handle is not None:
            handle.close()
    return state, history
