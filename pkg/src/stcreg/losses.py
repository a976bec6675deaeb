"""Consistency losses between the clean and noise branches.

Two terms: a temporal one (mean squared error between the C'×T'
descriptors, after the noise-branch feature grid has been realigned by
the inverse transform) and a channel one (KL divergence between the two
heads' softmax distributions, clean branch first).  The total is
``temporal + gamma * channel``; gradients flow through both branches and
both KL arguments.
"""

from __future__ import annotations

from dataclasses import dataclass

from . import autodiff as ad
from .autodiff import Node
from .errors import DimensionError

DEFAULT_GAMMA = 0.1
DEFAULT_ALPHA = 1.0


@dataclass(frozen=True)
class LossReport:
    """Scalar snapshot of one loss evaluation, as logged per step."""

    temporal: float
    channel: float
    total: float
    gamma: float


def temporal_consistency_loss(d_clean: Node, d_noise_aligned: Node) -> Node:
    """Mean squared error over all C'·T' descriptor entries.

    The mean (rather than sum) keeps the scale of the loss, and with it
    the meaning of gamma, independent of feature-grid size.
    """
    if d_clean.value.ndim != 2:
        raise DimensionError(f"expected C'xT' descriptors, got {d_clean.shape}")
    diff = ad.sub(d_noise_aligned, d_clean)
    return ad.reduce_mean(ad.mul(diff, diff), (0, 1))


def channel_consistency_loss(logits_clean: Node, logits_noise: Node) -> Node:
    """KL between head outputs, with the clean branch as the reference P."""
    return ad.softmax_kl(logits_clean, logits_noise)


def combined_loss(l_temporal: Node, l_channel: Node, gamma: float = DEFAULT_GAMMA):
    """Weighted sum plus a plain-float report for logging."""
    if gamma < 0:
        raise ValueError(f"gamma must be non-negative, got {gamma}")
    total = ad.add(l_temporal, ad.scale(l_channel, gamma))
    report = LossReport(
        temporal=float(l_temporal.value),
        channel=float(l_channel.value),
        total=float(total.value),
        gamma=float(gamma),
    )
    return total, report
