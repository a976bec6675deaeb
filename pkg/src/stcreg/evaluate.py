"""Frozen-feature evaluations: linear probe and nearest-neighbor retrieval.

Both work on plain float arrays extracted from the backbone, so they
measure representation quality without touching the backbone weights.
Everything here is deterministic (zero-initialized probe, stable sorts).
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .model import ModelParams, backbone_forward, channel_head, spatial_max_pool


def extract_features(
    params: ModelParams, clips: Sequence[np.ndarray], kind: str = "descriptor"
) -> np.ndarray:
    """Per-clip feature vectors from the frozen backbone.

    ``descriptor``: the C'×T' spatial-max descriptor, flattened.
    ``channel``: the C' logits of the first head.
    """
    rows = []
    for clip in clips:
        descriptor = spatial_max_pool(backbone_forward(params, clip))
        if kind == "descriptor":
            rows.append(descriptor.value.ravel().copy())
        elif kind == "channel":
            rows.append(channel_head(params.head_1, descriptor).value.copy())
        else:
            raise ValueError(f"unknown feature kind {kind!r}")
    return np.asarray(rows, dtype=np.float64)


def _softmax_rows(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def linear_probe(
    train_features: np.ndarray,
    train_labels: Sequence[int],
    test_features: np.ndarray,
    test_labels: Sequence[int],
    epochs: int = 300,
    lr: float = 0.5,
) -> float:
    """Train a single linear layer with cross-entropy; return test accuracy.

    Features are standardized with train-set statistics and the weights
    start at zero, so the probe itself introduces no randomness.
    """
    x_train = np.asarray(train_features, dtype=np.float64)
    y_train = np.asarray(train_labels, dtype=np.int64)
    x_test = np.asarray(test_features, dtype=np.float64)
    y_test = np.asarray(test_labels, dtype=np.int64)
    classes = np.unique(np.concatenate([y_train, y_test]))
    if classes.size < 2:
        raise ValueError("linear probe needs at least two classes")
    if x_train.shape[1] != x_test.shape[1]:
        raise ValueError(
            f"feature widths differ: train {x_train.shape[1]} vs test {x_test.shape[1]}"
        )
    remap = {c: i for i, c in enumerate(classes.tolist())}
    y_train = np.array([remap[c] for c in y_train.tolist()])
    y_test = np.array([remap[c] for c in y_test.tolist()])
    k = classes.size

    mean = x_train.mean(axis=0)
    std = x_train.std(axis=0) + 1e-8
    x_train = (x_train - mean) / std
    x_test = (x_test - mean) / std
    # bias folded in as a constant feature
    x_train = np.hstack([x_train, np.ones((len(x_train), 1))])
    x_test = np.hstack([x_test, np.ones((len(x_test), 1))])

    w = np.zeros((x_train.shape[1], k))
    onehot = np.eye(k)[y_train]
    n = len(x_train)
    for _ in range(int(epochs)):
        probs = _softmax_rows(x_train @ w)
        grad = x_train.T @ (probs - onehot) / n
        w -= lr * grad
    predictions = np.argmax(x_test @ w, axis=1)
    return float(np.mean(predictions == y_test))


def retrieval_eval(
    query_features: np.ndarray,
    query_labels: Sequence[int],
    gallery_features: np.ndarray,
    gallery_labels: Sequence[int],
    k: int = 1,
    exclude_self: bool = False,
) -> float:
    """Recall@k under cosine similarity.

    A query scores 1 if any of its k nearest gallery items shares its
    label.  With ``exclude_self`` the diagonal is masked, for the common
    case where the query set is the gallery itself.
    """
    q = np.asarray(query_features, dtype=np.float64)
    g = np.asarray(gallery_features, dtype=np.float64)
    qy = np.asarray(query_labels)
    gy = np.asarray(gallery_labels)
    if q.shape[1] != g.shape[1]:
        raise ValueError(f"feature widths differ: query {q.shape[1]} vs gallery {g.shape[1]}")
    available = len(g) - (1 if exclude_self else 0)
    if not 1 <= k <= available:
        raise ValueError(f"k={k} outside [1, {available}] for gallery of {len(g)}")
    if exclude_self and len(q) != len(g):
        raise ValueError("exclude_self requires query and gallery of equal size")

    qn = q / (np.linalg.norm(q, axis=1, keepdims=True) + 1e-12)
    gn = g / (np.linalg.norm(g, axis=1, keepdims=True) + 1e-12)
    sims = qn @ gn.T
    if exclude_self:
        np.fill_diagonal(sims, -np.inf)
    top = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    hits = (gy[top] == qy[:, None]).any(axis=1)
    return float(hits.mean())
