"""The 16-element flip × rotation group acting on C,T,H,W arrays.

A transform is a flip choice (none, left-right, temporal, or temporal
plus left-right) followed by a quarter-turn rotation of every H×W slice.
The 16 combinations form a group (the spatial dihedral group of the
square crossed with temporal reversal), so composition and inversion are
closed and exact.  Applying a transform only permutes array entries;
no arithmetic is performed.

Convention: the flip is applied first, then the rotation, and rotations
are counter-clockwise.  Quarter turns require square spatial extents.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from . import autodiff as ad
from .errors import DimensionError


class Flip(IntEnum):
    NONE = 0
    LEFT_RIGHT = 1
    TEMPORAL = 2
    TEMPORAL_LEFT_RIGHT = 3


class Rotation(IntEnum):
    DEG_0 = 0
    DEG_90 = 1
    DEG_180 = 2
    DEG_270 = 3


@dataclass(frozen=True)
class TransformId:
    flip: Flip
    rotation: Rotation

    def as_ints(self) -> tuple[int, int]:
        """(flip 0-3, rotation 0-3), the serialized form used in logs."""
        return (int(self.flip), int(self.rotation))

    @property
    def reverses_time(self) -> bool:
        return bool(self.flip & 2)

    @property
    def mirrors_width(self) -> bool:
        return bool(self.flip & 1)


IDENTITY = TransformId(Flip.NONE, Rotation.DEG_0)

# Fixed enumeration order: flip-major, rotation-minor.  Indices 0-7 leave
# temporal order intact; index i+8 equals index i composed with temporal
# reversal, which is what the consistency-matrix rows rely on.
ALL_TRANSFORMS: tuple[TransformId, ...] = tuple(
    TransformId(f, r) for f in Flip for r in Rotation
)


def sample_transform(rng: np.random.Generator) -> TransformId:
    """Draw uniformly from all 16 transforms."""
    return ALL_TRANSFORMS[int(rng.integers(len(ALL_TRANSFORMS)))]


def _check_square(shape: tuple[int, ...], t: TransformId) -> None:
    if t.rotation in (Rotation.DEG_90, Rotation.DEG_270) and shape[2] != shape[3]:
        raise DimensionError(
            f"quarter-turn rotation needs square spatial dims, got H={shape[2]} W={shape[3]}"
        )


def transform_clip(clip: np.ndarray, t: TransformId) -> np.ndarray:
    """Apply ``t`` to a C,T,H,W array (flip first, then rotate)."""
    if clip.ndim != 4:
        raise DimensionError(f"expected a C,T,H,W array, got shape {clip.shape}")
    _check_square(clip.shape, t)
    out = clip
    if t.reverses_time:
        out = np.flip(out, axis=1)
    if t.mirrors_width:
        out = np.flip(out, axis=3)
    if t.rotation != Rotation.DEG_0:
        out = np.rot90(out, int(t.rotation), axes=(2, 3))
    return np.ascontiguousarray(out)


def transform_feature(feature: ad.Node, t: TransformId) -> ad.Node:
    """Differentiable version of :func:`transform_clip` for feature nodes.

    Pure index permutation, so the gradient is the inverse permutation.
    """
    if feature.value.ndim != 4:
        raise DimensionError(f"expected a C,T,H,W node, got shape {feature.shape}")
    _check_square(feature.shape, t)
    out = feature
    flip_axes = []
    if t.reverses_time:
        flip_axes.append(1)
    if t.mirrors_width:
        flip_axes.append(3)
    if flip_axes:
        out = ad.flip(out, flip_axes)
    if t.rotation != Rotation.DEG_0:
        out = ad.rot90(out, int(t.rotation))
    return out


def invert_transform_on_feature(feature: ad.Node, t: TransformId) -> ad.Node:
    """Undo the geometric action of ``t`` on a feature-map node.

    Aligns the feature grid of a transformed input with the untransformed
    one; exact because only indices move.
    """
    return transform_feature(feature, invert(t))


def _flip_from_bits(time_bit: int, width_bit: int) -> Flip:
    return Flip((time_bit << 1) | width_bit)


def compose(t1: TransformId, t2: TransformId) -> TransformId:
    """The single transform equal to applying ``t1`` then ``t2``.

    Temporal reversal commutes with everything and composes by parity.
    Spatially each element is "mirror the width axis w times, then rotate
    a quarter turns"; conjugating a rotation past a mirror negates it,
    which gives the closed form below.  Verified exhaustively against
    direct application in the test suite.
    """
    time_bit = int(t1.reverses_time) ^ int(t2.reverses_time)
    width_bit = int(t1.mirrors_width) ^ int(t2.mirrors_width)
    a1, a2 = int(t1.rotation), int(t2.rotation)
    if t2.mirrors_width:
        a1 = -a1
    return TransformId(_flip_from_bits(time_bit, width_bit), Rotation((a1 + a2) % 4))


def invert(t: TransformId) -> TransformId:
    """The unique transform with ``compose(t, invert(t)) == IDENTITY``.

    Pure rotations invert by negating the angle; every mirrored element
    is an involution, so it is its own spatial inverse.
    """
    a = int(t.rotation)
    if not t.mirrors_width:
        a = (-a) % 4
    return TransformId(t.flip, Rotation(a))
