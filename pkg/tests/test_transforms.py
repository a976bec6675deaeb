import time

import numpy as np
import pytest

from stcreg import autodiff as ad
from stcreg.errors import DimensionError
from stcreg.transforms import (
    ALL_TRANSFORMS,
    IDENTITY,
    Flip,
    Rotation,
    TransformId,
    compose,
    invert,
    invert_transform_on_feature,
    sample_transform,
    transform_clip,
    transform_feature,
)


def pattern_clip(shape=(2, 3, 4, 4)):
    """Distinct integer entries so any permutation mix-up is visible."""
    return np.arange(np.prod(shape), dtype=np.float64).reshape(shape)


def reference_apply(clip, t):
    """Independent composition of axis reversals (oracle path)."""
    out = clip.copy()
    if t.flip in (Flip.TEMPORAL, Flip.TEMPORAL_LEFT_RIGHT):
        out = out[:, ::-1]
    if t.flip in (Flip.LEFT_RIGHT, Flip.TEMPORAL_LEFT_RIGHT):
        out = out[:, :, :, ::-1]
    for _ in range(int(t.rotation)):
        # one CCW quarter turn: transpose H,W then reverse the new H axis
        out = out.transpose(0, 1, 3, 2)[:, :, ::-1]
    return out.copy()


def test_sixteen_distinct_elements():
    assert len(ALL_TRANSFORMS) == 16
    assert len(set(ALL_TRANSFORMS)) == 16
    clip = pattern_clip()
    images = {transform_clip(clip, t).tobytes() for t in ALL_TRANSFORMS}
    assert len(images) == 16  # the actions are distinct too


def test_identity_leaves_clip_unchanged():
    clip = pattern_clip()
    assert np.array_equal(transform_clip(clip, IDENTITY), clip)


def test_quarter_turn_hand_case():
    clip = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    out = transform_clip(clip, TransformId(Flip.NONE, Rotation.DEG_90))
    np.testing.assert_array_equal(out[0, 0], [[2.0, 4.0], [1.0, 3.0]])


def test_temporal_flip_plus_180():
    clip = pattern_clip((1, 2, 2, 2))
    out = transform_clip(clip, TransformId(Flip.TEMPORAL, Rotation.DEG_180))
    oracle = clip[:, ::-1][:, :, ::-1, :][:, :, :, ::-1]
    np.testing.assert_array_equal(out, oracle)


@pytest.mark.parametrize("t", ALL_TRANSFORMS, ids=lambda t: f"f{int(t.flip)}r{int(t.rotation)}")
def test_apply_matches_axis_permutation_oracle(t):
    clip = pattern_clip()
    np.testing.assert_array_equal(transform_clip(clip, t), reference_apply(clip, t))


def test_apply_is_bijection_on_entries():
    clip = pattern_clip()
    for t in ALL_TRANSFORMS:
        out = transform_clip(clip, t)
        assert out.sum() == clip.sum()
        assert sorted(out.ravel().tolist()) == sorted(clip.ravel().tolist())


def test_temporal_flip_elements_reverse_time():
    # frames constant-valued 0..T-1 expose temporal order directly
    t_len = 3
    clip = np.broadcast_to(
        np.arange(t_len, dtype=np.float64)[None, :, None, None], (1, t_len, 4, 4)
    ).copy()
    for t in ALL_TRANSFORMS:
        out = transform_clip(clip, t)
        order = out[0, :, 0, 0]
        if t.reverses_time:
            np.testing.assert_array_equal(order, [2.0, 1.0, 0.0])
        else:
            np.testing.assert_array_equal(order, [0.0, 1.0, 2.0])
    assert sum(t.reverses_time for t in ALL_TRANSFORMS) == 8


def test_non_square_quarter_turn_rejected():
    clip = pattern_clip((1, 2, 3, 4))
    with pytest.raises(DimensionError):
        transform_clip(clip, TransformId(Flip.NONE, Rotation.DEG_90))
    # half-turns are fine on non-square grids
    transform_clip(clip, TransformId(Flip.NONE, Rotation.DEG_180))


def test_group_laws_exhaustive():
    started = time.monotonic()
    clip = pattern_clip()
    images = {t: transform_clip(clip, t).tobytes() for t in ALL_TRANSFORMS}

    # closure: the composition table matches actual application everywhere
    table = {}
    for t1 in ALL_TRANSFORMS:
        once = transform_clip(clip, t1)
        for t2 in ALL_TRANSFORMS:
            t3 = compose(t1, t2)
            assert t3 in ALL_TRANSFORMS
            table[(t1, t2)] = t3
            assert transform_clip(once, t2).tobytes() == images[t3]

    # identity
    for t in ALL_TRANSFORMS:
        assert compose(t, IDENTITY) == t
        assert compose(IDENTITY, t) == t

    # unique inverses
    for t in ALL_TRANSFORMS:
        inv = invert(t)
        assert compose(t, inv) == IDENTITY
        assert compose(inv, t) == IDENTITY
        others = [u for u in ALL_TRANSFORMS if compose(t, u) == IDENTITY]
        assert others == [inv]

    # associativity over all 16^3 triples, via the verified table
    for t1 in ALL_TRANSFORMS:
        for t2 in ALL_TRANSFORMS:
            t12 = table[(t1, t2)]
            for t3 in ALL_TRANSFORMS:
                assert table[(t12, t3)] == table[(t1, table[(t2, t3)])]

    assert time.monotonic() - started < 10.0


def test_compose_rotation_addition():
    r90 = TransformId(Flip.NONE, Rotation.DEG_90)
    assert compose(r90, r90) == TransformId(Flip.NONE, Rotation.DEG_180)


def test_invert_hand_cases():
    assert invert(IDENTITY) == IDENTITY
    assert invert(TransformId(Flip.NONE, Rotation.DEG_90)) == TransformId(
        Flip.NONE, Rotation.DEG_270
    )


def test_apply_then_inverse_is_identity_bit_exact():
    rng = np.random.default_rng(5)
    clip = rng.normal(size=(2, 3, 5, 5))
    for t in ALL_TRANSFORMS:
        back = transform_clip(transform_clip(clip, t), invert(t))
        assert np.array_equal(back, clip)


@pytest.mark.parametrize("hw", [4, 7])
def test_feature_inverse_alignment(hw):
    started = time.monotonic()
    rng = np.random.default_rng(6)
    feature = rng.normal(size=(3, 4, hw, hw))
    for t in ALL_TRANSFORMS:
        acted = transform_feature(ad.as_node(feature), t)
        restored = invert_transform_on_feature(acted, t)
        assert np.array_equal(restored.value, feature)
    assert time.monotonic() - started < 5.0


def test_feature_inverse_identity_transform():
    feature = np.arange(2 * 2 * 3 * 3, dtype=float).reshape(2, 2, 3, 3)
    out = invert_transform_on_feature(ad.as_node(feature), IDENTITY)
    assert np.array_equal(out.value, feature)


def test_feature_inverse_factorization():
    # undoing rotation first and flips second equals the packaged inverse
    rng = np.random.default_rng(7)
    feature = rng.normal(size=(2, 3, 4, 4))
    for t in ALL_TRANSFORMS:
        acted = transform_clip(feature, t)
        via_op = invert_transform_on_feature(ad.as_node(acted), t).value
        manual = np.rot90(acted, -int(t.rotation), axes=(2, 3))
        if t.mirrors_width:
            manual = np.flip(manual, axis=3)
        if t.reverses_time:
            manual = np.flip(manual, axis=1)
        np.testing.assert_array_equal(via_op, manual)


def test_feature_inverse_gradient_is_inverse_permutation():
    rng = np.random.default_rng(8)
    weights = rng.normal(size=(2, 3, 4, 4))
    for t in ALL_TRANSFORMS:

        def f(p):
            grid = ad.reshape(p, (2, 3, 4, 4))
            aligned = invert_transform_on_feature(grid, t)
            return ad.reduce_sum(ad.mul(aligned, ad.leaf(weights)), (0, 1, 2, 3))

        # the op is exactly linear, so a dyadic step of 0.25 makes the
        # central difference exact up to rounding
        assert ad.finite_diff_check(f, rng.normal(size=96), eps=0.25) < 1e-10


def test_sample_transform_deterministic_per_seed():
    draws_a = [sample_transform(np.random.default_rng(42)) for _ in range(5)]
    draws_b = [sample_transform(np.random.default_rng(42)) for _ in range(5)]
    assert draws_a == draws_b


def test_sample_transform_uniform_counts():
    rng = np.random.default_rng(9)
    counts = {t: 0 for t in ALL_TRANSFORMS}
    for _ in range(16_000):
        counts[sample_transform(rng)] += 1
    assert all(800 <= c <= 1200 for c in counts.values())


def test_sample_transform_covers_all_quickly():
    rng = np.random.default_rng(10)
    seen = set()
    for _ in range(200):
        seen.add(sample_transform(rng))
    assert seen == set(ALL_TRANSFORMS)
