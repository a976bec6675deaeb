import csv

import numpy as np

from stcreg.model import BackboneConfig, backbone_forward, init_params, spatial_max_pool
from stcreg.transforms import ALL_TRANSFORMS
from stcreg.viz import (
    consistency_matrix,
    heatmap_from_feature,
    temporal_flip_gap,
    viz_consistency_matrix,
    viz_heatmap,
    write_pgm,
)


def demo_config(**overrides):
    base = dict(
        input_shape=(2, 4, 8, 8),
        channels_per_stage=(4,),
        kernel=(3, 3, 3),
        strides_per_stage=((1, 2, 2),),
        padding=(1, 1, 1),
    )
    base.update(overrides)
    return BackboneConfig(**base)


def test_matrix_shape_and_identity_row():
    cfg = demo_config()
    params = init_params(cfg, np.random.default_rng(0))
    clip = np.random.default_rng(1).normal(size=cfg.input_shape)
    matrix = consistency_matrix(params, clip)
    t_prime = cfg.feature_shape[1]
    assert matrix.shape == (16, t_prime)
    # row 0 is the identity transform: exactly the plain descriptor
    descriptor = spatial_max_pool(backbone_forward(params, clip)).value
    np.testing.assert_array_equal(matrix[0], descriptor.mean(axis=0))


def test_matrix_pointwise_backbone_rows_identical():
    # a 1x1x1 conv is a pure channel mix: it commutes with every index
    # permutation, so undoing the transform recovers the feature exactly
    # and all 8 non-temporal-flip rows coincide
    cfg = BackboneConfig(
        input_shape=(2, 4, 8, 8),
        channels_per_stage=(3,),
        kernel=(1, 1, 1),
        strides_per_stage=((1, 1, 1),),
        padding=(0, 0, 0),
    )
    params = init_params(cfg, np.random.default_rng(2))
    clip = np.random.default_rng(3).normal(size=cfg.input_shape)
    matrix = consistency_matrix(params, clip)
    for i in range(1, 8):
        np.testing.assert_array_equal(matrix[i], matrix[0])


def test_matrix_csv_layout(tmp_path):
    cfg = demo_config()
    params = init_params(cfg, np.random.default_rng(4))
    clip = np.random.default_rng(5).normal(size=cfg.input_shape)
    out = tmp_path / "matrix.csv"
    matrix = viz_consistency_matrix(params, clip, out)
    with open(out) as f:
        rows = list(csv.reader(f))
    t_prime = cfg.feature_shape[1]
    assert rows[0] == ["flip", "rotation"] + [f"t{i}" for i in range(t_prime)]
    assert len(rows) == 17
    for row, t in zip(rows[1:], ALL_TRANSFORMS):
        assert (int(row[0]), int(row[1])) == t.as_ints()
    parsed = np.array([[float(v) for v in row[2:]] for row in rows[1:]])
    np.testing.assert_array_equal(parsed, matrix)


def test_matrix_enumeration_order_stable():
    ids = [t.as_ints() for t in ALL_TRANSFORMS]
    assert ids == [(f, r) for f in range(4) for r in range(4)]
    # indices 0-7 keep temporal order, 8-15 reverse it
    assert all(not ALL_TRANSFORMS[i].reverses_time for i in range(8))
    assert all(ALL_TRANSFORMS[i].reverses_time for i in range(8, 16))


def test_temporal_flip_gap_zero_for_mirrored_halves():
    matrix = np.vstack([np.arange(32).reshape(8, 4)] * 2).astype(float)
    assert temporal_flip_gap(matrix) == 0.0
    matrix[8:] += 1.0
    assert temporal_flip_gap(matrix) == 1.0


def test_heatmap_constant_feature_mid_gray():
    image = heatmap_from_feature(np.full((3, 2, 4, 4), 1.7), (16, 16))
    assert image.shape == (16, 16)
    assert np.all(image == 128)


def test_heatmap_spike_is_brightest_block():
    feature = np.zeros((3, 2, 4, 4))
    feature[:, :, 1, 2] = 5.0  # same spatial spike in every channel
    image = heatmap_from_feature(feature, (16, 16))
    assert image.max() == 255
    bright = np.argwhere(image == 255)
    # upscaled cell (1, 2) covers rows 4..7, cols 8..11
    assert set(map(tuple, bright)) == {(r, c) for r in range(4, 8) for c in range(8, 12)}


def test_viz_heatmap_writes_pgm(tmp_path):
    cfg = demo_config()
    params = init_params(cfg, np.random.default_rng(6))
    clip = np.random.default_rng(7).normal(size=cfg.input_shape)
    out = tmp_path / "map.pgm"
    image = viz_heatmap(params, clip, out)
    assert image.shape == clip.shape[2:]
    raw = out.read_bytes()
    assert raw.startswith(b"P5\n8 8\n255\n")
    assert raw[len(b"P5\n8 8\n255\n") :] == image.tobytes()


def test_write_pgm_round_trip(tmp_path):
    image = np.arange(6, dtype=np.uint8).reshape(2, 3)
    path = tmp_path / "tiny.pgm"
    write_pgm(path, image)
    assert path.read_bytes() == b"P5\n3 2\n255\n" + bytes(range(6))
