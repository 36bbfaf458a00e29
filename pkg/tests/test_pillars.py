import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ss3d.ingest import PointCloud
from ss3d.pillars import (
    VARIANTS,
    PillarGridConfig,
    encode,
    encode_oracle,
    fc_encoder_macs,
    pillar_index,
    read_feature_map,
    statistical_encoder_flops,
    write_feature_map,
)

from conftest import random_cloud

GRID = PillarGridConfig()
V_CHANNELS = {6: (3, 5), 10: (2, 4)}


def cloud(*rows):
    return PointCloud(np.array(rows, dtype=np.float64).reshape(-1, 4))


@pytest.mark.parametrize("x, y, expected", [
    (0.0, -39.68, (0, 0)),
    (10.0, 0.0, (248, 62)),  # floor(39.68 / 0.16) = 248, floor(10 / 0.16) = 62
    (69.12, 0.0, None),
    (0.0, 39.68, None),
    (-1e-9, 0.0, None),
    (69.12 - 1e-9, 39.68 - 1e-9, (495, 431)),
])
def test_pillar_index(x, y, expected):
    assert pillar_index(x, y, GRID) == expected


def test_default_grid_shape():
    assert (GRID.height, GRID.width) == (496, 432)
    assert GRID.pillar_height == 4.0
    for name, c in VARIANTS.items():
        assert encode(cloud(), GRID.with_variant(name)).data.shape == (496, 432, c)


def test_grid_rejects_fractional_cells():
    with pytest.raises(ValueError):
        PillarGridConfig(x_range=(0.0, 69.2))


def test_single_point_ss3d6():
    fm = encode(cloud([0.08, -39.60, -1.0, 0.5]), GRID)
    np.testing.assert_allclose(fm.data[0, 0], [1, 1, -1.0, 0.5, -1.0, 0.5])
    assert np.count_nonzero(fm.data) == 6


TWO = [[0.08, -39.60, -2.0, 0.2], [0.08, -39.60, 0.5, 0.8]]


def test_two_points_ss3d6():
    fm = encode(cloud(*TWO), GRID)
    np.testing.assert_allclose(fm.data[0, 0], [1, 2, -0.75, 0.5, 0.5, 0.8])


def test_two_points_ss3d10():
    fm = encode(cloud(*TWO), GRID.with_variant("SS3D-10"))
    xc, yc = 0.08, -39.60  # centre of pillar (0, 0)
    expected = [2, -0.75, 0.5, 0.5, 0.8, math.sqrt(xc * xc + yc * yc), math.atan2(yc, xc),
                -2.0, 0.0, 0.5]
    np.testing.assert_allclose(fm.data[0, 0], expected, atol=1e-12)


def test_empty_cloud_is_all_zero():
    for name in VARIANTS:
        assert not encode(cloud(), GRID.with_variant(name)).data.any()


def test_tie_on_max_height_takes_last_point():
    pts = [[1.0, 1.0, 0.0, 0.1], [1.01, 1.01, 0.0, 0.9], [1.02, 1.02, -1.0, 0.4]]
    for name in ("SS3D-6", "SS3D-10"):
        cfg = GRID.with_variant(name)
        r, c = pillar_index(1.0, 1.0, cfg)
        hi = V_CHANNELS[cfg.channels][1]
        assert encode(cloud(*pts), cfg).data[r, c, hi] == 0.9
        assert encode(cloud(*pts[::-1]), cfg).data[r, c, hi] == 0.1
        assert encode_oracle(cloud(*pts), cfg).data[r, c, hi] == 0.9


def test_z_range_is_closed():
    fm = encode(cloud([1.0, 1.0, -3.0, 0.2], [1.0, 1.0, 1.0, 0.2], [1.0, 1.0, 1.0001, 0.2]), GRID)
    assert fm.n_in_range == 2


def test_far_point_never_contributes():
    base = cloud([5.0, 1.0, -1.0, 0.5])
    far = cloud([5.0, 1.0, -1.0, 0.5], [200.0, 1.0, -1.0, 0.5])
    for name in VARIANTS:
        cfg = GRID.with_variant(name)
        np.testing.assert_array_equal(encode(base, cfg).data, encode(far, cfg).data)


def test_oracle_equivalence_small_sweep():
    rng = np.random.default_rng(11)
    for trial in range(8):
        c = random_cloud(rng, int(rng.integers(0, 3000)))
        for name in VARIANTS:
            cfg = GRID.with_variant(name)
            np.testing.assert_allclose(encode(c, cfg).data, encode_oracle(c, cfg).data,
                                       atol=1e-6, rtol=0)


def test_oracle_equivalence_on_every_boundary_edge():
    xe, ye = GRID.x_edges, GRID.y_edges
    rng = np.random.default_rng(5)
    # points exactly on every column edge and every row edge, plus corners
    xs = np.concatenate([xe, xe, rng.choice(xe, 200)])
    ys = np.concatenate([np.full(xe.size, 0.0), rng.choice(ye, xe.size), rng.choice(ye, 200)])
    zs = rng.choice([-3.0, -5 / 3, -1 / 3, 1.0, 0.0], xs.size)
    c = PointCloud(np.column_stack([xs, ys, zs, rng.uniform(0, 1, xs.size)]))
    for name in VARIANTS:
        cfg = GRID.with_variant(name)
        np.testing.assert_allclose(encode(c, cfg).data, encode_oracle(c, cfg).data,
                                   atol=1e-6, rtol=0)


def test_slice_boundaries_are_half_open():
    # [-3, -5/3), [-5/3, -1/3), [-1/3, 1]
    b1, b2 = GRID.slice_bounds
    c = cloud([1.0, 1.0, b1, 0.5], [1.0, 1.0, b2, 0.5])
    cfg = GRID.with_variant("SS3D-10")
    r, col = pillar_index(1.0, 1.0, cfg)
    np.testing.assert_allclose(encode(c, cfg).data[r, col, 7:], [0.0, b1, b2])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(sorted(VARIANTS)))
def test_permutation_invariance_without_ties(seed, name):
    rng = np.random.default_rng(seed)
    c = random_cloud(rng, 400, x=(0, 3), y=(-1.5, 1.5))
    perm = PointCloud(c.points[rng.permutation(len(c))])
    cfg = GRID.with_variant(name)
    np.testing.assert_allclose(encode(c, cfg).data, encode(perm, cfg).data, atol=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_seg_and_lidar_share_non_v_channels(seed):
    rng = np.random.default_rng(seed)
    c = random_cloud(rng, 500, x=(0, 4), y=(-2, 2))
    seg = c.with_v(rng.integers(0, 34, len(c)) / 255.0)
    for lidar, segv in (("SS3D-6", "SS3D-Seg-6"), ("SS3D-10", "SS3D-Seg-10")):
        a = encode(c, GRID.with_variant(lidar)).data
        b = encode(seg, GRID.with_variant(segv)).data
        keep = [k for k in range(a.shape[2]) if k not in V_CHANNELS[a.shape[2]]]
        np.testing.assert_array_equal(a[:, :, keep], b[:, :, keep])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32 - 1), st.sampled_from(sorted(VARIANTS)))
def test_empty_pillars_are_zero_and_stats_bounded(seed, name):
    rng = np.random.default_rng(seed)
    cfg = GRID.with_variant(name)
    fm = encode(random_cloud(rng, 2000, x=(-2, 8), y=(-41, -35)), cfg)
    occ = fm.occupancy
    assert not fm.data[~occ].any()
    d = fm.data[occ]
    mean_h, max_h = (d[:, 2], d[:, 4]) if cfg.channels == 6 else (d[:, 1], d[:, 3])
    assert (mean_h >= -3.0).all() and (mean_h <= max_h + 1e-12).all() and (max_h <= 1.0).all()
    if cfg.channels == 10:
        b1, b2 = cfg.slice_bounds
        s = d[:, 7:]
        assert (((s[:, 0] >= -3) & (s[:, 0] < b1)) | (s[:, 0] == 0)).all()
        assert (((s[:, 1] >= b1) & (s[:, 1] < b2)) | (s[:, 1] == 0)).all()
        assert (((s[:, 2] >= b2) & (s[:, 2] <= 1)) | (s[:, 2] == 0)).all()


def test_pft1_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    fm = encode(random_cloud(rng, 1000), GRID.with_variant("SS3D-Seg-10"))
    path = tmp_path / "f.pft"
    write_feature_map(path, fm)
    raw = path.read_bytes()
    assert raw.startswith(b"PFT1496 432 10 SS3D-Seg-10\n")
    assert len(raw) == len(b"PFT1496 432 10 SS3D-Seg-10\n") + 496 * 432 * 10 * 4
    back = read_feature_map(path)
    np.testing.assert_array_equal(back.data, fm.data.astype(np.float32))
    assert back.variant == "SS3D-Seg-10"


@pytest.mark.parametrize("args, expected", [
    ((12000, 100, 9, 64), 691_200_000),
    ((1, 1, 1, 1), 1),
    ((2, 100, 9, 64), 115_200),
])
def test_fc_encoder_macs(args, expected):
    assert fc_encoder_macs(*args) == expected


def test_fc_encoder_macs_rejects_non_positive():
    with pytest.raises(ValueError):
        fc_encoder_macs(0, 100, 9, 64)


def test_statistical_encoder_flops():
    assert statistical_encoder_flops(GRID, 0) == 0
    ops = statistical_encoder_flops(GRID, 100_000)
    assert ops == 12 * 100_000 + 10 * 100_000
    assert fc_encoder_macs(12000, 100, 9, 64) / ops > 100
    # occupied-pillar term saturates at the grid size
    n = 10 * GRID.num_pillars
    assert statistical_encoder_flops(GRID, n) == 12 * n + 10 * GRID.num_pillars
