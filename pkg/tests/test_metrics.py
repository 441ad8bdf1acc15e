import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from diffpatch import metrics
from diffpatch.data import PointCloud, SyntheticSurfaceSpec, generate, unit
from diffpatch.metrics import (
    EstimateUnavailable,
    angular_error,
    collapse_count,
    distortion_map,
    overlap_counts,
    quadric_curvature_oracle,
)
from diffpatch.surface import LinearMapping, WavyClothMapping, init_atlas, sample_uv


def test_angular_error_identical_is_zero():
    c, _ = generate(SyntheticSurfaceSpec("wavy-cloth", n=200, seed=0))
    # arccos near 1 amplifies the last ulp of the dot product
    assert angular_error(c, c) == pytest.approx(0.0, abs=1e-5)


def test_angular_error_flip_invariance_exact():
    rng = np.random.default_rng(1)
    gt = PointCloud(rng.normal(size=(100, 3)), unit(rng.normal(size=(100, 3))))
    pred = PointCloud(rng.normal(size=(60, 3)), unit(rng.normal(size=(60, 3))))
    flipped = PointCloud(pred.points, -pred.normals)
    assert angular_error(pred, gt) == angular_error(flipped, gt)
    gt_flipped = PointCloud(gt.points, -gt.normals)
    assert angular_error(pred, gt) == angular_error(pred, gt_flipped)


def test_angular_error_perpendicular_is_ninety():
    pts = np.zeros((1, 3))
    a = PointCloud(pts, [[0, 0, 1.0]])
    b = PointCloud(pts, [[1.0, 0, 0]])
    assert angular_error(a, b) == pytest.approx(90.0)


def test_angular_error_needs_normals():
    with pytest.raises(ValueError):
        angular_error(PointCloud(np.zeros((1, 3))), PointCloud(np.zeros((1, 3))))


def test_collapse_count_examples():
    assert collapse_count([1.0, 1.0, 1.0]) == 0
    assert collapse_count([1.0, 1.0, 1e-6]) == 1
    assert collapse_count([0.0, 0.0]) == 2
    with pytest.raises(ValueError):
        collapse_count([])


@settings(max_examples=1000, deadline=None)
@given(arrays(np.float64, st.integers(1, 30), elements=st.floats(0, 1e3, allow_subnormal=False)),
       st.floats(1e-3, 1e3))
def test_collapse_count_properties(areas, s):
    c = collapse_count(areas)
    assert 0 <= c <= len(areas)
    # scale invariance
    if areas.mean() > 0 and (areas * s).mean() > 0:
        assert collapse_count(areas * s) == c
    # patches at or above the mean never count; zero areas always count
    if areas.mean() > 0:
        assert c <= np.count_nonzero(areas < areas.mean())
        assert c >= np.count_nonzero(areas == 0)
    # permutation invariance
    assert collapse_count(areas[::-1]) == c


def test_overlap_counts_two_identical_patches():
    g = sample_uv(100)
    pts = np.column_stack([g, np.zeros(len(g))])
    out = overlap_counts([pts, pts], pts, [0.01])
    assert out[0.01] == 2.0


def test_overlap_counts_disjoint_patches():
    g = sample_uv(100) * 0.5
    a = np.column_stack([g, np.zeros(len(g))])
    b = a + [0.5 + 1e-3, 0, 0]
    gt = np.concatenate([a, b])
    assert overlap_counts([a, b], gt, [1e-4])[1e-4] == 1.0


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_overlap_monotone_in_threshold(seed):
    rng = np.random.default_rng(seed)
    patches = [rng.normal(size=(30, 3)) for _ in range(int(rng.integers(1, 5)))]
    gt = rng.normal(size=(50, 3))
    ts = sorted(rng.uniform(0.01, 3.0, size=5))
    out = overlap_counts(patches, gt, ts)
    vals = [out[float(t)] for t in ts]
    assert all(a <= b for a, b in zip(vals, vals[1:]))
    assert all(0 <= v <= len(patches) for v in vals)


def test_overlap_threshold_must_be_positive():
    with pytest.raises(ValueError):
        overlap_counts([np.zeros((1, 3))], np.zeros((1, 3)), [0.0])


def test_quadric_oracle_on_sphere_cap():
    cloud, _ = generate(SyntheticSurfaceSpec("sphere-cap", n=8000, radius=1.0, cap_angle=math.pi / 4, seed=0))
    q = cloud.points[np.argmax(cloud.points[:, 2])]
    H, K = quadric_curvature_oracle(cloud, q, 0.15)
    assert H == pytest.approx(1.0, rel=0.05)
    assert K == pytest.approx(1.0, rel=0.1)


def test_quadric_oracle_on_plane():
    cloud, _ = generate(SyntheticSurfaceSpec("plane", n=2000, seed=1))
    H, K = quadric_curvature_oracle(cloud, [0.5, 0.5, 0.0], 0.1)
    assert abs(H) < 1e-10 and abs(K) < 1e-10


def test_quadric_oracle_needs_neighbours():
    with pytest.raises(EstimateUnavailable):
        quadric_curvature_oracle(np.zeros((3, 3)), np.zeros(3), 1.0)


def test_curvature_stats_excludes_degenerate():
    from diffpatch import geometry
    good = geometry.evaluate(WavyClothMapping(), None, sample_uv(16))
    bad = geometry.evaluate(LinearMapping(matrix=((1.0, 1.0), (0, 0), (0, 0))), None, sample_uv(16))
    H, K, n_deg = metrics.curvature_stats([good, bad])
    assert n_deg == 16
    assert H == pytest.approx(np.abs(good.c_mean).mean())
    with pytest.raises(EstimateUnavailable):
        metrics.curvature_stats([bad])


def test_distortion_map_zero_for_isometry():
    dm = distortion_map(LinearMapping(), None, 8)
    for _, arr in dm.items():
        assert arr.shape == (8, 8) and not arr.any()


def test_distortion_map_of_stretched_patch():
    dm = distortion_map(LinearMapping(matrix=((2.0, 0), (0, 1.0), (0, 0))), None, 4)
    # E=4, G=1, A=2 -> (E-G)/A = 1.5
    np.testing.assert_allclose(dm.D_str, 2.25)
    np.testing.assert_allclose(dm.D_sk, 0.0)


def test_evaluate_atlas_row_columns():
    atlas = init_atlas(0, K=2, D=4, H=1, W=8)
    gt, _ = generate(SyntheticSurfaceSpec("plane", n=200, seed=0))
    report, sps = metrics.evaluate_atlas(atlas, gt, n_eval=25)
    row = report.row()
    assert list(row) == ["chd", "m_ae", "m_H", "m_K", "m_col",
                         "m_olap@0.01", "m_olap@0.05", "m_olap@0.1", "n_degenerate"]
    assert len(sps) == 2 and len(report.patch_areas) == 2
    assert all(math.isfinite(v) for v in row.values())
