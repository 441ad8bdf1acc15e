import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffpatch import geometry
from diffpatch.surface import (
    CylinderMapping,
    LinearMapping,
    SphereCapMapping,
    WavyClothMapping,
    analytic_plane,
    analytic_saddle,
    analytic_sphere,
    decode,
    init_atlas,
    init_decoder,
    lattice_uv,
    n_weights,
    sample_uv,
)


def test_plane_normals_and_flat_curvature():
    sp = geometry.evaluate(analytic_plane(), None, sample_uv(64, "random", seed=0))
    np.testing.assert_array_equal(sp.normal, np.tile([0.0, 0.0, 1.0], (64, 1)))
    assert np.abs(sp.c_mean).max() <= 1e-10
    assert np.abs(sp.c_gauss).max() <= 1e-10
    np.testing.assert_allclose(sp.area_element, 1.0)


def test_unit_sphere_curvature():
    uv = np.column_stack([np.linspace(-2, 2, 9), np.linspace(-1.2, 1.2, 9)])
    sp = geometry.evaluate(analytic_sphere(), None, uv)
    np.testing.assert_allclose(sp.c_gauss, 1.0, atol=1e-6)
    np.testing.assert_allclose(np.abs(sp.c_mean), 1.0, atol=1e-6)


def test_saddle_at_origin():
    sp = geometry.evaluate(analytic_saddle(), None, np.zeros((1, 2)))
    assert sp.c_gauss[0] == pytest.approx(-4.0, abs=1e-8)
    assert sp.c_mean[0] == pytest.approx(0.0, abs=1e-8)


@pytest.mark.parametrize("R", [0.5, 2.0, 7.0])
def test_sphere_radius_scaling(R):
    uv = np.array([[0.3, 0.2], [1.0, -0.4]])
    sp = geometry.evaluate(analytic_sphere(R), None, uv)
    np.testing.assert_allclose(sp.c_gauss, 1 / R**2, rtol=1e-10)
    np.testing.assert_allclose(np.abs(sp.c_mean), 1 / R, rtol=1e-10)


def test_cylinder_curvature():
    sp = geometry.evaluate(CylinderMapping(radius=2.0), None, sample_uv(25))
    np.testing.assert_allclose(sp.c_gauss, 0.0, atol=1e-12)
    np.testing.assert_allclose(np.abs(sp.c_mean), 0.25, rtol=1e-10)


def test_sphere_cap_mean_curvature_sign():
    """A cap with outward normals bends away from its normal: c_mean = +1/R."""
    sp = geometry.evaluate(SphereCapMapping(radius=2.0, half_width=0.5), None, sample_uv(16))
    assert (sp.normal[:, 2] > 0).all()
    np.testing.assert_allclose(sp.c_mean, 0.5, rtol=1e-9)
    np.testing.assert_allclose(sp.c_gauss, 0.25, rtol=1e-9)


def test_degenerate_points_are_flagged_not_nan():
    collapsed = LinearMapping(matrix=((1.0, 1.0), (0.0, 0.0), (0.0, 0.0)))
    sp = geometry.evaluate(collapsed, None, sample_uv(9))
    assert sp.degenerate.all()
    for arr in (sp.normal, sp.c_mean, sp.c_gauss):
        assert np.isfinite(arr).all()
        assert not arr.any()
    n, deg = geometry.normals_batch(collapsed, None, sample_uv(9))
    assert deg.all() and not n.any()


def _random_rotation(rng):
    q, r = np.linalg.qr(rng.normal(size=(3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


class _Transformed:
    """x -> s R f(x) + t applied to another mapping."""

    def __init__(self, base, rot, scale, shift):
        self.base, self.rot, self.scale, self.shift = base, rot, scale, shift

    def __call__(self, d, uv, order=2):
        j = self.base(d, uv, order)
        A = self.scale * self.rot.T

        def lin(x, shift=0.0):
            return None if x is None else x @ A + shift

        return type(j)(lin(j.val, self.shift), lin(j.du), lin(j.dv),
                       lin(j.duu), lin(j.duv), lin(j.dvv))


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.2, 5.0))
def test_rigid_motion_and_scale_invariance(seed, s):
    rng = np.random.default_rng(seed)
    rot = _random_rotation(rng)
    base = WavyClothMapping(0.15, 1.0)
    uv = sample_uv(20, "random", seed=seed)
    a = geometry.evaluate(base, None, uv)
    b = geometry.evaluate(_Transformed(base, rot, s, rng.normal(size=3)), None, uv)
    np.testing.assert_allclose(b.normal, a.normal @ rot.T, atol=1e-10)
    np.testing.assert_allclose(b.c_gauss, a.c_gauss / s**2, rtol=1e-8, atol=1e-9)
    np.testing.assert_allclose(b.c_mean, a.c_mean / s, rtol=1e-8, atol=1e-9)
    np.testing.assert_allclose(b.area_element, a.area_element * s**2, rtol=1e-10)


def test_curvature_matches_shape_operator_eigenvalues():
    """Cross-check against principal curvatures from W = g^-1 II."""
    sp = geometry.evaluate(WavyClothMapping(0.2, 1.0), None, sample_uv(30, "random", seed=4))
    j = WavyClothMapping(0.2, 1.0)(None, sample_uv(30, "random", seed=4), order=2)
    for i in range(30):
        g = np.array([[sp.metric.E[i], sp.metric.F[i]], [sp.metric.F[i], sp.metric.G[i]]])
        n = sp.normal[i]
        II = np.array([[j.duu[i] @ n, j.duv[i] @ n], [j.duv[i] @ n, j.dvv[i] @ n]])
        k = np.linalg.eigvals(np.linalg.solve(g, II)).real
        assert sp.c_gauss[i] == pytest.approx(k.prod(), abs=1e-10)
        assert sp.c_mean[i] == pytest.approx(-k.mean(), abs=1e-10)


def test_metric_tensor_of_linear_map():
    A = ((1.0, 2.0), (0.0, 1.0), (3.0, 0.0))
    sp = geometry.evaluate(LinearMapping(matrix=A), None, sample_uv(4))
    M = np.array(A)
    g = M.T @ M
    np.testing.assert_allclose(sp.metric.E, g[0, 0])
    np.testing.assert_allclose(sp.metric.F, g[0, 1])
    np.testing.assert_allclose(sp.metric.G, g[1, 1])
    np.testing.assert_allclose(sp.area_element, math.sqrt(np.linalg.det(g)))


def test_patch_area_linear_map_exact():
    A = ((2.0, 0.0), (0.0, 3.0), (0.0, 0.0))
    assert geometry.patch_area(LinearMapping(matrix=A), None, sample_uv(7, "random", seed=1)) == pytest.approx(6.0)


def test_wavy_cloth_monte_carlo_area():
    m = WavyClothMapping(0.1, 1.0)
    ref = geometry.midpoint_area(m, None, 512)
    mc = geometry.patch_area(m, None, sample_uv(100_000, "random", seed=0))
    assert abs(mc - ref) / ref < 5e-3


def test_patch_area_rejects_empty_samples():
    with pytest.raises(ValueError):
        geometry.patch_area(analytic_plane(), None, np.zeros((0, 2)))


def test_surface_point_requires_second_order():
    with pytest.raises(ValueError):
        geometry.surface_point(analytic_plane()(None, sample_uv(4), order=1))


# ---------------------------------------------------------------- decoders


def test_weight_count_formula():
    dec = init_decoder(0, D=5, H=2, W=7)
    assert dec.n_weights() == n_weights(5, 2, 7) == (5 + 2) * 7 + 7 + 7 * 7 + 7 + 7 * 3 + 3


def test_decoder_is_deterministic_in_seed():
    a, b = init_decoder(3, D=4, H=2, W=8), init_decoder(3, D=4, H=2, W=8)
    for x, y in zip(a.weights, b.weights):
        np.testing.assert_array_equal(x, y)


def test_decoder_rejects_wrong_codeword():
    dec = init_decoder(0, D=4, H=1, W=8)
    with pytest.raises(ValueError):
        decode(dec, np.zeros(5), sample_uv(4))


def test_decoder_first_order_matches_second_order_slots():
    dec = init_decoder(1, D=3, H=2, W=16)
    d = np.random.default_rng(0).normal(size=3)
    uv = sample_uv(10, "random", seed=2)
    j1, j2 = decode(dec, d, uv, order=1), decode(dec, d, uv, order=2)
    np.testing.assert_allclose(j1.val, j2.val, rtol=1e-14)
    np.testing.assert_allclose(j1.du, j2.du, rtol=1e-14)
    assert j1.duu is None


def test_atlas_patches_get_distinct_weights():
    atlas = init_atlas(0, K=3, D=4, H=1, W=8)
    w = [dec.weights[0] for dec in atlas.decoders]
    assert not np.array_equal(w[0], w[1]) and not np.array_equal(w[1], w[2])


def test_sample_uv_grid_and_random():
    g = sample_uv(10)
    assert g.shape == (16, 2) and g.min() == 0.0 and g.max() == 1.0
    r = sample_uv(10, "random", seed=5)
    np.testing.assert_array_equal(r, sample_uv(10, "random", seed=5))
    with pytest.raises(ValueError):
        sample_uv(0)
    with pytest.raises(ValueError):
        sample_uv(4, "sobol")


def test_lattice_nesting():
    coarse, fine = lattice_uv(4), lattice_uv(12)
    assert len(coarse) == 25 and len(fine) == 169
    fine_set = {tuple(p) for p in fine}
    assert all(tuple(p) in fine_set for p in coarse)

