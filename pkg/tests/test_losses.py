import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from diffpatch import losses
from diffpatch.losses import DegenerateInputError, LossWeights, PRESETS
from diffpatch.tape import Tape, backward


def _metric(rng, K=3, M=20):
    J = rng.normal(size=(K, M, 3, 2))
    E = (J[..., 0] ** 2).sum(-1)
    F = (J[..., 0] * J[..., 1]).sum(-1)
    G = (J[..., 1] ** 2).sum(-1)
    return E, F, G


def test_isometric_patches_have_zero_terms():
    E = np.ones((2, 10))
    terms = losses.conformal_terms(E, np.zeros_like(E), E, [1.0, 1.0])
    assert terms == (0.0, 0.0, 0.0, 0.0)


def test_conformal_terms_hand_example():
    # one patch, two points: E=(1,3), F=(0,1), G=(1,1), A=2
    E = np.array([[1.0, 3.0]])
    F = np.array([[0.0, 1.0]])
    G = np.array([[1.0, 1.0]])
    l_E, l_G, l_sk, l_str = losses.conformal_terms(E, F, G, [2.0])
    assert l_E == pytest.approx(((-1 / 2) ** 2 + (1 / 2) ** 2) / 2)
    assert l_G == 0.0
    assert l_sk == pytest.approx((0 + 0.25) / 2)
    assert l_str == pytest.approx((0 + 1.0) / 2)


def test_uniform_scaling_keeps_conformal_shape_at_zero_skew():
    E = np.full((1, 4), 4.0)
    assert losses.conformal_terms(E, np.zeros_like(E), E, [4.0])[2:] == (0.0, 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 1000), st.floats(0.1, 10.0))
def test_conformal_terms_scale_invariant(seed, s):
    """Scaling the mapping by s multiplies E, F, G and A by s^2."""
    E, F, G = _metric(np.random.default_rng(seed))
    A = [1.0, 2.0, 0.5]
    a = losses.conformal_terms(E, F, G, A)
    b = losses.conformal_terms(E * s * s, F * s * s, G * s * s, [x * s * s for x in A])
    np.testing.assert_allclose(b, a, rtol=1e-10)


def test_terms_are_non_negative():
    E, F, G = _metric(np.random.default_rng(5))
    assert all(t >= 0 for t in losses.conformal_terms(E, F, G, [1.0, 1.0, 1.0]))


def test_zero_area_raises():
    E = np.ones((2, 3))
    with pytest.raises(DegenerateInputError):
        losses.conformal_terms(E, E, E, [1.0, 0.0])


def test_overlap_hinge():
    assert losses.overlap_loss([0.3, 0.4], 1.0) == 0.0
    assert losses.overlap_loss([0.7, 0.5], 1.0) == pytest.approx(0.04)
    with pytest.raises(ValueError):
        losses.overlap_loss([1.0], 0.0)


@pytest.mark.parametrize("areas,want", [([0.3, 0.4], [0.0, 0.0]), ([0.7, 0.5], [0.4, 0.4])])
def test_overlap_gradient(areas, want):
    tape = Tape()
    a = tape.param("a", np.array(areas))
    g = backward(tape, losses.overlap_loss(a, 1.0))["a"]
    np.testing.assert_allclose(g, want)


def test_traced_terms_match_numpy():
    E, F, G = _metric(np.random.default_rng(1))
    A = np.array([1.0, 2.0, 0.5])
    ref = losses.conformal_terms(E, F, G, A)
    tape = Tape()
    got = losses.conformal_terms(tape.const(E), tape.const(F), tape.const(G), tape.const(A))
    np.testing.assert_allclose([t.value for t in got], ref, rtol=1e-14)


def test_weights_validation_and_presets():
    with pytest.raises(ValueError):
        LossWeights(alpha_def=-1.0)
    assert PRESETS["basic"].alpha_def == 0 and PRESETS["basic"].alpha_ol == 0
    assert PRESETS["ours"].alpha_def == 1e-3 and PRESETS["ours"].alpha_ol == 1e2
    assert PRESETS["collapse-study"].alpha_ol == 0
    assert PRESETS["ours-pcae"].alpha_str == 0


def test_total_loss_combines_terms():
    w = LossWeights(alpha_def=0.5, alpha_ol=2.0, alpha_E=1, alpha_G=2, alpha_sk=3, alpha_str=4)
    r = losses.total_loss(1.0, (1.0, 1.0, 1.0, 1.0), 0.25, w)
    assert r.l_def == 10.0
    assert r.total == 1.0 + 5.0 + 0.5


def test_chamfer_traced_value_and_gradient():
    rng = np.random.default_rng(0)
    P, Q = rng.normal(size=(6, 3)), rng.normal(size=(9, 3))
    m = losses.chamfer_matches(P, Q)
    tape = Tape()
    p = tape.param("p", P)
    c = losses.chamfer_traced(p, Q, m)
    assert c.value == pytest.approx(m.value, rel=1e-14)
    g = backward(tape, c)["p"]
    h = 1e-6
    fd = np.zeros_like(P)
    for idx in np.ndindex(P.shape):
        Pp, Pm = P.copy(), P.copy()
        Pp[idx] += h
        Pm[idx] -= h
        fd[idx] = (losses.chamfer([Pp], Q) - losses.chamfer([Pm], Q)) / (2 * h)
    np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)
