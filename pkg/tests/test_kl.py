import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grpo_meanfield.kl import (
    KlConfig,
    fixed_point_derivative,
    fixed_point_displacement,
    fixed_point_stability,
    flat_kl_field,
    frozen_drift,
    integrate_regularized,
    interior_fixed_point,
    kl_drift,
    regularized_drift,
    strong_kl_prediction,
    weak_kl_prediction,
    weak_kl_rate,
)
from grpo_meanfield.meanfield import OdeConfig, coupled_drift
from grpo_meanfield.noise import NoiseError, NoiseSpec
from grpo_meanfield.simplex import BlockState, SimplexError

MILD = NoiseSpec(0.1, 0.2)
REVERSED = NoiseSpec(0.5, 0.6)
NEUTRAL = NoiseSpec(0.5, 0.5)

Y_REF = np.array([0.5, 0.3, 0.2])
Z_REF = np.array([0.4, 0.6])


def _full(beta=1.0, p_ref=0.4):
    return KlConfig(beta, p_ref, Y_REF, Z_REF, "full_reverse")


def test_config_validation():
    with pytest.raises(ValueError):
        KlConfig(-1.0, 0.5)
    with pytest.raises(ValueError):
        KlConfig(1.0, 1.0)
    with pytest.raises(ValueError):
        KlConfig(1.0, 0.5, mode="full_reverse")
    with pytest.raises(SimplexError):
        KlConfig(1.0, 0.5, np.array([1.0, 0.0]), np.array([1.0]), "full_reverse")


def test_zero_drift_at_reference():
    st_ = BlockState(0.4, Y_REF, Z_REF)
    for cfg in (KlConfig(2.0, 0.4), _full(2.0, 0.4)):
        v = kl_drift(st_, cfg)
        assert abs(v.p) < 1e-16 and np.all(np.abs(v.y) < 1e-16) and np.all(np.abs(v.z) < 1e-16)


def test_two_class_hand_value():
    v = kl_drift(BlockState.uniform(0.8, 1, 1), KlConfig(1.0, 0.5))
    assert v.p == pytest.approx(-0.16 * math.log(4.0), rel=1e-14)
    assert v.p == pytest.approx(-0.2218, abs=1e-4)


def test_full_mode_reduces_to_two_class_at_reference_shapes():
    st_ = BlockState(0.7, Y_REF, Z_REF)
    a = kl_drift(st_, KlConfig(1.3, 0.4))
    b = kl_drift(st_, _full(1.3, 0.4))
    assert a.p == b.p
    np.testing.assert_array_equal(b.y, 0.0)


@settings(max_examples=40)
@given(st.floats(0.05, 0.95), st.floats(0.1, 3.0))
def test_full_mode_matches_flat_replicator(p, beta):
    st_ = BlockState(p, np.array([0.2, 0.5, 0.3]), np.array([0.7, 0.3]))
    cfg = _full(beta, 0.4)
    v = kl_drift(st_, cfg)
    flat = flat_kl_field(st_, cfg)
    implied = np.concatenate((-v.p * st_.y + (1 - p) * v.y, v.p * st_.z + p * v.z))
    np.testing.assert_allclose(implied, flat, atol=1e-13)


def test_no_anchoring_is_the_reward_flow():
    st_ = BlockState(0.3, Y_REF, Z_REF)
    r = regularized_drift(st_, MILD, 1.0, KlConfig(0.0, 0.5))
    c = coupled_drift(st_, MILD, 1.0)
    assert r.p == c.p
    np.testing.assert_array_equal(r.y, c.y)


def test_uninformative_verifier_gives_logistic_contraction():
    beta, pref = 0.7, 0.3
    for p in (0.1, 0.5, 0.9):
        v = regularized_drift(BlockState.uniform(p, 2, 2), NEUTRAL, 1.0, KlConfig(beta, pref))
        ell = math.log(p / (1 - p)) - math.log(pref / (1 - pref))
        assert v.p == pytest.approx(-beta * p * (1 - p) * ell, rel=1e-14)


# ---------------------------------------------------------------- fixed points


def test_fixed_point_is_a_zero_of_the_drift():
    for spec in (MILD, REVERSED):
        cfg = KlConfig(0.5, 0.4)
        ps = interior_fixed_point(spec, 1.0, cfg, 0.5, 0.6)
        st_ = BlockState(ps, np.array([1.0]), np.array([1.0]))
        assert abs(frozen_drift(ps, spec, 1.0, cfg, 0.5, 0.6)) < 1e-10
        assert st_.p == ps


def test_fixed_point_ordering_by_sign_of_J():
    cfg = KlConfig(0.5, 0.4)
    assert interior_fixed_point(NEUTRAL, 1.0, cfg, 0.5, 0.5) == 0.4
    assert interior_fixed_point(MILD, 1.0, cfg, 0.5, 0.5) < 0.4
    assert interior_fixed_point(REVERSED, 1.0, cfg, 0.5, 0.5) > 0.4
    with pytest.raises(NoiseError):
        interior_fixed_point(MILD, 1.0, KlConfig(0.0, 0.4), 0.5, 0.5)


def test_displacement_matches_difference():
    cfg = KlConfig(3.0, 0.35)
    d = fixed_point_displacement(MILD, 1.0, cfg, 0.4, 0.7)
    assert d == pytest.approx(interior_fixed_point(MILD, 1.0, cfg, 0.4, 0.7) - 0.35, rel=1e-12)


def test_strong_anchoring_second_order_error():
    s2, t2, pref = 0.5, 0.6, 0.3
    errs = []
    for beta in (1e6, 1e7):
        cfg = KlConfig(beta, pref)
        d = fixed_point_displacement(MILD, 1.0, cfg, s2, t2)
        errs.append(abs(d - (strong_kl_prediction(MILD, 1.0, cfg, s2, t2) - pref)))
    assert errs[0] / errs[1] == pytest.approx(100.0, rel=0.05)


def test_weak_anchoring_rate_and_prediction():
    c = weak_kl_rate(REVERSED, 1.0, 1.0, 1.0)
    sig1 = math.sqrt(0.6 * 0.4)
    assert c == pytest.approx(0.2 / sig1)
    assert math.isnan(weak_kl_rate(MILD, 1.0, 1.0, 1.0))
    pred = weak_kl_prediction(REVERSED, 1.0, KlConfig(1e-3, 0.5), 1.0, 1.0)
    assert pred == pytest.approx(1 - (1e-3 / c) * math.log(c / 1e-3))


@settings(max_examples=30)
@given(st.floats(0.0, 0.9), st.floats(0.0, 0.9), st.floats(1e-2, 1e2), st.floats(0.05, 0.95))
def test_fixed_points_are_stable(a, b, beta, pref):
    spec = NoiseSpec(min(a, 1.0), min(b, 1.0))
    cfg = KlConfig(beta, pref)
    ps = interior_fixed_point(spec, 1.0, cfg, 0.5, 0.5)
    if not 1e-9 < ps < 1 - 1e-9:
        return
    assert fixed_point_stability(ps, spec, 1.0, cfg, 0.5, 0.5) == -1


def test_analytic_derivative_matches_finite_difference():
    for spec, p in ((MILD, 0.3), (REVERSED, 0.7), (NoiseSpec(0.0, 0.3), 0.5)):
        cfg = KlConfig(0.8, 0.45)
        h = 1e-7
        fd = (frozen_drift(p + h, spec, 1.0, cfg, 0.6, 0.5) - frozen_drift(p - h, spec, 1.0, cfg, 0.6, 0.5)) / (2 * h)
        an = fixed_point_derivative(p, spec, 1.0, cfg, 0.6, 0.5)
        assert np.sign(fd) == np.sign(an)
        assert an == pytest.approx(fd, rel=1e-5)


def test_neutral_linearisation_is_minus_beta():
    cfg = KlConfig(2.5, 0.3)
    # -beta h * d(logit)/dp = -beta at the reference point
    assert fixed_point_derivative(0.3, NEUTRAL, 1.0, cfg, 0.5, 0.5) == pytest.approx(-2.5, rel=1e-12)


def test_trajectories_converge_from_both_sides():
    # single-arm blocks keep the collision masses frozen at 1
    cfg = KlConfig(0.5, 0.4)
    ps = interior_fixed_point(MILD, 1.0, cfg, 1.0, 1.0)
    for p0 in (0.05, 0.95):
        tr = integrate_regularized(BlockState.uniform(p0, 1, 1), MILD, cfg, OdeConfig(step=0.01, horizon=80))
        assert abs(tr.p[-1] - ps) < 1e-6


def test_kl_drift_requires_interior_and_matching_shapes():
    with pytest.raises(SimplexError):
        kl_drift(BlockState.uniform(0.0, 3, 2), KlConfig(1.0, 0.5))
    with pytest.raises(SimplexError):
        kl_drift(BlockState.uniform(0.3, 2, 2), _full())
