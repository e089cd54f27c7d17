import csv
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from grpo_meanfield.meanfield import (
    IntegrationError,
    OdeConfig,
    Trajectory,
    bad_parameter_at,
    classify_equilibrium,
    closed_form_p,
    coupled_drift,
    flat_field,
    good_parameter_at,
    heterogeneity_expansion,
    hitting_time_bracket,
    inner_bad_closed_form,
    inner_good_closed_form,
    integrate,
    integrate_internal_time,
    integrate_two_class,
    internal_time,
    logit_envelopes,
    lyapunov_from_p,
    lyapunov_rate,
    lyapunov_value,
    shape_eigenvalues,
    tail_exponent,
    tail_prefactor,
    two_class_drift,
)
from grpo_meanfield.noise import NoiseError, NoiseSchedule, NoiseSpec
from grpo_meanfield.simplex import BlockState

PERFECT = NoiseSpec(0.0, 0.0)
MILD = NoiseSpec(0.1, 0.2)
REVERSED = NoiseSpec(0.5, 0.6)


def _state(p, y, z):
    y = np.asarray(y, float)
    z = np.asarray(z, float)
    return BlockState(p, y / y.sum(), z / z.sum())


@st.composite
def interior_states(draw, K=None, M=None):
    K = K or draw(st.integers(1, 4))
    M = M or draw(st.integers(1, 4))
    p = draw(st.floats(0.02, 0.98))
    y = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=K, max_size=K)))
    z = np.array(draw(st.lists(st.floats(0.05, 1.0), min_size=M, max_size=M)))
    return _state(p, y, z)


# ---------------------------------------------------------------- config


def test_ode_config_validation():
    with pytest.raises(ValueError):
        OdeConfig(step=2.0, horizon=1.0)
    with pytest.raises(ValueError):
        OdeConfig(abs_tol=1e-2)
    with pytest.raises(ValueError):
        OdeConfig(method="euler")
    with pytest.raises(ValueError):
        OdeConfig(eta=0.0)


# ---------------------------------------------------------------- drift


@given(interior_states(), st.floats(0.01, 3.0))
def test_zero_drift_for_uninformative_verifier(state, eta):
    v = coupled_drift(state, NoiseSpec(0.3, 0.7), eta)
    assert v.p == 0.0 and np.all(v.y == 0) and np.all(v.z == 0)


@settings(max_examples=50)
@given(interior_states(), st.floats(0.0, 0.45), st.floats(0.0, 0.45), st.floats(0.01, 3.0))
def test_block_drift_matches_flat_field(state, a, b, eta):
    spec = NoiseSpec(a, b)
    v = coupled_drift(state, spec, eta)
    flat = flat_field(state, spec, eta)
    # chain rule for x = ((1 - p) y, p z)
    implied = np.concatenate((-v.p * state.y + (1 - state.p) * v.y, v.p * state.z + state.p * v.z))
    np.testing.assert_allclose(implied, flat, atol=1e-13)


@given(st.floats(0.01, 0.99), st.floats(0.0, 0.45), st.floats(0.0, 0.45))
def test_single_arm_blocks_move_at_twice_the_scalar_rate(p, a, b):
    spec = NoiseSpec(a, b)
    v = coupled_drift(BlockState.uniform(p, 1, 1), spec, 1.0)
    assert v.p == pytest.approx(2.0 * two_class_drift(p, spec, 1.0), rel=1e-14, abs=1e-300)


def test_scalar_law_for_perfect_verifier():
    for p in (0.1, 0.5, 0.77):
        assert two_class_drift(p, PERFECT, 1.3) == pytest.approx(-1.3 * (p * (1 - p)) ** 1.5, rel=1e-14)


def test_vertex_shape_is_stationary():
    v = coupled_drift(_state(0.4, [1, 0, 0], [0.5, 0.5]), MILD, 1.0)
    np.testing.assert_array_equal(v.y, 0.0)


# ---------------------------------------------------------------- integration


def test_learning_and_anti_learning_monotone():
    st_ = _state(0.4, [0.5, 0.3, 0.2], [0.7, 0.3])
    cfg = OdeConfig(step=0.05, horizon=20)
    down = integrate(st_, MILD, cfg)
    up = integrate(st_, REVERSED, cfg)
    assert np.all(np.diff(down.p) < 0)
    assert np.all(np.diff(up.p) > 0)


def test_closed_form_value_and_integrators_agree():
    assert closed_form_p(0.9, 1.0, 2.0) == pytest.approx(0.8201, abs=5e-5)
    rk4 = integrate_two_class(0.9, PERFECT, OdeConfig(step=1e-3, horizon=2.0))
    rk45 = integrate_two_class(0.9, PERFECT, OdeConfig(step=0.5, horizon=2.0, method="rk45_adaptive", abs_tol=1e-12, rel_tol=1e-12))
    assert abs(rk4.p[-1] - rk45.p[-1]) < 1e-8
    assert rk45.p[-1] == pytest.approx(closed_form_p(0.9, 1.0, 2.0), abs=1e-10)


def test_two_arm_softmax_runs_on_doubled_clock():
    cfg = OdeConfig(step=1e-3, horizon=3.0)
    tr = integrate(BlockState.uniform(0.9, 1, 1), PERFECT, cfg)
    np.testing.assert_allclose(tr.p, closed_form_p(0.9, 2.0, tr.times), atol=1e-10)


def test_closed_form_edge_cases():
    assert closed_form_p(0.5, 1.0, 0.0) == 0.5
    np.testing.assert_array_equal(closed_form_p(0.0, 1.0, [0, 5]), [0.0, 0.0])
    np.testing.assert_array_equal(closed_form_p(1.0, 1.0, [0, 5]), [1.0, 1.0])
    t = np.array([1e4, 1e5, 1e6])
    np.testing.assert_allclose(closed_form_p(0.3, 0.7, t) * (0.7 * t) ** 2, 4.0, rtol=1e-3)


def test_boundary_start_is_absorbed():
    tr = integrate(BlockState.uniform(0.0, 2, 2), MILD, OdeConfig())
    assert tr.status == "converged" and len(tr) == 1


def test_convergence_status_when_absorbed():
    cfg = OdeConfig(eta=1000.0, step=1.0, horizon=100, method="rk45_adaptive")
    tr = integrate(BlockState.uniform(0.5, 1, 1), NoiseSpec(0.0, 0.0), cfg)
    assert tr.status == "converged" and tr.p[-1] <= 1.01e-9 and tr.times[-1] < 100


def test_schedule_switch_is_continuous():
    sched = NoiseSchedule((1.0,), (PERFECT, REVERSED))
    tr = integrate(BlockState.uniform(0.4, 2, 2), sched, OdeConfig(step=0.01, horizon=2.0))
    i = int(np.argmin(np.abs(tr.times - 1.0)))
    assert np.all(np.diff(tr.p[: i + 1]) < 0) and np.all(np.diff(tr.p[i:]) > 0)
    tr45 = integrate(BlockState.uniform(0.4, 2, 2), sched, OdeConfig(step=0.25, horizon=2.0, method="rk45_adaptive"))
    np.testing.assert_allclose(tr45.times, np.arange(9) * 0.25)
    assert tr45.p[-1] == pytest.approx(tr.p[-1], abs=1e-6)


def test_trajectory_csv_layout(tmp_path):
    tr = integrate(_state(0.3, [0.6, 0.4], [0.2, 0.3, 0.5]), MILD, OdeConfig(step=0.1, horizon=0.5))
    path = tmp_path / "t.csv"
    tr.write_csv(path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["t", "tau", "p", "logit", "s2", "t2", "c_geo", "lyapunov", "y_1", "y_2", "z_1", "z_2", "z_3"]
    assert len(rows) == len(tr) + 1
    assert float(rows[-1][2]) == tr.p[-1]


# ---------------------------------------------------------------- internal time


def test_internal_time_constant_p_is_linear():
    t = np.linspace(0, 5, 11)
    tr = Trajectory(t, np.full(11, 0.3), np.full((11, 1), 1.0), np.full((11, 1), 1.0), np.zeros(11), np.zeros(11), 1.0)
    tau = internal_time(tr, MILD, 1.0)
    np.testing.assert_allclose(np.diff(tau), np.diff(tau)[0], rtol=1e-14)


def test_internal_time_nondecreasing_for_reversed_verifier():
    tr = integrate(_state(0.4, [0.5, 0.5], [0.6, 0.4]), REVERSED, OdeConfig(step=0.05, horizon=10))
    assert np.all(np.diff(internal_time(tr, REVERSED, 1.0)) >= 0)
    with pytest.raises(NoiseError):
        internal_time(tr, NoiseSpec(0.5, 0.5), 1.0)


def test_internal_time_system_matches_time_domain():
    st_ = _state(0.45, [0.5, 0.3, 0.2], [0.6, 0.4])
    tr = integrate(st_, MILD, OdeConfig(step=1e-3, horizon=5.0))
    sel = slice(None, None, 100)
    tau, L, y, z = integrate_internal_time(st_, +1, tr.tau[sel])
    np.testing.assert_allclose(L, tr.logit[sel], atol=1e-7)
    np.testing.assert_allclose(y, tr.y[sel], atol=1e-7)


def test_expansion_without_heterogeneity_is_linear():
    tau = np.linspace(0, 3, 7)
    e = heterogeneity_expansion(BlockState.uniform(0.4, 3, 2), 3, 2, tau, MILD)
    L0 = math.log(0.4 / 0.6)
    np.testing.assert_allclose(e.logit, L0 - (1 / 3 + 1 / 2) * tau, atol=1e-14)
    e1 = heterogeneity_expansion(BlockState.uniform(0.4, 1, 1), 1, 1, tau, REVERSED)
    np.testing.assert_allclose(e1.logit, L0 + 2 * tau, atol=1e-14)
    assert e.in_regime.all()


def test_expansion_error_shrinks_with_heterogeneity():
    errs = []
    for eps in (1e-3, 1e-4):
        y = np.array([1 + 2 * eps, 1 - eps, 1 - eps]) / 3
        st_ = BlockState(0.4, y, np.array([0.5, 0.5]))
        tau = np.linspace(0, 1.0, 11)
        _, L, _, _ = integrate_internal_time(st_, +1, tau)
        e = heterogeneity_expansion(st_, 3, 2, tau, MILD)
        errs.append(np.max(np.abs(L - e.logit)))
    assert errs[1] < errs[0] / 10


# ---------------------------------------------------------------- envelopes and brackets


def test_envelope_edge_cases():
    lo, hi = logit_envelopes(0.3, 3, 2, 0.0)
    assert lo == pytest.approx(0.3) and hi == pytest.approx(0.3)
    lo, hi = logit_envelopes(0.3, 1, 1, np.linspace(0, 4, 5))
    np.testing.assert_allclose(lo, hi, rtol=1e-15)


def test_bracket_example_and_containment():
    lo, hi = hitting_time_bracket(0.5, 0.1, 2, 1)
    assert 2 * lo == pytest.approx(math.log(9.0), rel=1e-15)
    assert (lo, hi) == (pytest.approx(1.0986, abs=1e-4), pytest.approx(1.4648, abs=1e-4))
    tr = integrate(_state(0.5, [0.7, 0.3], [1.0]), PERFECT, OdeConfig(step=1e-3, horizon=10))
    i = int(np.argmax(tr.p <= 0.1))
    assert lo <= tr.tau[i] <= hi
    a, b = hitting_time_bracket(0.5, 0.5 - 1e-12, 3, 2)
    assert a < 1e-10 and b < 1e-10
    lo1, hi1 = hitting_time_bracket(0.5, 0.1, 1, 1)
    assert lo1 == hi1


def test_sampled_points_inside_envelopes():
    tr = integrate(_state(0.5, [0.5, 0.3, 0.2], [0.7, 0.3]), MILD, OdeConfig(step=0.01, horizon=15))
    lo, hi = logit_envelopes(0.5, 3, 2, tr.tau)
    assert np.all(tr.p >= lo - 1e-9) and np.all(tr.p <= hi + 1e-9)


# ---------------------------------------------------------------- within-block closed forms


def _rk4_shape(y0, tau, n=20000):
    # independent oracle: integrate dy/dtau = y*y - |y|^2 y directly
    y = np.array(y0, float)
    h = tau / n
    f = lambda v: v * v - (v @ v) * v
    for _ in range(n):
        k1 = f(y)
        k2 = f(y + h / 2 * k1)
        k3 = f(y + h / 2 * k2)
        k4 = f(y + h * k3)
        y = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return y


def test_inner_closed_forms_identity_at_zero():
    q = np.array([0.5, 0.3, 0.2])
    np.testing.assert_allclose(inner_good_closed_form(q, 0.0), q)
    np.testing.assert_allclose(inner_bad_closed_form(q, 0.0), q)
    with pytest.raises(ValueError):
        inner_good_closed_form(q, 2.0)


def test_two_arm_face_value():
    tau = math.log(12.0)
    oracle = _rk4_shape([0.75, 0.25], tau)
    G0 = 4.0 / 3.0
    footnote = 0.5 * (1 + math.sqrt(G0 * math.exp(tau) / (4 + G0 * math.exp(tau))))
    y = inner_good_closed_form([0.75, 0.25], good_parameter_at([0.75, 0.25], tau))
    assert oracle[0] == pytest.approx(0.947214, abs=1e-6)
    assert footnote == pytest.approx(oracle[0], abs=1e-10)
    assert y[0] == pytest.approx(oracle[0], abs=1e-10)


def test_bad_block_closed_form_against_flow():
    q = np.array([0.6, 0.3, 0.1])
    tau = 1.7
    I = bad_parameter_at(q, tau)
    st_ = BlockState(0.5, np.array([1.0]), q)
    _, _, _, z = integrate_internal_time(st_, +1, [0.0, tau])
    np.testing.assert_allclose(inner_bad_closed_form(q, I), z[-1], atol=1e-9)


# ---------------------------------------------------------------- Lyapunov


def test_lyapunov_monotone_and_rate():
    st_ = _state(0.6, [0.5, 0.5], [0.3, 0.7])
    tr = integrate(st_, MILD, OdeConfig(step=0.01, horizon=10))
    assert np.all(np.diff(tr.lyapunov) >= 0)
    h = 1e-4
    tr2 = integrate(st_, MILD, OdeConfig(step=h, horizon=2 * h))
    fd = (lyapunov_value(tr2.state(2), MILD) - lyapunov_value(tr2.state(0), MILD)) / (2 * h)
    pred = lyapunov_rate(tr2.state(1), MILD, 1.0)
    assert fd == pytest.approx(pred, rel=1e-6)


def test_lyapunov_closed_form_matches_quadrature():
    from scipy.integrate import quad

    from grpo_meanfield.noise import advantage_gap

    for p in (0.1, 0.5, 0.9):
        val, _ = quad(lambda s: advantage_gap(MILD, 1 - s), 0.0, 1 - p, epsabs=1e-13)
        assert lyapunov_from_p(p, MILD) == pytest.approx(val, abs=1e-10)


def test_good_mass_falls_under_reversed_verifier():
    tr = integrate(_state(0.3, [0.5, 0.5], [0.5, 0.5]), REVERSED, OdeConfig(step=0.05, horizon=5))
    assert np.all(np.diff(1 - tr.p) < 0)


# ---------------------------------------------------------------- stability


def test_classification_examples():
    assert classify_equilibrium("good", "vertex", +1) == "stable"
    assert classify_equilibrium("bad", "uniform", +1) == "stable"
    assert classify_equilibrium("good", "uniform", +1) == "unstable"
    assert classify_equilibrium("bad", "vertex", +1) == "unstable"
    assert classify_equilibrium("good", "vertex", -1) == "unstable"
    with pytest.raises(NoiseError):
        classify_equilibrium("good", "vertex", 0)


def test_classification_agrees_with_linearisation():
    n = 3
    uniform = np.full(n, 1 / n)
    for sign, block in ((+1, "good"), (-1, "bad")):
        ev = shape_eigenvalues(uniform, sign)
        label = classify_equilibrium(block, "uniform", +1)
        assert (ev.max() < 0) == (label == "stable")
    # at a vertex only inward directions matter
    v = np.array([1.0, 0.0, 0.0])
    inward = np.array([[-1.0, 1.0, 0.0], [-1.0, 0.0, 1.0]]).T / math.sqrt(2)
    ev = shape_eigenvalues(v, +1, directions=inward)
    assert ev.max() < 0


# ---------------------------------------------------------------- invariants along trajectories


def test_winner_and_order_preserved():
    rng = np.random.default_rng(4)
    for _ in range(5):
        y = rng.dirichlet(np.ones(4))
        tr = integrate(_state(0.5, y, [0.5, 0.3, 0.2]), MILD, OdeConfig(step=0.05, horizon=30))
        assert np.all(np.argmax(tr.y, axis=1) == np.argmax(y))
        order = np.sign(tr.y[:, :, None] - tr.y[:, None, :])
        assert np.all(order == order[0])


def test_bad_shape_mixes_and_good_collision_grows():
    tr = integrate(_state(0.6, [0.5, 0.3, 0.2], [0.6, 0.3, 0.1]), MILD, OdeConfig(step=0.01, horizon=10))
    assert np.all(np.diff(tr.t2) <= 1e-15) and np.all(tr.t2 >= 1 / 3 - 1e-12)
    assert np.all(np.diff(tr.s2) >= -1e-15)
    s3 = np.sum(tr.y**3, axis=1)
    dtau = np.gradient(tr.tau)
    ds2 = np.gradient(tr.s2) / dtau
    np.testing.assert_allclose(ds2[1:-1], (2 * (s3 - tr.s2**2))[1:-1], atol=1e-4)
    s20 = tr.s2[0]
    bound = 1.0 / (1.0 + ((1 - s20) / s20) * np.exp(-2 * tr.tau))
    assert np.all(tr.s2 <= bound + 1e-12)


def test_noise_changes_rate_not_fate():
    cfg = OdeConfig(step=0.01, horizon=60)
    a = integrate(BlockState.uniform(0.6, 1, 1), PERFECT, cfg)
    b = integrate(BlockState.uniform(0.6, 1, 1), NoiseSpec(0.25, 0.25), cfg)
    ta = a.times[np.argmax(a.p <= 0.05)]
    tb = b.times[np.argmax(b.p <= 0.05)]
    assert a.p.min() <= 0.05 and b.p.min() <= 0.05
    assert 1.0 < tb / ta < np.inf


# ---------------------------------------------------------------- tails


def test_tail_prefactor_branches():
    assert tail_prefactor(NoiseSpec(0.0, 0.2), 1.0) == (pytest.approx(4 / 0.8), 2)
    c, k = tail_prefactor(NoiseSpec(0.1, 0.0), 2.0)
    assert k == 1 and c == pytest.approx(0.3 / 1.8)
    with pytest.raises(NoiseError):
        tail_prefactor(REVERSED, 1.0)


def test_tail_exponent_guards():
    tr = integrate(BlockState.uniform(0.5, 1, 1), MILD, OdeConfig(step=0.1, horizon=2))
    with pytest.raises(ValueError):
        tail_exponent(tr, (0.5, 2.0))
    with pytest.raises(ValueError):
        tail_exponent(tr, (1.95, 2.0))


def test_integration_error_type_is_runtime_error():
    assert issubclass(IntegrationError, RuntimeError)
