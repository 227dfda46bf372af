import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from pdhomotopy.solver import (HomotopyConfig, OracleError, homotopy_run, pds_run,
                               ramp_horizons, theta_next, theta_sequence)

from conftest import scalar_problem


# -- theta ----------------------------------------------------------------------

def test_theta_from_one():
    assert theta_next(1.0) == pytest.approx((math.sqrt(5) - 1) / 2, rel=1e-15)


def test_theta_second_step_matches_root_finder():
    theta = 0.6180339887
    # (1 - t)/t^2 = 1/theta^2 solved independently
    root = brentq(lambda t: (1 - t) * theta**2 - t**2, 1e-12, 1.0, xtol=1e-15)
    assert theta_next(theta) == pytest.approx(root, rel=1e-12)
    assert theta_next(theta) == pytest.approx(0.4558867801, abs=1e-10)


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.5, math.nan])
def test_theta_domain(bad):
    with pytest.raises(ValueError):
        theta_next(bad)


def test_theta_bound_first_thousand():
    th = theta_sequence(1001)
    t = np.arange(1001)
    assert np.all(th <= 2.0 / (t + 2))


@given(st.floats(min_value=1e-6, max_value=1.0))
def test_theta_identity_property(theta):
    nxt = theta_next(theta)
    assert 0 < nxt < theta
    assert (1 - nxt) / nxt**2 == pytest.approx(1 / theta**2, rel=1e-12)


# -- pds_run ----------------------------------------------------------------------

def test_pds_first_iteration_unrolled():
    p = scalar_problem()
    mu = 0.7
    x0 = p.smoothed_argmax(np.zeros(1), np.zeros(1), mu)
    out = pds_run(p, np.zeros(1), np.zeros(1), mu, 1)
    np.testing.assert_array_equal(out.x_bar, x0)
    np.testing.assert_array_equal(out.lambda_final, mu * p.apply_constraint(x0))


def test_pds_scalar_trajectory_hand_executed():
    # mu=1, x~=0, lambda~=0; x(lh) = clip(-(lh + 1), -1, 1)
    #   t=0: lh=0,  x=-1, lambda=-1
    #   t=1: lh=-1 (lambda_1 - lambda_0 scaled by theta_1*(1/theta_0 - 1) = 0), x=0, lambda=-1
    #   t=2: lh=-1 (lambda_2 = lambda_1), x=0, lambda=-1
    steps = []
    out = pds_run(scalar_problem(), np.zeros(1), np.zeros(1), 1.0, 3, observer=steps.append)
    assert [s.lambda_hat[0] for s in steps] == [0.0, -1.0, -1.0]
    assert [s.x[0] for s in steps] == [-1.0, 0.0, 0.0]
    assert [s.lambda_next[0] for s in steps] == [-1.0, -1.0, -1.0]
    th1 = (math.sqrt(5) - 1) / 2
    th2 = (math.sqrt(th1**4 + 4 * th1**2) - th1**2) / 2
    assert out.x_bar[0] == pytest.approx(-1.0 / (1 + 1 / th1 + 1 / th2), rel=1e-14)
    assert out.lambda_final[0] == -1.0
    assert out.iterations_run == 3


def test_observer_called_in_order():
    seen = []
    pds_run(scalar_problem(), np.zeros(1), np.zeros(1), 0.3, 17, observer=lambda s: seen.append(s.t))
    assert seen == list(range(17))


def test_average_recomputed_from_observed_iterates(small_instance):
    from pdhomotopy.geomedian import make_problem

    p = make_problem(small_instance)
    rng = np.random.default_rng(3)
    lam0 = rng.standard_normal(p.dual_shape)
    xs, thetas = [], []

    def grab(step):
        xs.append(step.x.copy())
        thetas.append(step.theta)

    out = pds_run(p, lam0, p.initial_point, 0.05, 40, observer=grab)
    w = 1 / np.array(thetas)
    expected = np.tensordot(w, np.array(xs), axes=1) / w.sum()
    np.testing.assert_allclose(out.x_bar, expected, rtol=0, atol=1e-12)
    # theta_t <= 2/(t+2) gives S_T >= sum (t+2)/2 = T^2/4 + 3T/4
    assert w.sum() >= 40**2 / 4 + 3 * 40 / 4
    assert p.is_feasible(out.x_bar)


def test_weight_accum_lower_bound():
    last = {}
    pds_run(scalar_problem(), np.zeros(1), np.zeros(1), 0.5, 200,
            observer=lambda s: last.update(S=s.state.weight_accum))
    assert last["S"] >= 200**2 / 4 + 3 * 200 / 4


def test_pds_input_validation():
    p = scalar_problem()
    with pytest.raises(ValueError):
        pds_run(p, np.zeros(1), np.zeros(1), 0.0, 5)
    with pytest.raises(ValueError):
        pds_run(p, np.zeros(1), np.zeros(1), 1.0, 0)
    with pytest.raises(ValueError):
        pds_run(p, np.zeros(1), np.zeros(1), 1.0, 3, step_size_mode="bogus")


def _failing_problem(fail_at):
    p = scalar_problem()
    calls = {"n": 0}

    def argmax(lam, xa, mu):
        calls["n"] += 1
        if calls["n"] > fail_at:
            raise FloatingPointError("boom")
        return p.smoothed_argmax(lam, xa, mu)

    from dataclasses import replace
    return replace(p, smoothed_argmax=argmax)


def test_oracle_failure_reports_iteration():
    with pytest.raises(OracleError) as info:
        pds_run(_failing_problem(4), np.zeros(1), np.zeros(1), 1.0, 10)
    assert info.value.iteration == 4
    assert isinstance(info.value.__cause__, FloatingPointError)


def test_nonfinite_oracle_output_is_failure():
    from dataclasses import replace

    p = replace(scalar_problem(), smoothed_argmax=lambda lam, xa, mu: np.array([np.nan]))
    with pytest.raises(OracleError) as info:
        pds_run(p, np.zeros(1), np.zeros(1), 1.0, 3)
    assert info.value.iteration == 0


def test_oracle_failure_reports_stage():
    cfg = HomotopyConfig(epsilon=0.25, epsilon0=1.0, horizon=5)
    with pytest.raises(OracleError) as info:
        homotopy_run(_failing_problem(7), cfg)
    assert info.value.stage == 2 and info.value.iteration == 2
    assert "stage 2" in str(info.value)


def test_scaled_mode_step():
    p = scalar_problem()
    a = pds_run(p, np.zeros(1), np.zeros(1), 0.5, 1, step_size_mode="scaled")
    b = pds_run(p, np.zeros(1), np.zeros(1), 0.5, 1)
    # sigma_max(A^T A) = 1 for A = 1, so the two modes coincide
    np.testing.assert_array_equal(a.lambda_final, b.lambda_final)


# -- homotopy ---------------------------------------------------------------------

def test_stage_count_default():
    p = scalar_problem()
    sched = HomotopyConfig(epsilon=1e-3, epsilon0=1.0).resolve(p)
    assert sched.num_stages == 11


def test_mu_sequence_halves():
    p = scalar_problem()  # diameter 2
    sched = HomotopyConfig(epsilon=1e-3, epsilon0=1.0).resolve(p)
    assert sched.mu0 == 0.25
    assert sched.mus[:3] == (0.125, 0.0625, 0.03125)
    assert all(b == a / 2 for a, b in zip(sched.mus, sched.mus[1:]))


def test_default_epsilon0_from_M():
    sched = HomotopyConfig(epsilon=0.1).resolve(scalar_problem())
    assert sched.epsilon0 == 2.0


@pytest.mark.parametrize("kw", [
    dict(epsilon=1.0, epsilon0=1.0),
    dict(epsilon=1e-3, epsilon0=1.0, num_stages=10),
    dict(epsilon=1e-3, epsilon0=1.0, horizon=0),
    dict(epsilon=1e-3, epsilon0=1.0, horizon=[5, 5]),
    dict(epsilon=1e-3, epsilon0=1.0, horizon="linear"),
    dict(epsilon=1e-3, epsilon0=1.0, observe_every=0),
])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        HomotopyConfig(**kw).resolve(scalar_problem())


def test_ramp_horizons():
    hz = ramp_horizons(10 * math.sqrt(10), 1e-3, 11)
    base = 10 * math.sqrt(10) / 1e-3**0.8
    assert hz == tuple(math.ceil(base * k / 11) for k in range(1, 12))
    assert ramp_horizons(1e-9, 1e-3, 3) == (1, 1, 1)


def test_scalar_homotopy_stage_constraint_norms_decrease():
    # oracle: independent scalar loop, eps0=1, eps=0.25 => K=3, T=5, start 0
    # |x_bar^(k)| = 1.0, 0.3381278042799803, 0.15308001723009473
    trace = homotopy_run(scalar_problem(), HomotopyConfig(epsilon=0.25, epsilon0=1.0, horizon=5))
    norms = [abs(float(x[0])) for x in trace.stage_x]
    np.testing.assert_allclose(norms, [1.0, 0.3381278042799803, 0.15308001723009473], rtol=1e-12)
    assert norms[0] >= norms[1] >= norms[2]


def test_scalar_homotopy_default_eps0_frozen():
    # default eps0 = 2: the stage norms are not monotone at T=5
    trace = homotopy_run(scalar_problem(), HomotopyConfig(epsilon=0.5, horizon=5))
    norms = [abs(float(x[0])) for x in trace.stage_x]
    np.testing.assert_allclose(norms, [0.36845196068467656, 0.033939211833095194,
                                       0.06475218138019057], rtol=1e-12)


def test_restart_resets_accumulator():
    firsts = {}

    def spy(k, step):
        if step.t == 0:
            firsts[k] = (step.state.weight_accum, step.state.avg_accum.copy(), step.x.copy())

    homotopy_run(scalar_problem(), HomotopyConfig(epsilon=0.25, epsilon0=1.0, horizon=4),
                 stage_observer=spy)
    assert sorted(firsts) == [1, 2, 3]
    for weight, accum, x in firsts.values():
        assert weight == 1.0  # only 1/theta_0 since the restart
        np.testing.assert_array_equal(accum, x)


def test_warm_start_and_anchor_chain():
    seen = {}

    def spy(k, step):
        if step.t == 0:
            seen[k] = (step.state.lambda_prev.copy(), step.state.anchor_x.copy(), step.state.mu)

    trace = homotopy_run(scalar_problem(), HomotopyConfig(epsilon=0.25, epsilon0=1.0, horizon=6),
                         stage_observer=spy)
    for k in (2, 3):
        lam_prev, anchor, mu = seen[k]
        np.testing.assert_array_equal(lam_prev, trace.stage_lambda[k - 2])
        np.testing.assert_array_equal(anchor, trace.stage_x[k - 2])
        assert mu == trace.schedule.mus[k - 1]


def test_record_count_and_thinning():
    p = scalar_problem()
    cfg = HomotopyConfig(epsilon=0.25, epsilon0=1.0, horizon=[3, 4, 5])
    trace = homotopy_run(p, cfg, reference_x=np.zeros(1))
    assert len(trace.records) == 12
    assert [r.iteration for r in trace.records] == list(range(12))
    assert [r.stage for r in trace.records] == [1] * 3 + [2] * 4 + [3] * 5
    thin = homotopy_run(p, HomotopyConfig(epsilon=0.25, epsilon0=1.0, horizon=[3, 4, 5],
                                          observe_every=5))
    assert [r.iteration for r in thin.records] == [0, 5, 10]


def test_trace_records_mode_and_metrics():
    p = scalar_problem(initial=0.5)
    trace = homotopy_run(p, HomotopyConfig(epsilon=0.25, epsilon0=1.0, horizon=3,
                                           step_size_mode="scaled"),
                         reference_x=np.zeros(1), dual_evaluator=lambda lam: float(lam[0]))
    assert trace.meta["step_size_mode"] == "scaled"
    r = trace.records[0]
    # relative error of x_bar against 0 from x0 = 0.5
    assert r.relative_error == pytest.approx(abs(r.objective) / 0.5)
    assert r.constraint_norm == pytest.approx(abs(r.objective))
    assert r.dual_value is not None


def test_homotopy_deterministic(small_instance):
    from pdhomotopy.geomedian import make_problem

    cfg = HomotopyConfig(epsilon=1e-2, horizon=20)
    p = make_problem(small_instance)
    a = homotopy_run(p, cfg, reference_x=np.zeros_like(p.initial_point), wall_clock=False)
    b = homotopy_run(p, cfg, reference_x=np.zeros_like(p.initial_point), wall_clock=False)
    assert a.records == b.records
    assert a.final_x.tobytes() == b.final_x.tobytes()


@settings(max_examples=25, deadline=None)
@given(st.floats(0.01, 2.0), st.integers(1, 30), st.floats(-3, 3))
def test_scalar_pds_output_feasible(mu, T, lam0):
    out = pds_run(scalar_problem(), np.array([lam0]), np.zeros(1), mu, T)
    assert -1.0 <= out.x_bar[0] <= 1.0
