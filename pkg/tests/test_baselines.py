import math
import warnings

import numpy as np
import pytest

from pdhomotopy.baselines import (ALGORITHMS, BaselineConfig, default_pg_extra_alpha,
                                  dsm_run, fixed_smoothing_run, jacobi_admm_run,
                                  pg_extra_run, run_baseline, shrink_prox)
from pdhomotopy.geomedian import (GeoMedianInstance, GeometryWarning, apply_A,
                                  build_graph, consensus_solution, make_problem,
                                  metropolis_hastings, prox_blocks, sigma_max_AtA)
from pdhomotopy.metrics import csv_text
from pdhomotopy.solver import HomotopyConfig, homotopy_run

from conftest import make_instance


def test_dsm_first_step_is_mixing(small_instance):
    seen = []
    dsm_run(small_instance, BaselineConfig("dsm", max_iter=1),
            observer=lambda t, x, xb: seen.append(x.copy()))
    # the subgradient vanishes at x_i = b_i
    np.testing.assert_allclose(seen[0], small_instance.mixing.entries @ small_instance.points,
                               atol=1e-14)


def test_dsm_zero_step_reaches_mean(small_instance):
    tr = dsm_run(small_instance, BaselineConfig("dsm", max_iter=2000, step_size_alpha=0.0))
    mean = small_instance.points.mean(axis=0)
    np.testing.assert_allclose(tr.meta["last_iterate"], np.tile(mean, (5, 1)), atol=1e-10)


def test_dsm_default_alpha(small_instance):
    assert dsm_run(small_instance, BaselineConfig("dsm", max_iter=2)).meta["alpha"] == 10.0


def test_pg_extra_alpha_defaults():
    assert default_pg_extra_alpha(20) == 5.0
    assert default_pg_extra_alpha(50) == default_pg_extra_alpha(100) == 20.0


def test_pg_extra_fixed_point_equal_points():
    g = build_graph(6, 0.5, 2)
    pts = np.tile([1.0, 2.0, 3.0], (6, 1))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", GeometryWarning)
        inst = GeoMedianInstance(pts, 5.0, g, metropolis_hastings(g))
    seen = []
    pg_extra_run(inst, BaselineConfig("pg_extra", max_iter=30),
                 observer=lambda t, x, xb: seen.append(x.copy()))
    for x in seen:
        np.testing.assert_allclose(x, pts, atol=1e-13)


def test_shrink_prox_matches_uncapped_prox(rng):
    for _ in range(200):
        n, d = int(rng.integers(1, 6)), int(rng.integers(1, 5))
        z, b = rng.uniform(-5, 5, (2, n, d))
        alpha = float(10 ** rng.uniform(-1, 1))
        np.testing.assert_allclose(shrink_prox(z, b, alpha), prox_blocks(z, b, 1 / alpha, 1e12),
                                   rtol=0, atol=1e-10)


def test_admm_default_rho(small_instance):
    tr = jacobi_admm_run(small_instance, BaselineConfig("jacobi_admm", max_iter=1))
    assert tr.meta["rho"] == pytest.approx(2 * math.sqrt(sigma_max_AtA(small_instance)))


def test_admm_residual_shrinks():
    inst = make_instance(5, 2, ratio=0.5, seed=21)
    last = {}
    jacobi_admm_run(inst, BaselineConfig("jacobi_admm", max_iter=1000),
                    observer=lambda t, x, xb: last.update(x=x))
    initial = np.linalg.norm(apply_A(inst.mixing, inst.points))
    final = np.linalg.norm(apply_A(inst.mixing, last["x"]))
    assert final < initial
    assert final < 1e-2 * initial


def test_fixed_smoothing_defaults_and_length(small_instance):
    cfg = BaselineConfig("fixed_smoothing", max_iter=37)
    assert cfg.smoothing_mu == 1e-5
    tr = fixed_smoothing_run(small_instance, cfg)
    assert len(tr.records) == 37
    assert tr.meta["mu"] == 1e-5


def test_fixed_smoothing_equals_first_homotopy_stage(small_instance):
    # stage 1 runs at mu0/2 = epsilon0 / (2 D^2) from lambda = 0 and anchor b
    mu, T = 3e-3, 25
    p = make_problem(small_instance)
    eps0 = 2 * mu * p.diameter_D ** 2
    hom = []
    homotopy_run(p, HomotopyConfig(epsilon=eps0 / 2, epsilon0=eps0, horizon=T),
                 stage_observer=lambda k, s: hom.append(s.state.x_bar.copy()) if k == 1 else None)
    fixed = []
    fixed_smoothing_run(small_instance, BaselineConfig("fixed_smoothing", max_iter=T, smoothing_mu=mu),
                        observer=lambda s: fixed.append(s.state.x_bar.copy()))
    assert len(hom) == len(fixed) == T
    for a, b in zip(hom, fixed):
        np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("bad", [
    dict(algorithm="nope"),
    dict(algorithm="dsm", max_iter=0),
    dict(algorithm="pg_extra", step_size_alpha=0.0),
    dict(algorithm="jacobi_admm", admm_rho=-1.0),
    dict(algorithm="jacobi_admm", admm_penalty=0.0),
    dict(algorithm="fixed_smoothing", smoothing_mu=0.0),
])
def test_config_validation(bad):
    with pytest.raises(ValueError):
        BaselineConfig(**bad)


def test_schemas_identical_and_deterministic(small_instance):
    x_star, _ = consensus_solution(small_instance)
    headers = set()
    for name in ALGORITHMS:
        cfg = BaselineConfig(name, max_iter=20)
        a = run_baseline(small_instance, cfg, reference_x=x_star, wall_clock=False)
        b = run_baseline(small_instance, cfg, reference_x=x_star, wall_clock=False)
        assert csv_text(a) == csv_text(b)
        headers.add(csv_text(a).splitlines()[0])
        assert a.records[0].relative_error is not None
    assert len(headers) == 1


def test_relative_error_uses_shared_metric(small_instance):
    x_star, _ = consensus_solution(small_instance)
    tr = pg_extra_run(small_instance, BaselineConfig("pg_extra", max_iter=5), reference_x=x_star)
    expected = (np.linalg.norm(tr.final_x - x_star)
                / np.linalg.norm(small_instance.points - x_star))
    assert tr.records[-1].relative_error == pytest.approx(expected, rel=1e-14)
