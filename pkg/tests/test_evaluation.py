import numpy as np
import pytest

from pchinf.evaluation import (
    IntegrationBlowupError,
    UnstableSampleError,
    norm_distribution,
    quadrature_stats,
    simulate_stats,
    stats_errors,
    transform_error,
)
from pchinf.hinf import LtiSystem, hinf_norm
from pchinf.plant import close_loop

from conftest import GAINS


def test_norm_distribution_deterministic(det_plant):
    K = np.array([[0.1]])
    nd = norm_distribution(det_plant, K, grid_n=5)
    cl = close_loop(det_plant, K, [0.0])
    direct = hinf_norm(LtiSystem(cl.A_cl, cl.B_cl, cl.C_cl, cl.D_cl))
    assert abs(nd.worst_case - direct) < 1e-5
    assert abs(nd.averaged - direct) < 1e-5
    assert nd.worst_case >= nd.averaged
    assert nd.unstable == []


def test_norm_distribution_flags_unstable(plant):
    with pytest.raises(UnstableSampleError) as exc:
        norm_distribution(plant, np.zeros((1, 2)), grid_n=21)
    nd = exc.value.distribution
    assert len(nd.unstable) > 0
    assert np.isinf(nd.worst_case)


def test_norm_distribution_grid_validation(plant):
    with pytest.raises(ValueError):
        norm_distribution(plant, GAINS["worst_case"], grid_n=1)


def test_norm_distribution_thread_agreement(plant):
    a = norm_distribution(plant, GAINS["worst_case"], grid_n=31, threads=1)
    b = norm_distribution(plant, GAINS["worst_case"], grid_n=31, threads=4)
    assert np.array_equal(a.gamma, b.gamma)


def test_simulate_stats_deterministic_plant(det_plant):
    K = np.array([[0.2]])
    mc, prop, leg = simulate_stats(det_plant, K, p=1, x0=[1.0, -0.5], T=4.0,
                                   n_mc=64, seed=3)
    assert np.max(np.abs(mc.mean - prop.mean)) < 1e-9
    assert np.max(np.abs(mc.mean - leg.mean)) < 1e-9
    assert np.max(np.abs(prop.var)) < 1e-18
    assert np.max(mc.var) < 1e-18
    assert mc.var[0] @ mc.var[0] == 0.0  # deterministic start


def test_simulate_stats_initial_variance_zero(plant):
    mc, prop, leg = simulate_stats(plant, GAINS["nominal_p2"], p=2, T=0.5,
                                   n_mc=200, seed=5)
    assert np.allclose(mc.var[0], 0.0)
    assert np.allclose(prop.var[0], 0.0)
    assert np.all(prop.var >= 0.0)
    assert np.all(leg.var >= 0.0)


def test_simulate_stats_sources(plant):
    mc, prop, leg = simulate_stats(plant, GAINS["nominal_p2"], p=1, T=0.2, n_mc=16)
    assert (mc.source, prop.source, leg.source) == (
        "monte_carlo", "expanded_closed_loop", "expanded_legacy")


def test_mc_convergence_rate(plant):
    # against quadrature truth the MC mean error shrinks roughly like 1/sqrt(n)
    K = GAINS["nominal_p2"]
    ref = quadrature_stats(plant, K, np.ones(2), 3.0, 1e-3, n_nodes=61)
    ratios = []
    for seed in range(4):
        errs = []
        for n_mc in (800, 3200):
            mc, _, _ = simulate_stats(plant, K, p=1, T=3.0, n_mc=n_mc,
                                      seed=seed, stride=10)
            errs.append(np.sqrt(np.mean((mc.mean - ref.mean) ** 2)))
        ratios.append(errs[0] / errs[1])
    avg = float(np.mean(ratios))  # expect about sqrt(4) = 2
    assert 1.2 < avg < 3.4


def test_transform_error_constant_paths_collapse(det_plant):
    e_cl, e_leg = transform_error(det_plant, np.array([[0.3]]), p=2, T=4.0,
                                  n_nodes=21)
    assert abs(e_cl - e_leg) < 1e-12


def test_transform_error_benchmark_shrinks_with_degree(plant):
    K = GAINS["nominal_p2"]
    e2 = transform_error(plant, K, p=2, T=10.0, n_nodes=41)
    e8 = transform_error(plant, K, p=8, T=10.0, n_nodes=41)
    assert e8[0] < e2[0] / 10.0
    assert e8[1] < e2[1] / 10.0


def test_stats_errors_keys(plant):
    out = stats_errors(plant, GAINS["nominal_p2"], p=1, T=2.0, n_nodes=31)
    assert set(out) == {
        "mean_err_closed_loop_sup", "var_err_closed_loop_sup",
        "mean_err_closed_loop_int", "var_err_closed_loop_int",
        "mean_err_legacy_sup", "var_err_legacy_sup",
        "mean_err_legacy_int", "var_err_legacy_int",
    }
    assert all(v >= 0 for v in out.values())


def test_integration_blowup_guard(plant):
    with pytest.raises(IntegrationBlowupError):
        simulate_stats(plant, np.zeros((1, 2)), p=1, T=80.0, n_mc=8, seed=0)


def test_nominal_vs_worst_case_tradeoff_shape(plant):
    # expansion-based reference gain: better averaged, worse worst-case norm
    nd_wc = norm_distribution(plant, GAINS["worst_case"], grid_n=200)
    nd_p2 = norm_distribution(plant, GAINS["nominal_p2"], grid_n=200)
    assert nd_p2.averaged < nd_wc.averaged
    assert nd_p2.worst_case > nd_wc.worst_case
