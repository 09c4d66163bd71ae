import numpy as np
import pytest

from pchinf.plant import (
    ClosedLoopSample,
    PlantDimensionError,
    UncertainPlant,
    close_loop,
    close_loop_many,
    eval_polymat,
    sample_xi,
)
from pchinf.polychaos import PolynomialMatrix

from conftest import GAINS


def test_eval_polymat_constant(det_plant):
    xi = np.array([0.37])
    assert np.allclose(eval_polymat(det_plant.A, xi), [[-1.0, 0.3], [0.0, -2.0]])


def test_eval_benchmark_A(plant):
    assert np.allclose(eval_polymat(plant.A, [1.0]), [[0.6, -0.4], [0.1, 0.5]])
    assert np.allclose(eval_polymat(plant.A, [0.0]), [[0.0, -0.4], [0.1, 0.5]])


def test_eval_polymat_linear_in_coefficients(plant):
    xi = np.array([0.41])
    doubled = plant.A.scaled(2.0)
    assert np.allclose(doubled.eval(xi), 2.0 * plant.A.eval(xi))


def test_close_loop_zero_gain_is_open_loop(plant):
    xi = np.array([0.3])
    cl = close_loop(plant, np.zeros((1, 2)), xi)
    assert np.allclose(cl.A_cl, plant.A.eval(xi))
    assert np.allclose(cl.B_cl, plant.B_w.eval(xi))
    assert np.allclose(cl.C_cl, plant.C_z)
    assert np.allclose(cl.D_cl, plant.D_zw)


def test_close_loop_matches_direct_arithmetic(plant):
    K = GAINS["nominal_p2"]
    xi = np.zeros(1)
    cl = close_loop(plant, K, xi)
    A0, B0, C0 = plant.A.eval(xi), plant.B.eval(xi), plant.C.eval(xi)
    Dw0 = plant.D_w.eval(xi)
    assert np.allclose(cl.A_cl, A0 + B0 @ K @ C0)
    assert np.allclose(cl.B_cl, plant.B_w.eval(xi) + B0 @ K @ Dw0)
    assert np.allclose(cl.C_cl, plant.C_z + plant.D_z @ K @ C0)
    assert np.allclose(cl.D_cl, plant.D_zw + plant.D_z @ K @ Dw0)


def test_close_then_eval_commutes_with_eval_then_close(plant):
    # polynomial closed-loop matrix built symbolically, then evaluated
    K = GAINS["worst_case"]
    A_cl_poly = plant.A + plant.B.matmul(K).matmul(plant.C)
    rng = np.random.default_rng(3)
    for xi in rng.uniform(-1, 1, size=(50, 1)):
        cl = close_loop(plant, K, xi)
        assert np.max(np.abs(cl.A_cl - A_cl_poly.eval(xi))) < 1e-13


def test_close_loop_affine_in_gain(plant):
    rng = np.random.default_rng(11)
    K1, K2 = rng.standard_normal((2, 1, 2))
    xi = np.array([0.62])
    f = lambda K: close_loop(plant, K, xi)
    for field in ("A_cl", "B_cl", "C_cl", "D_cl"):
        combo = (getattr(f(K1 + K2), field) - getattr(f(K1), field)
                 - getattr(f(K2), field) + getattr(f(np.zeros((1, 2))), field))
        assert np.max(np.abs(combo)) < 1e-12


def test_close_loop_many_matches_scalar(plant):
    K = GAINS["nominal_p3"]
    pts = np.linspace(-1, 1, 7).reshape(-1, 1)
    A_c, B_c, C_c, D_c = close_loop_many(plant, K, pts)
    for i, xi in enumerate(pts):
        cl = close_loop(plant, K, xi)
        assert np.allclose(A_c[i], cl.A_cl)
        assert np.allclose(B_c[i], cl.B_cl)
        assert np.allclose(C_c[i], cl.C_cl)
        assert np.allclose(D_c[i], cl.D_cl)


def test_sample_xi_grid_mode(uniform1):
    pts = sample_xi(uniform1, 3, mode="grid")
    assert np.allclose(pts, [[-1.0], [0.0], [1.0]])


def test_sample_xi_deterministic(uniform1):
    a = sample_xi(uniform1, 100, seed=5)
    b = sample_xi(uniform1, 100, seed=5)
    assert np.array_equal(a, b)
    c = sample_xi(uniform1, 100, seed=6)
    assert not np.array_equal(a, c)


def test_sample_xi_mean_clt(uniform1):
    n = 10**5
    xs = sample_xi(uniform1, n, seed=0)
    sigma = np.sqrt(1.0 / 3.0)
    assert abs(xs.mean()) < 3 * sigma / np.sqrt(n)


def test_sample_xi_validation(uniform1):
    with pytest.raises(ValueError):
        sample_xi(uniform1, 0)
    with pytest.raises(ValueError):
        sample_xi(uniform1, 5, mode="sobol")


def test_dimension_validation(uniform1):
    good = dict(
        A=PolynomialMatrix.constant(np.eye(2), 1),
        B_w=PolynomialMatrix.constant(np.ones((2, 1)), 1),
        B=PolynomialMatrix.constant(np.ones((2, 1)), 1),
        C=PolynomialMatrix.constant(np.ones((1, 2)), 1),
        D_w=PolynomialMatrix.constant(np.zeros((1, 1)), 1),
        C_z=np.ones((1, 2)),
        D_zw=np.zeros((1, 1)),
        D_z=np.zeros((1, 1)),
        dist=uniform1,
    )
    UncertainPlant(**good)
    bad = dict(good)
    bad["C_z"] = np.ones((1, 3))
    with pytest.raises(PlantDimensionError):
        UncertainPlant(**bad)
    bad = dict(good)
    bad["D_w"] = PolynomialMatrix.constant(np.zeros((2, 1)), 1)
    with pytest.raises(PlantDimensionError):
        UncertainPlant(**bad)


def test_closed_loop_sample_type(plant):
    cl = close_loop(plant, GAINS["worst_case"], [0.5])
    assert isinstance(cl, ClosedLoopSample)
    assert cl.A_cl.shape == (2, 2)
    assert cl.B_cl.shape == (2, 4)
    assert cl.C_cl.shape == (3, 2)
    assert cl.D_cl.shape == (3, 4)
