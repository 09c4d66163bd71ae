import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pchinf.polychaos import (
    DegreeOverflowError,
    Distribution,
    DistributionError,
    Marginal,
    PolynomialMatrix,
    basis_count,
    build_basis,
    mean_var,
    multi_indices,
    polymat_pce,
    tensor_quadrature,
    total_degree,
)

SQ3, SQ5, SQ7 = math.sqrt(3), math.sqrt(5), math.sqrt(7)

# normalized Legendre family on uniform[-1,1] and its monomial inverse
LEGENDRE_COEFFS = np.array([
    [1.0, 0.0, 0.0, 0.0],
    [0.0, SQ3, 0.0, 0.0],
    [-SQ5 / 2, 0.0, 3 * SQ5 / 2, 0.0],
    [0.0, -3 * SQ7 / 2, 0.0, 5 * SQ7 / 2],
])
MONOMIAL_TABLE = np.array([
    [0.0, 1 / SQ3, 0.0, 0.0],
    [1 / 3, 0.0, 2 / (3 * SQ5), 0.0],
    [0.0, SQ3 / 5, 0.0, 2 / (5 * SQ7)],
])


@pytest.fixture(scope="module")
def leg3(uniform1):
    return build_basis(uniform1, 3)


def test_legendre_coefficients_exact(leg3):
    assert np.max(np.abs(leg3._coeffs_1d[0] - LEGENDRE_COEFFS)) < 1e-12


def test_monomial_inverse_table_exact(leg3):
    table = np.vstack([leg3.monomial_pce((d,), size=4) for d in (1, 2, 3)])
    assert np.max(np.abs(table - MONOMIAL_TABLE)) < 1e-12


def test_degree_zero_basis(uniform1):
    b = build_basis(uniform1, 0)
    assert b.size == 1
    assert np.allclose(b.eval_basis(np.array([[0.3]])), [[1.0]])
    g = build_basis(Distribution.standard_gaussian(2), 0)
    assert g.size == 1


def test_five_node_rule_normalizes_phi2(uniform1):
    b = build_basis(uniform1, 2, quad_order=5)
    phi = b.eval_basis(b.nodes, size=3)
    val = float(np.sum(b.weights * phi[2] ** 2))
    # oracle: high-order rule on the same polynomial
    ref = build_basis(uniform1, 2, quad_order=60)
    phir = ref.eval_basis(ref.nodes, size=3)
    ref_val = float(np.sum(ref.weights * phir[2] ** 2))
    assert abs(val - 1.0) < 1e-12
    assert abs(val - ref_val) < 1e-12


def test_projection_of_basis_function_is_unit_vector(leg3):
    psi = leg3.project(lambda x: -SQ5 / 2 + 1.5 * SQ5 * x[0] ** 2)
    assert np.allclose(psi, np.eye(4)[2], atol=1e-13)


def test_projection_linearity_against_monomial_table(leg3):
    psi = leg3.project(lambda x: 0.6 * x[0] ** 3)
    assert np.allclose(psi, 0.6 * leg3.monomial_pce((3,), size=4), atol=1e-13)


def test_projection_of_constant(leg3):
    assert np.allclose(leg3.project(lambda x: 1.0), np.eye(4)[0], atol=1e-14)


def test_mean_var_cases():
    m, v = mean_var(np.array([2.0, 0.0, 0.0]))
    assert (m, v) == (2.0, 0.0)
    m, v = mean_var(np.array([0.0, 1 / SQ3]))
    assert abs(m) < 1e-15 and abs(v - 1 / 3) < 1e-15  # Var of uniform[-1,1]
    m, v = mean_var(np.array([1 / 3, 0.0, 2 / (3 * SQ5)]))
    assert abs(m - 1 / 3) < 1e-15
    assert abs(v - (1 / 5 - 1 / 9)) < 1e-15  # E{xi^4} - E{xi^2}^2


def test_mean_var_rejects_empty():
    with pytest.raises(ValueError):
        mean_var(np.array([]))


def test_triple_product_values(leg3):
    for j in range(4):
        for k in range(4):
            assert abs(leg3.triple_product(0, j, k) - (j == k)) < 1e-12
    # integral of phi1^2 phi2 over uniform[-1,1] computed by hand: 2/sqrt(5)
    assert abs(leg3.triple_product(1, 1, 2) - 2 / SQ5) < 1e-12
    assert leg3.triple_product(1, 2, 1) == leg3.triple_product(1, 1, 2)
    t = leg3.triple_tensor()
    assert np.allclose(t, t.transpose(1, 0, 2))
    assert np.allclose(t, t.transpose(0, 2, 1))


def test_triple_product_structural_zeros(uniform1):
    b = build_basis(uniform1, 4)
    for i in range(5):
        for j in range(5):
            for k in range(5):
                if (i + j + k) % 2 == 1 or k > i + j or i > j + k or j > i + k:
                    assert abs(b.triple_product(i, j, k)) < 1e-12


def test_polymat_pce_constant(uniform1):
    b = build_basis(uniform1, 2)
    M = PolynomialMatrix.constant([[1.0, 2.0], [3.0, 4.0]], 1)
    out = polymat_pce(b, M, out_degree=2)
    assert np.allclose(out[0], [[1, 2], [3, 4]])
    assert np.allclose(out[1:], 0.0)


def test_polymat_pce_cubic_column(plant):
    b = build_basis(plant.dist, 3)
    out = polymat_pce(b, plant.B)
    assert np.allclose(out[0], [[0.2], [0.2]], atol=1e-13)
    assert np.allclose(out[1], [[SQ3 / 5], [0.0]], atol=1e-13)
    assert np.allclose(out[2], 0.0, atol=1e-13)
    assert np.allclose(out[3], [[2 / (5 * SQ7)], [0.0]], atol=1e-13)


def test_polymat_pce_pointwise_reconstruction(plant):
    b = build_basis(plant.dist, 3)
    out = polymat_pce(b, plant.A)
    xi = np.array([0.7])
    phi = b.eval_basis(xi, size=len(out))[:, 0]
    rec = np.einsum("k,kab->ab", phi, out)
    assert np.max(np.abs(rec - plant.A.eval(xi))) < 1e-12


def test_polymat_pce_degree_overflow(uniform1, plant):
    b = build_basis(uniform1, 1)
    with pytest.raises(DegreeOverflowError):
        polymat_pce(b, plant.A)  # cubic entries exceed working degree 1
    with pytest.raises(DegreeOverflowError):
        polymat_pce(build_basis(uniform1, 3), plant.A, out_degree=2)


@pytest.mark.parametrize("dist,p", [
    (Distribution.uniform([(-1.0, 1.0)]), 10),
    (Distribution.uniform([(0.0, 2.0), (-3.0, -1.0)]), 4),
    (Distribution.uniform([(-1.0, 1.0)] * 3), 3),
    (Distribution.standard_gaussian(1), 8),
    (Distribution.standard_gaussian(2), 4),
])
def test_orthonormality(dist, p):
    b = build_basis(dist, p)
    assert b.orthonormality_defect() < 1e-10


@pytest.mark.parametrize("dist,p", [
    (Distribution.uniform([(-2.0, 0.5)]), 6),
    (Distribution.uniform([(-1.0, 1.0), (0.0, 1.0)]), 4),
    (Distribution.standard_gaussian(2), 4),
])
def test_monomial_exactness_at_samples(dist, p):
    b = build_basis(dist, p)
    rng = np.random.default_rng(42)
    pts = dist.sample(200, rng)
    phi = b.eval_basis(pts, size=b.working_size)
    for S in b.indices:
        direct = np.prod(pts ** np.array(S), axis=1)
        rec = b.monomial_pce(S, size=b.working_size) @ phi
        assert np.max(np.abs(direct - rec)) < 1e-10


@given(n_xi=st.integers(1, 3), p=st.integers(0, 6))
@settings(max_examples=30, deadline=None)
def test_basis_count_formula(n_xi, p):
    assert basis_count(n_xi, p) == math.factorial(n_xi + p) // (
        math.factorial(n_xi) * math.factorial(p))
    idx = multi_indices(n_xi, p)
    assert len(idx) == basis_count(n_xi, p)
    assert idx[0] == (0,) * n_xi
    degs = [total_degree(t) for t in idx]
    assert degs == sorted(degs)


def test_graded_lex_order():
    assert multi_indices(2, 2) == [
        (0, 0), (1, 0), (0, 1), (2, 0), (1, 1), (0, 2)]


def test_truncated_stats_match_monte_carlo(uniform1):
    b = build_basis(uniform1, 4, working_degree=6)
    coeffs = b.project(lambda x: x[0] ** 3 - 0.5 * x[0] + 0.2, size=5)
    mean, var = mean_var(coeffs)
    rng = np.random.default_rng(7)
    n = 10**5
    xs = uniform1.sample(n, rng)[:, 0]
    phi = b.eval_basis(xs.reshape(-1, 1), size=5)
    samples = coeffs @ phi
    se_mean = samples.std(ddof=1) / math.sqrt(n)
    assert abs(samples.mean() - mean) < 3 * se_mean
    se_var = samples.var(ddof=1) * math.sqrt(2.0 / (n - 1))
    assert abs(samples.var(ddof=1) - var) < 3 * se_var


def test_gaussian_monomial_table():
    b = build_basis(Distribution.standard_gaussian(1), 3)
    # x^2 = 1 + sqrt(2) * He_2/sqrt(2!) -> coefficients (1, 0, sqrt(2), 0)
    assert np.allclose(b.monomial_pce((2,), size=4),
                       [1.0, 0.0, math.sqrt(2.0), 0.0], atol=1e-12)


def test_distribution_errors():
    with pytest.raises(DistributionError):
        Marginal("uniform", 1.0, -1.0)
    with pytest.raises(DistributionError):
        Marginal("triangular")
    with pytest.raises(DistributionError):
        Distribution.standard_gaussian(1).support()
    with pytest.raises(DistributionError):
        Distribution(())


def test_quad_order_too_small_raises(uniform1):
    with pytest.raises(ValueError, match="quad_order too small"):
        build_basis(uniform1, 6, quad_order=3)


def test_quadrature_weights_normalized():
    dist = Distribution.uniform([(0.0, 4.0), (-1.0, 1.0)])
    nodes, w = tensor_quadrature(dist, 7)
    assert abs(w.sum() - 1.0) < 1e-13
    assert nodes.shape == (49, 2)
    g = Distribution.standard_gaussian(1)
    _, wg = tensor_quadrature(g, 9)
    assert abs(wg.sum() - 1.0) < 1e-13


def test_polynomial_matrix_algebra(uniform1):
    M = PolynomialMatrix((2, 2), 1, {(0,): np.eye(2), (1,): [[0, 1], [0, 0]]})
    N = PolynomialMatrix((2, 1), 1, {(2,): [[1.0], [2.0]]})
    prod = M.matmul(N)
    xi = np.array([0.6])
    assert np.allclose(prod.eval(xi), M.eval(xi) @ N.eval(xi), atol=1e-14)
    s = M + M.scaled(-1.0)
    assert np.allclose(s.eval(xi), 0.0)
    with pytest.raises(ValueError):
        PolynomialMatrix((2, 2), 1, {(0,): np.eye(3)})
