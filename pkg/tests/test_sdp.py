import numpy as np
import pytest

from pchinf.hinf import brl_lmi, hinf_norm
from pchinf.sdp import (
    INFEASIBLE,
    OPTIMAL,
    UNBOUNDED,
    LmiBlock,
    LmiProblem,
    SdpOptions,
    feasibility,
    solve,
    write_sdpa,
)

from conftest import random_stable_system


def lambda_max_problem(M):
    return LmiProblem(c=np.array([1.0]), blocks=[LmiBlock(-M, np.eye(len(M))[None])])


def sym_basis(n):
    out = []
    for i in range(n):
        for j in range(i, n):
            E = np.zeros((n, n))
            E[i, j] = E[j, i] = 1.0
            out.append(E)
    return np.array(out)


def lyapunov_problem(A, margin=1e-6):
    basis = sym_basis(A.shape[0])
    neg = np.array([-(A.T @ E + E @ A) for E in basis])
    return LmiProblem(
        c=np.zeros(len(basis)),
        blocks=[LmiBlock(np.zeros(A.shape), neg), LmiBlock(np.zeros(A.shape), basis)],
        margin=margin,
    )


def test_lambda_max_reformulation():
    rng = np.random.default_rng(0)
    for _ in range(10):
        d = int(rng.integers(2, 9))
        M = rng.standard_normal((d, d))
        M = 0.5 * (M + M.T)
        sol = solve(lambda_max_problem(M))
        assert sol.optimal
        assert abs(sol.objective - np.linalg.eigvalsh(M)[-1]) < 1e-8


def test_lyapunov_feasibility_stable():
    ok, witness, sol = feasibility(lyapunov_problem(np.array([[-1.0, 0.5], [0.0, -2.0]])))
    assert ok
    P = np.array([[witness[0], witness[1]], [witness[1], witness[2]]])
    assert np.linalg.eigvalsh(P)[0] > 0


def test_lyapunov_feasibility_unstable():
    ok, witness, _ = feasibility(lyapunov_problem(np.array([[1.0, 0.0], [0.0, -1.0]])))
    assert not ok and witness is None


def test_empty_constraints_feasible():
    ok, witness, _ = feasibility(LmiProblem(c=np.zeros(3), blocks=[]))
    assert ok and np.array_equal(witness, np.zeros(3))


def test_unbounded_objective_clamped():
    # min t subject only to an upper bound on t: diverges and is flagged
    prob = LmiProblem(c=np.array([1.0]),
                      blocks=[LmiBlock(np.array([[10.0]]), -np.ones((1, 1, 1)))])
    sol = solve(prob)
    assert sol.status == UNBOUNDED


def test_no_constraints_direct_solve():
    assert solve(LmiProblem(c=np.zeros(2), blocks=[])).optimal
    assert solve(LmiProblem(c=np.array([1.0]), blocks=[])).status == UNBOUNDED


def test_constant_problem_status():
    ok = solve(LmiProblem(c=np.zeros(0), blocks=[LmiBlock(np.eye(2), np.zeros((0, 2, 2)))]))
    assert ok.optimal
    bad = solve(LmiProblem(c=np.zeros(0), blocks=[LmiBlock(-np.eye(2), np.zeros((0, 2, 2)))]))
    assert bad.status == INFEASIBLE


def test_determinism_bitwise():
    rng = np.random.default_rng(3)
    Fi = rng.standard_normal((4, 5, 5))
    Fi = 0.5 * (Fi + Fi.transpose(0, 2, 1))
    prob = LmiProblem(c=rng.standard_normal(4), blocks=[LmiBlock(np.eye(5) * 3, Fi * 0.2)])
    s1, s2 = solve(prob), solve(prob)
    assert s1.status == s2.status == OPTIMAL
    assert s1.iterations == s2.iterations
    assert np.array_equal(s1.x, s2.x)


def test_witness_satisfies_constraints():
    rng = np.random.default_rng(9)
    for _ in range(5):
        nv, d = int(rng.integers(2, 6)), int(rng.integers(3, 8))
        Fi = rng.standard_normal((nv, d, d)) * 0.2
        Fi = 0.5 * (Fi + Fi.transpose(0, 2, 1))
        F0 = np.eye(d) * (1 + rng.uniform())
        prob = LmiProblem(c=rng.standard_normal(nv), blocks=[LmiBlock(F0, Fi)])
        sol = solve(prob)
        if sol.status == UNBOUNDED:
            continue  # random objective can admit an improving ray
        assert sol.optimal
        assert min(sol.min_eigs) >= -1e-7 * (1 + np.linalg.norm(F0))


def test_brl_feasibility_monotone_in_gamma():
    rng = np.random.default_rng(17)
    for _ in range(4):
        sys = random_stable_system(rng, n=3)
        g = hinf_norm(sys)
        verdicts = [feasibility(brl_lmi(sys, fac * g))[0]
                    for fac in (0.6, 0.9, 1.1, 1.6, 3.0)]
        # once feasible, stays feasible as gamma grows
        assert verdicts == sorted(verdicts)
        assert not verdicts[0] and verdicts[-1]


def test_brl_boundary_matches_hinf_norm():
    rng = np.random.default_rng(23)
    sys = random_stable_system(rng, n=3)
    g = hinf_norm(sys, tol=1e-8)
    assert feasibility(brl_lmi(sys, g * 1.001))[0]
    assert not feasibility(brl_lmi(sys, g * 0.999))[0]


def test_asymmetric_input_rejected():
    with pytest.raises(ValueError):
        LmiBlock(np.array([[0.0, 1.0], [0.0, 0.0]]), np.zeros((0, 2, 2)))


def test_margin_validation():
    with pytest.raises(ValueError):
        LmiProblem(c=np.zeros(1), blocks=[LmiBlock(np.eye(1), np.ones((1, 1, 1)))],
                   margin=-1.0)
    with pytest.raises(ValueError):
        LmiProblem(c=np.zeros(2), blocks=[LmiBlock(np.eye(1), np.ones((1, 1, 1)))])


def test_sdpa_dump(tmp_path):
    M = np.array([[1.0, 0.2], [0.2, -0.5]])
    prob = lambda_max_problem(M)
    path = tmp_path / "dump.dat-s"
    write_sdpa(prob, path)
    text = path.read_text()
    assert text.splitlines()[1] == "1"
    assert "1 1 1 1 1.0" in text
