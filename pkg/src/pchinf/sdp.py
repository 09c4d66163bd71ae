"""Dense primal-dual interior-point solver for small LMI-constrained SDPs.

Solves

    minimize    c' x
    subject to  F0_b + sum_i x_i F_i_b  >=  margin * I     (each block b)

with symmetric dense blocks, via an infeasible-start primal-dual method with
Nesterov-Todd scaling and a Mehrotra-style predictor-corrector. Everything is
dense and deterministic; problems here are desk scale (total block dimension
of a few hundred).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cholesky as _chol, solve_triangular

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
MAX_ITER = "max_iter"
STALLED = "stalled"  # no further progress; best near-feasible iterate returned
NUMERICAL_FAILURE = "numerical_failure"


class SdpError(RuntimeError):
    pass


def _symmetrize_checked(M: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ValueError(f"expected square matrix, got shape {M.shape}")
    dev = np.max(np.abs(M - M.T)) if M.size else 0.0
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 0.0)
    if dev > tol * scale:
        raise ValueError(f"matrix asymmetric beyond tolerance ({dev:.2e})")
    return 0.5 * (M + M.T)


@dataclass
class LmiBlock:
    """One affine symmetric block F0 + sum_i x_i F_i."""

    F0: np.ndarray
    Fi: np.ndarray  # (n_vars, d, d)

    def __post_init__(self):
        self.F0 = _symmetrize_checked(np.asarray(self.F0, dtype=float))
        Fi = np.asarray(self.Fi, dtype=float)
        if Fi.ndim != 3 or Fi.shape[1] != Fi.shape[2] or Fi.shape[1] != self.F0.shape[0]:
            raise ValueError(f"Fi must be (n_vars, d, d) matching F0, got {Fi.shape}")
        self.Fi = np.stack([_symmetrize_checked(F) for F in Fi]) if len(Fi) else Fi

    @property
    def dim(self) -> int:
        return self.F0.shape[0]

    def value(self, x: np.ndarray) -> np.ndarray:
        out = self.F0.copy()
        if len(self.Fi):
            out += np.einsum("n,nab->ab", x, self.Fi)
        return out


@dataclass
class LmiProblem:
    """Affine symmetric-block constraint system in scalar decision variables."""

    c: np.ndarray
    blocks: list[LmiBlock]
    margin: float = 0.0
    var_names: list[str] | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        if self.margin < 0:
            raise ValueError("margin must be nonnegative")
        for b in self.blocks:
            if len(b.Fi) != self.n_vars:
                raise ValueError(
                    f"block has {len(b.Fi)} variable matrices, problem has {self.n_vars} variables"
                )
        if self.var_names is not None and len(self.var_names) != self.n_vars:
            raise ValueError("var_names length mismatch")

    @property
    def n_vars(self) -> int:
        return len(self.c)

    def block_values(self, x: np.ndarray) -> list[np.ndarray]:
        return [b.value(x) for b in self.blocks]

    def min_eigs(self, x: np.ndarray) -> list[float]:
        """Per-block minimum eigenvalue of F(x) - margin*I."""
        return [
            float(np.linalg.eigvalsh(b.value(x))[0]) - self.margin for b in self.blocks
        ]


@dataclass
class SdpSolution:
    status: str
    x: np.ndarray
    objective: float
    min_eigs: list[float]
    gap: float
    iterations: int
    message: str = ""

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class SdpOptions:
    max_iter: int = 200
    gap_tol: float = 1e-9
    feas_tol: float = 1e-8
    step_fraction: float = 0.98
    unbounded_cap: float = 1e10
    infeas_ray_norm: float = 1e8
    loose_feas: float = 1e-4
    stall_window: int = 15
    verbose: bool = False


def _max_step(S: np.ndarray, dS: np.ndarray, chol_S: np.ndarray) -> float:
    """Largest alpha with S + alpha*dS >= 0, given chol(S) lower-triangular."""
    G = solve_triangular(chol_S, dS, lower=True, check_finite=False)
    G = solve_triangular(chol_S, G.T, lower=True, check_finite=False).T
    lam_min = float(np.linalg.eigvalsh(0.5 * (G + G.T))[0])
    if lam_min >= 0.0:
        return np.inf
    return -1.0 / lam_min


def _try_chol(S: np.ndarray) -> np.ndarray | None:
    try:
        return _chol(S, lower=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError):
        return None


def solve(problem: LmiProblem, opts: SdpOptions | None = None) -> SdpSolution:
    """Interior-point solve; deterministic for identical inputs and options."""
    opts = opts or SdpOptions()
    n = problem.n_vars

    if not problem.blocks:
        if np.all(problem.c == 0.0):
            return SdpSolution(OPTIMAL, np.zeros(n), 0.0, [], 0.0, 0, "no constraints")
        return SdpSolution(UNBOUNDED, np.zeros(n), -np.inf, [], np.inf, 0,
                           "no constraints and nonzero objective")

    # margin shift, then per-block Frobenius scaling to condition the Newton system
    F0s, Fis = [], []
    for b in problem.blocks:
        F0 = b.F0 - problem.margin * np.eye(b.dim)
        s = max(float(np.linalg.norm(F0)),
                float(max((np.linalg.norm(F) for F in b.Fi), default=0.0)), 1e-8)
        F0s.append(F0 / s)
        Fis.append(b.Fi / s if len(b.Fi) else b.Fi.reshape(0, b.dim, b.dim))
    c_scale = max(1.0, float(np.max(np.abs(problem.c))) if n else 1.0)
    c = problem.c / c_scale

    if n == 0:
        eig0 = min(float(np.linalg.eigvalsh(F0)[0]) for F0 in F0s)
        ok = eig0 >= -opts.feas_tol
        return SdpSolution(
            OPTIMAL if ok else INFEASIBLE, np.zeros(0), 0.0,
            problem.min_eigs(np.zeros(0)), 0.0, 0, "constant problem",
        )

    m_total = sum(F0.shape[0] for F0 in F0s)
    x = np.zeros(n)
    Zs = [(1.0 + float(np.linalg.norm(F0))) * np.eye(F0.shape[0]) for F0 in F0s]
    Ys = [np.eye(F0.shape[0]) for F0 in F0s]

    # best near-feasible iterate, kept as the answer should the run stall
    best_x: np.ndarray | None = None
    best_pobj = np.inf
    best_score = np.inf
    last_progress = 0

    def finish(status, it, gap, msg="", x_out=None):
        xr = x if x_out is None else x_out
        return SdpSolution(
            status=status,
            x=xr.copy(),
            objective=float(problem.c @ xr),
            min_eigs=problem.min_eigs(xr),
            gap=gap,
            iterations=it,
            message=msg,
        )

    def bail(status, it, gap, msg):
        """Prefer the best near-feasible iterate over a hard failure verdict."""
        if best_x is not None:
            return finish(STALLED, it, gap, f"{msg}; best iterate returned", x_out=best_x)
        return finish(status, it, gap, msg)

    def dual_image(Ys_):
        return np.array(
            [sum(np.sum(Fi[i] * Y) for Fi, Y in zip(Fis, Ys_)) for i in range(n)]
        )

    rel_gap = np.inf
    for it in range(opts.max_iter):
        Rds = [F0 + np.einsum("n,nab->ab", x, Fi) - Z
               for F0, Fi, Z in zip(F0s, Fis, Zs)]
        AtY = dual_image(Ys)
        rp = c - AtY
        gap_abs = sum(np.sum(Z * Y) for Z, Y in zip(Zs, Ys))
        mu = gap_abs / m_total
        pobj = float(c @ x)
        dobj = -sum(np.sum(F0 * Y) for F0, Y in zip(F0s, Ys))
        rel_gap = gap_abs / (1.0 + abs(pobj) + abs(dobj))
        rd_norm = max(
            float(np.linalg.norm(Rd)) / (1.0 + float(np.linalg.norm(F0)))
            for Rd, F0 in zip(Rds, F0s)
        )
        rp_norm = float(np.max(np.abs(rp))) / (1.0 + float(np.max(np.abs(c))))

        if opts.verbose:
            print(f"  it {it:3d}  mu {mu:9.2e}  gap {rel_gap:9.2e}  "
                  f"rd {rd_norm:9.2e}  rp {rp_norm:9.2e}  pobj {pobj:+.6e}")

        if rel_gap <= opts.gap_tol and rd_norm <= opts.feas_tol and rp_norm <= opts.feas_tol:
            return finish(OPTIMAL, it, rel_gap)

        # bookkeeping for stall recovery
        feas_score = max(rd_norm, rp_norm)
        if feas_score <= opts.loose_feas and pobj < best_pobj:
            best_pobj = pobj
            best_x = x.copy()
        score = max(rel_gap, feas_score)
        if score < 0.8 * best_score:
            best_score = score
            last_progress = it
        if it - last_progress > opts.stall_window:
            return bail(NUMERICAL_FAILURE, it, rel_gap, "progress stalled")

        # primal-infeasibility certificate: a dual ray with A*(Y) ~ 0, <F0, Y> < 0
        y_norm = sum(float(np.linalg.norm(Y)) for Y in Ys)
        if y_norm > opts.infeas_ray_norm:
            f0y_n = sum(np.sum(F0 * Y) for F0, Y in zip(F0s, Ys)) / y_norm
            aty_n = float(np.max(np.abs(AtY))) / y_norm
            if f0y_n <= -1e-5 and aty_n <= 1e-4 * (-f0y_n):
                if best_x is not None:
                    # a feasible iterate was seen; the ray is numerical noise
                    return bail(NUMERICAL_FAILURE, it, rel_gap, "spurious ray")
                return finish(INFEASIBLE, it, rel_gap, "dual ray certificate")
            if y_norm > 1e6 * opts.infeas_ray_norm:
                return bail(NUMERICAL_FAILURE, it, rel_gap, "dual iterate diverged")
        if pobj * c_scale < -opts.unbounded_cap:
            return finish(UNBOUNDED, it, rel_gap, "objective diverging below clamp")

        # Nesterov-Todd scaling per block: W Z W = Y, scaled point lam diagonal
        Ws, Rs, Rinvs, lams, cholYs, cholZs = [], [], [], [], [], []
        degraded = False
        for Z, Y in zip(Zs, Ys):
            LY = _try_chol(Y)
            LZ = _try_chol(Z)
            if LY is None or LZ is None:
                degraded = True
                break
            T = LZ.T @ LY
            _, sig, Vt = np.linalg.svd(T)
            sig = np.maximum(sig, 1e-150)
            V = Vt.T
            R = LY @ V / np.sqrt(sig)
            Rinv = (V * np.sqrt(sig)).T @ solve_triangular(
                LY, np.eye(LY.shape[0]), lower=True, check_finite=False
            )
            Ws.append(R @ R.T)
            Rs.append(R)
            Rinvs.append(Rinv)
            lams.append(sig)
            cholYs.append(LY)
            cholZs.append(LZ)
        if degraded:
            return bail(NUMERICAL_FAILURE, it, rel_gap, "iterate lost definiteness")

        # Schur complement M_ij = sum_b tr(F_i W F_j W)
        M = np.zeros((n, n))
        for Fi, W in zip(Fis, Ws):
            if len(Fi) == 0:
                continue
            WFW = np.einsum("ab,nbc,cd->nad", W, Fi, W, optimize=True)
            M += np.einsum("nab,mab->nm", Fi, WFW, optimize=True)
        M = 0.5 * (M + M.T)

        base = max(float(np.trace(M)) / max(n, 1), 1.0)
        reg = 0.0
        LM = _try_chol(M)
        while LM is None and reg < 1e-4 * base:
            reg = max(2.0 * reg, 1e-13 * base)
            LM = _try_chol(M + reg * np.eye(n))
        if LM is None:
            return bail(NUMERICAL_FAILURE, it, rel_gap, "Schur factorization failed")

        def newton(Rcs):
            h = -rp.copy()
            for Fi, W, Rd, Rc in zip(Fis, Ws, Rds, Rcs):
                if len(Fi) == 0:
                    continue
                T = Rc - W @ Rd @ W
                h += np.einsum("nab,ab->n", Fi, T)
            dx = solve_triangular(
                LM, solve_triangular(LM, h, lower=True, check_finite=False),
                lower=True, trans="T", check_finite=False,
            )
            dZs, dYs = [], []
            for Fi, W, Rd, Rc in zip(Fis, Ws, Rds, Rcs):
                dZ = (np.einsum("n,nab->ab", dx, Fi) if len(Fi) else 0.0) + Rd
                dZ = 0.5 * (dZ + dZ.T)
                dY = Rc - W @ dZ @ W
                dZs.append(dZ)
                dYs.append(0.5 * (dY + dY.T))
            return dx, dZs, dYs

        # predictor (affine-scaling direction)
        dx_a, dZs_a, dYs_a = newton([-Y for Y in Ys])
        a_z = min(min((_max_step(Z, dZ, LZ) for Z, dZ, LZ in zip(Zs, dZs_a, cholZs))), 1.0)
        a_y = min(min((_max_step(Y, dY, LY) for Y, dY, LY in zip(Ys, dYs_a, cholYs))), 1.0)
        mu_aff = sum(
            np.sum((Z + a_z * dZ) * (Y + a_y * dY))
            for Z, dZ, Y, dY in zip(Zs, dZs_a, Ys, dYs_a)
        ) / m_total
        sigma = min(1.0, max(1e-8, (max(mu_aff, 0.0) / mu) ** 3))

        # corrector with the second-order term formed in the scaled space
        Rcs = []
        for R, Rinv, lam, dY_a, dZ_a in zip(Rs, Rinvs, lams, dYs_a, dZs_a):
            dY_s = Rinv @ dY_a @ Rinv.T
            dZ_s = R.T @ dZ_a @ R
            Q = -np.diag(lam**2) - 0.5 * (dY_s @ dZ_s + dZ_s @ dY_s)
            Q[np.diag_indices_from(Q)] += sigma * mu
            denom = 0.5 * (lam[:, None] + lam[None, :])
            Rc = R @ (Q / denom) @ R.T
            Rcs.append(0.5 * (Rc + Rc.T))
        dx, dZs, dYs = newton(Rcs)

        a_z = min(min((_max_step(Z, dZ, LZ) for Z, dZ, LZ in zip(Zs, dZs, cholZs))), np.inf)
        a_y = min(min((_max_step(Y, dY, LY) for Y, dY, LY in zip(Ys, dYs, cholYs))), np.inf)
        a_z = min(1.0, opts.step_fraction * a_z)
        a_y = min(1.0, opts.step_fraction * a_y)
        if max(a_z, a_y) < 1e-12:
            return bail(NUMERICAL_FAILURE, it, rel_gap, "step length collapsed")

        x = x + a_z * dx
        Zs = [Z + a_z * dZ for Z, dZ in zip(Zs, dZs)]
        Ys = [Y + a_y * dY for Y, dY in zip(Ys, dYs)]

    return bail(MAX_ITER, opts.max_iter, rel_gap,
                f"no convergence in {opts.max_iter} iterations")


def feasibility(
    problem: LmiProblem, opts: SdpOptions | None = None, t_cap: float = 10.0
) -> tuple[bool, np.ndarray | None, SdpSolution]:
    """Strict-feasibility decision via the standard phase-1 reformulation.

    Minimizes the uniform violation t subject to F0 + sum_i x_i F_i + t I >= 0
    for every block, plus a bound t >= -t_cap so phase 1 is never unbounded.
    Feasible means the optimal t clears half the requested margin; the last
    iterate is additionally certified by a direct eigenvalue check, which
    rescues runs that locate a strictly feasible point and only then stall
    (e.g. when a multiplier variable must grow without bound).
    Returns (feasible, witness, phase1_solution).
    """
    n = problem.n_vars
    if not problem.blocks:
        return True, np.zeros(n), SdpSolution(OPTIMAL, np.zeros(n + 1), 0.0, [], 0.0, 0,
                                              "no constraints")
    blocks = []
    for b in problem.blocks:
        Fi = np.concatenate([b.Fi, np.eye(b.dim)[None]], axis=0)
        blocks.append(LmiBlock(b.F0, Fi))
    t_col = np.concatenate([np.zeros((n, 1, 1)), np.ones((1, 1, 1))], axis=0)
    blocks.append(LmiBlock(np.array([[t_cap]]), t_col))
    c = np.zeros(n + 1)
    c[-1] = 1.0
    sol = solve(LmiProblem(c=c, blocks=blocks, margin=0.0), opts)
    witness = sol.x[:-1]
    # independent certificate: the witness must clear half the margin for real
    certified = min(problem.min_eigs(witness)) >= -problem.margin / 2.0
    if sol.status == OPTIMAL:
        feasible = certified or sol.x[-1] < -problem.margin / 2.0
    else:
        feasible = certified
    return feasible, (witness if feasible else None), sol


def write_sdpa(problem: LmiProblem, path: str) -> None:
    """Dump in an SDPA-like sparse text format for external cross-checking.

    Convention: maximize -c'y subject to sum_i y_i F_i - (-F0 + margin I) >= 0,
    which matches the solver's constraint after the margin shift.
    """
    lines = [
        f'"pchinf LMI dump: {problem.n_vars} vars, {len(problem.blocks)} blocks"',
        f"{problem.n_vars}",
        f"{len(problem.blocks)}",
        " ".join(str(b.dim) for b in problem.blocks),
        " ".join(repr(float(-v)) for v in problem.c),
    ]
    for bno, b in enumerate(problem.blocks, start=1):
        F0 = -(b.F0 - problem.margin * np.eye(b.dim))
        for i in range(b.dim):
            for j in range(i, b.dim):
                if F0[i, j] != 0.0:
                    lines.append(f"0 {bno} {i + 1} {j + 1} {float(F0[i, j])!r}")
        for k in range(len(b.Fi)):
            Fk = b.Fi[k]
            for i in range(b.dim):
                for j in range(i, b.dim):
                    if Fk[i, j] != 0.0:
                        lines.append(f"{k + 1} {bno} {i + 1} {j + 1} {float(Fk[i, j])!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")
