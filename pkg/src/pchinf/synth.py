"""Static output-feedback gain synthesis by alternating semidefinite programming.

The synthesis constraints are bilinear in the Lyapunov variable P and the
gain K but affine in each for the other fixed, so the nonconvex program is
attacked by alternating two convex SDP steps:

- P-step: fix K, minimize gamma over (P, tau);
- K-step: fix (P, tau) at a re-centered interior point, minimize gamma over K;

accepting only improving iterations (the per-restart gamma trace is
nonincreasing by construction) and taking the best result over several
starts. Three constraint systems are supported: shared-Lyapunov worst-case
vertex design, the expanded-system bound (gamma equals the averaged squared
output gain), and its robustified variant with truncation-error radius rho.

Robust stability of the synthesized loop is judged by a dense eigenvalue
sweep over the parameter box; the bisection on rho2 shrinks the uncertainty
radius to the smallest value whose synthesized gain passes that sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .galerkin import assemble_closed_loop, expand_blocks
from .hinf import (
    DEFAULT_MARGIN,
    VarLayout,
    VarSpec,
    affine_lmi_problem,
    brl_lhs,
    max_real_eig,
    robust_lhs,
    LtiSystem,
)
from .plant import UncertainPlant, close_loop, close_loop_many
from .polychaos import OrthonormalBasis, build_basis
from .sdp import OPTIMAL, STALLED, SdpOptions, feasibility, solve

MODE_WORST_CASE = "worst_case"
MODE_NOMINAL = "nominal_pce"
MODE_ROBUST = "robust_pce"


class SynthesisError(RuntimeError):
    pass


class NoFeasibleStart(SynthesisError):
    """No initial gain admits a feasible analysis step."""


class InfeasibleAtHi(SynthesisError):
    """The upper end of the rho2 bisection range does not synthesize."""


class AllProbesUnstable(SynthesisError):
    """Every probed rho2 produced a gain failing the stability sweep."""


@dataclass
class SynthesisConfig:
    mode: str = MODE_NOMINAL
    p: int = 2
    rho2: float = 0.0
    k_init: np.ndarray | None = None
    max_outer_iters: int = 50
    gamma_tol: float = 1e-3
    restarts: int = 3
    seed: int = 0
    vertices: list | None = None
    margin: float = DEFAULT_MARGIN
    stability_margin: float = 1e-6
    grid_n: int = 1001
    centering: float = 0.02
    candidate_pool: int = 40
    ramp: bool = True  # allow rho2 continuation from weaker designs (robust mode)

    def __post_init__(self):
        if self.mode not in (MODE_WORST_CASE, MODE_NOMINAL, MODE_ROBUST):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.p < 0 or self.rho2 < 0 or self.restarts < 1:
            raise ValueError("need p >= 0, rho2 >= 0, restarts >= 1")


@dataclass
class StabilityReport:
    grid_n: int
    margin: float
    max_real_part: float
    stable: bool
    worst_xi: np.ndarray


@dataclass
class SynthesisResult:
    K: np.ndarray
    gamma: float
    mode: str
    p: int
    rho2: float
    iterations: int
    restarts_run: int
    gamma_traces: list[list[float]]
    stability: StabilityReport
    recheck_feasible: bool

    @property
    def gamma_trace(self) -> list[float]:
        """Trace of the restart that produced the returned gain."""
        best = [tr for tr in self.gamma_traces if tr and tr[-1] == self.gamma]
        return best[0] if best else []


def stability_post_analysis(
    plant: UncertainPlant, K, grid_n: int = 1001, margin: float = 1e-6
) -> StabilityReport:
    """Eigenvalue sweep of the closed loop over a dense parameter grid.

    Stable means every grid sample has all closed-loop eigenvalue real parts
    below -margin.
    """
    if grid_n < 2:
        raise ValueError("grid_n must be >= 2")
    pts = plant.dist.grid(grid_n)
    A_cls, _, _, _ = close_loop_many(plant, K, pts)
    reals = np.linalg.eigvals(A_cls).real.max(axis=1)
    worst = int(np.argmax(reals))
    return StabilityReport(
        grid_n=grid_n,
        margin=margin,
        max_real_part=float(reals[worst]),
        stable=bool(reals[worst] < -margin),
        worst_xi=pts[worst].copy(),
    )


class _ModeContext:
    """Precomputed constraint machinery for one plant / mode / degree."""

    def __init__(self, plant: UncertainPlant, basis: OrthonormalBasis | None,
                 cfg: SynthesisConfig):
        self.plant = plant
        self.cfg = cfg
        self.mode = cfg.mode
        self.opts = SdpOptions()
        if self.mode == MODE_WORST_CASE:
            self.vertices = cfg.vertices
            if self.vertices is None:
                lo, hi = plant.dist.support()
                mesh = np.meshgrid(*[(lo[d], hi[d]) for d in range(plant.n_xi)],
                                   indexing="ij")
                self.vertices = np.column_stack([m.ravel() for m in mesh])
            self.blocks = None
            self.n_p = plant.n_x
            self.b0_norm = float(np.linalg.norm(plant.B.eval(np.mean(
                np.asarray(self.vertices, dtype=float), axis=0))))
        else:
            if basis is None:
                basis = build_basis(plant.dist, cfg.p,
                                    working_degree=cfg.p + plant.bcdw_degree)
            self.vertices = None
            self.blocks = expand_blocks(plant, basis, cfg.p)
            self.n_p = self.blocks.A_gal.shape[0]
            self.b0_norm = float(np.linalg.norm(self.blocks.B_hat[0]))
        self.has_tau = self.mode == MODE_ROBUST

    # ----- constraint builders ---------------------------------------------
    def _systems(self, K):
        if self.mode == MODE_WORST_CASE:
            out = []
            for xi in self.vertices:
                cl = close_loop(self.plant, K, np.atleast_1d(xi))
                out.append(LtiSystem(cl.A_cl, cl.B_cl, cl.C_cl, cl.D_cl))
            return out
        return [LtiSystem.from_expanded(assemble_closed_loop(self.blocks, K))]

    def _system_blocks(self, sys_of, gamma_of, tau_of):
        """Negated inequality blocks (one per vertex system), each required >= margin."""
        def block(idx):
            def con(v):
                s = sys_of(v)[idx]
                if self.mode == MODE_ROBUST:
                    return -robust_lhs(s, v["P"], gamma_of(v), tau_of(v), self.cfg.rho2)
                return -brl_lhs(s, v["P"], gamma_of(v))
            return con

        n_sys = len(self.vertices) if self.mode == MODE_WORST_CASE else 1
        return [block(i) for i in range(n_sys)]

    def p_step_problem(self, K, gamma_fixed: float | None = None):
        """LMI in (P[, tau][, gamma]) at fixed gain; gamma is a variable unless frozen."""
        systems = self._systems(K)
        specs = [VarSpec("P", "sym", (self.n_p, self.n_p))]
        if self.has_tau:
            specs.append(VarSpec("tau", "scalar"))
        if gamma_fixed is None:
            specs.append(VarSpec("gamma", "scalar"))
        layout = VarLayout(specs)

        gamma_of = (lambda v: v["gamma"]) if gamma_fixed is None else (lambda v: gamma_fixed)
        tau_of = (lambda v: v["tau"]) if self.has_tau else (lambda v: 0.0)

        cons = self._system_blocks(lambda v: systems, gamma_of, tau_of)
        cons.append(lambda v: v["P"])
        if self.has_tau:
            cons.append(lambda v: np.array([[tau_of(v)]]))
        if gamma_fixed is None:
            cons.append(lambda v: np.array([[v["gamma"]]]))
        return layout, affine_lmi_problem(
            layout,
            cons,
            objective="gamma" if gamma_fixed is None else None,
            margin=self.cfg.margin,
            check_affine=False,
        )

    def k_step_problem(self, P, tau):
        """LMI in (K, gamma) at frozen Lyapunov variables."""
        layout = VarLayout([
            VarSpec("K", "full", (self.plant.n_u, self.plant.n_y)),
            VarSpec("gamma", "scalar"),
        ])
        P = np.asarray(P, dtype=float)
        cons = self._system_blocks(
            lambda v: self._systems(v["K"]),
            lambda v: v["gamma"],
            lambda v: tau if self.has_tau else 0.0,
        )

        def freeze(con):
            return lambda v: con({**v, "P": P})

        cons = [freeze(c) for c in cons]
        cons.append(lambda v: np.array([[v["gamma"]]]))
        return layout, affine_lmi_problem(
            layout, cons, objective="gamma", margin=self.cfg.margin,
            check_affine=False,
        )

    # ----- steps -------------------------------------------------------------
    @staticmethod
    def _usable(sol, prob) -> bool:
        """Accept optimal solves, or stalled ones whose iterate truly satisfies the LMI."""
        if sol.optimal:
            return True
        return sol.status == STALLED and min(sol.min_eigs) >= -prob.margin / 2.0

    def p_step_min_gamma(self, K):
        """Minimize gamma over the Lyapunov variables at fixed gain."""
        layout, prob = self.p_step_problem(K)
        sol = solve(prob, self.opts)
        if not self._usable(sol, prob):
            return None
        v = layout.unpack(sol.x)
        return v["gamma"], v

    def p_step_center(self, K, gamma: float):
        """Interior (max-slack) Lyapunov point at a fixed gamma."""
        layout, prob = self.p_step_problem(K, gamma_fixed=gamma)
        feas, witness, _ = feasibility(prob, self.opts)
        if not feas:
            return None
        v = layout.unpack(witness)
        return v["P"], (v["tau"] if self.has_tau else None)

    def k_step_min_gamma(self, P, tau):
        # the proposed gain is only a search direction: a stalled near-feasible
        # iterate is fine, the verifying P-step is the authority on gamma
        layout, prob = self.k_step_problem(P, tau)
        sol = solve(prob, self.opts)
        if sol.status not in (OPTIMAL, STALLED):
            return None
        v = layout.unpack(sol.x)
        return v["gamma"], v["K"]

    def recheck(self, K, gamma: float) -> bool:
        _, prob = self.p_step_problem(K, gamma_fixed=gamma)
        feas, _, _ = feasibility(prob, self.opts)
        return feas


def _mean_matrix(M, dist) -> np.ndarray:
    from .polychaos import tensor_quadrature

    nodes, w = tensor_quadrature(dist, max(2, (M.degree + 2) // 2 + 1))
    return np.einsum("n,nab->ab", w, M.eval_many(nodes))


def _riccati_gains(plant: UncertainPlant):
    """State-feedback designs on the mean plant, projected through the output map.

    Classic output-feedback initializer: solve a regulator problem for the
    mean-plant pair (A, B) and emulate the state feedback through y = C x.
    """
    from scipy.linalg import solve_continuous_are

    A = _mean_matrix(plant.A, plant.dist)
    B = _mean_matrix(plant.B, plant.dist)
    C = _mean_matrix(plant.C, plant.dist)
    Cpinv = np.linalg.pinv(C)
    out = []
    for q in (1.0, 10.0, 100.0):
        try:
            X = solve_continuous_are(A, B, q * np.eye(plant.n_x), np.eye(plant.n_u))
        except Exception:
            continue
        F = -B.T @ X
        out.append(F @ Cpinv)
    return out


def _vertex_sf_gains(plant: UncertainPlant, vertices) -> list[np.ndarray]:
    """Common-Lyapunov vertex state-feedback design projected to output feedback.

    Solving the convex stabilization LMI over all vertex plants (variables
    Y = P^-1 and L = F Y) gives a state feedback F handling the whole vertex
    family; emulating it through the mean output map lands output-feedback
    candidates in a well-damped basin even when mean-plant designs fail.
    """
    n_x, n_u = plant.n_x, plant.n_u
    pairs = [(plant.A.eval(np.atleast_1d(xi)), plant.B.eval(np.atleast_1d(xi)))
             for xi in vertices]
    layout = VarLayout([VarSpec("Y", "sym", (n_x, n_x)), VarSpec("L", "full", (n_u, n_x))])

    def stab_block(A, B):
        def con(v):
            M = A @ v["Y"] + B @ v["L"]
            return -(M + M.T)
        return con

    cons = [stab_block(A, B) for A, B in pairs]
    cons.append(lambda v: v["Y"] - np.eye(n_x))
    prob = affine_lmi_problem(layout, cons, margin=1e-4, check_affine=False)
    feas, witness, _ = feasibility(prob)
    if not feas:
        return []
    v = layout.unpack(witness)
    F = v["L"] @ np.linalg.inv(v["Y"])
    Cpinv = np.linalg.pinv(_mean_matrix(plant.C, plant.dist))
    K = F @ Cpinv
    return [K, 0.5 * K, 2.0 * K]


def _candidate_gains(ctx: _ModeContext, cfg: SynthesisConfig):
    """Initial-gain candidates: explicit, zero, mean-plant regulator projections,
    worst-case design, then seeded draws and perturbations of viable anchors.

    Candidates are screened by what the analysis step actually needs: a
    Hurwitz expanded closed loop for the expansion-based modes, Hurwitz
    vertex closed loops for the worst-case mode.
    """
    plant = ctx.plant
    shape = (plant.n_u, plant.n_y)
    anchors = []

    def admissible(K):
        K = np.atleast_2d(np.asarray(K, dtype=float))
        if not np.all(np.isfinite(K)):
            return False
        if ctx.mode == MODE_WORST_CASE:
            return all(max_real_eig(s.A) < -cfg.stability_margin
                       for s in ctx._systems(K))
        cl = assemble_closed_loop(ctx.blocks, K)
        return max_real_eig(cl.A) < -cfg.stability_margin

    if cfg.k_init is not None:
        anchors.append(np.atleast_2d(np.asarray(cfg.k_init, dtype=float)))
        yield anchors[-1]

    K0 = np.zeros(shape)
    if admissible(K0):
        anchors.append(K0)
        yield K0

    riccati = [K for K in _riccati_gains(plant) if admissible(K)]
    anchors.extend(riccati)
    yield from riccati

    if ctx.mode == MODE_ROBUST and cfg.rho2 > 0 and cfg.ramp:
        K_ramp = _ramp_candidate(plant, ctx.blocks.basis, cfg)
        if K_ramp is not None:
            anchors.insert(0, K_ramp)
            yield K_ramp

    if not anchors:
        verts = ctx.vertices
        if verts is None:
            lo, hi = plant.dist.support()
            mesh = np.meshgrid(*[(lo[d], hi[d]) for d in range(plant.n_xi)],
                               indexing="ij")
            verts = np.column_stack([m.ravel() for m in mesh])
        vertex_sf = [K for K in _vertex_sf_gains(plant, verts) if admissible(K)]
        anchors.extend(vertex_sf)
        yield from vertex_sf

    if not anchors and cfg.mode != MODE_WORST_CASE:
        try:
            wc = synthesize(plant, None, replace(
                cfg, mode=MODE_WORST_CASE, k_init=None, restarts=2,
                max_outer_iters=10, grid_n=201))
            if admissible(wc.K):
                anchors.append(wc.K)
                yield wc.K
        except SynthesisError:
            pass

    rng = np.random.default_rng(cfg.seed)
    base = 1.0 / max(ctx.b0_norm, 1e-6)
    if not anchors:
        # blind draws at widening scales until one passes the screen
        for j in range(cfg.candidate_pool):
            K = rng.standard_normal(shape) * base * 2.0 ** (j % 4)
            if admissible(K):
                anchors.append(K)
                yield K
                break
    for j in range(cfg.candidate_pool):
        if not anchors:
            break
        anchor = anchors[j % len(anchors)]
        sigma = (0.05, 0.15, 0.4)[j % 3]
        K = anchor * (1.0 + sigma * rng.standard_normal(shape))
        K = K + sigma * base * rng.standard_normal(shape)
        if admissible(K):
            yield K
    # last resort: raw draws without the screen (the analysis step decides)
    for j in range(cfg.candidate_pool):
        yield rng.standard_normal(shape) * base * 2.0 ** (j % 4)


def _try_step(ctx: _ModeContext, cfg: SynthesisConfig, K, gamma: float, factor: float):
    """One centered K-update attempt; returns an improving (K, gamma) or None.

    The K-step direction is damped by a backtracking line search (the
    feasible gain set at frozen P is convex); only verified improvements
    count.
    """
    centered = ctx.p_step_center(K, gamma * (1.0 + cfg.centering * factor))
    if centered is None:
        return None
    P_c, tau_c = centered
    k_sol = ctx.k_step_min_gamma(P_c, tau_c)
    if k_sol is None:
        return None
    _, K_new = k_sol
    for t in (1.0, 0.5, 0.25, 0.125):
        K_t = K + t * (K_new - K)
        verified = ctx.p_step_min_gamma(K_t)
        if verified is not None and verified[0] < gamma:
            return K_t, verified[0]
    return None


def _alternate(ctx: _ModeContext, cfg: SynthesisConfig, K0: np.ndarray):
    """One restart of the P-step / K-step alternation from a given gain.

    Each outer iteration retries the update with progressively looser
    re-centering before declaring a plateau; the accepted gamma sequence is
    nonincreasing by construction.
    """
    start = ctx.p_step_min_gamma(K0)
    if start is None:
        return None
    gamma_best, _ = start
    K_best = np.atleast_2d(np.asarray(K0, dtype=float))
    trace = [float(gamma_best)]
    iters = 0
    for _ in range(cfg.max_outer_iters):
        iters += 1
        gamma_prev = gamma_best
        for factor in (1.0, 4.0, 12.0):
            cand = _try_step(ctx, cfg, K_best, gamma_best, factor)
            if cand is not None and cand[1] < gamma_best:
                K_best, gamma_best = cand
                trace.append(float(gamma_best))
                break
        if gamma_best >= gamma_prev * (1.0 - cfg.gamma_tol):
            break
    return K_best, float(gamma_best), trace, iters


def _ramp_candidate(plant, basis, cfg: SynthesisConfig) -> np.ndarray | None:
    """Continuation start for the robust mode: chain designs at weaker radii.

    The robust constraint tightens monotonically with rho2, so a nominal
    design refined at rho2/16 and rho2/4 (each step warm-started from the
    previous gain with lean settings) lands on a feasible, well-damped start
    for the target radius.
    """
    lean = replace(cfg, ramp=False, restarts=1, max_outer_iters=12, grid_n=201)
    try:
        K = synthesize(plant, basis, replace(
            lean, mode=MODE_NOMINAL, rho2=0.0, k_init=None, restarts=2)).K
    except SynthesisError:
        return None
    for r in (cfg.rho2 / 16.0, cfg.rho2 / 4.0):
        try:
            K = synthesize(plant, basis, replace(lean, rho2=r, k_init=K)).K
        except SynthesisError:
            continue
    return K


def synthesize(
    plant: UncertainPlant,
    basis: OrthonormalBasis | None,
    cfg: SynthesisConfig,
) -> SynthesisResult:
    """Best gain over multi-start alternating SDP, with stability post-analysis.

    ``basis`` may be None; one is built at cfg.p when the mode needs it.
    Robust designs whose radius defeats every direct start are reached by
    ramping rho2 up from a nominal design. Raises ``NoFeasibleStart`` when no
    candidate gain admits a feasible analysis step.
    """
    ctx = _ModeContext(plant, basis, cfg)
    traces: list[list[float]] = []
    best = None
    successes = 0
    attempts = 0
    total_iters = 0

    def run(K0) -> None:
        nonlocal best, successes, total_iters
        out = _alternate(ctx, cfg, K0)
        if out is None:
            return
        K, gamma, trace, iters = out
        successes += 1
        total_iters += iters
        traces.append(trace)
        if best is None or gamma < best[1]:
            best = (K, gamma)

    attempt_cap = max(4 * cfg.restarts, 12)
    for K0 in _candidate_gains(ctx, cfg):
        attempts += 1
        run(K0)
        if successes >= cfg.restarts:
            break
        if attempts >= attempt_cap and successes >= 1:
            break

    if best is None:
        raise NoFeasibleStart(
            f"no feasible initial gain found for mode {cfg.mode!r} "
            f"(p={cfg.p}, rho2={cfg.rho2})"
        )
    K, gamma = best
    report = stability_post_analysis(plant, K, cfg.grid_n, cfg.stability_margin)
    return SynthesisResult(
        K=K,
        gamma=gamma,
        mode=cfg.mode,
        p=cfg.p,
        rho2=cfg.rho2 if cfg.mode == MODE_ROBUST else 0.0,
        iterations=total_iters,
        restarts_run=successes,
        gamma_traces=traces,
        stability=report,
        recheck_feasible=ctx.recheck(K, gamma),
    )


def rho_bisection(
    plant: UncertainPlant,
    basis: OrthonormalBasis | None,
    cfg: SynthesisConfig,
    rho2_hi: float,
    tol: float = 1e-4,
) -> tuple[float, SynthesisResult]:
    """Smallest uncertainty radius whose synthesized gain passes the sweep.

    Bisects rho2 on [0, rho2_hi]: each probe synthesizes a robust gain and
    runs the grid stability sweep; stable verdicts shrink the radius. Returns
    the smallest probed rho2 that passed (within ``tol``) and its result.
    """
    if rho2_hi <= 0:
        raise ValueError("rho2_hi must be positive")
    cfg = replace(cfg, mode=MODE_ROBUST)
    warm: np.ndarray | None = None

    def probe(rho2: float) -> SynthesisResult | None:
        # a gain feasible at a larger radius stays feasible at a smaller one,
        # so the smallest stable design found so far warm-starts every probe
        try:
            return synthesize(plant, basis, replace(cfg, rho2=rho2, k_init=warm))
        except SynthesisError:
            return None

    top = probe(rho2_hi)
    if top is None:
        raise InfeasibleAtHi(f"synthesis infeasible at rho2 = {rho2_hi}")
    if not top.stability.stable:
        raise AllProbesUnstable(
            f"gain at rho2_hi = {rho2_hi} fails the stability sweep; enlarge rho2_hi"
        )
    warm = top.K

    bottom = probe(0.0)
    if bottom is not None and bottom.stability.stable:
        return 0.0, bottom

    lo, hi = 0.0, rho2_hi
    best = top
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        res = probe(mid)
        if res is not None and res.stability.stable:
            hi = mid
            best = res
            warm = res.K
        else:
            lo = mid
    return hi, best
