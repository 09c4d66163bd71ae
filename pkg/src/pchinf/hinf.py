"""Deterministic H-infinity analysis and LMI constraint assembly.

Norm computation uses bisection with the Hamiltonian imaginary-axis
eigenvalue test. The LMI builders produce the three constraint systems used
in synthesis: the bounded-real inequality on an expanded (or plain) system,
its robustified variant with a norm-bounded uncertainty channel of radius
rho covering expansion truncation errors, and the shared-Lyapunov vertex
form for worst-case polytopic designs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .galerkin import ExpandedClosedLoop
from .plant import UncertainPlant, close_loop
from .sdp import LmiBlock, LmiProblem

DEFAULT_MARGIN = 1e-6


class UnstableSystemError(RuntimeError):
    """H-infinity norm requested for a system whose A matrix is not Hurwitz."""


class BracketError(RuntimeError):
    """Bisection failed to bracket the norm."""


@dataclass
class LtiSystem:
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.B = np.atleast_2d(np.asarray(self.B, dtype=float))
        self.C = np.atleast_2d(np.asarray(self.C, dtype=float))
        self.D = np.atleast_2d(np.asarray(self.D, dtype=float))
        n = self.A.shape[0]
        if self.A.shape[1] != n or self.B.shape[0] != n or self.C.shape[1] != n:
            raise ValueError("inconsistent state dimensions")
        if self.D.shape != (self.C.shape[0], self.B.shape[1]):
            raise ValueError("inconsistent feedthrough dimensions")

    @classmethod
    def from_expanded(cls, cl: ExpandedClosedLoop) -> "LtiSystem":
        return cls(cl.A, cl.B, cl.C, cl.D)

    @property
    def n_x(self) -> int:
        return self.A.shape[0]


@dataclass
class RobustnessBound:
    """Radius of the norm-bounded uncertainty set covering truncation errors."""

    rho2: float

    def __post_init__(self):
        if self.rho2 < 0:
            raise ValueError("rho2 must be nonnegative")


def max_real_eig(A: np.ndarray) -> float:
    return float(np.max(np.linalg.eigvals(A).real))


def _coerce_system(sys) -> LtiSystem:
    if isinstance(sys, LtiSystem):
        return sys
    if isinstance(sys, ExpandedClosedLoop):
        return LtiSystem.from_expanded(sys)
    return LtiSystem(sys.A, sys.B, sys.C, sys.D)


def _has_imaginary_axis_eig(sys: LtiSystem, gamma: float) -> bool:
    """Hamiltonian test: gamma < peak gain iff the Hamiltonian touches the axis."""
    D = sys.D
    R = gamma**2 * np.eye(D.shape[1]) - D.T @ D
    Rinv = np.linalg.inv(R)
    BR = sys.B @ Rinv
    A_t = sys.A + BR @ D.T @ sys.C
    H = np.block([
        [A_t, BR @ sys.B.T],
        [-sys.C.T @ (np.eye(D.shape[0]) + D @ Rinv @ D.T) @ sys.C, -A_t.T],
    ])
    ev = np.linalg.eigvals(H)
    return bool(np.any(np.abs(ev.real) <= 1e-8 * (1.0 + np.abs(ev))))


def frequency_gain(sys: LtiSystem, omega: float) -> float:
    """Largest singular value of the transfer matrix at one frequency."""
    n = sys.n_x
    G = sys.C @ np.linalg.solve(1j * omega * np.eye(n) - sys.A, sys.B) + sys.D
    return float(np.linalg.svd(G, compute_uv=False)[0])


def hinf_norm(sys, tol: float = 1e-6) -> float:
    """H-infinity norm by gamma bisection on the Hamiltonian eigenvalue test.

    Requires a Hurwitz A (raises ``UnstableSystemError`` otherwise); handles
    nonzero feedthrough. Accuracy: |gamma - gamma*| <= tol * (1 + gamma*).
    """
    sys = _coerce_system(sys)
    evals = np.linalg.eigvals(sys.A)
    if np.max(evals.real) >= 0.0:
        raise UnstableSystemError(
            f"A is not Hurwitz (max real part {np.max(evals.real):.3e})"
        )
    sD = np.linalg.svd(sys.D, compute_uv=False)
    g_feed = float(sD[0]) if sD.size else 0.0

    # lower bound from gains at a small frequency sample set
    freqs = {0.0}
    freqs.update(abs(l.imag) for l in evals)
    freqs.update(abs(l) for l in evals)
    lo = max(g_feed, max(frequency_gain(sys, om) for om in freqs))
    lo = lo * (1.0 + 1e-9) + 1e-16

    hi = max(2.0 * lo, 1e-8)
    for _ in range(80):
        if not _has_imaginary_axis_eig(sys, hi):
            break
        hi *= 2.0
    else:
        raise BracketError("no finite upper bound found for the norm bisection")

    while hi - lo > tol * (1.0 + lo):
        mid = 0.5 * (lo + hi)
        if _has_imaginary_axis_eig(sys, mid):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# ---------------------------------------------------------------------------
# scalar-variable layouts and affine LMI assembly


@dataclass(frozen=True)
class VarSpec:
    name: str
    kind: str  # "sym", "full", or "scalar"
    shape: tuple[int, int] = (1, 1)

    @property
    def n_scalars(self) -> int:
        if self.kind == "scalar":
            return 1
        r, c = self.shape
        if self.kind == "sym":
            if r != c:
                raise ValueError("sym variable must be square")
            return r * (r + 1) // 2
        return r * c


class VarLayout:
    """Maps named matrix/scalar decision variables onto a flat scalar vector."""

    def __init__(self, specs: list[VarSpec]):
        self.specs = list(specs)
        names = [s.name for s in self.specs]
        if len(set(names)) != len(names):
            raise ValueError("duplicate variable names")
        self.offsets = {}
        pos = 0
        for s in self.specs:
            self.offsets[s.name] = pos
            pos += s.n_scalars
        self.n_vars = pos

    def scalar_names(self) -> list[str]:
        out = []
        for s in self.specs:
            if s.kind == "scalar":
                out.append(s.name)
            elif s.kind == "sym":
                n = s.shape[0]
                out.extend(f"{s.name}[{i},{j}]" for i in range(n) for j in range(i, n))
            else:
                r, c = s.shape
                out.extend(f"{s.name}[{i},{j}]" for i in range(r) for j in range(c))
        return out

    def unpack(self, x: np.ndarray) -> dict[str, np.ndarray | float]:
        x = np.asarray(x, dtype=float).ravel()
        out: dict[str, np.ndarray | float] = {}
        for s in self.specs:
            seg = x[self.offsets[s.name]: self.offsets[s.name] + s.n_scalars]
            if s.kind == "scalar":
                out[s.name] = float(seg[0])
            elif s.kind == "sym":
                n = s.shape[0]
                M = np.zeros((n, n))
                k = 0
                for i in range(n):
                    for j in range(i, n):
                        M[i, j] = M[j, i] = seg[k]
                        k += 1
                out[s.name] = M
            else:
                out[s.name] = seg.reshape(s.shape)
        return out

    def pack(self, **values) -> np.ndarray:
        x = np.zeros(self.n_vars)
        for s in self.specs:
            if s.name not in values:
                continue
            v = values[s.name]
            off = self.offsets[s.name]
            if s.kind == "scalar":
                x[off] = float(v)
            elif s.kind == "sym":
                M = np.asarray(v, dtype=float)
                n = s.shape[0]
                k = 0
                for i in range(n):
                    for j in range(i, n):
                        x[off + k] = M[i, j]
                        k += 1
            else:
                x[off: off + s.n_scalars] = np.asarray(v, dtype=float).ravel()
        return x


def affine_lmi_problem(
    layout: VarLayout,
    constraints,
    objective: np.ndarray | str | None = None,
    margin: float = DEFAULT_MARGIN,
    check_affine: bool = True,
) -> LmiProblem:
    """Assemble an LmiProblem from constraint builders that are affine in the layout.

    Each constraint is a callable mapping the unpacked variable dict to a
    symmetric matrix required to be >= margin*I. The affine structure is
    extracted by probing the builders at unit coordinates; a randomized
    consistency probe guards against accidentally bilinear builders.
    """
    n = layout.n_vars
    zeros = layout.unpack(np.zeros(n))
    blocks = []
    builders = list(constraints)
    for build in builders:
        F0 = np.asarray(build(zeros), dtype=float)
        Fi = np.empty((n,) + F0.shape)
        for k in range(n):
            e = np.zeros(n)
            e[k] = 1.0
            Fi[k] = np.asarray(build(layout.unpack(e)), dtype=float) - F0
        blocks.append(LmiBlock(F0, Fi))
    if check_affine and n:
        rng = np.random.default_rng(1234)
        xr = rng.standard_normal(n)
        vr = layout.unpack(xr)
        for build, blk in zip(builders, blocks):
            direct = np.asarray(build(vr), dtype=float)
            lin = blk.value(xr)
            scale = 1.0 + float(np.max(np.abs(direct)))
            if np.max(np.abs(direct - lin)) > 1e-8 * scale:
                raise ValueError("constraint builder is not affine in the layout")
    if objective is None:
        c = np.zeros(n)
    elif isinstance(objective, str):
        c = np.zeros(n)
        c[layout.offsets[objective]] = 1.0
    else:
        c = np.asarray(objective, dtype=float)
    return LmiProblem(c=c, blocks=blocks, margin=margin,
                      var_names=layout.scalar_names())


# ---------------------------------------------------------------------------
# constraint left-hand sides (all written as the "< 0" matrix of the
# inequality; builders below negate them into ">= margin" blocks)


def brl_lhs(sys: LtiSystem, P: np.ndarray, gamma) -> np.ndarray:
    """Bounded-real inequality block for ||G||_inf < gamma with storage P."""
    n, nw, nz = sys.n_x, sys.B.shape[1], sys.C.shape[0]
    PA = P @ sys.A
    PB = P @ sys.B
    return np.block([
        [PA + PA.T, PB, sys.C.T],
        [PB.T, -gamma * np.eye(nw), sys.D.T],
        [sys.C, sys.D, -gamma * np.eye(nz)],
    ])


def robust_lhs(sys: LtiSystem, P: np.ndarray, gamma, tau, rho2) -> np.ndarray:
    """Robustified bounded-real block with the norm-bounded truncation channel.

    Rows/columns: [state; disturbance; uncertainty channel; output]. The
    uncertainty channel is square with the state dimension.
    """
    n, nw, nz = sys.n_x, sys.B.shape[1], sys.C.shape[0]
    PA = P @ sys.A
    PB = P @ sys.B
    return np.block([
        [PA + PA.T + tau * rho2 * np.eye(n), PB, PA, sys.C.T],
        [PB.T, -gamma * np.eye(nw), np.zeros((nw, n)), sys.D.T],
        [PA.T, np.zeros((n, nw)), -tau * np.eye(n), sys.C.T],
        [sys.C, sys.D, sys.C, -gamma * np.eye(nz)],
    ])


def quad_stab_lhs(A: np.ndarray, P: np.ndarray, tau, rho2) -> np.ndarray:
    """Internal-stability specialization of the robust block (no w/z channels)."""
    n = A.shape[0]
    PA = P @ A
    return np.block([
        [PA + PA.T + tau * rho2 * np.eye(n), PA],
        [PA.T, -tau * np.eye(n)],
    ])


# ---------------------------------------------------------------------------
# public LMI constructors (fixed gain / fixed gamma analysis problems)


def brl_lmi(sys, gamma: float, margin: float = DEFAULT_MARGIN) -> LmiProblem:
    """Feasibility LMI in P certifying ||G||_inf < gamma for a fixed system."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    sys = _coerce_system(sys)
    layout = VarLayout([VarSpec("P", "sym", (sys.n_x, sys.n_x))])
    return affine_lmi_problem(
        layout,
        [lambda v: -brl_lhs(sys, v["P"], gamma), lambda v: v["P"]],
        margin=margin,
    )


def robust_lmi(
    sys,
    gamma_rob: float,
    rho2: float,
    tau: float | None = None,
    margin: float = DEFAULT_MARGIN,
) -> LmiProblem:
    """Feasibility LMI in (P, tau) for the robustified bound at fixed gain.

    ``tau=None`` leaves tau as a decision variable (with tau > 0 appended);
    a numeric tau freezes it.
    """
    if gamma_rob <= 0:
        raise ValueError("gamma_rob must be positive")
    if rho2 < 0:
        raise ValueError("rho2 must be nonnegative")
    sys = _coerce_system(sys)
    specs = [VarSpec("P", "sym", (sys.n_x, sys.n_x))]
    if tau is None:
        specs.append(VarSpec("tau", "scalar"))
    layout = VarLayout(specs)

    def tau_of(v):
        return v["tau"] if tau is None else tau

    constraints = [
        lambda v: -robust_lhs(sys, v["P"], gamma_rob, tau_of(v), rho2),
        lambda v: v["P"],
    ]
    if tau is None:
        constraints.append(lambda v: np.array([[v["tau"]]]))
    return affine_lmi_problem(layout, constraints, margin=margin)


def polytopic_lmi(
    plant: UncertainPlant,
    K,
    gamma: float,
    vertices,
    margin: float = DEFAULT_MARGIN,
) -> LmiProblem:
    """Shared-Lyapunov bounded-real feasibility over closed loops at vertex points."""
    if gamma <= 0:
        raise ValueError("gamma must be positive")
    systems = []
    for xi in vertices:
        cl = close_loop(plant, K, np.atleast_1d(xi))
        systems.append(LtiSystem(cl.A_cl, cl.B_cl, cl.C_cl, cl.D_cl))
    layout = VarLayout([VarSpec("P", "sym", (plant.n_x, plant.n_x))])
    constraints = [
        (lambda s: (lambda v: -brl_lhs(s, v["P"], gamma)))(s) for s in systems
    ]
    constraints.append(lambda v: v["P"])
    return affine_lmi_problem(layout, constraints, margin=margin)


def quad_stab_lmi(sys_or_A, rho2: float, margin: float = DEFAULT_MARGIN) -> LmiProblem:
    """Quadratic-stability feasibility of the uncertain expanded dynamics in (P, tau)."""
    if rho2 < 0:
        raise ValueError("rho2 must be nonnegative")
    A = sys_or_A if isinstance(sys_or_A, np.ndarray) else _coerce_system(sys_or_A).A
    n = A.shape[0]
    layout = VarLayout([VarSpec("P", "sym", (n, n)), VarSpec("tau", "scalar")])
    return affine_lmi_problem(
        layout,
        [
            lambda v: -quad_stab_lhs(A, v["P"], v["tau"], rho2),
            lambda v: v["P"],
            lambda v: np.array([[v["tau"]]]),
        ],
        margin=margin,
    )
