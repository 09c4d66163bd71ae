"""Expanded deterministic systems for the stacked expansion coefficients.

Projecting the closed-loop dynamics onto an orthonormal basis yields a
high-dimensional LTI system for the coefficient vector X(t) (state-major
Kronecker layout: block j of X holds the j-th expansion coefficient of every
physical state). Two routes are provided:

- ``assemble_closed_loop``: project the closed loop directly. The input-path
  products Phi_x(xi) B(xi), C(xi) Phi_x(xi)^T and D_w(xi) are expanded
  exactly up to their full degree q >= p, which preserves the squared
  L2-induced gain of the averaged output.
- ``assemble_legacy``: project each open-loop equation separately at degree p
  and interconnect afterwards; the degree-(p+1..q) coefficient blocks are
  dropped. Kept for comparison.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .plant import UncertainPlant
from .polychaos import OrthonormalBasis, basis_count


class ExpansionDegreeError(ValueError):
    """Basis working degree cannot host the required expansion."""


def phi_x_transpose(basis: OrthonormalBasis, xi, n_x: int, size: int | None = None) -> np.ndarray:
    """Reconstruction map at a point: kron(phi(xi)^T, I_nx), shape (n_x, n_x*size)."""
    phi = basis.eval_basis(np.atleast_2d(xi), size=size)[:, 0]
    return np.kron(phi, np.eye(n_x))


@dataclass
class ExpandedBlocks:
    """Galerkin building blocks of the expanded closed loop for one plant and degree."""

    plant: UncertainPlant
    basis: OrthonormalBasis
    p: int
    q: int
    n_p1: int  # number of retained state-expansion terms (N_p + 1)
    n_q1: int  # number of terms at the input-path degree q (N_q + 1)
    A_gal: np.ndarray       # E{Phi_x A Phi_x^T}
    Bw_gal: np.ndarray      # E{Phi_x B_w}
    B_hat: np.ndarray       # (n_q1, n_x*n_p1, n_u): coefficients of Phi_x B
    C_hat: np.ndarray       # (n_q1, n_y, n_x*n_p1): coefficients of C Phi_x^T
    Dw_hat: np.ndarray      # (n_q1, n_y, n_w): coefficients of D_w

    # wide/tall stacks and the constant performance-channel blocks
    @property
    def B_bar(self) -> np.ndarray:
        n = self.plant.n_x * self.n_p1
        return self.B_hat.transpose(1, 0, 2).reshape(n, self.n_q1 * self.plant.n_u)

    @property
    def C_bar(self) -> np.ndarray:
        n = self.plant.n_x * self.n_p1
        return self.C_hat.reshape(self.n_q1 * self.plant.n_y, n)

    @property
    def Dw_bar(self) -> np.ndarray:
        return self.Dw_hat.reshape(self.n_q1 * self.plant.n_y, self.plant.n_w)

    @property
    def Cz_kron(self) -> np.ndarray:
        return np.kron(np.eye(self.n_p1), self.plant.C_z)

    @property
    def Cz_bar(self) -> np.ndarray:
        out = np.zeros((self.plant.n_z * self.n_q1, self.plant.n_x * self.n_p1))
        out[: self.plant.n_z * self.n_p1] = self.Cz_kron
        return out

    @property
    def Dzw_kron(self) -> np.ndarray:
        """E{Phi_z} D_zw: the constant feedthrough stacked into the first block row."""
        out = np.zeros((self.plant.n_z * self.n_p1, self.plant.n_w))
        out[: self.plant.n_z] = self.D_zw_block
        return out

    @property
    def D_zw_block(self) -> np.ndarray:
        return self.plant.D_zw

    @property
    def Dzw_bar(self) -> np.ndarray:
        out = np.zeros((self.plant.n_z * self.n_q1, self.plant.n_w))
        out[: self.plant.n_z] = self.plant.D_zw
        return out

    @property
    def Dz_bar(self) -> np.ndarray:
        return np.kron(np.eye(self.n_q1), self.plant.D_z)

    def K_bar(self, K: np.ndarray) -> np.ndarray:
        return np.kron(np.eye(self.n_q1), np.atleast_2d(K))

    # truncated (degree-p) operators used by the legacy route, and the
    # complementary high-degree partitions
    @property
    def B_trunc(self) -> np.ndarray:
        return self.B_bar[:, : self.n_p1 * self.plant.n_u]

    @property
    def B_high(self) -> np.ndarray:
        return self.B_bar[:, self.n_p1 * self.plant.n_u:]

    @property
    def C_trunc(self) -> np.ndarray:
        return self.C_bar[: self.n_p1 * self.plant.n_y]

    @property
    def C_high(self) -> np.ndarray:
        return self.C_bar[self.n_p1 * self.plant.n_y:]

    @property
    def Dw_trunc(self) -> np.ndarray:
        return self.Dw_bar[: self.n_p1 * self.plant.n_y]

    @property
    def Dw_high(self) -> np.ndarray:
        return self.Dw_bar[self.n_p1 * self.plant.n_y:]

    @property
    def Dz_trunc(self) -> np.ndarray:
        return np.kron(np.eye(self.n_p1), self.plant.D_z)

    @property
    def Dz_high(self) -> np.ndarray:
        return np.kron(np.eye(self.n_q1 - self.n_p1), self.plant.D_z)

    def K_trunc(self, K: np.ndarray) -> np.ndarray:
        return np.kron(np.eye(self.n_p1), np.atleast_2d(K))

    def K_high(self, K: np.ndarray) -> np.ndarray:
        return np.kron(np.eye(self.n_q1 - self.n_p1), np.atleast_2d(K))


@dataclass
class ExpandedClosedLoop:
    """Expanded closed-loop LTI system (A, B, C, D) for the coefficient vector."""

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    kind: str  # "closed_loop" (direct transform) or "legacy" (per-equation transform)
    p: int
    q: int

    @property
    def n_state(self) -> int:
        return self.A.shape[0]


def expand_blocks(plant: UncertainPlant, basis: OrthonormalBasis, p: int | None = None) -> ExpandedBlocks:
    """Compute all Galerkin blocks by exact quadrature.

    ``p`` defaults to the basis truncation degree. The basis working degree
    must reach p + max(deg B, deg C, deg D_w) so the input-path products can
    be expanded without truncation.
    """
    p = basis.degree if p is None else int(p)
    if p < 0:
        raise ValueError("p must be nonnegative")
    q = p + plant.bcdw_degree
    if q > basis.working_degree or p > basis.degree:
        raise ExpansionDegreeError(
            f"need working degree >= {q} (p={p} plus plant degree "
            f"{plant.bcdw_degree}), basis has {basis.working_degree}"
        )
    n_p1 = basis_count(basis.n_xi, p)
    n_q1 = basis_count(basis.n_xi, q)
    n_x = plant.n_x

    wq = basis.weights
    phi_p = basis._phi_nodes[:n_p1]
    phi_q = basis._phi_nodes[:n_q1]

    A_nodes = plant.A.eval_many(basis.nodes)
    Bw_nodes = plant.B_w.eval_many(basis.nodes)
    B_nodes = plant.B.eval_many(basis.nodes)
    C_nodes = plant.C.eval_many(basis.nodes)
    Dw_nodes = plant.D_w.eval_many(basis.nodes)

    A_gal = np.einsum("n,in,jn,nxy->ixjy", wq, phi_p, phi_p, A_nodes).reshape(
        n_x * n_p1, n_x * n_p1
    )
    Bw_gal = np.einsum("n,in,nxw->ixw", wq, phi_p, Bw_nodes).reshape(n_x * n_p1, plant.n_w)
    B_hat = np.einsum("n,kn,in,nxu->kixu", wq, phi_q, phi_p, B_nodes).reshape(
        n_q1, n_x * n_p1, plant.n_u
    )
    C_hat = np.einsum("n,kn,jn,nyx->kyjx", wq, phi_q, phi_p, C_nodes).reshape(
        n_q1, plant.n_y, n_x * n_p1
    )
    Dw_hat = np.einsum("n,kn,nyw->kyw", wq, phi_q, Dw_nodes).reshape(
        n_q1, plant.n_y, plant.n_w
    )

    return ExpandedBlocks(
        plant=plant, basis=basis, p=p, q=q, n_p1=n_p1, n_q1=n_q1,
        A_gal=A_gal, Bw_gal=Bw_gal, B_hat=B_hat, C_hat=C_hat, Dw_hat=Dw_hat,
    )


def assemble_closed_loop(blocks: ExpandedBlocks, K) -> ExpandedClosedLoop:
    """Expanded closed loop from the direct (closed-loop) transform; affine in K."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Kb = blocks.K_bar(K)
    BK = blocks.B_bar @ Kb
    DzK = blocks.Dz_bar @ Kb
    return ExpandedClosedLoop(
        A=blocks.A_gal + BK @ blocks.C_bar,
        B=blocks.Bw_gal + BK @ blocks.Dw_bar,
        C=blocks.Cz_bar + DzK @ blocks.C_bar,
        D=blocks.Dzw_bar + DzK @ blocks.Dw_bar,
        kind="closed_loop",
        p=blocks.p,
        q=blocks.q,
    )


def assemble_legacy(blocks: ExpandedBlocks, K) -> ExpandedClosedLoop:
    """Expanded closed loop from the per-equation transform (degree-p truncation)."""
    K = np.atleast_2d(np.asarray(K, dtype=float))
    Kt = blocks.K_trunc(K)
    BK = blocks.B_trunc @ Kt
    DzK = blocks.Dz_trunc @ Kt
    return ExpandedClosedLoop(
        A=blocks.A_gal + BK @ blocks.C_trunc,
        B=blocks.Bw_gal + BK @ blocks.Dw_trunc,
        C=blocks.Cz_kron + DzK @ blocks.C_trunc,
        D=blocks.Dzw_kron + DzK @ blocks.Dw_trunc,
        kind="legacy",
        p=blocks.p,
        q=blocks.q,
    )


def gamma_identities(blocks: ExpandedBlocks, K):
    """Quadratic-form factors of the averaged squared output, both routes.

    Returns ((G1, G2, G3), (G1q, G2q, G3q)): the matrix products built from
    the expanded output pair (C, D) and the same expectations computed by
    direct quadrature of the parameter-dependent closed loop. Equality of the
    pairs is what makes the expanded system's squared H-infinity norm equal
    the averaged squared L2 gain.
    """
    from .plant import close_loop_many

    cl = assemble_closed_loop(blocks, K)
    G1 = cl.C.T @ cl.C
    G2 = cl.D.T @ cl.C
    G3 = cl.D.T @ cl.D

    basis = blocks.basis
    n_x = blocks.plant.n_x
    _, _, C_cls, D_cls = close_loop_many(blocks.plant, K, basis.nodes)
    phi_p = basis._phi_nodes[: blocks.n_p1]
    # C_cl(xi) Phi_x^T(xi) has block-column structure phi_j(xi) * C_cl(xi)
    CPhi = np.einsum("jn,nzx->nzjx", phi_p, C_cls).reshape(
        len(basis.weights), blocks.plant.n_z, n_x * blocks.n_p1
    )
    w = basis.weights
    G1q = np.einsum("n,nza,nzb->ab", w, CPhi, CPhi)
    G2q = np.einsum("n,nzw,nzb->wb", w, D_cls, CPhi)
    G3q = np.einsum("n,nzw,nzv->wv", w, D_cls, D_cls)
    return (G1, G2, G3), (G1q, G2q, G3q)


def znorm_identity_check(blocks: ExpandedBlocks, K, X, w) -> tuple[float, float]:
    """Both sides of the averaged-output-energy identity at one (X, w) pair.

    lhs: squared norm of the expanded output C_bar_cl X + D_bar_cl w.
    rhs: E_xi of the squared norm of C_cl(xi) Phi_x^T(xi) X + D_cl(xi) w,
    computed by quadrature.
    """
    from .plant import close_loop_many

    X = np.asarray(X, dtype=float).ravel()
    w_in = np.asarray(w, dtype=float).ravel()
    cl = assemble_closed_loop(blocks, K)
    z = cl.C @ X + cl.D @ w_in
    lhs = float(z @ z)

    basis = blocks.basis
    n_x = blocks.plant.n_x
    _, _, C_cls, D_cls = close_loop_many(blocks.plant, K, basis.nodes)
    phi_p = basis._phi_nodes[: blocks.n_p1]
    Xmat = X.reshape(blocks.n_p1, n_x)  # block j = coefficients of term j
    x_nodes = np.einsum("jn,jx->nx", phi_p, Xmat)
    z_nodes = np.einsum("nzx,nx->nz", C_cls, x_nodes) + D_cls @ w_in
    rhs = float(np.sum(basis.weights * np.einsum("nz,nz->n", z_nodes, z_nodes)))
    return lhs, rhs
