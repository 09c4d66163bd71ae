"""Uncertain LTI plant model and closed-loop evaluation at parameter samples.

The plant is

    dx/dt = A(xi) x + B_w(xi) w + B(xi) u
    z     = C_z x + D_zw w + D_z u
    y     = C(xi) x + D_w(xi) w

with a static output-feedback law u = K y. The performance channel matrices
C_z, D_zw, D_z are parameter independent; the remaining matrices have
polynomial entries in the random parameter vector xi.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .polychaos import Distribution, PolynomialMatrix


class PlantDimensionError(ValueError):
    """Inconsistent matrix dimensions in a plant description."""


@dataclass
class UncertainPlant:
    A: PolynomialMatrix
    B_w: PolynomialMatrix
    B: PolynomialMatrix
    C: PolynomialMatrix
    D_w: PolynomialMatrix
    C_z: np.ndarray
    D_zw: np.ndarray
    D_z: np.ndarray
    dist: Distribution
    name: str = ""

    def __post_init__(self):
        self.C_z = np.atleast_2d(np.asarray(self.C_z, dtype=float))
        self.D_zw = np.atleast_2d(np.asarray(self.D_zw, dtype=float))
        self.D_z = np.atleast_2d(np.asarray(self.D_z, dtype=float))
        n_x, n_u, n_w, n_y, n_z = self.n_x, self.n_u, self.n_w, self.n_y, self.n_z
        checks = [
            ("A", self.A.shape, (n_x, n_x)),
            ("B_w", self.B_w.shape, (n_x, n_w)),
            ("B", self.B.shape, (n_x, n_u)),
            ("C", self.C.shape, (n_y, n_x)),
            ("D_w", self.D_w.shape, (n_y, n_w)),
            ("C_z", self.C_z.shape, (n_z, n_x)),
            ("D_zw", self.D_zw.shape, (n_z, n_w)),
            ("D_z", self.D_z.shape, (n_z, n_u)),
        ]
        for mname, got, want in checks:
            if got != want:
                raise PlantDimensionError(f"{mname} has shape {got}, expected {want}")
        for mname, M in (("A", self.A), ("B_w", self.B_w), ("B", self.B),
                         ("C", self.C), ("D_w", self.D_w)):
            if M.n_xi != self.dist.n_xi:
                raise PlantDimensionError(
                    f"{mname} depends on {M.n_xi} parameters, distribution has {self.dist.n_xi}"
                )

    @property
    def n_x(self) -> int:
        return self.A.shape[0]

    @property
    def n_u(self) -> int:
        return self.B.shape[1]

    @property
    def n_w(self) -> int:
        return self.B_w.shape[1]

    @property
    def n_y(self) -> int:
        return self.C.shape[0]

    @property
    def n_z(self) -> int:
        return self.C_z.shape[0]

    @property
    def n_xi(self) -> int:
        return self.dist.n_xi

    @property
    def max_degree(self) -> int:
        """Largest polynomial degree over all parameter-dependent matrices."""
        return max(self.A.degree, self.B_w.degree, self.B.degree,
                   self.C.degree, self.D_w.degree)

    @property
    def bcdw_degree(self) -> int:
        """Largest degree over B, C, D_w (sets the expansion degree q of the input paths)."""
        return max(self.B.degree, self.C.degree, self.D_w.degree)


@dataclass
class Gain:
    """Static output-feedback gain u = K y."""

    K: np.ndarray

    def __post_init__(self):
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if not np.all(np.isfinite(self.K)):
            raise ValueError("gain has non-finite entries")


@dataclass
class ClosedLoopSample:
    """Closed-loop state-space matrices at one fixed parameter value."""

    A_cl: np.ndarray
    B_cl: np.ndarray
    C_cl: np.ndarray
    D_cl: np.ndarray


def eval_polymat(M: PolynomialMatrix, xi) -> np.ndarray:
    """Evaluate a polynomial matrix at one parameter point."""
    return M.eval(xi)


def close_loop(plant: UncertainPlant, K, xi) -> ClosedLoopSample:
    """Closed-loop matrices at a parameter point:

    A_cl = A + B K C,  B_cl = B_w + B K D_w,
    C_cl = C_z + D_z K C,  D_cl = D_zw + D_z K D_w.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    A = plant.A.eval(xi)
    B = plant.B.eval(xi)
    C = plant.C.eval(xi)
    Bw = plant.B_w.eval(xi)
    Dw = plant.D_w.eval(xi)
    return ClosedLoopSample(
        A_cl=A + B @ K @ C,
        B_cl=Bw + B @ K @ Dw,
        C_cl=plant.C_z + plant.D_z @ K @ C,
        D_cl=plant.D_zw + plant.D_z @ K @ Dw,
    )


def close_loop_many(plant: UncertainPlant, K, points: np.ndarray):
    """Vectorized closed-loop matrices over a batch of parameter points.

    Returns (A_cl, B_cl, C_cl, D_cl) with a leading batch axis.
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    A = plant.A.eval_many(pts)
    B = plant.B.eval_many(pts)
    C = plant.C.eval_many(pts)
    Bw = plant.B_w.eval_many(pts)
    Dw = plant.D_w.eval_many(pts)
    BK = np.einsum("nxu,uy->nxy", B, K)
    A_cl = A + np.einsum("nxy,nyz->nxz", BK, C)
    B_cl = Bw + np.einsum("nxy,nyw->nxw", BK, Dw)
    DzK = plant.D_z @ K
    C_cl = plant.C_z[None] + np.einsum("zy,nyx->nzx", DzK, C)
    D_cl = plant.D_zw[None] + np.einsum("zy,nyw->nzw", DzK, Dw)
    return A_cl, B_cl, C_cl, D_cl


def sample_xi(
    dist: Distribution, n: int, seed: int | None = None, mode: str = "random"
) -> np.ndarray:
    """Parameter samples, shape (n_points, n_xi).

    ``mode="random"`` draws n independent samples (deterministic given seed);
    ``mode="grid"`` returns a tensor grid with n equispaced points per
    dimension over the (bounded) support.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if mode == "grid":
        return dist.grid(n)
    if mode != "random":
        raise ValueError(f"unknown sampling mode {mode!r}")
    rng = np.random.default_rng(seed)
    return dist.sample(n, rng)
