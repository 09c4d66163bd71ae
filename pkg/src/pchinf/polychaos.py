"""Orthonormal polynomial bases over product probability measures.

Provides the machinery for polynomial chaos expansions (PCE): multivariate
orthonormal bases built from three-term recurrences (Legendre for uniform
marginals, probabilists' Hermite for Gaussian ones), Gauss quadrature rules
that integrate every expectation used downstream exactly, exact PCEs of
monomials and of matrices with polynomial entries, and the usual
mean/variance bookkeeping of truncated expansions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import product as _iproduct

import numpy as np
from scipy.linalg import solve_triangular

Index = tuple[int, ...]

# self-check thresholds for a freshly built basis
ORTHONORMALITY_HARD_TOL = 1e-8
ORTHONORMALITY_TARGET = 1e-10


class DegreeOverflowError(ValueError):
    """A requested monomial or expansion degree exceeds the tabulated range."""


class DistributionError(ValueError):
    """Unsupported or inconsistent distribution specification."""


def total_degree(index: Index) -> int:
    return int(sum(index))


def basis_count(n_xi: int, degree: int) -> int:
    """Number of multivariate basis polynomials up to ``degree``: (n_xi+p)!/(n_xi!p!)."""
    return math.comb(n_xi + degree, degree)


def multi_indices(n_xi: int, degree: int) -> list[Index]:
    """All exponent tuples with total degree <= degree, in graded lexicographic order.

    The zero index comes first, then degree-1 terms with the first variable
    leading, and so on; this ordering is pinned by the expansion layout tests.
    """
    out = [t for t in _iproduct(range(degree + 1), repeat=n_xi) if sum(t) <= degree]
    out.sort(key=lambda t: (sum(t), tuple(-e for e in t)))
    return out


@dataclass(frozen=True)
class Marginal:
    """One independent component of the parameter vector."""

    kind: str  # "uniform" or "gaussian"
    low: float = -1.0
    high: float = 1.0

    def __post_init__(self):
        if self.kind == "uniform":
            if not self.low < self.high:
                raise DistributionError(
                    f"uniform marginal needs low < high, got [{self.low}, {self.high}]"
                )
        elif self.kind == "gaussian":
            pass  # standard normal; low/high ignored
        else:
            raise DistributionError(f"unsupported marginal kind {self.kind!r}")

    @property
    def bounded(self) -> bool:
        return self.kind == "uniform"


@dataclass(frozen=True)
class Distribution:
    """Product distribution of independent marginals; its support defines the parameter set."""

    marginals: tuple[Marginal, ...]

    def __post_init__(self):
        if not self.marginals:
            raise DistributionError("distribution needs at least one marginal")

    @property
    def n_xi(self) -> int:
        return len(self.marginals)

    @classmethod
    def uniform(cls, bounds) -> "Distribution":
        """Uniform product distribution; ``bounds`` is a list of (low, high) pairs."""
        return cls(tuple(Marginal("uniform", float(a), float(b)) for a, b in bounds))

    @classmethod
    def standard_gaussian(cls, n_xi: int) -> "Distribution":
        return cls(tuple(Marginal("gaussian") for _ in range(n_xi)))

    def support(self) -> tuple[np.ndarray, np.ndarray]:
        """(low, high) arrays of the bounded support; error for unbounded marginals."""
        if not all(m.bounded for m in self.marginals):
            raise DistributionError("support is unbounded (gaussian marginal present)")
        lo = np.array([m.low for m in self.marginals])
        hi = np.array([m.high for m in self.marginals])
        return lo, hi

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """n independent samples, shape (n, n_xi)."""
        cols = []
        for m in self.marginals:
            if m.kind == "uniform":
                cols.append(rng.uniform(m.low, m.high, size=n))
            else:
                cols.append(rng.standard_normal(size=n))
        return np.column_stack(cols)

    def grid(self, n_per_dim: int) -> np.ndarray:
        """Tensor grid of equispaced points over the support, shape (n_per_dim**n_xi, n_xi)."""
        lo, hi = self.support()
        axes = [np.linspace(lo[d], hi[d], n_per_dim) for d in range(self.n_xi)]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.column_stack([m.ravel() for m in mesh])


def _recurrence(marginal: Marginal, degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Monic three-term recurrence coefficients (alpha_k, beta_k), k = 0..degree.

    pi_{k+1}(x) = (x - alpha_k) pi_k(x) - beta_k pi_{k-1}(x), with beta_0 unused.
    """
    k = np.arange(degree + 1, dtype=float)
    if marginal.kind == "uniform":
        half = 0.5 * (marginal.high - marginal.low)
        alpha = np.full(degree + 1, 0.5 * (marginal.low + marginal.high))
        beta = np.zeros(degree + 1)
        beta[1:] = half**2 * k[1:] ** 2 / (4.0 * k[1:] ** 2 - 1.0)
    else:  # gaussian
        alpha = np.zeros(degree + 1)
        beta = k.copy()
    return alpha, beta


def _orthonormal_coeffs_1d(marginal: Marginal, degree: int) -> np.ndarray:
    """Monomial coefficients of the orthonormal polynomials for one marginal.

    Returns a (degree+1, degree+1) lower-triangular matrix L with L[k, j] the
    coefficient of x**j in the k-th orthonormal polynomial.
    """
    alpha, beta = _recurrence(marginal, degree)
    L = np.zeros((degree + 1, degree + 1))
    L[0, 0] = 1.0
    if degree >= 1:
        L[1, 1] = 1.0
        L[1, 0] = -alpha[0]
    for k in range(1, degree):
        # monic: pi_{k+1} = x*pi_k - alpha_k*pi_k - beta_k*pi_{k-1}
        L[k + 1, 1:] = L[k, :-1]
        L[k + 1, :] -= alpha[k] * L[k, :]
        L[k + 1, :] -= beta[k] * L[k - 1, :]
    # squared norms of the monic family: prod of beta_1..k
    nrm2 = np.cumprod(np.concatenate(([1.0], beta[1:])))
    return L / np.sqrt(nrm2)[:, None]


def _gauss_1d(marginal: Marginal, n_nodes: int) -> tuple[np.ndarray, np.ndarray]:
    """Gauss nodes/weights for one marginal, weights normalized to sum to 1."""
    if marginal.kind == "uniform":
        x, w = np.polynomial.legendre.leggauss(n_nodes)
        mid = 0.5 * (marginal.low + marginal.high)
        half = 0.5 * (marginal.high - marginal.low)
        return mid + half * x, w / 2.0
    x, w = np.polynomial.hermite_e.hermegauss(n_nodes)
    return x, w / math.sqrt(2.0 * math.pi)


def tensor_quadrature(dist: Distribution, n_per_dim: int) -> tuple[np.ndarray, np.ndarray]:
    """Tensorized Gauss rule; nodes (N, n_xi), probability weights (N,)."""
    rules = [_gauss_1d(m, n_per_dim) for m in dist.marginals]
    mesh = np.meshgrid(*[r[0] for r in rules], indexing="ij")
    nodes = np.column_stack([m.ravel() for m in mesh])
    wmesh = np.meshgrid(*[r[1] for r in rules], indexing="ij")
    weights = np.ones(nodes.shape[0])
    for wm in wmesh:
        weights = weights * wm.ravel()
    return nodes, weights


def default_quad_order(p: int, working_degree: int) -> int:
    """Nodes per dimension making every pipeline integral exact.

    Covers triple products of any tabulated basis functions (degree 3w) and
    all projection/Galerkin integrals, which are of lower degree.
    """
    w = working_degree
    return max((3 * w + 1 + 1) // 2, (2 * p + w + 2 + 1) // 2 + 1, 2)


@dataclass
class OrthonormalBasis:
    """Multivariate orthonormal basis with quadrature and exact monomial tables.

    ``degree`` is the truncation degree p of state expansions; the tables and
    basis functions extend to ``working_degree`` so that products of basis
    functions with plant polynomials can be expanded without truncation.
    """

    dist: Distribution
    degree: int
    working_degree: int
    indices: list[Index]
    nodes: np.ndarray
    weights: np.ndarray
    _coeffs_1d: list[np.ndarray]
    _phi_nodes: np.ndarray  # (working_size, n_nodes)
    _mono2basis: np.ndarray  # (working_size, working_size)
    _index_pos: dict[Index, int]
    _triple_cache: dict[tuple[int, int, int], float] = field(default_factory=dict)

    @property
    def n_xi(self) -> int:
        return self.dist.n_xi

    @property
    def size(self) -> int:
        """Number of basis functions up to the truncation degree p (N_p + 1)."""
        return basis_count(self.n_xi, self.degree)

    @property
    def working_size(self) -> int:
        return len(self.indices)

    def size_at(self, degree: int) -> int:
        if degree > self.working_degree:
            raise DegreeOverflowError(
                f"degree {degree} exceeds working degree {self.working_degree}"
            )
        return basis_count(self.n_xi, degree)

    def index_of(self, index: Index) -> int:
        try:
            return self._index_pos[tuple(index)]
        except KeyError:
            raise DegreeOverflowError(
                f"multi-index {index} exceeds working degree {self.working_degree}"
            ) from None

    def eval_basis(self, points: np.ndarray, size: int | None = None) -> np.ndarray:
        """Basis values at points; returns (size, n_points).

        ``points`` is (n_points, n_xi) or a single point of shape (n_xi,).
        """
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if pts.shape[1] != self.n_xi:
            raise ValueError(f"points must have {self.n_xi} columns")
        size = self.size if size is None else size
        if size > self.working_size:
            raise DegreeOverflowError(f"requested {size} functions, have {self.working_size}")
        # per-dimension 1-D values for every order, then multiply per multi-index
        vals_1d = []
        for d in range(self.n_xi):
            L = self._coeffs_1d[d]
            vals_1d.append(np.polynomial.polynomial.polyval(pts[:, d], L.T))
        out = np.ones((size, pts.shape[0]))
        for i in range(size):
            for d, k in enumerate(self.indices[i]):
                if k:
                    out[i] *= vals_1d[d][k]
        return out

    def orthonormality_defect(self, size: int | None = None) -> float:
        """max |E{phi_i phi_j} - delta_ij| under the stored quadrature."""
        size = self.working_size if size is None else size
        phi = self._phi_nodes[:size]
        gram = (phi * self.weights) @ phi.T
        return float(np.max(np.abs(gram - np.eye(size))))

    def monomial_pce(self, index: Index, size: int | None = None) -> np.ndarray:
        """Exact expansion coefficients of the monomial with the given exponents.

        Default length is the count for the monomial's own degree; a larger
        ``size`` zero-pads, a smaller one is rejected if it would drop terms.
        """
        pos = self.index_of(index)
        row = self._mono2basis[pos]
        natural = self.size_at(total_degree(index))
        size = natural if size is None else size
        if size < natural and np.any(row[size:natural] != 0.0):
            raise DegreeOverflowError(
                f"monomial of degree {total_degree(index)} does not fit in {size} terms"
            )
        out = np.zeros(size)
        out[: min(size, self.working_size)] = row[: min(size, self.working_size)]
        return out

    def project(self, f, size: int | None = None) -> np.ndarray:
        """Quadrature projection coefficients of a scalar function of the parameter vector."""
        size = self.size if size is None else size
        vals = np.array([float(f(x)) for x in self.nodes])
        return (self._phi_nodes[:size] * self.weights) @ vals

    def triple_product(self, i: int, j: int, k: int) -> float:
        """E{phi_i phi_j phi_k} under the stored quadrature; symmetric in all indices."""
        key = tuple(sorted((i, j, k)))
        if key not in self._triple_cache:
            phi = self._phi_nodes
            self._triple_cache[key] = float(
                np.sum(self.weights * phi[key[0]] * phi[key[1]] * phi[key[2]])
            )
        return self._triple_cache[key]

    def triple_tensor(self, size: int | None = None) -> np.ndarray:
        """Dense tensor of triple products e_ijk up to ``size`` (default N_p+1)."""
        size = self.size if size is None else size
        phi = self._phi_nodes[:size]
        return np.einsum("q,iq,jq,kq->ijk", self.weights, phi, phi, phi)


def build_basis(
    dist: Distribution,
    p: int,
    *,
    working_degree: int | None = None,
    quad_order: int | None = None,
) -> OrthonormalBasis:
    """Construct the orthonormal basis of truncation degree p.

    ``working_degree`` extends the tabulated range (monomial tables, basis
    functions, quadrature exactness) beyond p; it defaults to p and must cover
    p + max plant degree when the basis feeds a Galerkin expansion.
    ``quad_order`` is the Gauss node count per dimension; the default makes
    every integral used in the pipeline exact.

    Raises ``DistributionError`` for unsupported marginals and ``ValueError``
    when the orthonormality self-check fails (quad_order too small).
    """
    if p < 0:
        raise ValueError("degree p must be nonnegative")
    w = p if working_degree is None else int(working_degree)
    if w < p:
        raise ValueError("working_degree must be >= p")
    m = default_quad_order(p, w) if quad_order is None else int(quad_order)

    indices = multi_indices(dist.n_xi, w)
    index_pos = {t: i for i, t in enumerate(indices)}
    coeffs_1d = [_orthonormal_coeffs_1d(marg, w) for marg in dist.marginals]
    nodes, weights = tensor_quadrature(dist, m)

    # 1-D monomial -> orthonormal conversion, then tensorize over multi-indices
    conv_1d = [solve_triangular(L, np.eye(w + 1), lower=True) for L in coeffs_1d]
    n_w = len(indices)
    mono2basis = np.ones((n_w, n_w))
    for d in range(dist.n_xi):
        rows = np.array([t[d] for t in indices])
        mono2basis *= conv_1d[d][np.ix_(rows, rows)]

    basis = OrthonormalBasis(
        dist=dist,
        degree=p,
        working_degree=w,
        indices=indices,
        nodes=nodes,
        weights=weights,
        _coeffs_1d=coeffs_1d,
        _phi_nodes=np.empty(0),
        _mono2basis=mono2basis,
        _index_pos=index_pos,
    )
    basis._phi_nodes = basis.eval_basis(nodes, size=n_w)

    defect = basis.orthonormality_defect()
    if defect > ORTHONORMALITY_HARD_TOL:
        raise ValueError(
            f"orthonormality self-check failed ({defect:.2e} > {ORTHONORMALITY_HARD_TOL:.0e}); "
            "quad_order too small"
        )
    return basis


def mean_var(coeffs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Mean and variance of a truncated expansion: (c_0, sum_{i>=1} c_i**2).

    Works on a coefficient vector or on an array whose leading axis indexes
    the expansion terms.
    """
    c = np.asarray(coeffs, dtype=float)
    if c.size == 0:
        raise ValueError("empty coefficient vector")
    return c[0], np.sum(c[1:] ** 2, axis=0)


@dataclass
class PolynomialMatrix:
    """Real matrix whose entries are multivariate polynomials in the parameters.

    Stored as a map from exponent tuple to the dense coefficient matrix of
    that monomial; all coefficient matrices share the same shape.
    """

    shape: tuple[int, int]
    n_xi: int
    terms: dict[Index, np.ndarray]

    def __post_init__(self):
        self.shape = (int(self.shape[0]), int(self.shape[1]))
        clean: dict[Index, np.ndarray] = {}
        for S, coef in self.terms.items():
            S = tuple(int(s) for s in S)
            if len(S) != self.n_xi or any(s < 0 for s in S):
                raise ValueError(f"bad exponent tuple {S} for n_xi={self.n_xi}")
            arr = np.asarray(coef, dtype=float)
            if arr.shape != self.shape:
                raise ValueError(f"coefficient for {S} has shape {arr.shape}, want {self.shape}")
            clean[S] = arr
        self.terms = clean

    @classmethod
    def constant(cls, M, n_xi: int) -> "PolynomialMatrix":
        M = np.atleast_2d(np.asarray(M, dtype=float))
        return cls(M.shape, n_xi, {(0,) * n_xi: M})

    @property
    def degree(self) -> int:
        return max((total_degree(S) for S in self.terms), default=0)

    @property
    def is_constant(self) -> bool:
        return self.degree == 0

    def eval(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float).ravel()
        out = np.zeros(self.shape)
        for S, coef in self.terms.items():
            out += coef * np.prod(xi**np.array(S))
        return out

    def eval_many(self, points: np.ndarray) -> np.ndarray:
        """Evaluate at many points at once; returns (n_points, rows, cols)."""
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        out = np.zeros((pts.shape[0],) + self.shape)
        for S, coef in self.terms.items():
            mono = np.prod(pts ** np.array(S), axis=1)
            out += mono[:, None, None] * coef
        return out

    def __add__(self, other: "PolynomialMatrix") -> "PolynomialMatrix":
        if self.shape != other.shape or self.n_xi != other.n_xi:
            raise ValueError("shape/dimension mismatch in polynomial matrix sum")
        terms = {S: c.copy() for S, c in self.terms.items()}
        for S, c in other.terms.items():
            terms[S] = terms.get(S, 0.0) + c
        return PolynomialMatrix(self.shape, self.n_xi, terms)

    def scaled(self, a: float) -> "PolynomialMatrix":
        return PolynomialMatrix(
            self.shape, self.n_xi, {S: a * c for S, c in self.terms.items()}
        )

    def matmul(self, other) -> "PolynomialMatrix":
        """Product with a constant matrix or another polynomial matrix."""
        if isinstance(other, PolynomialMatrix):
            if self.shape[1] != other.shape[0] or self.n_xi != other.n_xi:
                raise ValueError("inner dimension/parameter mismatch")
            terms: dict[Index, np.ndarray] = {}
            for S1, c1 in self.terms.items():
                for S2, c2 in other.terms.items():
                    S = tuple(a + b for a, b in zip(S1, S2))
                    prod = c1 @ c2
                    terms[S] = terms.get(S, 0.0) + prod
            return PolynomialMatrix((self.shape[0], other.shape[1]), self.n_xi, terms)
        other = np.atleast_2d(np.asarray(other, dtype=float))
        return PolynomialMatrix(
            (self.shape[0], other.shape[1]),
            self.n_xi,
            {S: c @ other for S, c in self.terms.items()},
        )

    def rmatmul(self, other: np.ndarray) -> "PolynomialMatrix":
        """Left product const @ self."""
        other = np.atleast_2d(np.asarray(other, dtype=float))
        return PolynomialMatrix(
            (other.shape[0], self.shape[1]),
            self.n_xi,
            {S: other @ c for S, c in self.terms.items()},
        )


def polymat_pce(
    basis: OrthonormalBasis, M: PolynomialMatrix, out_degree: int | None = None
) -> np.ndarray:
    """Exact expansion coefficients of a polynomial matrix onto the basis.

    Returns an array of shape (N_q+1, rows, cols) with q = out_degree, such
    that M(xi) = sum_k out[k] * phi_k(xi) exactly.
    """
    q = M.degree if out_degree is None else int(out_degree)
    if q < M.degree:
        raise DegreeOverflowError(f"out_degree {q} below matrix degree {M.degree}")
    n_out = basis.size_at(q)
    out = np.zeros((n_out,) + M.shape)
    for S, coef in M.terms.items():
        row = basis.monomial_pce(S, size=n_out)
        out += row[:, None, None] * coef
    return out
