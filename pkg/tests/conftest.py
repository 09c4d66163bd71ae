import numpy as np
import pytest

from pchinf.cli import parse_plant
from pchinf.galerkin import expand_blocks
from pchinf.hinf import LtiSystem
from pchinf.polychaos import Distribution, PolynomialMatrix, build_basis

# reference controllers for the builtin benchmark and their sweep statistics
GAINS = {
    "worst_case": np.array([[-0.1281, -9.4664]]),
    "nominal_p2": np.array([[1.8539, -27.4996]]),
    "nominal_p3": np.array([[1.5298, -28.6719]]),
    "nominal_p10": np.array([[5.1988, -74.7948]]),
}
SWEEP_STATS = {
    "worst_case": (54.1316, 21.0501),
    "nominal_p2": (80.1360, 14.7713),
    "nominal_p3": (57.7491, 15.1790),
    "nominal_p10": (55.4751, 17.7026),
}


@pytest.fixture(scope="session")
def uniform1():
    return Distribution.uniform([(-1.0, 1.0)])


@pytest.fixture(scope="session")
def plant():
    return parse_plant("cubic_sof")


@pytest.fixture(scope="session")
def basis_p2(plant):
    return build_basis(plant.dist, 2, working_degree=2 + plant.bcdw_degree)


@pytest.fixture(scope="session")
def blocks_p2(plant, basis_p2):
    return expand_blocks(plant, basis_p2, 2)


@pytest.fixture(scope="session")
def det_plant():
    """Parameter-independent plant (every expansion coefficient beyond 0 vanishes)."""
    nxi = 1
    A = PolynomialMatrix.constant([[-1.0, 0.3], [0.0, -2.0]], nxi)
    B_w = PolynomialMatrix.constant([[1.0], [0.5]], nxi)
    B = PolynomialMatrix.constant([[1.0], [0.2]], nxi)
    C = PolynomialMatrix.constant([[1.0, 0.0]], nxi)
    D_w = PolynomialMatrix.constant([[0.0]], nxi)
    from pchinf.plant import UncertainPlant

    return UncertainPlant(
        A=A, B_w=B_w, B=B, C=C, D_w=D_w,
        C_z=[[1.0, 0.0], [0.0, 0.0]], D_zw=[[0.0], [0.0]], D_z=[[0.0], [1.0]],
        dist=Distribution.uniform([(-1.0, 1.0)]),
        name="deterministic",
    )


def random_stable_system(rng, n=4, nw=2, nz=2, d_scale=0.3) -> LtiSystem:
    A = rng.standard_normal((n, n))
    A -= (np.max(np.linalg.eigvals(A).real) + 0.5 + rng.uniform(0.0, 1.0)) * np.eye(n)
    return LtiSystem(
        A,
        rng.standard_normal((n, nw)),
        rng.standard_normal((nz, n)),
        rng.standard_normal((nz, nw)) * d_scale,
    )
