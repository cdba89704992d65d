import numpy as np
import pytest

from core.mesh import TriangleMesh, make_icosphere


def bumpy_sphere(subdivisions: int = 2, amount: float = 0.15, seed: int = 0, name: str = "bumpy") -> TriangleMesh:
    """Icosphere with random radial bumps: no symmetries, so no repeated eigenvalues."""
    base = make_icosphere(subdivisions)
    r = 1.0 + amount * np.random.default_rng(seed).random(base.n_vertices)
    return base.with_vertices(base.vertices * r[:, None], name=name)


def rotation(seed: int = 0) -> np.ndarray:
    Q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((3, 3)))
    return Q * np.sign(np.linalg.det(Q))


@pytest.fixture(scope="session")
def bumpy():
    return bumpy_sphere()
