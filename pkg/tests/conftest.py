import numpy as np
import pytest

from plastopt import constitutive as C
from plastopt.materials import MaterialSpec, builtin_catalog, dummy_material


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def catalog():
    return builtin_catalog()


@pytest.fixture
def dummy():
    return dummy_material()


def point_material(mat, n=1):
    return C.PointMaterial.uniform(mat, n)


def random_F(rng, n, scale=0.1):
    """Random deformation gradients near the identity with positive determinant."""
    return np.eye(3) + scale * rng.standard_normal((n, 3, 3))


SOFT_SPEC = MaterialSpec.from_young("soft", 1.0, 0.3, 0.02, h_kin=0.05, K_iso=0.02)
