import numpy as np
import pytest

from plastopt.materials import MaterialCatalog, MaterialSpec, hardening_k, hardening_k_prime


def test_table_values(catalog):
    assert hardening_k(catalog.lookup("titanium"), 0.5) == pytest.approx(853.0)
    assert hardening_k(catalog.lookup("bronze"), 1.0) == pytest.approx(1097.0)
    nicr = catalog.lookup("nickel-chromium")
    assert hardening_k(nicr, 0.1) == pytest.approx(450 + 12.9 + 265 * (1 - np.exp(-1.69)), rel=1e-14)
    assert hardening_k_prime(catalog.lookup("steel"), 0.7) == 0.0
    assert hardening_k_prime(catalog.lookup("bronze"), 0.3) == pytest.approx(952.0)
    assert hardening_k_prime(nicr, 0.0) == pytest.approx(129 + 16.9 * 265)


def test_lookup_by_alias(catalog):
    assert catalog.lookup("CuSn10").sigma_y == 145.0
    assert catalog.lookup("AISI 316L").h_kin == pytest.approx(1339.1)
    assert catalog.lookup("PCL").sigma_y == 25.0
    assert catalog.names == ["titanium", "bronze", "nickel-chromium", "steel", "lithium", "PCL"]
    with pytest.raises(KeyError):
        catalog.lookup("unobtainium")


def test_negative_alpha_rejected(catalog):
    with pytest.raises(ValueError):
        hardening_k(catalog[0], -0.1)


def test_hardening_monotone_and_derivative(catalog):
    rng = np.random.default_rng(0)
    alpha = np.sort(rng.uniform(0.0, 2.0, 10))
    h = 1e-6
    for mat in catalog:
        k = hardening_k(mat, alpha)
        assert np.all(np.diff(k) >= 0)
        kp = hardening_k_prime(mat, alpha)
        assert np.all(kp >= 0)
        fd = (hardening_k(mat, alpha + h) - hardening_k(mat, alpha - h)) / (2 * h)
        assert np.allclose(fd, kp, rtol=1e-6, atol=1e-9 * mat.sigma_y)


def test_spec_validation():
    with pytest.raises(ValueError):
        MaterialSpec("bad", kappa=-1.0, mu=1.0, sigma_y=1.0)
    with pytest.raises(ValueError):
        MaterialSpec("bad", kappa=1.0, mu=1.0, sigma_y=2.0, sigma_inf=1.0)
    with pytest.raises(ValueError):
        MaterialCatalog([])
    m = MaterialSpec("a", 1.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        MaterialCatalog([m, m])
