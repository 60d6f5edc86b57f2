import numpy as np
import pytest
from scipy.optimize import bisect

from plastopt import oracle as O


def test_elastic_lateral(dummy):
    assert O.elastic_lateral(1.0, 1.0, dummy) == pytest.approx(1.0, abs=1e-14)
    ll = O.elastic_lateral(1.05, 1.0, dummy)
    ref = bisect(lambda x: O.kirchhoff_uniaxial(1.05, x, 1.0, dummy)[1], 0.8, 1.2, xtol=1e-15)
    assert ll == pytest.approx(ref, abs=1e-12)
    assert abs(O.kirchhoff_uniaxial(1.05, ll, 1.0, dummy)[1]) <= 1e-12
    assert O.elastic_lateral(1 / 1.05, 1.0, dummy) > 1.0


def test_plastic_lateral(dummy):
    kappa = 1.0 / (3 * (1 - 2 * 0.3))
    assert O.plastic_lateral(1.2, dummy, 1) == pytest.approx(1.2 ** -0.5 * (1 + 0.4 / (3 * kappa)) ** 0.25)
    assert O.plastic_lateral(1.0, dummy, -1) == pytest.approx((1 - 0.4 / (3 * kappa)) ** 0.25)
    bad = dummy.scaled(sigma_y=10.0, sigma_inf=10.0)
    with pytest.raises(O.OracleError):
        O.plastic_lateral(1.0, bad, -1)


def test_plastic_stretch_consistency(dummy):
    lams = np.linspace(1.2, 1.6, 9)
    lps = []
    for lam in lams:
        ll = O.plastic_lateral(lam, dummy, 1)
        lp = O.plastic_stretch(lam, ll, dummy, 1)
        t11, t22 = O.kirchhoff_uniaxial(lam, ll, lp, dummy)
        assert t11 == pytest.approx(dummy.sigma_y, abs=1e-10)
        lps.append(lp)
    assert np.all(np.diff(lps) > 0)


def test_plastic_stretch_at_yield_onset(dummy):
    # stretch where the elastic branch first reaches mu |D| = sigma_y
    def excess(lam):
        ll = O.elastic_lateral(lam, 1.0, dummy)
        return dummy.mu * abs(O._D(lam, ll, 1.0)) - dummy.sigma_y
    lam_y = bisect(excess, 1.0001, 1.5, xtol=1e-15)
    ll = O.plastic_lateral(lam_y, dummy, 1)
    assert O.plastic_stretch(lam_y, ll, dummy, 1) == pytest.approx(1.0, abs=1e-9)


def test_cyclic_reference_self_consistency(dummy):
    lams = O.default_cyclic_schedule(20)
    ref = O.cyclic_reference(lams, dummy)
    assert np.max(np.abs(ref.tau22)) <= 1e-10
    assert np.all(np.abs(ref.tau11) <= dummy.sigma_y + 1e-10)
    yielding = np.array([b != "elastic" for b in ref.branch])
    assert np.allclose(np.abs(ref.tau11[yielding]), dummy.sigma_y, atol=1e-10)
    assert np.allclose(ref.det_be, 1.0, atol=1e-14)
    assert {"elastic", "yield+", "yield-"} <= set(ref.branch)


def test_elastic_only_and_unload(dummy):
    ref = O.cyclic_reference(np.linspace(1.0, 1.05, 6)[1:], dummy)
    assert ref.branch == ["elastic"] * 5 and np.allclose(ref.lam_p, 1.0)
    ref = O.cyclic_reference(np.r_[np.linspace(1.0, 1.5, 11)[1:], 1.3], dummy)
    assert ref.branch[-1] == "elastic"
    assert ref.lam_p[-1] == ref.lam_p[-2] > 1.0
