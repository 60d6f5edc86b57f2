import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from plastopt import constitutive as C
from plastopt import design as D
from plastopt.materials import MaterialCatalog, MaterialSpec

from conftest import point_material


def test_filter_examples():
    line = np.array([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]])
    W = D.FilterOperator(line, 1.5)
    assert W(np.array([1.0, 0.0, 0.0]))[1] == pytest.approx(0.5 / 2.5, abs=1e-15)
    assert np.allclose(W(np.full(3, 0.3)), 0.3, atol=1e-15)
    assert np.allclose(D.FilterOperator(line, 0.9)(np.array([0.1, 0.7, 0.2])), [0.1, 0.7, 0.2])
    with pytest.raises(ValueError):
        W(np.ones(4))


def test_filter_row_stochastic_and_adjoint(rng):
    pts = rng.uniform(0, 5, (60, 2))
    W = D.FilterOperator(pts, 1.3)
    dense = W.W.toarray()
    assert np.max(np.abs(dense.sum(axis=1) - 1.0)) <= 1e-14
    g = np.ones(60)
    assert np.allclose(W.adjoint(g), dense.sum(axis=0), atol=1e-14)
    x = rng.uniform(0, 1, 60)
    y = W(x)
    assert y.min() >= x.min() - 1e-15 and y.max() <= x.max() + 1e-15


def test_heaviside_examples():
    assert D.heaviside_project(0.5, 7.0, 0.5) == pytest.approx(0.5, abs=1e-15)
    for beta, theta in [(1.0, 0.5), (64.0, 0.1), (512.0, 0.9)]:
        assert D.heaviside_project(0.0, beta, theta) == pytest.approx(0.0, abs=1e-15)
        assert D.heaviside_project(1.0, beta, theta) == pytest.approx(1.0, abs=1e-15)
    ref = (math.tanh(0.5) + math.tanh(0.25)) / (2 * math.tanh(0.5))
    assert D.heaviside_project(0.75, 1.0, 0.5) == pytest.approx(ref, rel=1e-15)


def test_heaviside_monotone_and_derivative(rng):
    x = np.sort(rng.uniform(0, 1, 1000))
    for beta, theta in [(1.0, 0.5), (16.0, 0.3)]:
        y = D.heaviside_project(x, beta, theta)
        assert np.all(np.diff(y) >= 0) and y.min() >= 0 and y.max() <= 1
        h = 1e-6
        fd = (D.heaviside_project(x + h, beta, theta) - D.heaviside_project(x - h, beta, theta)) / (2 * h)
        assert np.allclose(D.heaviside_derivative(x, beta, theta), fd, rtol=1e-6, atol=1e-9)


def test_hsp_vertices_single_variable():
    assert np.allclose(D.hsp_project([[1.0]]), [[1.0, 0.0]])
    assert np.allclose(D.hsp_project([[0.0]]), [[0.0, 1.0]])


def _hsp_brute(xh):
    """Direct double sum over hypercube vertices with shares split among active coordinates."""
    n = len(xh)
    out = np.zeros(n + 1)
    for c in itertools.product((0, 1), repeat=n):
        w = 1.0
        for m in range(n):
            w *= xh[m] if c[m] else 1.0 - xh[m]
        if sum(c) == 0:
            out[n] += w
        else:
            for m in range(n):
                out[m] += w * c[m] / sum(c)
    return out


def test_hsp_two_variables_brute_force():
    assert np.allclose(D.hsp_project([[0.5, 0.5]])[0], [0.375, 0.375, 0.25], atol=1e-15)
    rng = np.random.default_rng(2)
    for _ in range(20):
        x = rng.uniform(0, 1, 3)
        assert np.allclose(D.hsp_project(x[None])[0], _hsp_brute(x), atol=1e-15)
    for c in itertools.product((0, 1), repeat=3):
        out = D.hsp_project(np.array(c, float)[None])[0]
        assert np.allclose(out, _hsp_brute(np.array(c, float)))


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_hsp_partition_of_unity(n_xi, seed):
    x = np.random.default_rng(seed).uniform(0, 1, (50, n_xi))
    out = D.hsp_project(x)
    assert np.max(np.abs(out.sum(axis=1) - 1.0)) <= 1e-15
    assert out.min() >= -1e-15 and out.max() <= 1 + 1e-15


@pytest.mark.parametrize("n_xi", [1, 2, 3])
def test_hsp_jacobian_fd(n_xi, rng):
    x = rng.uniform(0.1, 0.9, (5, n_xi))
    J = D.hsp_jacobian(x)
    h = 1e-6
    for m in range(n_xi):
        e = np.zeros(n_xi)
        e[m] = h
        fd = (D.hsp_project(x + e) - D.hsp_project(x - e)) / (2 * h)
        assert np.allclose(J[:, :, m], fd, atol=1e-9)
    if n_xi == 1:
        assert np.allclose(J[:, 1, 0], -J[:, 0, 0])


def _two_catalog():
    a = MaterialSpec("a", 2.0, 1.0, 0.3, h_kin=0.1)
    b = MaterialSpec("b", 6.0, 3.0, 0.5, h_kin=0.2, K_iso=0.4)
    return MaterialCatalog([a, b])


def test_interp_property_examples():
    cat = _two_catalog()
    par = D.InterpolationParams(p_kappa=3, p_xi=1, eps_rho=1e-3)
    assert D.interp_property(par, np.array([1.0]), [[0.0, 1.0]], cat, "kappa")[0] == pytest.approx(6.0)
    assert D.interp_property(par, np.array([0.0]), [[1.0, 0.0]], cat, "mu")[0] == pytest.approx(1e-3)
    val = D.interp_property(par, np.array([0.5]), [[0.5, 0.5]], cat, "kappa")[0]
    assert val == pytest.approx((1e-3 + 0.999 * 0.125) * 4.0, rel=1e-15)
    k = D.interp_property(par, np.array([1.0]), [[0.0, 1.0]], cat, "k", alpha=np.array([0.5]))[0]
    assert k == pytest.approx(0.5 + 0.4 * 0.5)
    with pytest.raises(ValueError):
        D.interp_property(par, np.array([1.0]), [[1.0, 0.0]], cat, "nu")


def test_material_field_derivatives_fd(rng):
    cat = _two_catalog()
    par = D.InterpolationParams(p_xi=2.0)
    proj = D.ProjectionParams(beta_phi=8.0)
    rho = rng.uniform(0.3, 0.9, 4)
    xi = rng.uniform(0.2, 0.8, (4, 2))
    d_rho, d_xi = D.material_field_derivatives(rho, xi, cat, par, proj)
    f = lambda r, x: D.field_constants(D.material_field(r, x, cat, par, proj))
    h = 1e-6
    fd = (f(rho + h, xi) - f(rho - h, xi)) / (2 * h)
    assert np.allclose(d_rho, fd, rtol=1e-6, atol=1e-10)
    for m in range(2):
        e = np.zeros(2)
        e[m] = h
        fd = (f(rho, xi + e) - f(rho, xi - e)) / (2 * h)
        assert np.allclose(d_xi[:, :, m], fd, rtol=1e-6, atol=1e-10)


def _interp(phi, H, pm, prev=None, H_prev=None):
    n = len(H)
    prev = prev or C.QuadPointState.virgin(n)
    H_prev = np.zeros_like(H) if H_prev is None else H_prev
    return D.interp_stress_and_moduli(np.full(n, phi), H, H_prev, prev, pm)


def test_interp_stress_limits(dummy, rng):
    pm = point_material(dummy, 6)
    H = 0.3 * rng.standard_normal((6, 3, 3))
    solid = _interp(1.0, H, pm)
    rm = C.return_map(C.QuadPointState.virgin(6), np.broadcast_to(np.eye(3), H.shape), np.eye(3) + H, pm)
    assert np.allclose(solid.P, C.stresses(rm.trial, rm.state.gamma_hat, np.eye(3) + H, pm).P, atol=1e-14)
    void = _interp(0.0, H, pm)
    assert np.allclose(void.P, C.linear_stress(C.small_strain(np.eye(3) + H), pm.kappa, pm.mu), atol=1e-15)
    Cl = C.linear_moduli(dummy.kappa, dummy.mu)
    assert np.allclose(void.A, Cl, atol=1e-15)


def test_interp_moduli_fd_half_phi(dummy, rng):
    n = 10
    pm = point_material(dummy, n)
    H0 = 0.3 * rng.standard_normal((n, 3, 3))
    pre = _interp(0.5, H0, pm).result.state
    for H1 in (H0 + 1e-3 * rng.standard_normal((n, 3, 3)), H0 + 0.2 * rng.standard_normal((n, 3, 3))):
        resp = _interp(0.5, H1, pm, pre, H0)
        dH = rng.standard_normal((n, 3, 3))
        h = 1e-6
        fd = (_interp(0.5, H1 + h * dH, pm, pre, H0).P - _interp(0.5, H1 - h * dH, pm, pre, H0).P) / (2 * h)
        an = np.einsum("pijkl,pkl->pij", resp.A, dH)
        rel = np.linalg.norm(fd - an, axis=(1, 2)) / np.linalg.norm(fd, axis=(1, 2))
        assert rel.max() <= 1e-6


def test_chain_adjoint_fd(rng):
    pts = np.c_[np.arange(6.0), np.zeros(6)]
    chain = D.DesignChain(D.FilterOperator(pts, 1.8), D.ProjectionParams(beta=4.0, theta=0.4), n_xi=2)
    rho = rng.uniform(0, 1, 6)
    xi = rng.uniform(0, 1, (6, 2))
    a = rng.standard_normal(6)
    b = rng.standard_normal((6, 3))

    def scalar(r, x):
        f = chain.forward(r, x)
        return a @ f.rho_bar + np.sum(b * f.xi_bar)

    field = chain.forward(rho, xi)
    g_rho, g_xi = chain.adjoint(a, b, field)
    h = 1e-6
    for e in range(6):
        dr = np.zeros(6)
        dr[e] = h
        fd = (scalar(rho + dr, xi) - scalar(rho - dr, xi)) / (2 * h)
        assert g_rho[e] == pytest.approx(fd, rel=1e-6, abs=1e-10)
        for m in range(2):
            dx = np.zeros((6, 2))
            dx[e, m] = h
            fd = (scalar(rho, xi + dx) - scalar(rho, xi - dx)) / (2 * h)
            assert g_xi[e, m] == pytest.approx(fd, rel=1e-6, abs=1e-10)


def test_chain_near_identity_limit():
    pts = np.c_[np.arange(4.0), np.zeros(4)]
    proj = D.ProjectionParams(beta=1e-4, theta=0.5)
    chain = D.DesignChain(D.FilterOperator(pts, 0.0), proj, n_xi=1)
    field = chain.forward(np.full(4, 0.3), np.full((4, 1), 0.6))
    g_rho, _ = chain.adjoint(np.ones(4), np.zeros((4, 2)), field)
    assert np.allclose(g_rho, D.heaviside_derivative(0.3, proj.beta, proj.theta))
    assert np.allclose(g_rho, 1.0, rtol=1e-7)
    with pytest.raises(RuntimeError):
        D.DesignChain(D.FilterOperator(pts, 0.0), proj, 1).adjoint(np.ones(4), np.zeros((4, 2)))


def test_params_validation():
    with pytest.raises(ValueError):
        D.InterpolationParams(eps_rho=0.01)
    with pytest.raises(ValueError):
        D.ProjectionParams(theta=1.5)
