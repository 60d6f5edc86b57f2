"""Design parameterization: filter, Heaviside projection, hypercube-to-simplex map
and multimaterial property interpolation.

Raw variables per element are one density ``rho`` and ``n_xi`` material
variables.  Every family is filtered with the same cone-weight filter and
projected with the smoothed Heaviside step; the projected material variables
are then mapped onto ``n_xi + 1`` material fractions that sum to one.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.spatial import cKDTree

from . import constitutive as C
from . import tensors as T
from .materials import MaterialCatalog


# -- filter -----------------------------------------------------------------

class FilterOperator:
    """Row-stochastic cone filter w(X, X') = max(0, R - |X - X'|) on element centroids."""

    def __init__(self, centroids, radius):
        centroids = np.asarray(centroids, float)
        n = len(centroids)
        self.radius = float(radius)
        if self.radius <= 0:
            W = sp.identity(n, format="csr")
        else:
            tree = cKDTree(centroids)
            D = tree.sparse_distance_matrix(tree, self.radius, output_type="coo_matrix")
            w = np.maximum(0.0, self.radius - D.data)
            keep = (D.row != D.col) & (w > 0)
            rows = np.concatenate([D.row[keep], np.arange(n)])
            cols = np.concatenate([D.col[keep], np.arange(n)])
            vals = np.concatenate([w[keep], np.full(n, self.radius)])
            W = sp.csr_matrix((vals, (rows, cols)), shape=(n, n))
        rs = np.asarray(W.sum(axis=1)).ravel()
        self.W = sp.diags(1.0 / rs) @ W
        self.W = self.W.tocsr()
        self.WT = self.W.T.tocsr()

    def __call__(self, field):
        field = np.asarray(field, float)
        if field.shape[0] != self.W.shape[0]:
            raise ValueError(f"field has {field.shape[0]} rows, filter expects {self.W.shape[0]}")
        return self.W @ field

    def adjoint(self, grad):
        return self.WT @ np.asarray(grad, float)


def apply_filter(op: FilterOperator, field):
    return op(field)


# -- projection --------------------------------------------------------------

def heaviside_project(x, beta, theta):
    """Smoothed Heaviside step; fixes 0 and 1 and is monotone increasing."""
    x = np.asarray(x, float)
    a = np.tanh(beta * theta)
    return (a + np.tanh(beta * (x - theta))) / (a + np.tanh(beta * (1.0 - theta)))


def heaviside_derivative(x, beta, theta):
    x = np.asarray(x, float)
    a = np.tanh(beta * theta)
    return beta * (1.0 - np.tanh(beta * (x - theta)) ** 2) / (a + np.tanh(beta * (1.0 - theta)))


# -- hypercube to simplex ----------------------------------------------------

def hsp_tables(n_xi):
    """Vertex coordinates c (2^n_xi, n_xi) and material shares b (n_xi, 2^n_xi).

    A vertex with active coordinates splits its unit mass equally among the
    corresponding materials; the origin vertex gives everything to the last
    (complementary) material.
    """
    c = np.array(list(itertools.product((0, 1), repeat=n_xi)), float)[:, ::-1]
    s = c.sum(axis=1)
    b = np.where(s[:, None] > 0, c / np.where(s > 0, s, 1.0)[:, None], 0.0).T
    return c, b


def _vertex_weights(xi_hat, c):
    """Multilinear weights prod_m (-1)^(1 + c_km) (xi_m + c_km - 1) for every vertex k."""
    x = xi_hat[:, None, :]
    fac = (2.0 * c[None] - 1.0) * (x + c[None] - 1.0)
    return np.prod(fac, axis=2)


def hsp_project(xi_hat):
    """Map (n_el, n_xi) projected variables onto (n_el, n_xi + 1) material fractions."""
    xi_hat = np.atleast_2d(np.asarray(xi_hat, float))
    n_xi = xi_hat.shape[1]
    c, b = hsp_tables(n_xi)
    N = _vertex_weights(xi_hat, c)
    head = N @ b.T
    total = np.zeros(len(xi_hat))
    for n in range(n_xi):  # fixed left-to-right order so that the complement closes exactly
        total = total + head[:, n]
    return np.concatenate([head, (1.0 - total)[:, None]], axis=1)


def hsp_jacobian(xi_hat):
    """d(xi_bar_n)/d(xi_hat_m), shape (n_el, n_xi + 1, n_xi)."""
    xi_hat = np.atleast_2d(np.asarray(xi_hat, float))
    n_el, n_xi = xi_hat.shape
    c, b = hsp_tables(n_xi)
    sgn = 2.0 * c - 1.0
    fac = sgn[None] * (xi_hat[:, None, :] + c[None] - 1.0)  # (n_el, K, n_xi)
    dN = np.empty(fac.shape)
    for m in range(n_xi):
        others = np.delete(fac, m, axis=2)
        dN[:, :, m] = sgn[None, :, m] * np.prod(others, axis=2)
    head = np.einsum("nk,ekm->enm", b, dN)
    return np.concatenate([head, -head.sum(axis=1, keepdims=True)], axis=1)


# -- parameters ------------------------------------------------------------

@dataclass
class ProjectionParams:
    beta: float = 1.0
    theta: float = 0.5
    beta_phi: float = 500.0
    theta_phi: float = 0.1

    def __post_init__(self):
        if self.beta <= 0 or self.beta_phi <= 0:
            raise ValueError("projection sharpness must be positive")
        if not (0 < self.theta < 1 and 0 < self.theta_phi < 1):
            raise ValueError("projection thresholds must lie in (0, 1)")


@dataclass
class InterpolationParams:
    p_kappa: float = 3.0  # also used for mu
    p_k: float = 2.5
    p_h: float = 3.0
    p_xi: float = 1.0
    eps_rho: float = 1e-3

    def __post_init__(self):
        if min(self.p_kappa, self.p_k, self.p_h, self.p_xi) < 1:
            raise ValueError("penalties must be >= 1")
        if not (0 < self.eps_rho <= 1e-3):
            raise ValueError("eps_rho must lie in (0, 1e-3]")


def density_factor(rho_bar, p, eps_rho):
    return eps_rho + (1.0 - eps_rho) * np.asarray(rho_bar) ** p


def interp_property(params: InterpolationParams, rho_bar, xi_bar, catalog: MaterialCatalog, which: str,
                    alpha=None):
    """Interpolated kappa, mu, h, or k(alpha) per element."""
    xi_bar = np.atleast_2d(xi_bar)
    w = xi_bar ** params.p_xi
    if which in ("kappa", "mu"):
        return density_factor(rho_bar, params.p_kappa, params.eps_rho) * (w @ catalog.column(which))
    if which == "h":
        return density_factor(rho_bar, params.p_h, params.eps_rho) * (w @ catalog.column("h_kin"))
    if which == "k":
        from .materials import hardening_k
        laws = np.stack([hardening_k(m, np.zeros_like(rho_bar) if alpha is None else alpha)
                         for m in catalog], axis=-1)
        return density_factor(rho_bar, params.p_k, params.eps_rho) * np.sum(w * laws, axis=-1)
    raise ValueError(f"unknown property {which!r}")


def phi_from_density(rho_bar, proj: ProjectionParams, p_kappa):
    """Element-wise blend between the finite-strain law (1) and linear elasticity (0)."""
    return heaviside_project(np.asarray(rho_bar) ** p_kappa, proj.beta_phi, proj.theta_phi)


@dataclass
class MaterialField:
    """Per-element interpolated constants, expanded to material points on demand."""
    kappa: np.ndarray
    mu: np.ndarray
    h: np.ndarray
    mix: np.ndarray  # (n_el, n_mat) weights of each hardening law
    phi: np.ndarray
    catalog: MaterialCatalog

    def point_material(self, n_qp) -> C.PointMaterial:
        rep = lambda a: np.repeat(a, n_qp, axis=0)
        cat = self.catalog
        return C.PointMaterial(rep(self.kappa), rep(self.mu), rep(self.h), rep(self.mix),
                               cat.column("sigma_y"), cat.column("K_iso"), cat.column("sigma_inf"),
                               cat.column("delta"))

    def point_phi(self, n_qp):
        return np.repeat(self.phi, n_qp)


def material_field(rho_bar, xi_bar, catalog: MaterialCatalog, interp: InterpolationParams,
                   proj: ProjectionParams = None) -> MaterialField:
    proj = proj or ProjectionParams()
    rho_bar = np.asarray(rho_bar, float)
    xi_bar = np.atleast_2d(np.asarray(xi_bar, float))
    w = xi_bar ** interp.p_xi
    s_kap = density_factor(rho_bar, interp.p_kappa, interp.eps_rho)
    kappa = s_kap * (w @ catalog.column("kappa"))
    mu = s_kap * (w @ catalog.column("mu"))
    h = density_factor(rho_bar, interp.p_h, interp.eps_rho) * (w @ catalog.column("h_kin"))
    mix = density_factor(rho_bar, interp.p_k, interp.eps_rho)[:, None] * w
    phi = phi_from_density(rho_bar, proj, interp.p_kappa)
    return MaterialField(kappa, mu, h, mix, phi, catalog)


def solid_field(catalog: MaterialCatalog, n_el, material_index=0) -> MaterialField:
    """Fully solid single-material field (phi = 1) without any interpolation."""
    xi = np.zeros((n_el, len(catalog)))
    xi[:, material_index] = 1.0
    return material_field(np.ones(n_el), xi, catalog, InterpolationParams(p_xi=1.0))


# -- interpolated stress ----------------------------------------------------

_II4 = T.outer(T.EYE, T.EYE)
_ISYM4 = T.sym_identity4()


@dataclass
class InterpolatedResponse:
    P: np.ndarray  # interpolated first Piola-Kirchhoff stress (n_pt, 3, 3)
    A: np.ndarray | None  # dP/dF (n_pt, 3, 3, 3, 3)
    result: C.ReturnMapResult
    F_check: np.ndarray
    force_scale: float = 0.0
    bundle: C.StressBundle | None = None


def interp_stress_and_moduli(phi, H_now, H_prev, prev: C.QuadPointState, pmat: C.PointMaterial,
                             tangent=True, isochoric=True, symmetric=False) -> InterpolatedResponse:
    """Blend the elastoplastic response at F_check = I + phi grad(u) with linear elasticity.

    P_check = phi P(F_check) - phi sigma_l(eps(F_check)) + sigma_l(eps(F)).
    """
    phi = np.asarray(phi, float)
    ph = phi[:, None, None]
    Fc_now = T.EYE + ph * H_now
    Fc_prev = T.EYE + ph * H_prev
    rm = C.return_map(prev, Fc_prev, Fc_now, pmat, isochoric=isochoric)
    sb = C.stresses(rm.trial, rm.state.gamma_hat, Fc_now, pmat)
    sig_c = C.linear_stress(C.small_strain(Fc_now), pmat.kappa, pmat.mu)
    sig = C.linear_stress(C.small_strain(T.EYE + H_now), pmat.kappa, pmat.mu)
    P = ph * (sb.P - sig_c) + sig
    resp = InterpolatedResponse(P, None, rm, Fc_now, bundle=sb)
    if tangent:
        interp_moduli(phi, resp, pmat, symmetric=symmetric)
    return resp


def interp_moduli(phi, resp: InterpolatedResponse, pmat: C.PointMaterial, symmetric=False):
    """Fill ``resp.A`` with phi^2 A(F_check) + (1 - phi^2) C_linear."""
    rm = resp.result
    Ahat = C.first_moduli(rm.trial, rm.state.gamma_hat, resp.F_check, pmat, bundle=resp.bundle,
                          symmetric=symmetric)
    # C_linear = (kappa - 2 mu / 3) I(x)I + 2 mu Isym
    p2 = np.asarray(phi, float) ** 2
    q = 1.0 - p2
    A = p2[:, None, None, None, None] * Ahat
    A += (q * (pmat.kappa - 2.0 * pmat.mu / 3.0))[:, None, None, None, None] * _II4
    A += (2.0 * q * pmat.mu)[:, None, None, None, None] * _ISYM4
    resp.A = A
    return A


# -- full chain ---------------------------------------------------------------

@dataclass
class DesignField:
    raw_rho: np.ndarray
    raw_xi: np.ndarray
    filt_rho: np.ndarray
    filt_xi: np.ndarray
    proj_rho: np.ndarray
    proj_xi: np.ndarray
    rho_bar: np.ndarray
    xi_bar: np.ndarray


class DesignChain:
    """raw -> filtered -> projected -> physical, with the matching adjoint."""

    def __init__(self, filt: FilterOperator, proj: ProjectionParams, n_xi: int):
        self.filt = filt
        self.proj = proj
        self.n_xi = n_xi
        self._last = None

    def forward(self, rho, xi) -> DesignField:
        rho = np.asarray(rho, float)
        xi = np.asarray(xi, float).reshape(len(rho), self.n_xi)
        fr, fx = self.filt(rho), self.filt(xi)
        b, t = self.proj.beta, self.proj.theta
        pr, px = heaviside_project(fr, b, t), heaviside_project(fx, b, t)
        xb = hsp_project(px) if self.n_xi > 0 else np.ones((len(rho), 1))
        self._last = DesignField(rho, xi, fr, fx, pr, px, pr, xb)
        return self._last

    def adjoint(self, d_rho_bar, d_xi_bar, field: DesignField = None):
        """Gradients w.r.t. raw variables from gradients w.r.t. (rho_bar, xi_bar)."""
        f = field or self._last
        if f is None:
            raise RuntimeError("chain adjoint requested before a forward evaluation")
        b, t = self.proj.beta, self.proj.theta
        g_rho = self.filt.adjoint(heaviside_derivative(f.filt_rho, b, t) * d_rho_bar)
        if self.n_xi == 0:
            return g_rho, np.zeros((len(g_rho), 0))
        d_xi_hat = np.einsum("en,enm->em", np.atleast_2d(d_xi_bar), hsp_jacobian(f.proj_xi))
        g_xi = self.filt.adjoint(heaviside_derivative(f.filt_xi, b, t) * d_xi_hat)
        return g_rho, g_xi


def parameterization_chain_adjoint(chain: DesignChain, d_rho_bar, d_xi_bar, field=None):
    return chain.adjoint(d_rho_bar, d_xi_bar, field)


def _density_factor_derivative(rho_bar, p, eps_rho):
    return (1.0 - eps_rho) * p * np.asarray(rho_bar) ** (p - 1.0)


def material_field_derivatives(rho_bar, xi_bar, catalog: MaterialCatalog, interp: InterpolationParams,
                               proj: ProjectionParams = None):
    """Derivatives of the per-element constants [kappa, mu, h, mix_1..M, phi].

    Returns (d/d rho_bar (n_el, 4 + M), d/d xi_bar (n_el, 4 + M, M)).
    """
    proj = proj or ProjectionParams()
    rho_bar = np.asarray(rho_bar, float)
    xi_bar = np.atleast_2d(np.asarray(xi_bar, float))
    n_el, M = xi_bar.shape
    p = interp.p_xi
    w = xi_bar ** p
    dw = p * xi_bar ** (p - 1.0)
    eps = interp.eps_rho
    s_kap = density_factor(rho_bar, interp.p_kappa, eps)
    s_h = density_factor(rho_bar, interp.p_h, eps)
    s_k = density_factor(rho_bar, interp.p_k, eps)
    ds_kap = _density_factor_derivative(rho_bar, interp.p_kappa, eps)
    ds_h = _density_factor_derivative(rho_bar, interp.p_h, eps)
    ds_k = _density_factor_derivative(rho_bar, interp.p_k, eps)
    kap, mu, hk = catalog.column("kappa"), catalog.column("mu"), catalog.column("h_kin")
    d_rho = np.zeros((n_el, 4 + M))
    d_xi = np.zeros((n_el, 4 + M, M))
    d_rho[:, 0] = ds_kap * (w @ kap)
    d_rho[:, 1] = ds_kap * (w @ mu)
    d_rho[:, 2] = ds_h * (w @ hk)
    d_rho[:, 3:3 + M] = ds_k[:, None] * w
    x = rho_bar ** interp.p_kappa
    d_rho[:, 3 + M] = (heaviside_derivative(x, proj.beta_phi, proj.theta_phi)
                       * interp.p_kappa * rho_bar ** (interp.p_kappa - 1.0))
    d_xi[:, 0, :] = s_kap[:, None] * dw * kap
    d_xi[:, 1, :] = s_kap[:, None] * dw * mu
    d_xi[:, 2, :] = s_h[:, None] * dw * hk
    idx = np.arange(M)
    d_xi[:, 3 + idx, idx] = s_k[:, None] * dw
    return d_rho, d_xi


def field_constants(field: MaterialField):
    """Per-element constants stacked in the order used by the derivative helpers."""
    return np.column_stack([field.kappa, field.mu, field.h, field.mix, field.phi])
