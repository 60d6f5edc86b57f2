"""Semi-analytical uniaxial solution for a perfectly plastic column.

The column is stretched by ``lam`` along x and free laterally, so that
F = diag(lam, lam_l, lam_l) and the plastic part is
Fp = diag(lam_p, lam_p^-1/2, lam_p^-1/2).  With

    D = lam_p (lam_l/lam)^(2/3) - lam_p^-2 (lam/lam_l)^(4/3)

the volume-preserving elastic tensor is be = diag(b1, b2, b2) with
dev(be) = D/3 diag(-2, 1, 1), and the Kirchhoff stress is
tau11 = J U' - 2 mu D / 3, tau22 = J U' + mu D / 3 with J = lam lam_l^2.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .materials import MaterialSpec


class OracleError(RuntimeError):
    pass


def _D(lam, lam_l, lam_p):
    return lam_p * (lam_l / lam) ** (2.0 / 3.0) - lam_p ** -2 * (lam / lam_l) ** (4.0 / 3.0)


def kirchhoff_uniaxial(lam, lam_l, lam_p, mat: MaterialSpec):
    """(tau11, tau22) of the homogeneous column state."""
    J = lam * lam_l ** 2
    JU = 0.5 * mat.kappa * (J * J - 1.0)
    D = _D(lam, lam_l, lam_p)
    return JU - 2.0 * mat.mu * D / 3.0, JU + mat.mu * D / 3.0


def elastic_be(lam, lam_l, lam_p):
    """Diagonal of be for the given stretches (determinant one by construction)."""
    b1 = (lam / lam_l) ** (4.0 / 3.0) * lam_p ** -2
    b2 = (lam_l / lam) ** (2.0 / 3.0) * lam_p
    return np.array([b1, b2, b2])


def elastic_lateral(lam, lam_p, mat: MaterialSpec, tol=1e-12):
    """Lateral stretch that makes tau22 vanish with the plastic stretch frozen."""

    def g(ll):
        return kirchhoff_uniaxial(lam, ll, lam_p, mat)[1]

    guess = lam ** -0.5
    lo, hi = 0.5 * guess, 2.0 * guess
    for _ in range(60):
        if g(lo) < 0 < g(hi):
            break
        lo, hi = 0.5 * lo, 2.0 * hi
    else:
        raise OracleError(f"could not bracket lateral stretch at lam={lam}")
    ll = brentq(g, lo, hi, xtol=1e-16, rtol=4 * np.finfo(float).eps, maxiter=200)
    if abs(g(ll)) > tol * max(1.0, mat.kappa):
        raise OracleError(f"lateral stretch residual {g(ll):.3e} above tolerance")
    return ll


def plastic_lateral(lam, mat: MaterialSpec, sign: int):
    """Closed-form lateral stretch on the tension (+1) or compression (-1) yield branch."""
    c = 1.0 + sign * 2.0 * mat.sigma_y / (3.0 * mat.kappa)
    if c <= 0:
        raise OracleError("1 - 2 sigma_y / (3 kappa) must be positive")
    return lam ** -0.5 * c ** 0.25


def plastic_stretch(lam, lam_l, mat: MaterialSpec, sign: int, tol=1e-12):
    """Positive root of (lam_l/lam)^(2/3) x^3 + sign (sigma_y/mu) x^2 - (lam/lam_l)^(4/3) = 0."""
    a = (lam_l / lam) ** (2.0 / 3.0)
    b = sign * mat.sigma_y / mat.mu
    c = (lam / lam_l) ** (4.0 / 3.0)
    roots = np.roots([a, b, 0.0, -c])
    real = roots[np.abs(roots.imag) <= 1e-10 * np.abs(roots)].real
    pos = real[real > 0]
    if pos.size != 1:
        raise OracleError(f"expected one positive plastic stretch, found {pos}")
    x = pos[0]
    for _ in range(3):  # Newton polish to full precision
        x -= (a * x ** 3 + b * x ** 2 - c) / (3 * a * x ** 2 + 2 * b * x)
    res = a * x ** 3 + b * x ** 2 - c
    if abs(res) > tol * max(1.0, c):
        raise OracleError(f"plastic stretch residual {res:.3e}")
    return x


@dataclass
class UniaxialState:
    lam: float
    lam_l: float
    lam_p: float
    branch: str  # "elastic", "yield+" or "yield-"


@dataclass
class CyclicReference:
    lam: np.ndarray
    tau11: np.ndarray
    tau22: np.ndarray
    lam_l: np.ndarray
    lam_p: np.ndarray
    det_be: np.ndarray
    branch: list


def uniaxial_step(lam, lam_p_prev, mat: MaterialSpec) -> UniaxialState:
    """Advance one load value: elastic trial with frozen lam_p, yield branch if it fails."""
    ll = elastic_lateral(lam, lam_p_prev, mat)
    D = _D(lam, ll, lam_p_prev)
    # trial yield function sqrt(2/3)(mu |D| - sigma_y), the same test the FE kernel applies
    if mat.mu * abs(D) - mat.sigma_y <= 1e-12:
        return UniaxialState(lam, ll, lam_p_prev, "elastic")
    sign = 1 if D < 0 else -1
    ll = plastic_lateral(lam, mat, sign)
    lp = plastic_stretch(lam, ll, mat, sign)
    return UniaxialState(lam, ll, lp, "yield+" if sign > 0 else "yield-")


def cyclic_reference(lams, mat: MaterialSpec) -> CyclicReference:
    """Reference response along a schedule of axial stretches."""
    lam_p = 1.0
    out = {k: [] for k in ("tau11", "tau22", "lam_l", "lam_p", "det_be", "branch")}
    for lam in lams:
        st = uniaxial_step(float(lam), lam_p, mat)
        lam_p = st.lam_p
        t11, t22 = kirchhoff_uniaxial(lam, st.lam_l, st.lam_p, mat)
        out["tau11"].append(t11)
        out["tau22"].append(t22)
        out["lam_l"].append(st.lam_l)
        out["lam_p"].append(st.lam_p)
        out["det_be"].append(np.prod(elastic_be(lam, st.lam_l, st.lam_p)))
        out["branch"].append(st.branch)
    return CyclicReference(np.asarray(lams, float), *(np.asarray(out[k]) for k in
                                                      ("tau11", "tau22", "lam_l", "lam_p", "det_be")),
                           out["branch"])


def default_cyclic_schedule(n_per_leg=40):
    """Tension past yield, reversal into compression past yield, then reloading in tension.

    Stretch legs 1 -> 1.5 -> 0.7 -> 1.3 with ``n_per_leg`` equal increments each.
    """
    legs = [(1.0, 1.5), (1.5, 0.7), (0.7, 1.3)]
    pts = [np.linspace(a, b, n_per_leg + 1)[1:] for a, b in legs]
    return np.concatenate(pts)
