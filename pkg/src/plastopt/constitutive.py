"""Finite-strain J2 return mapping with exactly isochoric plastic flow.

The kernel works on stacks of material points.  The elastic state is the
volume-preserving left Cauchy-Green tensor ``be`` (det = 1), kinematic
hardening is carried by ``beta`` and isotropic hardening by the equivalent
plastic strain ``alpha``.  After the radial return the trace of ``be`` is
recomputed from a depressed cubic so that det(be) = 1 holds to round-off,
instead of drifting as with the classical trace-preserving update.

Volumetric energy: U(J) = kappa/2 [(J^2 - 1)/2 - ln J].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tensors as T
from .materials import MaterialSpec

SQ23 = np.sqrt(2.0 / 3.0)


class ConstitutiveError(RuntimeError):
    """Failure inside the local update (carries offending point indices)."""

    def __init__(self, msg, points=None):
        super().__init__(msg)
        self.points = points


class UndefinedFlowDirection(ConstitutiveError):
    pass


class AssumptionViolated(ConstitutiveError):
    pass


class ConsistencyFailure(ConstitutiveError):
    def __init__(self, msg, points=None, residual=None):
        super().__init__(msg, points)
        self.residual = residual


class DegeneratePlasticState(ConstitutiveError):
    pass


class PointMaterial:
    """Per-point material constants, possibly a blend of several laws.

    The isotropic hardening function is ``k(a) = sum_m mix[:, m] k_m(a)``,
    which covers both a single catalog material (one column of ones) and the
    interpolated multimaterial law.
    """

    def __init__(self, kappa, mu, h, mix, sigma_y, K_iso, sigma_inf, delta):
        self.kappa = np.asarray(kappa, float)
        self.mu = np.asarray(mu, float)
        self.h = np.asarray(h, float)
        self.mix = np.atleast_2d(np.asarray(mix, float))
        self.sigma_y = np.asarray(sigma_y, float)
        self.K_iso = np.asarray(K_iso, float)
        self.sigma_inf = np.asarray(sigma_inf, float)
        self.delta = np.asarray(delta, float)

    @classmethod
    def uniform(cls, mat: MaterialSpec, n: int) -> "PointMaterial":
        one = np.ones(n)
        return cls(mat.kappa * one, mat.mu * one, mat.h_kin * one, one[:, None],
                   [mat.sigma_y], [mat.K_iso], [mat.sigma_inf], [mat.delta])

    def __len__(self):
        return len(self.mu)

    def take(self, idx) -> "PointMaterial":
        return PointMaterial(self.kappa[idx], self.mu[idx], self.h[idx], self.mix[idx],
                             self.sigma_y, self.K_iso, self.sigma_inf, self.delta)

    def k(self, alpha):
        a = np.asarray(alpha)[..., None]
        laws = (self.sigma_y + self.K_iso * a
                + (self.sigma_inf - self.sigma_y) * (1.0 - np.exp(-self.delta * a)))
        return np.sum(self.mix * laws, axis=-1)

    def k_prime(self, alpha):
        a = np.asarray(alpha)[..., None]
        laws = self.K_iso + self.delta * (self.sigma_inf - self.sigma_y) * np.exp(-self.delta * a)
        return np.sum(self.mix * laws, axis=-1)

    def linear_mask(self):
        """Points whose blended hardening law is affine in alpha."""
        nonlinear = (self.delta > 0) & (self.sigma_inf != self.sigma_y)
        return ~np.any((self.mix != 0.0) & nonlinear, axis=-1)


@dataclass
class QuadPointState:
    """History variables at every material point."""
    be_bar: np.ndarray
    beta_bar: np.ndarray
    alpha: np.ndarray
    gamma_hat: np.ndarray

    @classmethod
    def virgin(cls, n: int) -> "QuadPointState":
        return cls(np.broadcast_to(T.EYE, (n, 3, 3)).copy(), np.zeros((n, 3, 3)),
                   np.zeros(n), np.zeros(n))

    def copy(self) -> "QuadPointState":
        return QuadPointState(self.be_bar.copy(), self.beta_bar.copy(),
                              self.alpha.copy(), self.gamma_hat.copy())


@dataclass
class TrialState:
    be_bar_tr: np.ndarray
    beta_bar_tr: np.ndarray
    s_tr: np.ndarray
    xi_tr: np.ndarray
    xi_norm: np.ndarray
    n_unit: np.ndarray
    alpha_tr: np.ndarray
    mu_bar_tr: np.ndarray
    mu2_bar_tr: np.ndarray
    f_tr: np.ndarray

    @property
    def plastic(self):
        return self.f_tr > YIELD_TOL


YIELD_TOL = 1e-12


def volumetric_JU(J, kappa):
    """J U'(J) for the volumetric energy."""
    return 0.5 * kappa * (J * J - 1.0)


def trial_state(prev: QuadPointState, F_prev, F_now, mat: PointMaterial) -> TrialState:
    """Elastic predictor: advect ``be`` and ``beta`` with the isochoric relative deformation."""
    f = T.mm(F_now, T.inv(F_prev))
    Jf = T.det(f)
    if not np.all(Jf > 0):
        raise T.DegenerateDeformationError("relative deformation gradient inverts the material")
    fbar = f * (Jf ** (-1.0 / 3.0))[..., None, None]
    be_tr = T.push_forward(prev.be_bar, fbar)
    beta_tr = T.push_forward(prev.beta_bar, fbar)
    mu = mat.mu
    s_tr = mu[..., None, None] * T.dev(be_tr)
    xi = s_tr - T.dev(beta_tr)
    xi_norm = T.norm(xi)
    mu_bar = mu * T.tr(be_tr) / 3.0
    mu2_bar = mu_bar - T.tr(beta_tr) / 3.0
    f_tr = xi_norm - SQ23 * mat.k(prev.alpha)
    small = xi_norm <= 1e-14 * mu
    n = np.where(small[..., None, None], 0.0, xi / np.where(small, 1.0, xi_norm)[..., None, None])
    if np.any(small & (f_tr > YIELD_TOL)):
        raise UndefinedFlowDirection("zero net stress with positive trial yield function",
                                     np.flatnonzero(small & (f_tr > YIELD_TOL)))
    return TrialState(be_tr, beta_tr, s_tr, xi, xi_norm, n, prev.alpha.copy(),
                      mu_bar, mu2_bar, f_tr)


def consistency_function(gamma, trial: TrialState, mat: PointMaterial):
    """G(gamma) and dG/dgamma of the discrete yield condition."""
    kin = 1.0 + mat.h / (3.0 * mat.mu)
    a_new = trial.alpha_tr + SQ23 * gamma
    G = trial.xi_norm - 2.0 * trial.mu2_bar_tr * kin * gamma - SQ23 * mat.k(a_new)
    dG = -2.0 * trial.mu2_bar_tr * kin - (2.0 / 3.0) * mat.k_prime(a_new)
    return G, dG


def _require_positive_mu2(trial, mat):
    bad = trial.mu2_bar_tr <= 0
    if np.any(bad):
        raise AssumptionViolated("non-positive mu2_bar at a plastic point", np.flatnonzero(bad))


def solve_consistency_linear(trial: TrialState, mat: PointMaterial):
    """Closed-form plastic multiplier for affine hardening laws."""
    _require_positive_mu2(trial, mat)
    mu2 = trial.mu2_bar_tr
    K = mat.k_prime(trial.alpha_tr)  # constant for affine laws
    k0 = mat.k(trial.alpha_tr)
    denom = 1.0 + mat.h / (3.0 * mat.mu) + K / (3.0 * mu2)
    return (trial.xi_norm - SQ23 * k0) / (2.0 * mu2 * denom)


def solve_consistency_newton(trial: TrialState, mat: PointMaterial, tol=1e-12, max_iter=50):
    """Newton iteration on G(gamma) = 0 with a bisection safeguard.

    ``tol`` applies to |G| / mu.  G is strictly decreasing, so the bracket
    [0, |xi| / (2 mu2 (1 + h/3mu))] always contains the root.
    """
    _require_positive_mu2(trial, mat)
    kin = 1.0 + mat.h / (3.0 * mat.mu)
    hi = trial.xi_norm / (2.0 * trial.mu2_bar_tr * kin)
    lo = np.zeros_like(hi)
    gamma = np.zeros_like(hi)
    scale = mat.mu
    G, dG = consistency_function(gamma, trial, mat)
    for _ in range(max_iter):
        done = np.abs(G) <= tol * scale
        if np.all(done):
            return gamma
        # maintain the bracket, then take a Newton step or bisect if it leaves it
        lo = np.where(G > 0, gamma, lo)
        hi = np.where(G < 0, gamma, hi)
        step = gamma - G / dG
        outside = ~((step > lo) & (step < hi)) | ~np.isfinite(step)
        step = np.where(outside, 0.5 * (lo + hi), step)
        gamma = np.where(done, gamma, step)
        G, dG = consistency_function(gamma, trial, mat)
    if np.all(np.abs(G) <= tol * scale):
        return gamma
    bad = np.abs(G) > tol * scale
    raise ConsistencyFailure("plastic multiplier did not converge", np.flatnonzero(bad),
                             residual=np.max(np.abs(G[bad])))


def _cubic_invariants(dev_be):
    J2 = 0.5 * T.ddot(dev_be, dev_be)
    J3 = T.det(dev_be)
    return -J2, J3 - 1.0


def cubic_roots_descending(P, Q):
    """The three real roots of t^3 + P t + Q = 0 (P < 0, three-real-root case)."""
    r = 2.0 * np.sqrt(-P / 3.0)
    arg = np.clip((3.0 * Q / (2.0 * P)) * np.sqrt(-3.0 / P), -1.0, 1.0)
    phi = np.arccos(arg) / 3.0
    roots = np.stack([r * np.cos(phi - 2.0 * np.pi * k / 3.0) for k in (1, 2, 3)], axis=-1)
    return -np.sort(-roots, axis=-1)


def enforce_isochoric_I1(dev_be, band=1e-14):
    """First invariant I1 such that det(dev_be + I1/3 I) = 1 with a positive-definite result.

    With t = I1/3 the condition is the depressed cubic t^3 + P t + Q = 0 with
    P = -J2 and Q = J3 - 1.  The branch is chosen by the sign of
    Delta = -(P^3/27 + Q^2/4).
    """
    dev_be = np.asarray(dev_be, float)
    P, Q = _cubic_invariants(dev_be)
    Delta = -(P ** 3 / 27.0 + Q ** 2 / 4.0)
    tol = band * np.maximum(1.0, np.maximum(np.abs(P) ** 3, Q ** 2))
    one_root = Delta < -tol
    double = np.abs(Delta) <= tol
    three = Delta > tol
    t = np.full(np.shape(P), np.nan)

    if np.any(one_root):
        p, q = P[one_root], Q[one_root]
        A = -0.5 * q
        sA = np.where(A >= 0, 1.0, -1.0)
        u = np.cbrt(A + sA * np.sqrt(p ** 3 / 27.0 + q ** 2 / 4.0))
        # the second Cardano term is -P/(3u); avoids cancellation when P -> 0
        t[one_root] = u - p / (3.0 * u)
    if np.any(double):
        p, q = P[double], Q[double]
        with np.errstate(divide="ignore", invalid="ignore"):
            t[double] = np.where(p != 0, np.maximum(3.0 * q / p, -1.5 * q / p), np.cbrt(-q))
    if np.any(three):
        p, q = P[three], Q[three]
        roots = cubic_roots_descending(p, q)
        d3 = dev_be[three]
        s1 = roots[..., 0]
        b11 = d3[..., 0, 0] + s1
        minor = b11 * (d3[..., 1, 1] + s1) - d3[..., 0, 1] * d3[..., 1, 0]
        take_s1 = (q <= 0) | ((b11 > 0) & (minor > 0))
        t[three] = np.where(take_s1, s1, roots[..., 1])

    be = dev_be + t[..., None, None] * T.EYE
    b11 = be[..., 0, 0]
    minor = be[..., 0, 0] * be[..., 1, 1] - be[..., 0, 1] * be[..., 1, 0]
    bad = ~((t > 0) & (b11 > 0) & (minor > 0))
    if np.any(bad):
        raise DegeneratePlasticState("no positive-definite isochoric root", np.flatnonzero(bad))
    return 3.0 * t


@dataclass
class ReturnMapResult:
    state: QuadPointState
    trial: TrialState
    plastic: np.ndarray


def return_map(prev: QuadPointState, F_prev, F_now, mat: PointMaterial,
               isochoric=True, newton_tol=1e-12, newton_max_iter=50) -> ReturnMapResult:
    """Elastic predictor / plastic corrector for all points.

    ``isochoric=False`` reproduces the classical update that keeps the trace
    of the trial ``be`` and therefore lets det(be) drift away from one.
    """
    trial = trial_state(prev, F_prev, F_now, mat)
    plastic = trial.f_tr > YIELD_TOL
    gamma = np.zeros_like(trial.f_tr)
    be = trial.be_bar_tr.copy()
    beta = trial.beta_bar_tr.copy()
    alpha = trial.alpha_tr.copy()
    if np.any(plastic):
        idx = np.flatnonzero(plastic)
        sub_trial = TrialState(*(getattr(trial, f)[idx] for f in trial.__dataclass_fields__))
        sub_mat = mat.take(idx)
        lin = sub_mat.linear_mask()
        g = np.empty(len(idx))
        if np.any(lin):
            li = np.flatnonzero(lin)
            g[li] = solve_consistency_linear(_take_trial(sub_trial, li), sub_mat.take(li))
        if np.any(~lin):
            ni = np.flatnonzero(~lin)
            g[ni] = solve_consistency_newton(_take_trial(sub_trial, ni), sub_mat.take(ni),
                                             tol=newton_tol, max_iter=newton_max_iter)
        gamma[idx] = g
        n = sub_trial.n_unit
        mu2 = sub_trial.mu2_bar_tr
        gn = g[:, None, None] * n
        beta[idx] = sub_trial.beta_bar_tr + (2.0 * sub_mat.h * mu2 / (3.0 * sub_mat.mu))[:, None, None] * gn
        alpha[idx] = sub_trial.alpha_tr + SQ23 * g
        dev_be = T.dev(sub_trial.be_bar_tr) - (2.0 * mu2 / sub_mat.mu)[:, None, None] * gn
        if isochoric:
            I1 = enforce_isochoric_I1(dev_be)
        else:
            I1 = T.tr(sub_trial.be_bar_tr)
        be[idx] = dev_be + (I1 / 3.0)[:, None, None] * T.EYE
    return ReturnMapResult(QuadPointState(be, beta, alpha, gamma), trial, plastic)


def _take_trial(trial: TrialState, idx) -> TrialState:
    return TrialState(*(getattr(trial, f)[idx] for f in trial.__dataclass_fields__))


@dataclass
class StressBundle:
    tau: np.ndarray
    P: np.ndarray
    S: np.ndarray
    J: np.ndarray
    Finv: np.ndarray


def stresses(trial: TrialState, gamma, F_now, mat: PointMaterial) -> StressBundle:
    """Kirchhoff, first and second Piola-Kirchhoff stresses."""
    J = T.det(F_now)
    if not np.all(J > 0):
        raise T.DegenerateDeformationError("det F <= 0")
    Finv = T.inv(F_now, check=False)
    tau = (volumetric_JU(J, mat.kappa)[..., None, None] * T.EYE + trial.s_tr
           - (2.0 * trial.mu2_bar_tr * gamma)[..., None, None] * trial.n_unit)
    P = T.mm(tau, T.transpose(Finv))
    S = T.mm(Finv, P)
    return StressBundle(tau, P, S, J, Finv)


@dataclass
class TangentCoefficients:
    c0: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    c3: np.ndarray
    c4: np.ndarray
    theta: np.ndarray


def tangent_coefficients(trial: TrialState, gamma, mat: PointMaterial) -> TangentCoefficients:
    theta = (trial.f_tr > YIELD_TOL).astype(float)
    mu2 = np.where(theta > 0, trial.mu2_bar_tr, 1.0)
    xn = np.where(theta > 0, trial.xi_norm, 1.0)
    kin = 1.0 + mat.h / (3.0 * mat.mu)
    kp = mat.k_prime(trial.alpha_tr + SQ23 * gamma)
    c0 = kin + kp / (3.0 * mu2)
    c1 = 2.0 * mu2 * gamma / xn
    c2 = 1.0 / c0 - c1
    c3 = 2.0 * c2 * mu2 - (kin / c0 - 1.0) * (4.0 / 3.0) * gamma * xn
    c4 = 2.0 * c2 * xn
    z = theta > 0
    return TangentCoefficients(*(np.where(z, c, 0.0) for c in (c0, c1, c2, c3, c4)), theta)


def spatial_moduli(trial: TrialState, gamma, J, mat: PointMaterial, symmetric=False):
    """Spatial algorithmic moduli c acting on U = grad(du) F^-1.

    Satisfies V : c : U equal to the tangent integrand without the geometric
    term.  ``symmetric=True`` uses the symmetrized last term, which restores
    major symmetry at the price of exact consistency for non-proportional
    plastic flow; the default keeps the consistent unsymmetric form.
    """
    cf = tangent_coefficients(trial, gamma, mat)
    I = T.EYE
    JU = volumetric_JU(J, mat.kappa)
    JJU = mat.kappa * J * J  # J (J U')'
    mu_bar = trial.mu_bar_tr
    mu2 = trial.mu2_bar_tr
    th = cf.theta
    a1 = 2.0 * mu_bar - 2.0 * th * cf.c1 * mu2 - 2.0 * JU
    a2 = JJU - 2.0 * mu_bar / 3.0 + 2.0 * th * cf.c1 * mu2 / 3.0
    s = trial.s_tr
    xi = trial.xi_tr
    n = trial.n_unit
    d = T.dev(T.mm(n, n))
    # grouped as a1 Isym + X (x) I + I (x) Y + n (x) Z to limit fourth-order temporaries
    w1 = (2.0 * th * cf.c1 / 3.0)[..., None, None]
    Y = w1 * xi - (2.0 / 3.0) * s
    X = Y + a2[..., None, None] * I
    c = a1[..., None, None, None, None] * T.sym_identity4() + T.outer(X, I) + T.outer(I, Y)
    w3 = (th * cf.c3)[..., None, None]
    w4 = (th * cf.c4)[..., None, None]
    if symmetric:
        c = c - T.outer(n, w3 * n + 0.5 * w4 * d) - T.outer(0.5 * w4 * d, n)
    else:
        c = c - T.outer(n, w3 * n + w4 * d)
    return c


def first_moduli(trial: TrialState, gamma, F_now, mat: PointMaterial, bundle: StressBundle = None,
                 symmetric=False):
    """First algorithmic moduli A with dP_iJ = A_iJkL dF_kL."""
    if bundle is None:
        bundle = stresses(trial, gamma, F_now, mat)
    c = spatial_moduli(trial, gamma, bundle.J, mat, symmetric=symmetric)
    Fi = bundle.Finv
    FiT = T.transpose(Fi)[..., None, None, :, :]
    # contract the fourth, then the second leg of c with F^-T
    A = np.matmul(c, FiT)  # (..., i, j, k, L)
    A = np.swapaxes(np.matmul(np.swapaxes(A, -1, -3), FiT), -1, -3)  # (..., i, J, k, L)
    A = A + T.EYE[:, None, :, None] * bundle.S[..., None, :, None, :]
    return A


def second_moduli(trial: TrialState, gamma, F_now, mat: PointMaterial, symmetric=True):
    """Material (second) algorithmic moduli C = dS/dE."""
    J = T.det(F_now)
    Fi = T.inv(F_now)
    c = spatial_moduli(trial, gamma, J, mat, symmetric=symmetric)
    return np.einsum("...Ii,...Jj,...ijkl,...Kk,...Ll->...IJKL", Fi, Fi, c, Fi, Fi, optimize=True)


def linear_moduli(kappa, mu):
    """Small-strain isotropic moduli kappa I(x)I + 2 mu (Isym - 1/3 I(x)I)."""
    I = T.EYE
    II = np.einsum("ij,kl->ijkl", I, I)
    kappa = np.asarray(kappa)[..., None, None, None, None]
    mu = np.asarray(mu)[..., None, None, None, None]
    return kappa * II + 2.0 * mu * (T.sym_identity4() - II / 3.0)


def linear_stress(eps, kappa, mu):
    """sigma_l = kappa tr(eps) I + 2 mu dev(eps)."""
    return (np.asarray(kappa) * T.tr(eps))[..., None, None] * T.EYE + 2.0 * np.asarray(mu)[..., None, None] * T.dev(eps)


def small_strain(F):
    return T.sym(F) - T.EYE
