"""Reversed adjoint sensitivities of path-dependent responses.

Every material point carries the local unknowns z = (be (6), beta (6), alpha,
gamma) per step.  The per-point residuals

    r_be    = be - dev(be_tr) + (2 mu2/mu) gamma n - I1/3 I   (plastic points)
    r_be    = be - be_tr                                    (elastic points)
    r_beta  = beta - beta_tr - (2 h mu2 / 3 mu) gamma n
    r_alpha = alpha - alpha_old - sqrt(2/3) gamma
    r_gamma = gamma G(gamma)

and the interpolated stress are differentiated with forward-mode automatic
differentiation; the global residual is assembled from the stress.  The
plastic/elastic branch of each point is frozen at its converged value.
"""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

import jax
import jax.numpy as jnp

from .objectives import objective_partials
from .solver import LU_ORDERING

jax.config.update("jax_enable_x64", True)
log = logging.getLogger(__name__)

_SQ23 = np.sqrt(2.0 / 3.0)
_ROWS = np.array([0, 0, 0, 1, 1, 2])
_COLS = np.array([0, 1, 2, 1, 2, 2])
NZ = 14  # local unknowns per point
NP = 9  # stress components


class AdjointError(RuntimeError):
    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


def _sym(v):
    return jnp.array([[v[0], v[1], v[2]], [v[1], v[3], v[4]], [v[2], v[4], v[5]]])


def _vec(t):
    return jnp.array([t[0, 0], t[0, 1], t[0, 2], t[1, 1], t[1, 2], t[2, 2]])


def _dev(t):
    return t - jnp.trace(t) / 3.0 * jnp.eye(3)


def _det(t):
    return (t[0, 0] * (t[1, 1] * t[2, 2] - t[1, 2] * t[2, 1])
            - t[0, 1] * (t[1, 0] * t[2, 2] - t[1, 2] * t[2, 0])
            + t[0, 2] * (t[1, 0] * t[2, 1] - t[1, 1] * t[2, 0]))


def _inv(t):
    """Closed-form 3x3 inverse (cheaper than a batched LU under vmap)."""
    cof = jnp.array([[t[1, 1] * t[2, 2] - t[1, 2] * t[2, 1], t[1, 2] * t[2, 0] - t[1, 0] * t[2, 2],
                      t[1, 0] * t[2, 1] - t[1, 1] * t[2, 0]],
                     [t[0, 2] * t[2, 1] - t[0, 1] * t[2, 2], t[0, 0] * t[2, 2] - t[0, 2] * t[2, 0],
                      t[0, 1] * t[2, 0] - t[0, 0] * t[2, 1]],
                     [t[0, 1] * t[1, 2] - t[0, 2] * t[1, 1], t[0, 2] * t[1, 0] - t[0, 0] * t[1, 2],
                      t[0, 0] * t[1, 1] - t[0, 1] * t[1, 0]]])
    return cof.T / _det(t)


def _local_kernel(x, plastic, laws):
    """Residuals (14) and interpolated stress (9) of one point; ``x`` packs all inputs."""
    sig_y, K_iso, sig_inf, delta = laws
    M = sig_y.shape[0]
    z1, z0 = x[:NZ], x[NZ:2 * NZ]
    H1 = x[2 * NZ:2 * NZ + 9].reshape(3, 3)
    H0 = x[2 * NZ + 9:2 * NZ + 18].reshape(3, 3)
    m = x[2 * NZ + 18:]
    kappa, mu, h = m[0], m[1], m[2]
    mix, phi = m[3:3 + M], m[3 + M]
    I = jnp.eye(3)

    be1, beta1, alpha1, gamma = _sym(z1[:6]), _sym(z1[6:12]), z1[12], z1[13]
    be0, beta0, alpha0 = _sym(z0[:6]), _sym(z0[6:12]), z0[12]

    F1 = I + phi * H1
    F0 = I + phi * H0
    f = F1 @ _inv(F0)
    fbar = f * _det(f) ** (-1.0 / 3.0)
    be_tr = fbar @ be0 @ fbar.T
    beta_tr = fbar @ beta0 @ fbar.T
    s = mu * _dev(be_tr)
    xi = s - _dev(beta_tr)
    sq = jnp.sum(xi * xi)
    pos = sq > 0
    nrm = jnp.where(pos, jnp.sqrt(jnp.where(pos, sq, 1.0)), 0.0)
    n = xi / jnp.where(pos, nrm, 1.0)
    mu2 = mu * jnp.trace(be_tr) / 3.0 - jnp.trace(beta_tr) / 3.0

    def k(a):
        return jnp.sum(mix * (sig_y + K_iso * a + (sig_inf - sig_y) * (1.0 - jnp.exp(-delta * a))))

    G = nrm - 2.0 * mu2 * (1.0 + h / (3.0 * mu)) * gamma - _SQ23 * k(alpha0 + _SQ23 * gamma)
    r_gamma = gamma * G
    r_alpha = alpha1 - alpha0 - _SQ23 * gamma
    r_beta = beta1 - beta_tr - (2.0 * h * mu2 / (3.0 * mu)) * gamma * n

    # isochoric corrector: t = I1/3 solves t^3 - J2 t + det(A) - 1 = 0; one Newton step from the
    # converged root gives the exact value and the implicit derivative
    A = _dev(be_tr) - (2.0 * mu2 / mu) * gamma * n
    Pc = -0.5 * jnp.sum(A * A)
    Qc = _det(A) - 1.0
    t0 = jax.lax.stop_gradient(jnp.trace(be1) / 3.0)
    t = t0 - (t0 ** 3 + Pc * t0 + Qc) / (3.0 * t0 ** 2 + Pc)
    r_be = jnp.where(plastic, be1 - A - t * I, be1 - be_tr)

    J = _det(F1)
    tau = 0.5 * kappa * (J * J - 1.0) * I + s - 2.0 * mu2 * gamma * n
    P_hat = tau @ _inv(F1).T

    def sig_l(eps):
        return kappa * jnp.trace(eps) * I + 2.0 * mu * _dev(eps)

    eps_full = 0.5 * (H1 + H1.T)
    P_check = phi * (P_hat - sig_l(phi * eps_full)) + sig_l(eps_full)
    return jnp.concatenate([_vec(r_be), _vec(r_beta), jnp.array([r_alpha, r_gamma]), P_check.ravel()])


_kernel_batch = jax.jit(jax.vmap(_local_kernel, in_axes=(0, 0, None)))
_jac_batch = jax.jit(jax.vmap(jax.jacfwd(_local_kernel), in_axes=(0, 0, None)))


def _split_kernel(cur, rest, plastic, laws):
    """Kernel with inputs split into this step's unknowns cur = (z1, H1) and rest = (z0, H0, m)."""
    x = jnp.concatenate([cur[:NZ], rest[:NZ], cur[NZ:], rest[NZ:]])
    return _local_kernel(x, plastic, laws)


def _rest_vjp(cur, rest, plastic, laws, ct):
    return jax.vjp(lambda r: _split_kernel(cur, r, plastic, laws), rest)[1](ct)[0]


# the sweep needs full Jacobian blocks only in this step's unknowns; the blocks in the previous
# step's unknowns and in the material constants are only ever contracted with multipliers
_jac_cur_batch = jax.jit(jax.vmap(jax.jacfwd(_split_kernel), in_axes=(0, 0, 0, None)))
_rest_vjp_batch = jax.jit(jax.vmap(_rest_vjp, in_axes=(0, 0, 0, None, 0)))


def _split_inputs(x):
    cur = np.concatenate([x[:, :NZ], x[:, 2 * NZ:2 * NZ + 9]], axis=1)
    rest = np.concatenate([x[:, NZ:2 * NZ], x[:, 2 * NZ + 9:]], axis=1)
    return jnp.asarray(cur), jnp.asarray(rest)


def pack_state(state):
    be = state.be_bar[:, _ROWS, _COLS]
    beta = state.beta_bar[:, _ROWS, _COLS]
    return np.concatenate([be, beta, state.alpha[:, None], state.gamma_hat[:, None]], axis=1)


def point_constants(model):
    pm = model.pmat
    return np.column_stack([pm.kappa, pm.mu, pm.h, pm.mix, model.phi])


def material_laws(model):
    pm = model.pmat
    return tuple(jnp.asarray(np.broadcast_to(a, (pm.mix.shape[1],)).astype(float))
                 for a in (pm.sigma_y, pm.K_iso, pm.sigma_inf, pm.delta))


@dataclass
class ResidualPartials:
    """Jacobian blocks of one step, split by argument; rows are (r_loc (14), P (9))."""
    d_z1: np.ndarray  # (n_pt, 23, 14)
    d_z0: np.ndarray
    d_H1: np.ndarray  # (n_pt, 23, 9)
    d_H0: np.ndarray
    d_m: np.ndarray  # (n_pt, 23, n_m)
    values: np.ndarray  # (n_pt, 23)


def step_inputs(hist, model, n):
    z1 = pack_state(hist.states[n])
    z0 = pack_state(hist.states[n - 1])
    H1 = model.grad_u(hist.U[n]).reshape(-1, 9)
    H0 = model.grad_u(hist.U[n - 1]).reshape(-1, 9)
    return np.concatenate([z1, z0, H1, H0, point_constants(model)], axis=1)


def residual_partials(hist, model, n, with_values=False) -> ResidualPartials:
    if n < 1 or n >= len(hist):
        raise AdjointError(f"no committed step {n} in history", n)
    x = jnp.asarray(step_inputs(hist, model, n))
    plastic = jnp.asarray(hist.plastic[n])
    laws = material_laws(model)
    Jx = np.asarray(_jac_batch(x, plastic, laws))
    vals = np.asarray(_kernel_batch(x, plastic, laws)) if with_values else None
    o = 2 * NZ
    return ResidualPartials(Jx[:, :, :NZ], Jx[:, :, NZ:o], Jx[:, :, o:o + 9], Jx[:, :, o + 9:o + 18],
                            Jx[:, :, o + 18:], vals)


def local_residuals(hist, model, n):
    x = jnp.asarray(step_inputs(hist, model, n))
    return np.asarray(_kernel_batch(x, jnp.asarray(hist.plastic[n]), material_laws(model)))


def _scatter_points(model, vec9):
    """sum_p B_p^T v_p for per-point 9-vectors (no quadrature weight)."""
    v = vec9.reshape(model.mesh.n_elements, model.nqp, 9)
    fe = np.einsum("eqia,eqi->ea", model.quad.B, v)
    return np.bincount(model.edofs.ravel(), weights=fe.ravel(), minlength=model.mesh.n_dofs)


@dataclass
class AdjointStep:
    lam_loc: np.ndarray  # (n_pt, 14) multipliers of (r_be, r_beta, r_alpha, r_gamma)
    lam_u: np.ndarray  # (n_dofs,)
    stress_weight: np.ndarray  # (n_pt, 9): w B lam_u + dJ/dP
    residual: float  # relative residual of the transposed global system


def _stage_starts(hist):
    """Index of the last step of the previous stage for every step (None in the first stage)."""
    out, last_of = [None] * len(hist), {}
    for n in range(1, len(hist)):
        s = hist.stage[n]
        if s not in last_of:
            last_of[s] = n - 1
        out[n] = last_of[s] if s > 0 else None
    return out


def adjoint_sweep(hist, model, cP, cH, keep=False):
    """Reverse sweep N -> 1.  Returns (design gradient per point constant, list of AdjointStep)."""
    N = hist.n_steps
    n_pt, n_dofs = model.n_pt, model.mesh.n_dofs
    w = model.point_weights
    starts = _stage_starts(hist)
    carry = np.zeros((N + 1, n_dofs))
    laws = material_laws(model)
    grad_m = None
    # contractions of step n+1's multipliers with its partials in (z_n, H_n)
    cz_next = np.zeros((n_pt, NZ))
    cH_next = np.zeros((n_pt, 9))
    steps = [None] * (N + 1)
    for n in range(N, 0, -1):
        cur, rest = _split_inputs(step_inputs(hist, model, n))
        plastic_j = jnp.asarray(hist.plastic[n])
        Jc = np.asarray(_jac_cur_batch(cur, rest, plastic_j, laws))
        d_z1, d_H1 = Jc[:, :, :NZ], Jc[:, :, NZ:]
        cz = cz_next
        cHn = cH[n].reshape(n_pt, 9) + cH_next
        lam = np.zeros((n_pt, NZ))
        lam[:, :13] = -cz[:, :13]  # r_be, r_beta, r_alpha have identity blocks in their own unknowns
        # gamma equation: d lam_g + a + p . (w B lam_u + cP) = 0
        a = np.einsum("pr,pr->p", lam[:, :13], d_z1[:, :13, 13]) + cz[:, 13]
        p_g = d_z1[:, NZ:, 13]  # dP/dgamma (n_pt, 9)
        d = d_z1[:, 13, 13]
        q = d_H1[:, 13, :]  # d r_gamma / dH
        plastic = hist.plastic[n]
        d_safe = np.where(d != 0, d, 1.0)
        A_p = d_H1[:, NZ:, :]  # dP/dH at fixed gamma
        A_c = A_p - np.where(plastic[:, None, None], p_g[:, :, None] * q[:, None, :] / d_safe[:, None, None], 0.0)
        cPn = cP[n].reshape(n_pt, 9)
        # explicit part of the displacement equation per point
        e_pt = (np.einsum("pij,pi->pj", A_c, cPn) + np.einsum("pr,prh->ph", lam[:, :13], d_H1[:, :13, :])
                - np.where(plastic[:, None], q * (a / d_safe)[:, None], 0.0) + cHn)
        e = _scatter_points(model, e_pt) + carry[n]
        cdofs = hist.constrained[n]
        free = np.setdiff1d(np.arange(n_dofs), cdofs)
        K = model.tangent(A_c.reshape(n_pt, 3, 3, 3, 3))
        KT = K.T.tocsr()
        Kff = KT[free][:, free].tocsc()
        lam_u = np.zeros(n_dofs)
        try:
            lam_u[free] = spla.splu(Kff, permc_spec=LU_ORDERING).solve(-e[free])
        except RuntimeError as exc:
            raise AdjointError(f"singular adjoint system at step {n}: {exc}", n) from exc
        res = np.linalg.norm(Kff @ lam_u[free] + e[free]) / max(np.linalg.norm(e[free]), 1e-300)
        # multipliers of the stage-relative Dirichlet values feed the stage's starting displacement
        s0 = starts[n]
        if s0 is not None and len(cdofs):
            lam_c = -(e[cdofs] + KT[cdofs][:, free] @ lam_u[free])
            np.subtract.at(carry[s0], cdofs, lam_c)
        gB = model.grad_u(lam_u).reshape(n_pt, 9) * w[:, None]
        sw = gB + cPn
        lam[:, 13] = -(a + np.einsum("pi,pi->p", p_g, sw)) / d_safe
        ad = AdjointStep(lam, lam_u, sw, res)
        mult = np.concatenate([lam, sw], axis=1)
        v = np.asarray(_rest_vjp_batch(cur, rest, plastic_j, laws, jnp.asarray(mult)))
        cz_next, cH_next = v[:, :NZ], v[:, NZ:NZ + 9]
        if grad_m is None:
            grad_m = np.zeros((n_pt, v.shape[1] - NZ - 9))
        grad_m += v[:, NZ + 9:]
        if keep:
            steps[n] = ad
    return grad_m, steps


def total_sensitivity(hist, model, weights, interp, proj, design, catalog):
    """dJ/d(rho_bar, xi_bar) per element for objective weights ``weights``."""
    from .design import material_field_derivatives
    cP, cH = objective_partials(hist, model, weights)
    grad_m, _ = adjoint_sweep(hist, model, cP, cH)
    g_el = grad_m.reshape(model.mesh.n_elements, model.nqp, -1).sum(axis=1)
    d_rho, d_xi = material_field_derivatives(design.rho_bar, design.xi_bar, catalog, interp, proj)
    return np.einsum("em,em->e", g_el, d_rho), np.einsum("em,emn->en", g_el, d_xi)


# -- finite-difference verification -------------------------------------------

@dataclass
class FDSample:
    function: str
    family: str
    index: int
    analytic: float
    fd: float

    @property
    def abs_err(self):
        return abs(self.analytic - self.fd)

    @property
    def rel_err(self):
        scale = max(abs(self.analytic), abs(self.fd))
        return self.abs_err / scale if scale > 0 else 0.0


@dataclass
class FDReport:
    samples: list
    flagged: list  # samples where the perturbed runs changed branch or failed

    def errors(self, function=None):
        s = [x for x in self.samples if function is None or x.function == function]
        return np.array([x.abs_err for x in s]), np.array([x.rel_err for x in s])

    def summary(self):
        out = {}
        for f in sorted({x.function for x in self.samples}):
            a, r = self.errors(f)
            out[f] = {"max_abs": float(a.max()), "median_abs": float(np.median(a)),
                      "max_rel": float(r.max()), "median_rel": float(np.median(r))}
        return out

    def passed(self, tol=1e-4):
        _, r = self.errors()
        return bool(len(r)) and float(r.max()) <= tol

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["sample", "function", "family", "element", "analytic", "fd", "abs_err", "rel_err"])
            for i, s in enumerate(self.samples):
                w.writerow([i, s.function, s.family, s.index, f"{s.analytic:.16e}", f"{s.fd:.16e}",
                            f"{s.abs_err:.6e}", f"{s.rel_err:.6e}"])


def stratified_samples(rng, n_el, families, per_family):
    """Element indices spread over the mesh: one random pick from each of ``per_family`` strata."""
    out = []
    edges = np.linspace(0, n_el, per_family + 1).astype(int)
    for fam in families:
        for lo, hi in zip(edges[:-1], edges[1:]):
            if hi > lo:
                out.append((fam, int(rng.integers(lo, hi))))
    return out


def fd_verify(evaluate, gradients, x_rho, x_xi, samples, eps=1e-6, central=True):
    """Compare analytic raw-variable gradients against finite differences.

    ``evaluate(rho, xi)`` returns (dict of function values, branch signature);
    ``gradients`` maps function name -> (g_rho, g_xi).  Samples whose
    perturbed runs change the plastic branch pattern or fail are flagged and
    left out of the error statistics.
    """
    base, sig0 = evaluate(x_rho, x_xi)
    rows, flagged = [], []
    for fam, idx in samples:
        def shifted(h):
            r, x = x_rho.copy(), x_xi.copy()
            if fam == "rho":
                r[idx] += h
            else:
                x[idx, int(fam[2:]) - 1] += h
            return evaluate(r, x)

        try:
            fp, sp_ = shifted(eps)
            fm, sm = shifted(-eps) if central else (base, sig0)
        except Exception as exc:  # a perturbed analysis failed; report, do not count
            log.warning("FD sample %s[%d] failed: %s", fam, idx, exc)
            flagged.append((fam, idx, str(exc)))
            continue
        if sp_ != sig0 or sm != sig0:
            flagged.append((fam, idx, "plastic branch changed under perturbation"))
            continue
        for name in base:
            g_rho, g_xi = gradients[name]
            an = g_rho[idx] if fam == "rho" else g_xi[idx, int(fam[2:]) - 1]
            fd = (fp[name] - fm[name]) / (2 * eps if central else eps)
            rows.append(FDSample(name, fam, idx, float(an), float(fd)))
    return FDReport(rows, flagged)
