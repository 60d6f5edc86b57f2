"""Global assembly and the incremental Newton solver with line search and adaptive loading."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import constitutive as C
from . import tensors as T
from .design import MaterialField, interp_moduli, interp_stress_and_moduli
from .mesh import LoadProgram, Mesh, Quadrature, Stage, external_force, quadrature_and_gradients

log = logging.getLogger(__name__)


class AnalysisFailure(RuntimeError):
    """Adaptive loading exhausted its tries; ``t_conv`` is the last converged time of ``stage``."""

    def __init__(self, msg, stage=None, t_conv=None):
        super().__init__(msg)
        self.stage = stage
        self.t_conv = t_conv


# minimum-degree ordering on the structure of K + K^T: less fill than COLAMD for FE stiffness patterns
LU_ORDERING = "MMD_AT_PLUS_A"


@dataclass
class SolverSettings:
    max_iter: int = 30
    eps_abs: float = 1e-12
    eps_rel: float = 1e-8
    n_search: int = 8
    eps_search: float = 1.0
    n_try: int = 12
    # residuals below this multiple of the summed element-force magnitude count as converged
    floor_rel: float = 1e-12
    isochoric: bool = True

    def __post_init__(self):
        if min(self.eps_abs, self.eps_rel, self.eps_search) <= 0 or self.eps_search > 1:
            raise ValueError("tolerances must be positive and eps_search <= 1")
        if min(self.max_iter, self.n_search) < 1 or self.n_try < 0:
            raise ValueError("max_iter and n_search must be >= 1 and n_try >= 0")


class SparseAssembler:
    """Fixed CSR pattern for element matrices; values are summed in element order."""

    def __init__(self, element_dofs, n_dofs):
        ed = np.asarray(element_dofs)
        n_e = ed.shape[1]
        rows = np.repeat(ed, n_e, axis=1).ravel()
        cols = np.tile(ed, (1, n_e)).ravel()
        keys = rows.astype(np.int64) * n_dofs + cols
        uniq, self.inverse = np.unique(keys, return_inverse=True)
        self.indices = (uniq % n_dofs).astype(np.int32)
        self.indptr = np.searchsorted(uniq // n_dofs, np.arange(n_dofs + 1)).astype(np.int32)
        self.n = n_dofs
        self.nnz = len(uniq)

    def matrix(self, element_matrices):
        data = np.bincount(self.inverse, weights=np.asarray(element_matrices).ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))


class Model:
    """Mesh, quadrature and per-point material data of one design."""

    def __init__(self, mesh: Mesh, field: MaterialField, quad: Quadrature = None, isochoric=True):
        self.mesh = mesh
        self.quad = quad or quadrature_and_gradients(mesh)
        self.nqp = self.quad.n_qp
        self.n_pt = mesh.n_elements * self.nqp
        self.edofs = mesh.element_dofs
        self.assembler = SparseAssembler(self.edofs, mesh.n_dofs)
        # gradient components that can be nonzero (4 of 9 in plane strain)
        self.active = np.flatnonzero(np.any(self.quad.B != 0, axis=(0, 1, 3)))
        self._B = np.ascontiguousarray(self.quad.B[:, :, self.active, :])
        self._Bt_w = np.ascontiguousarray(np.swapaxes(self._B, -1, -2) * self.quad.weights[..., None, None])
        self.isochoric = isochoric
        self.set_field(field)

    def set_field(self, field: MaterialField):
        self.field = field
        self.pmat = field.point_material(self.nqp)
        self.phi = field.point_phi(self.nqp)
        # nodal force produced by a stress of modulus size: stresses carry round-off of
        # order eps_mach times the moduli however small the strain is
        modulus = (self.pmat.kappa + self.pmat.mu).reshape(self.mesh.n_elements, self.nqp, 1, 1)
        fe_mod = (np.abs(self._Bt_w) * modulus).sum(axis=(1, 3))
        self._modulus_scale = float(np.linalg.norm(
            np.bincount(self.edofs.ravel(), weights=fe_mod.ravel(), minlength=self.mesh.n_dofs)))

    @property
    def point_weights(self):
        return self.quad.weights.ravel()

    def grad_u(self, U):
        g = np.einsum("eqij,ej->eqi", self.quad.B, U[self.edofs])
        return g.reshape(self.n_pt, 3, 3)

    def response(self, U_now, U_prev, prev_state, tangent=True):
        return interp_stress_and_moduli(self.phi, self.grad_u(U_now), self.grad_u(U_prev), prev_state,
                                        self.pmat, tangent=tangent, isochoric=self.isochoric)

    def moduli(self, resp):
        """Consistent moduli of a response computed without them."""
        if resp.A is None:
            interp_moduli(self.phi, resp, self.pmat)
        return resp.A

    def internal_force(self, P, with_scale=False):
        P9 = P.reshape(self.mesh.n_elements, self.nqp, 9)[:, :, self.active, None]
        fe = np.matmul(self._Bt_w, P9)[..., 0].sum(axis=1)
        f = np.bincount(self.edofs.ravel(), weights=fe.ravel(), minlength=self.mesh.n_dofs)
        if not with_scale:
            return f
        # magnitude of the summed element contributions plus the stress round-off floor
        # (1e-4 of the modulus-size force, i.e. about 1e-16 relative after floor_rel)
        scale = np.bincount(self.edofs.ravel(), weights=np.abs(fe).ravel(), minlength=self.mesh.n_dofs)
        return f, float(np.linalg.norm(scale)) + 1e-4 * self._modulus_scale

    def tangent(self, A):
        act = self.active
        A9 = A.reshape(self.mesh.n_elements, self.nqp, 9, 9)[:, :, act[:, None], act]
        Ke = np.matmul(np.matmul(self._Bt_w, A9), self._B).sum(axis=1)
        return self.assembler.matrix(Ke)


@dataclass
class StepLog:
    iterations: int
    residuals: list  # absolute residual per Newton iterate, starting with a^(0)
    line_searches: int  # Newton iterations in which the step was shortened
    step_lengths: list
    converged: bool


@dataclass
class StateHistory:
    """Committed load steps; index 0 is the initial (or inherited) state."""
    U: list = field(default_factory=list)
    states: list = field(default_factory=list)
    P: list = field(default_factory=list)  # interpolated stress per point
    f_int: list = field(default_factory=list)
    plastic: list = field(default_factory=list)  # converged branch flag per point (theta)
    times: list = field(default_factory=list)  # stage-local time
    stage: list = field(default_factory=list)
    u_applied: list = field(default_factory=list)  # amplitude of the prescribed displacement
    logs: list = field(default_factory=list)
    constrained: list = field(default_factory=list)  # constrained dofs active at each step

    def __len__(self):
        return len(self.U)

    @property
    def n_steps(self):
        return len(self.U) - 1

    def append(self, U, state, P, f_int, plastic, t, stage, u_app, slog, cdofs):
        self.U.append(U)
        self.states.append(state)
        self.P.append(P)
        self.f_int.append(f_int)
        self.plastic.append(plastic)
        self.times.append(t)
        self.stage.append(stage)
        self.u_applied.append(u_app)
        self.logs.append(slog)
        self.constrained.append(cdofs)


def _unique_constraints(dofs, values):
    dofs, first = np.unique(dofs, return_index=True)
    return dofs, values[first]


@dataclass
class StepContext:
    """Loads of one trial step: constrained dofs, their target values and the external force."""
    cdofs: np.ndarray
    cvals: np.ndarray
    free: np.ndarray
    f_ext: np.ndarray


def stage_context(model: Model, stage: Stage, f_unit, U_start, t) -> StepContext:
    dim = model.mesh.dim
    cd, cv = _unique_constraints(stage.constrained(dim), stage.prescribed(dim, t))
    cv = U_start[cd] + cv
    free = np.setdiff1d(np.arange(model.mesh.n_dofs), cd)
    return StepContext(cd, cv, free, stage.amplitude(t) * f_unit)


def assemble_residual(model: Model, ctx: StepContext, U, U_prev, prev_state, tangent=False):
    """Out-of-balance force f_ext - f_int and its norm over the free dofs."""
    resp = model.response(U, U_prev, prev_state, tangent=tangent)
    f_int, scale = model.internal_force(resp.P, with_scale=True)
    resp.force_scale = scale
    r = ctx.f_ext - f_int
    return r, float(np.linalg.norm(r[ctx.free])), f_int, resp


def assemble_tangent(model: Model, resp) -> sp.csr_matrix:
    return model.tangent(model.moduli(resp))


def _solve(K, r, ctx: StepContext, du_c):
    free, cd = ctx.free, ctx.cdofs
    du = np.zeros(K.shape[0])
    du[cd] = du_c
    rhs = r[free]
    if np.any(du_c):
        rhs = rhs - K[free][:, cd] @ du_c
    Kff = K[free][:, free].tocsc()
    du[free] = spla.splu(Kff, permc_spec=LU_ORDERING).solve(rhs)
    return du


class _Diverged(Exception):
    pass


def newton_solve_step(model: Model, ctx: StepContext, U_prev, prev_state, settings: SolverSettings):
    """Solve one load step starting from the previous converged displacement.

    Returns (U, response, f_int, StepLog); raises _Diverged when Newton fails.
    """
    U = U_prev.copy()
    try:
        r, a, f_int, resp = assemble_residual(model, ctx, U, U_prev, prev_state)
    except (C.ConstitutiveError, T.DegenerateDeformationError) as exc:
        raise _Diverged(str(exc)) from exc
    residuals, lengths, n_ls = [a], [], 0
    gap = ctx.cvals - U[ctx.cdofs]
    def floor(resp):
        return max(settings.eps_abs, settings.floor_rel * (resp.force_scale + np.linalg.norm(ctx.f_ext)))

    if not np.any(gap) and a <= floor(resp):
        return U, resp, f_int, StepLog(0, residuals, 0, [], True)
    a_ref = None
    for k in range(settings.max_iter):
        K = assemble_tangent(model, resp)
        du_c = ctx.cvals - U[ctx.cdofs]
        try:
            du = _solve(K, r, ctx, du_c)
        except RuntimeError as exc:  # singular factorization
            raise _Diverged(f"linear solve failed: {exc}") from exc
        if not np.all(np.isfinite(du)):
            raise _Diverged("non-finite Newton increment")
        # the line search compares residuals of equal boundary data, so it waits until the
        # prescribed values have been imposed by a full step
        search = not np.any(du_c)
        length, best = 1.0, None
        for s in range(settings.n_search if search else 1):
            trial_U = U + length * du
            try:
                out = assemble_residual(model, ctx, trial_U, U_prev, prev_state)
            except (C.ConstitutiveError, T.DegenerateDeformationError):
                out = None
            if out is not None and np.isfinite(out[1]):
                if best is None or out[1] < best[1][1]:
                    best = (length, out, trial_U)
                if not search or out[1] < settings.eps_search * a:
                    break
            length *= 0.5
        if best is None:
            raise _Diverged("no admissible step length")
        length, (r, a, f_int, resp), U = best
        if length < 1.0:
            n_ls += 1
        lengths.append(length)
        residuals.append(a)
        if a_ref is None:
            a_ref = a
        if a <= floor(resp) or (a_ref > 0 and a / a_ref <= settings.eps_rel):
            return U, resp, f_int, StepLog(k + 1, residuals, n_ls, lengths, True)
    raise _Diverged(f"no convergence in {settings.max_iter} iterations (residual {a:.3e})")


def run_analysis(model: Model, program: LoadProgram, settings: SolverSettings = None,
                 U0=None, state0: C.QuadPointState = None, callback=None) -> StateHistory:
    """Algorithm of staged incremental loading with bisection of failed increments."""
    settings = settings or SolverSettings()
    model.isochoric = settings.isochoric
    n_dofs = model.mesh.n_dofs
    U = np.zeros(n_dofs) if U0 is None else np.asarray(U0, float).copy()
    state = C.QuadPointState.virgin(model.n_pt) if state0 is None else state0.copy()
    hist = StateHistory()
    P0 = model.response(U, U, state, tangent=False).P
    hist.append(U.copy(), state.copy(), P0, model.internal_force(P0), np.zeros(model.n_pt, bool),
                0.0, 0, 0.0, StepLog(0, [], 0, [], True), np.zeros(0, int))
    for si, stage in enumerate(program.stages):
        f_unit = external_force(model.mesh, model.quad, stage)
        U_start = U.copy()
        t_conv = 0.0
        for t_target in stage.times:
            t_now, tries = t_target, 0
            while t_conv < t_target:
                ctx = stage_context(model, stage, f_unit, U_start, t_now)
                try:
                    U_new, resp, f_int, slog = newton_solve_step(model, ctx, U, state, settings)
                except _Diverged as exc:
                    if tries >= settings.n_try:
                        raise AnalysisFailure(f"stage {si}: step to t={t_now:.6g} failed after "
                                              f"{tries} bisections ({exc})", si, t_conv) from exc
                    log.info("stage %d: t=%.6g diverged (%s); bisecting", si, t_now, exc)
                    t_now = 0.5 * (t_conv + t_now)
                    tries += 1
                    continue
                U, state = U_new, resp.result.state
                hist.append(U.copy(), state.copy(), resp.P, f_int, resp.result.plastic.copy(), t_now, si,
                            stage.amplitude(t_now), slog, ctx.cdofs)
                log.debug("stage %d t=%.6g iters=%d ls=%d", si, t_now, slog.iterations, slog.line_searches)
                if callback is not None:
                    callback(hist)
                t_conv, t_now, tries = t_now, t_target, 0
    return hist


def reaction_force(hist: StateHistory, model: Model, nodes, direction, steps=None):
    """Sum of internal forces over constrained dofs of ``nodes`` in ``direction`` per step."""
    dofs = np.asarray(nodes) * model.mesh.dim + direction
    steps = range(len(hist)) if steps is None else steps
    out = []
    for n in steps:
        if n > 0 and not np.all(np.isin(dofs, hist.constrained[n])):
            raise ValueError(f"reaction requested on unconstrained dofs at step {n}")
        out.append(float(hist.f_int[n][dofs].sum()))
    return np.array(out)
