"""Raw design -> physical fields -> analysis -> objective, constraints and raw gradients."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from . import adjoint, design as D
from .materials import MaterialCatalog
from .mesh import LoadProgram, Mesh, quadrature_and_gradients
from .objectives import ConstraintSet, ObjectiveWeights, eval_constraints, eval_objective
from .solver import Model, SolverSettings, run_analysis

log = logging.getLogger(__name__)


@dataclass
class Evaluation:
    J: float
    terms: dict
    g_names: list
    g: np.ndarray
    design: D.DesignField
    history: object
    dJ: tuple | None = None  # (d rho, d xi) raw gradients
    dg: list = field(default_factory=list)  # one (d rho, d xi) pair per constraint
    dJ_phys: tuple | None = None


class DesignProblem:
    """Everything needed to score a raw design (rho, xi) of one mesh and load program."""

    def __init__(self, mesh: Mesh, program: LoadProgram, catalog: MaterialCatalog,
                 weights: ObjectiveWeights = None, constraints: ConstraintSet = None,
                 interp: D.InterpolationParams = None, proj: D.ProjectionParams = None,
                 filter_radius=0.0, settings: SolverSettings = None, reaction=None):
        self.mesh = mesh
        self.program = program
        self.catalog = catalog
        self.weights = weights or ObjectiveWeights()
        self.constraints = constraints or ConstraintSet()
        self.interp = interp or D.InterpolationParams()
        self.proj = proj or D.ProjectionParams()
        self.settings = settings or SolverSettings()
        self.quad = quadrature_and_gradients(mesh)
        self.filter = D.FilterOperator(mesh.centroids, filter_radius)
        self.n_xi = len(catalog) - 1
        self.chain = D.DesignChain(self.filter, self.proj, self.n_xi)
        self.volumes = element_volumes_from(self.quad)
        self.reaction = reaction  # (nodes, direction) used for force-displacement output
        self._model = None

    @property
    def n_el(self):
        return self.mesh.n_elements

    def physical(self, rho, xi):
        self.chain.proj = self.proj
        return self.chain.forward(rho, np.asarray(xi, float).reshape(self.n_el, self.n_xi))

    def model_for(self, dfield: D.DesignField) -> Model:
        mf = D.material_field(dfield.rho_bar, dfield.xi_bar, self.catalog, self.interp, self.proj)
        if self._model is None:
            self._model = Model(self.mesh, mf, self.quad, isochoric=self.settings.isochoric)
        else:
            self._model.set_field(mf)
        return self._model

    def analyze_physical(self, rho_bar, xi_bar):
        """Run the analysis for given physical fields (bypassing filter and projection)."""
        mf = D.material_field(rho_bar, xi_bar, self.catalog, self.interp, self.proj)
        model = Model(self.mesh, mf, self.quad, isochoric=self.settings.isochoric)
        return model, run_analysis(model, self.program, self.settings)

    def evaluate(self, rho, xi, gradients=True) -> Evaluation:
        df = self.physical(rho, xi)
        model = self.model_for(df)
        hist = run_analysis(model, self.program, self.settings)
        obj = eval_objective(hist, model, self.weights)
        names, g, g_rho, g_xi = eval_constraints(df.rho_bar, df.xi_bar, self.catalog, self.constraints, self.volumes)
        ev = Evaluation(obj.J, obj.terms, names, g, df, hist)
        if gradients:
            dr, dx = adjoint.total_sensitivity(hist, model, self.weights, self.interp, self.proj, df, self.catalog)
            ev.dJ_phys = (dr, dx)
            ev.dJ = self.chain.adjoint(dr, dx, df)
            ev.dg = [self.chain.adjoint(g_rho[i], g_xi[i], df) for i in range(len(names))]
        return ev

    def term_gradients(self, ev: Evaluation):
        """Raw gradients of every objective term and constraint, keyed by name."""
        model = self.model_for(ev.design)
        out = {}
        for name in ("stiff", "force", "energy"):
            w = ObjectiveWeights(**{f"w_{k}": float(k == name) for k in ("stiff", "force", "energy")})
            dr, dx = adjoint.total_sensitivity(ev.history, model, w, self.interp, self.proj, ev.design,
                                               self.catalog)
            out[f"J_{name}"] = self.chain.adjoint(dr, dx, ev.design)
        for name, grad in zip(ev.g_names, ev.dg):
            out[name] = grad
        return out

    def term_values(self, ev: Evaluation):
        out = {f"J_{k}": v for k, v in ev.terms.items()}
        out.update(dict(zip(ev.g_names, ev.g)))
        return out


def element_volumes_from(quad):
    return quad.weights.sum(axis=1)


def branch_signature(hist):
    """Plastic/elastic pattern of every committed step plus the step count; FD samples must not change it."""
    return (len(hist),) + tuple(bytes(np.packbits(p)) for p in hist.plastic[1:])


def check_gradients(problem: DesignProblem, rho, xi, rng=None, per_family=4, eps=1e-6, central=True,
                    eps_rel=1e-13):
    """Stratified finite-difference check of every objective term and constraint at (rho, xi).

    Forward solves are tightened to ``eps_rel`` (down to the round-off floor) for the
    check: the usual Newton tolerance leaves reaction noise that a difference
    quotient with a small ``eps`` would amplify.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    rho = np.asarray(rho, float)
    xi = np.asarray(xi, float).reshape(problem.n_el, problem.n_xi)
    saved = problem.settings
    problem.settings = replace(saved, eps_rel=min(saved.eps_rel, eps_rel), max_iter=max(saved.max_iter, 50))
    try:
        ev = problem.evaluate(rho, xi)
        grads = problem.term_gradients(ev)

        def run(r, x):
            e = problem.evaluate(r, x, gradients=False)
            return problem.term_values(e), branch_signature(e.history)

        families = ["rho"] + [f"xi{k + 1}" for k in range(problem.n_xi)]
        samples = adjoint.stratified_samples(rng, problem.n_el, families, per_family)
        return adjoint.fd_verify(run, grads, rho, xi, samples, eps=eps, central=central)
    finally:
        problem.settings = saved
