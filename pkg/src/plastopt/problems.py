"""Ready-made meshes and load programs: the uniaxial column, the shear damper and small test beams."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import tensors as T
from .mesh import DirichletSet, LoadProgram, Stage, build_structured_mesh


def uniaxial_column(lams):
    """Unit cube stretched along x to the stretches ``lams`` (one load step each), laterally free."""
    mesh = build_structured_mesh(3, (1, 1, 1), (1.0, 1.0, 1.0))
    n = len(lams)
    table = np.column_stack([np.r_[0.0, np.arange(1, n + 1)], np.r_[0.0, np.asarray(lams) - 1.0]])
    sel = mesh.select_nodes
    stage = Stage(np.arange(1, n + 1, dtype=float),
                  [DirichletSet(sel("left"), (0,), (0.0,)), DirichletSet(sel("right"), (0,), (1.0,)),
                   DirichletSet(sel("bottom"), (1,), (0.0,)), DirichletSet(sel("front"), (2,), (0.0,))],
                  amplitude_table=table, name="uniaxial")
    return mesh, LoadProgram([stage])


@dataclass
class UniaxialComparison:
    lams: np.ndarray
    fea: dict  # tau11, lam_l, det_be per step
    reference: object  # oracle.CyclicReference
    errors: dict  # absolute 2-norm error per quantity
    history: object
    seconds: float


def verify_uniaxial(n_per_leg=40, mat=None, settings=None) -> UniaxialComparison:
    """Single-hex cyclic stretch test against the semi-analytical perfectly plastic solution."""
    from . import design as D
    from .materials import MaterialCatalog, dummy_material
    from .oracle import cyclic_reference, default_cyclic_schedule
    from .solver import Model, run_analysis

    mat = mat or dummy_material()
    lams = default_cyclic_schedule(n_per_leg)
    mesh, program = uniaxial_column(lams)
    model = Model(mesh, D.solid_field(MaterialCatalog([mat]), mesh.n_elements))
    t0 = time.time()
    hist = run_analysis(model, program, settings)
    seconds = time.time() - t0
    tau11, lam_l, det_be = [], [], []
    for n in range(1, len(hist)):
        F = np.eye(3) + model.grad_u(hist.U[n])
        tau = T.mm(hist.P[n], T.transpose(F))
        tau11.append(tau[:, 0, 0].mean())
        lam_l.append(F[:, 1, 1].mean())
        det = T.det(hist.states[n].be_bar)
        det_be.append(det[np.argmax(np.abs(det - 1.0))])
    fea = {"tau11": np.array(tau11), "lam_l": np.array(lam_l), "det_be": np.array(det_be)}
    ref = cyclic_reference(lams, mat)
    errors = {k: float(np.linalg.norm(fea[k] - getattr(ref, k))) for k in fea}
    return UniaxialComparison(lams, fea, ref, errors, hist, seconds)


def cycle_table(levels, steps_per_leg):
    """Piecewise-linear amplitude table through ``levels`` (starting at 0) and its step times.

    ``steps_per_leg`` is an int or a list with one entry per leg; steps are equally spaced in time.
    """
    levels = np.r_[0.0, np.asarray(levels, float)]
    legs = len(levels) - 1
    spl = np.broadcast_to(np.asarray(steps_per_leg), (legs,))
    knots_t = np.r_[0.0, np.cumsum(spl)].astype(float)
    table = np.column_stack([knots_t, levels])
    times = np.arange(1, int(knots_t[-1]) + 1, dtype=float)
    return table, times


def shear_damper(nx=60, ny=30, width=100.0, height=50.0, u_max=10.0, levels=(1.0, 0.0),
                 steps_per_leg=8, thickness=1.0):
    """Plane-strain block clamped at the bottom and sheared along x at the top.

    The top edge moves as a rigid clamp: horizontal displacement ``u_max * a(t)``
    with the vertical displacement held at zero.  ``levels`` are the amplitude
    turning points, (1, 0) being a half cycle.
    """
    mesh = build_structured_mesh(2, (nx, ny), (width, height), thickness)
    bottom, top = mesh.select_nodes("bottom"), mesh.select_nodes("top")
    table, times = cycle_table(levels, steps_per_leg)
    stage = Stage(times, [DirichletSet(bottom, (0, 1), (0.0, 0.0)),
                          DirichletSet(top, (0, 1), (u_max, 0.0))],
                  amplitude_table=table, name="shear")
    return mesh, LoadProgram([stage]), (top, 0)


def intuitive_damper_design(mesh, volume=0.5, n_mat=2):
    """Solid central shear wall covering ``volume`` of the width, split into equal vertical bands per material.

    Returns (rho, xi_bar) with xi_bar the pure per-element material fractions.
    """
    c = mesh.centroids[:, 0]
    W = mesh.lengths[0]
    lo, hi = 0.5 * W * (1.0 - volume), 0.5 * W * (1.0 + volume)
    rho = ((c > lo) & (c < hi)).astype(float)
    band = np.clip(((c - lo) / (hi - lo) * n_mat).astype(int), 0, n_mat - 1)
    xi_bar = np.zeros((mesh.n_elements, n_mat))
    xi_bar[np.arange(mesh.n_elements), band] = 1.0
    return rho, xi_bar


def cantilever_beam(nx=4, ny=2, length=4.0, height=2.0, u_max=0.4, levels=(1.0, 0.3), steps_per_leg=2):
    """Small plane-strain cantilever: left edge clamped, right edge pushed vertically and released."""
    mesh = build_structured_mesh(2, (nx, ny), (length, height))
    left, right = mesh.select_nodes("left"), mesh.select_nodes("right")
    table, times = cycle_table(levels, steps_per_leg)
    stage = Stage(times, [DirichletSet(left, (0, 1), (0.0, 0.0)), DirichletSet(right, (1,), (u_max,))],
                  amplitude_table=table, name="bend")
    return mesh, LoadProgram([stage]), (right, 1)


def bend_then_pull(nx=4, ny=2, length=4.0, height=2.0, u_bend=0.4, u_pull=0.2, steps=3):
    """Two stages: bend a cantilever, then clamp the right edge where it is and pull it along x.

    Stage-2 boundary values are relative to the stage-1 end state, so the
    bent shape and its plastic strain are inherited.
    """
    mesh = build_structured_mesh(2, (nx, ny), (length, height))
    left, right = mesh.select_nodes("left"), mesh.select_nodes("right")
    t = np.arange(1, steps + 1, dtype=float) / steps
    bend = Stage(t, [DirichletSet(left, (0, 1), (0.0, 0.0)), DirichletSet(right, (1,), (u_bend,))], name="bend")
    pull = Stage(t, [DirichletSet(left, (0, 1), (0.0, 0.0)), DirichletSet(right, (0, 1), (u_pull, 0.0))],
                 name="pull")
    return mesh, LoadProgram([bend, pull]), (right, 0)
