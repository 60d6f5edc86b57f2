"""Stiffness, end-force and energy objectives and the volume / resource constraints."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .materials import MaterialCatalog


@dataclass
class ObjectiveWeights:
    w_stiff: float = 0.0
    w_force: float = 0.0
    w_energy: float = 1.0

    def __post_init__(self):
        w = np.array([self.w_stiff, self.w_force, self.w_energy])
        if np.any(w < 0) or np.any(w > 1):
            raise ValueError("objective weights must lie in [0, 1]")
        if abs(w.sum() - 1.0) > 1e-12:
            raise ValueError(f"objective weights must sum to 1, got {w.sum():.6g}")

    def as_dict(self):
        return {"stiff": self.w_stiff, "force": self.w_force, "energy": self.w_energy}


@dataclass
class ConstraintSet:
    """Upper bounds; ``None`` skips the constraint."""
    volume: float | None = None
    material_volumes: dict = field(default_factory=dict)  # material index -> bound
    price: float | None = None
    mass: float | None = None
    co2: float | None = None

    def __post_init__(self):
        if self.volume is not None and not (0 < self.volume <= 1):
            raise ValueError("total volume bound must lie in (0, 1]")
        top = 1.0 if self.volume is None else self.volume
        for k, v in self.material_volumes.items():
            if not (0 <= v <= top):
                raise ValueError(f"volume bound of material {k} must lie in [0, {top}]")

    def names(self, catalog: MaterialCatalog):
        out = []
        if self.volume is not None:
            out.append("g_V0")
        out += [f"g_V{k + 1}" for k in sorted(self.material_volumes)]
        for key, attr in (("price", "P"), ("mass", "M"), ("co2", "C")):
            if getattr(self, key) is not None:
                out.append(f"g_{attr}")
        return out


_RESOURCE = {"price": "price", "mass": "mass_density", "co2": "co2"}


@dataclass
class ObjectiveValue:
    J: float
    terms: dict


def _grads(hist, model):
    return [model.grad_u(U) for U in hist.U]


def eval_objective(hist, model, weights: ObjectiveWeights) -> ObjectiveValue:
    """Weighted sum of J_stiff, J_force and J_energy built from the interpolated stress."""
    N = hist.n_steps
    if N < 1:
        raise ValueError("objective needs at least one committed load step")
    w = model.point_weights
    H = _grads(hist, model)
    P = hist.P

    def work(Pa, Ha):
        return float(np.sum(w * np.einsum("pij,pij->p", Pa, Ha)))

    stiff = 0.5 * work(P[1], H[1])
    force = work(P[N], H[N])
    energy = sum(0.5 * work(P[n] + P[n - 1], H[n] - H[n - 1]) for n in range(1, N + 1))
    terms = {"stiff": stiff, "force": force, "energy": energy}
    J = sum(weights.as_dict()[k] * terms[k] for k in terms)
    return ObjectiveValue(J, terms)


def objective_partials(hist, model, weights: ObjectiveWeights):
    """Partials of J w.r.t. the interpolated stress and displacement gradient at every step.

    Returns lists ``cP`` and ``cH`` indexed by step (entry 0 unused), each
    (n_pt, 3, 3) with the quadrature weights folded in.
    """
    N = hist.n_steps
    w = model.point_weights[:, None, None]
    H = _grads(hist, model)
    P = hist.P
    cP = [np.zeros_like(P[0]) for _ in range(N + 1)]
    cH = [np.zeros_like(P[0]) for _ in range(N + 1)]
    ws, wf, we = weights.w_stiff, weights.w_force, weights.w_energy
    if ws:
        cP[1] += ws * 0.5 * w * H[1]
        cH[1] += ws * 0.5 * w * P[1]
    if wf:
        cP[N] += wf * w * H[N]
        cH[N] += wf * w * P[N]
    if we:
        for n in range(1, N + 1):
            nxt = n + 1 if n < N else n
            cP[n] += we * 0.5 * w * (H[nxt] - H[n - 1])
            cH[n] += we * 0.5 * w * ((P[n - 1] - P[nxt]) if n < N else (P[n] + P[n - 1]))
    return cP, cH


def element_volumes(model):
    return model.quad.weights.sum(axis=1)


def eval_constraints(rho_bar, xi_bar, catalog: MaterialCatalog, cset: ConstraintSet, volumes):
    """Constraint values and their gradients w.r.t. (rho_bar, xi_bar).

    Returns (names, values, d_rho (n_g, n_el), d_xi (n_g, n_el, n_mat)).
    """
    rho_bar = np.asarray(rho_bar, float)
    xi_bar = np.atleast_2d(xi_bar)
    v = np.asarray(volumes, float) / np.sum(volumes)
    names, vals, drho, dxi = [], [], [], []
    n_el, n_mat = xi_bar.shape

    def add(name, value, dr, dx):
        names.append(name)
        vals.append(float(value))
        drho.append(dr)
        dxi.append(dx)

    if cset.volume is not None:
        add("g_V0", v @ rho_bar - cset.volume, v.copy(), np.zeros((n_el, n_mat)))
    for k in sorted(cset.material_volumes):
        dx = np.zeros((n_el, n_mat))
        dx[:, k] = v * rho_bar
        add(f"g_V{k + 1}", v @ (rho_bar * xi_bar[:, k]) - cset.material_volumes[k], v * xi_bar[:, k], dx)
    for key, short in (("price", "P"), ("mass", "M"), ("co2", "C")):
        bound = getattr(cset, key)
        if bound is None:
            continue
        psi = catalog.column(_RESOURCE[key])
        mix = xi_bar @ psi
        add(f"g_{short}", v @ (rho_bar * mix) - bound, v * mix, (v * rho_bar)[:, None] * psi[None, :])
    if not names:
        return [], np.zeros(0), np.zeros((0, n_el)), np.zeros((0, n_el, n_mat))
    return names, np.array(vals), np.array(drho), np.array(dxi)
