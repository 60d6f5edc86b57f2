"""CSV and legacy VTK writers for analysis histories and designs."""
from __future__ import annotations

import csv
import os

import numpy as np

from .solver import StateHistory, reaction_force

RESPONSE_COLUMNS = ("step", "time", "u_applied", "F_reaction", "newton_iters", "line_searches", "residual")


def response_table(hist: StateHistory, model, reaction):
    """Rows of RESPONSE_COLUMNS; ``reaction`` is (driven nodes, direction) or None."""
    if reaction is not None:
        nodes, direction = reaction
        dofs = np.asarray(nodes) * model.mesh.dim + direction
        force = reaction_force(hist, model, nodes, direction)
        disp = np.array([float(np.mean(U[dofs])) for U in hist.U])
    else:
        force = np.full(len(hist), np.nan)
        disp = np.asarray(hist.u_applied, float)
    rows = []
    for n in range(len(hist)):
        lg = hist.logs[n]
        res = lg.residuals[-1] if lg.residuals else 0.0
        rows.append((n, hist.times[n], disp[n], force[n], lg.iterations, lg.line_searches, res))
    return rows


def write_response_csv(path, hist: StateHistory, model, reaction=None):
    rows = response_table(hist, model, reaction)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(RESPONSE_COLUMNS)
        for r in rows:
            w.writerow([r[0], f"{r[1]:.10g}", f"{r[2]:.12e}", f"{r[3]:.12e}", r[4], r[5], f"{r[6]:.6e}"])
    return rows


def read_response_csv(path):
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd)
        if tuple(header) != RESPONSE_COLUMNS:
            raise ValueError(f"unexpected header {header}")
        return np.array([[float(v) for v in row] for row in rd])


def element_average(model, point_values):
    """Quadrature-weighted element means of a per-point scalar."""
    w = model.quad.weights
    v = np.asarray(point_values, float).reshape(w.shape)
    return (w * v).sum(axis=1) / w.sum(axis=1)


def work_density(hist: StateHistory, model, step):
    """Trapezoidal stress work per unit reference volume accumulated up to ``step``, per point."""
    out = np.zeros(model.n_pt)
    H_prev = model.grad_u(hist.U[0])
    for n in range(1, step + 1):
        H = model.grad_u(hist.U[n])
        out += 0.5 * np.einsum("pij,pij->p", hist.P[n] + hist.P[n - 1], H - H_prev)
        H_prev = H
    return out


def write_vtk(path, mesh, U=None, point_data=None, cell_data=None, title="plastopt"):
    """Legacy ASCII unstructured grid: quads are cell type 9, hexes type 12."""
    n_nodes, dim = mesh.nodes.shape
    pts = np.zeros((n_nodes, 3))
    pts[:, :dim] = mesh.nodes
    cell_type = 9 if dim == 2 else 12
    conn = mesh.elements
    lines = ["# vtk DataFile Version 3.0", title[:255], "ASCII", "DATASET UNSTRUCTURED_GRID",
             f"POINTS {n_nodes} double"]
    lines += [f"{x:.12g} {y:.12g} {z:.12g}" for x, y, z in pts]
    lines.append(f"CELLS {len(conn)} {conn.size + len(conn)}")
    lines += [" ".join(map(str, [len(c), *c])) for c in conn]
    lines.append(f"CELL_TYPES {len(conn)}")
    lines += [str(cell_type)] * len(conn)
    pdata = dict(point_data or {})
    if U is not None:
        disp = np.zeros((n_nodes, 3))
        disp[:, :dim] = np.asarray(U).reshape(n_nodes, dim)
        pdata = {"displacement": disp, **pdata}
    if pdata:
        lines.append(f"POINT_DATA {n_nodes}")
        lines += _data_block(pdata)
    if cell_data:
        lines.append(f"CELL_DATA {len(conn)}")
        lines += _data_block(cell_data)
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _data_block(data):
    out = []
    for name, arr in data.items():
        arr = np.asarray(arr, float)
        key = name.replace(" ", "_")
        if arr.ndim == 2 and arr.shape[1] == 3:
            out.append(f"VECTORS {key} double")
            out += [f"{a:.12g} {b:.12g} {c:.12g}" for a, b, c in arr]
        else:
            out.append(f"SCALARS {key} double 1")
            out.append("LOOKUP_TABLE default")
            out += [f"{v:.12g}" for v in arr.ravel()]
    return out


def step_cell_fields(hist: StateHistory, model, step, rho_bar=None, xi_bar=None):
    """Per-element rho_bar, xi_bar_n, alpha and accumulated work density at ``step``."""
    fields = {}
    if rho_bar is not None:
        fields["rho_bar"] = rho_bar
    if xi_bar is not None:
        for k in range(np.shape(xi_bar)[1]):
            fields[f"xi_bar_{k + 1}"] = np.asarray(xi_bar)[:, k]
    fields["alpha"] = element_average(model, hist.states[step].alpha)
    fields["energy_density"] = element_average(model, work_density(hist, model, step))
    return fields


def write_design_csv(path, rho_bar, xi_bar, centroids):
    xi_bar = np.atleast_2d(xi_bar)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        dim = centroids.shape[1]
        w.writerow(["element", *"xyz"[:dim], "rho_bar", *[f"xi_bar_{k + 1}" for k in range(xi_bar.shape[1])]])
        for e in range(len(rho_bar)):
            w.writerow([e, *(f"{c:.8g}" for c in centroids[e]), f"{rho_bar[e]:.10g}",
                        *(f"{v:.10g}" for v in xi_bar[e])])
