"""Report figures rendered with the non-interactive Agg backend."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
from matplotlib.collections import PolyCollection  # noqa: E402

STYLE = {"figure.dpi": 120, "savefig.dpi": 150, "font.size": 9, "axes.grid": True, "grid.alpha": 0.3,
         "lines.linewidth": 1.4}


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return path


def force_displacement(path, u, F, label=None, others=()):
    """Reaction force against applied displacement; ``others`` are extra (u, F, label) curves."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.5, 3.4))
        ax.plot(u, F, "-o", ms=2.5, label=label or "design")
        for uo, Fo, lab in others:
            ax.plot(uo, Fo, "-", label=lab)
        ax.set_xlabel("applied displacement u [mm]")
        ax.set_ylabel("reaction force F [N]")
        if others or label:
            ax.legend(frameon=False)
        return _save(fig, path)


def oracle_comparison(path, lams, fea, oracle):
    """Two-panel overlay of FEA and oracle tau_11 and lateral stretch along the stretch history."""
    with plt.rc_context(STYLE):
        fig, axes = plt.subplots(1, 2, figsize=(7.5, 3.2))
        steps = np.arange(1, len(lams) + 1)
        for ax, key, lab in zip(axes, ("tau11", "lam_l"), ("Kirchhoff stress tau_11 [MPa]", "lateral stretch")):
            ax.plot(steps, oracle[key], "-", color="0.6", lw=3, label="semi-analytical")
            ax.plot(steps, fea[key], "--", color="C3", label="FEA")
            ax.set_xlabel("load step")
            ax.set_ylabel(lab)
        axes[0].legend(frameon=False)
        return _save(fig, path)


def newton_convergence(path, logs, highlight=None):
    """Newton iterations per step (left) and relative residual histories of selected steps (right)."""
    iters = np.array([lg.iterations for lg in logs[1:]])
    if highlight is None:
        highlight = list(np.argsort(iters)[-2:][::-1] + 1) + [1]
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
        a1.bar(np.arange(1, len(iters) + 1), iters, color="C0")
        a1.set_xlabel("load step")
        a1.set_ylabel("Newton iterations")
        for n in dict.fromkeys(highlight):
            r = np.asarray(logs[n].residuals, float)
            if len(r) > 1 and r[1] > 0:
                a2.semilogy(np.arange(1, len(r)), np.maximum(r[1:] / r[1], 1e-18), "-o", ms=3, label=f"step {n}")
        a2.set_xlabel("iteration")
        a2.set_ylabel("relative residual")
        a2.legend(frameon=False)
        return _save(fig, path)


def optimization_history(path, records, g_names):
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.2))
        it = [r.iteration for r in records]
        a1.plot(it, [r.J for r in records], color="C0")
        a1.set_xlabel("iteration")
        a1.set_ylabel("objective J")
        g = np.array([r.g for r in records]).reshape(len(records), -1)
        for k, name in enumerate(g_names):
            a2.plot(it, g[:, k], label=name)
        a2.axhline(0.0, color="k", lw=0.8)
        a2.set_xlabel("iteration")
        a2.set_ylabel("constraint value")
        if g_names:
            a2.legend(frameon=False)
        return _save(fig, path)


def _quad_polys(mesh):
    return mesh.nodes[mesh.elements][:, :, :2]


def design_map(path, mesh, rho_bar, xi_bar=None, names=None, U=None):
    """Element map of the design: colour shows the dominant material, alpha shows density.

    Only 2D meshes are drawn; for 3D the front face layer of elements is shown.
    """
    if mesh.dim == 3:
        keep = mesh.centroids[:, 2] <= mesh.centroids[:, 2].min() + 1e-9
    else:
        keep = np.ones(mesh.n_elements, bool)
    polys = _quad_polys(mesh)[keep]
    if U is not None:
        polys = polys + np.asarray(U).reshape(mesh.n_nodes, mesh.dim)[mesh.elements][keep][:, :, :2]
    rho = np.clip(np.asarray(rho_bar)[keep], 0, 1)
    n_mat = 1 if xi_bar is None else np.shape(xi_bar)[1]
    palette = np.array([matplotlib.colors.to_rgb(c) for c in
                        ("#b5651d", "#4a6fa5", "#5a9e5a", "#9b59b6", "#c0392b", "#7f8c8d")])
    if xi_bar is None:
        rgb = np.tile(palette[0], (len(rho), 1))
    else:
        rgb = np.asarray(xi_bar)[keep] @ palette[:n_mat]
    colours = np.c_[rgb, rho]
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.5, 5.5 * mesh.lengths[1] / mesh.lengths[0] + 0.6))
        ax.add_collection(PolyCollection(polys, facecolors=colours, edgecolors="none"))
        ax.autoscale_view()
        ax.set_aspect("equal")
        ax.grid(False)
        ax.set_xticks([])
        ax.set_yticks([])
        if names:
            for k, nm in enumerate(names[:n_mat]):
                ax.plot([], [], "s", color=palette[k], label=nm)
            ax.legend(frameon=False, loc="upper center", bbox_to_anchor=(0.5, -0.02), ncol=n_mat)
        return _save(fig, path)


def gradient_check(path, report):
    """Scatter of analytic against finite-difference derivatives, one colour per function."""
    with plt.rc_context(STYLE):
        fig, (a1, a2) = plt.subplots(1, 2, figsize=(8, 3.4))
        for name in sorted({s.function for s in report.samples}):
            s = [x for x in report.samples if x.function == name]
            a1.plot([x.fd for x in s], [x.analytic for x in s], "o", ms=3, label=name)
            a2.semilogy(np.arange(len(s)), np.maximum([x.rel_err for x in s], 1e-17), "o", ms=3, label=name)
        lim = a1.get_xlim()
        a1.plot(lim, lim, "k-", lw=0.6)
        a1.set_xlabel("finite difference")
        a1.set_ylabel("adjoint")
        a2.axhline(1e-4, color="k", lw=0.8, ls="--")
        a2.set_xlabel("sample")
        a2.set_ylabel("relative error")
        a2.legend(frameon=False, fontsize=7, ncol=2)
        return _save(fig, path)
