"""Structured quad/hex meshes, Gauss quadrature and staged load programs.

Displacement gradients are handled as 9-vectors (row-major 3x3, entry
3*i + J = du_i/dX_J); for plane strain the out-of-plane row and column stay
zero so that F = I + grad(u) keeps F33 = 1.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

GAUSS_2 = np.array([-1.0, 1.0]) / np.sqrt(3.0)


class MeshError(ValueError):
    pass


@dataclass
class Mesh:
    dim: int
    counts: tuple
    lengths: tuple
    thickness: float
    nodes: np.ndarray  # (n_nodes, dim) reference coordinates
    elements: np.ndarray  # (n_el, 2**dim) connectivity
    facets: dict = field(default_factory=dict)  # tag -> (n_facets, 2**(dim-1)) node lists

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_elements(self):
        return len(self.elements)

    @property
    def n_dofs(self):
        return self.dim * self.n_nodes

    @property
    def centroids(self):
        return self.nodes[self.elements].mean(axis=1)

    @property
    def element_dofs(self):
        d = self.dim
        return (self.elements[:, :, None] * d + np.arange(d)).reshape(self.n_elements, -1)

    def boundary_nodes(self, tag):
        return np.unique(self.facets[tag])

    def select_nodes(self, tag=None, box=None, tol=1e-9):
        """Nodes on a tagged side and/or inside an axis-aligned box [[lo, hi], ...]."""
        mask = np.ones(self.n_nodes, bool)
        if tag is not None:
            if tag not in self.facets:
                raise MeshError(f"unknown boundary tag {tag!r}; known {sorted(self.facets)}")
            m = np.zeros(self.n_nodes, bool)
            m[self.boundary_nodes(tag)] = True
            mask &= m
        if box is not None:
            box = np.asarray(box, float)
            if box.shape != (self.dim, 2):
                raise MeshError(f"box must have shape ({self.dim}, 2)")
            mask &= np.all((self.nodes >= box[:, 0] - tol) & (self.nodes <= box[:, 1] + tol), axis=1)
        return np.flatnonzero(mask)


def build_structured_mesh(dim, counts, lengths, thickness=1.0) -> Mesh:
    """Regular lattice of bilinear quads (dim=2) or trilinear hexes (dim=3)."""
    counts = tuple(int(c) for c in counts)
    lengths = tuple(float(x) for x in lengths)
    if dim not in (2, 3) or len(counts) != dim or len(lengths) != dim:
        raise MeshError("dimension must be 2 or 3 with matching counts and lengths")
    if min(counts) < 1 or min(lengths) <= 0 or thickness <= 0:
        raise MeshError("counts must be >= 1 and lengths, thickness > 0")
    axes = [np.linspace(0.0, L, n + 1) for n, L in zip(counts, lengths)]
    grid = np.meshgrid(*axes, indexing="ij")
    # node id = i + (nx+1) j + (nx+1)(ny+1) k
    nodes = np.stack([g.transpose(tuple(reversed(range(dim)))).ravel() for g in grid], axis=1)
    shape = tuple(c + 1 for c in counts)

    def nid(*ijk):
        return np.ravel_multi_index(tuple(reversed(ijk)), tuple(reversed(shape)))

    idx = np.meshgrid(*[np.arange(c) for c in counts], indexing="ij")
    idx = [i.transpose(tuple(reversed(range(dim)))).ravel() for i in idx]
    if dim == 2:
        i, j = idx
        elements = np.stack([nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)], axis=1)
    else:
        i, j, k = idx
        elements = np.stack([nid(i, j, k), nid(i + 1, j, k), nid(i + 1, j + 1, k), nid(i, j + 1, k),
                             nid(i, j, k + 1), nid(i + 1, j, k + 1), nid(i + 1, j + 1, k + 1),
                             nid(i, j + 1, k + 1)], axis=1)
    mesh = Mesh(dim, counts, lengths, float(thickness) if dim == 2 else 1.0, nodes, elements)
    mesh.facets = _boundary_facets(mesh, shape, nid)
    return mesh


def _boundary_facets(mesh, shape, nid):
    names = {(0, 0): "left", (0, 1): "right", (1, 0): "bottom", (1, 1): "top",
             (2, 0): "front", (2, 1): "back"}
    facets = {}
    dim = mesh.dim
    for axis, side in itertools.product(range(dim), (0, 1)):
        fixed = 0 if side == 0 else shape[axis] - 1
        others = [a for a in range(dim) if a != axis]
        ranges = [np.arange(shape[a] - 1) for a in others]
        cells = np.meshgrid(*ranges, indexing="ij")
        cells = [c.ravel() for c in cells]
        corners = [(0,), (1,)] if dim == 2 else [(0, 0), (1, 0), (1, 1), (0, 1)]
        lists = []
        for corner in corners:
            ijk = [None] * dim
            ijk[axis] = np.full(cells[0].shape, fixed)
            for a, c, off in zip(others, cells, corner):
                ijk[a] = c + off
            lists.append(nid(*ijk))
        facets[names[(axis, side)]] = np.stack(lists, axis=1)
    return facets


@dataclass
class Quadrature:
    """Per-element quadrature tables.

    ``B[e, q]`` maps the element DOF vector to the 9-vector grad(u) at point q;
    ``weights[e, q]`` already includes det(J) and the plane-strain thickness.
    """
    weights: np.ndarray  # (n_el, n_qp)
    dN: np.ndarray  # (n_el, n_qp, n_en, dim) physical shape-function gradients
    N: np.ndarray  # (n_qp, n_en) shape-function values
    B: np.ndarray  # (n_el, n_qp, 9, n_en*dim)

    @property
    def n_qp(self):
        return self.weights.shape[1]

    def point_weights(self):
        return self.weights.ravel()


def _reference_shapes(dim):
    if dim == 2:
        corners = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], float)
    else:
        corners = np.array([[-1, -1, -1], [1, -1, -1], [1, 1, -1], [-1, 1, -1],
                            [-1, -1, 1], [1, -1, 1], [1, 1, 1], [-1, 1, 1]], float)
    pts = np.array(list(itertools.product(GAUSS_2, repeat=dim)))[:, ::-1]
    N = np.prod(1.0 + pts[:, None, :] * corners[None, :, :], axis=2) / 2 ** dim
    dN = np.empty(pts.shape[:1] + corners.shape)
    for a in range(dim):
        terms = 1.0 + pts[:, None, :] * corners[None, :, :]
        terms[..., a] = corners[None, :, a]
        dN[..., a] = np.prod(terms, axis=2) / 2 ** dim
    return pts, np.ones(len(pts)), N, dN


def quadrature_and_gradients(mesh: Mesh) -> Quadrature:
    dim = mesh.dim
    _, wq, N, dNref = _reference_shapes(dim)
    X = mesh.nodes[mesh.elements]  # (n_el, n_en, dim)
    Jac = np.einsum("ekn,qka->eqna", X, dNref)  # dX_n / dxi_a
    detJ = np.linalg.det(Jac)
    if np.any(detJ <= 0):
        raise MeshError("inverted element in reference configuration")
    Jinv = np.linalg.inv(Jac)  # dxi_a / dX_n
    dN = np.einsum("qka,eqan->eqkn", dNref, Jinv)
    weights = detJ * wq[None, :] * (mesh.thickness if dim == 2 else 1.0)
    n_en = mesh.elements.shape[1]
    B = np.zeros(dN.shape[:2] + (9, n_en * dim))
    for i in range(dim):
        for J in range(dim):
            B[:, :, 3 * i + J, i::dim] = dN[..., J]
    return Quadrature(weights, dN, N, B)


@dataclass
class DirichletSet:
    nodes: np.ndarray
    components: tuple
    values: tuple  # prescribed displacement per component at amplitude 1

    def dofs(self, dim):
        return np.concatenate([self.nodes * dim + c for c in self.components])

    def dof_values(self, amplitude):
        return np.concatenate([np.full(len(self.nodes), amplitude * v) for v in self.values])


@dataclass
class NeumannSet:
    tag: str
    traction: tuple


@dataclass
class Stage:
    """One stage of a load program.

    Prescribed displacements are increments on top of the displacement the
    stage starts from, scaled by ``amplitude(t)``.  Without an amplitude table
    the scale equals t itself.
    """
    times: np.ndarray
    dirichlet: list
    neumann: list = field(default_factory=list)
    body_force: tuple | None = None
    amplitude_table: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        self.times = np.asarray(self.times, float)
        if self.times.ndim != 1 or len(self.times) == 0:
            raise MeshError("a stage needs a non-empty list of time steps")
        if np.any(np.diff(self.times) <= 0) or self.times[0] <= 0:
            raise MeshError("time steps must be positive and strictly increasing")
        if self.amplitude_table is not None:
            self.amplitude_table = np.asarray(self.amplitude_table, float)

    def amplitude(self, t):
        if self.amplitude_table is None:
            return float(t)
        tab = self.amplitude_table
        return float(np.interp(t, tab[:, 0], tab[:, 1]))

    def constrained(self, dim):
        if not self.dirichlet:
            return np.zeros(0, int)
        return np.concatenate([d.dofs(dim) for d in self.dirichlet])

    def prescribed(self, dim, t):
        if not self.dirichlet:
            return np.zeros(0)
        a = self.amplitude(t)
        return np.concatenate([d.dof_values(a) for d in self.dirichlet])


@dataclass
class LoadProgram:
    stages: list

    def __post_init__(self):
        if not self.stages:
            raise MeshError("a load program needs at least one stage")


def external_force(mesh: Mesh, quad: Quadrature, stage: Stage):
    """Unit-amplitude external force vector from tractions and body force."""
    f = np.zeros(mesh.n_dofs)
    d = mesh.dim
    for ns in stage.neumann:
        fac = mesh.facets[ns.tag]
        X = mesh.nodes[fac]
        if d == 2:
            area = np.linalg.norm(X[:, 1] - X[:, 0], axis=1) * mesh.thickness
        else:
            area = 0.5 * (np.linalg.norm(np.cross(X[:, 1] - X[:, 0], X[:, 3] - X[:, 0]), axis=1)
                          + np.linalg.norm(np.cross(X[:, 1] - X[:, 2], X[:, 3] - X[:, 2]), axis=1))
        share = area / fac.shape[1]  # exact nodal weights for constant traction on linear facets
        for c, tc in enumerate(ns.traction):
            if tc:
                np.add.at(f, fac * d + c, (share * tc)[:, None] * np.ones(fac.shape[1]))
    if stage.body_force is not None:
        nw = np.einsum("qa,eq->ea", quad.N, quad.weights)
        for c, qc in enumerate(stage.body_force):
            if qc:
                np.add.at(f, mesh.elements * d + c, qc * nw)
    return f
