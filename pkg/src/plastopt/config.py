"""TOML run configuration: parsing, validation and construction of the problem objects."""
from __future__ import annotations

import sys
from dataclasses import dataclass, field, fields

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from . import design as D
from .materials import MaterialCatalog, MaterialSpec, builtin_catalog
from .mesh import DirichletSet, LoadProgram, NeumannSet, Stage, build_structured_mesh
from .mma import Continuation, MmaSettings, OptimizerSettings
from .objectives import ConstraintSet, ObjectiveWeights
from .problems import cycle_table
from .solver import SolverSettings


class ConfigError(ValueError):
    """Collects every (key, reason) problem found in a configuration."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(f"{k}: {r}" for k, r in self.errors))


SECTIONS = {"threads", "mesh", "materials", "stages", "reaction", "design", "continuation", "solver",
            "objective", "constraints", "optimizer", "gradients", "verify", "output"}

_SOLVER_KEYS = {f.name for f in fields(SolverSettings)}
_MMA_KEYS = {f.name for f in fields(MmaSettings)}
_CONT_KEYS = {f.name for f in fields(Continuation)}
_PROJ_KEYS = {f.name for f in fields(D.ProjectionParams)}
_INTERP_KEYS = {f.name for f in fields(D.InterpolationParams)}
_DESIGN_KEYS = _PROJ_KEYS | _INTERP_KEYS | {"filter_radius", "initial_rho", "initial_xi"}
_MATERIAL_KEYS = {f.name for f in fields(MaterialSpec)} | {"E", "nu", "base"}
_STAGE_KEYS = {"name", "steps", "times", "levels", "steps_per_leg", "amplitude", "dirichlet", "neumann",
               "body_force"}
_BC_KEYS = {"side", "box", "components", "values"}


@dataclass
class GradientCheckSettings:
    per_family: int = 4
    eps: float = 1e-6
    seed: int = 0
    rho: float | None = None  # uniform design to check at; random in [0.3, 1] when unset
    xi: float | None = None
    tol: float = 1e-4


@dataclass
class RunConfig:
    mesh: object
    catalog: MaterialCatalog
    program: LoadProgram
    reaction: tuple | None
    filter_radius: float
    proj: D.ProjectionParams
    interp: D.InterpolationParams
    initial_rho: float
    initial_xi: float
    solver: SolverSettings
    weights: ObjectiveWeights
    constraints: ConstraintSet
    optimizer: OptimizerSettings
    gradients: GradientCheckSettings
    verify_steps_per_leg: int = 40
    out_dir: str = "out"
    threads: int = 1
    vtk_every: int = 0  # 0 writes only the final step
    raw: dict = field(default_factory=dict, repr=False)

    def problem(self):
        from .pipeline import DesignProblem
        return DesignProblem(self.mesh, self.program, self.catalog, self.weights, self.constraints,
                             self.interp, self.proj, self.filter_radius, self.solver, self.reaction)

    def resolved(self):
        """Plain-dict echo of the resolved settings."""
        return {
            "mesh": {"dim": self.mesh.dim, "counts": list(self.mesh.counts), "lengths": list(self.mesh.lengths),
                     "n_elements": self.mesh.n_elements},
            "materials": self.catalog.names,
            "stages": [{"name": s.name, "steps": len(s.times)} for s in self.program.stages],
            "filter_radius": self.filter_radius,
            "projection": vars(self.proj), "interpolation": vars(self.interp),
            "solver": vars(self.solver), "objective": self.weights.as_dict(),
            "constraints": {k: v for k, v in vars(self.constraints).items() if v not in (None, {})},
            "optimizer": {"max_iter": self.optimizer.max_iter, "tol_change": self.optimizer.tol_change,
                          "mma": vars(self.optimizer.mma), "continuation": vars(self.optimizer.continuation)},
            "threads": self.threads,
        }


def load_config(path) -> RunConfig:
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except OSError as exc:
        raise ConfigError([("file", str(exc))]) from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([("syntax", str(exc))]) from exc
    return parse_config(raw)


class _Collector:
    def __init__(self):
        self.errors = []

    def add(self, key, reason):
        self.errors.append((key, reason))

    def unknown(self, prefix, table, allowed):
        for k in table:
            if k not in allowed:
                self.add(f"{prefix}.{k}" if prefix else k, "unknown key")

    def build(self, key, factory, **kw):
        try:
            return factory(**kw)
        except (TypeError, ValueError) as exc:
            self.add(key, str(exc))
            return None


def parse_config(raw: dict) -> RunConfig:
    """Validate a configuration mapping; raises ConfigError listing every problem."""
    err = _Collector()
    err.unknown("", raw, SECTIONS)

    threads = raw.get("threads", 1)
    if not isinstance(threads, int) or threads < 1:
        err.add("threads", "must be a positive integer")

    mesh = _mesh(raw.get("mesh"), err)
    catalog = _catalog(raw.get("materials"), err)
    program = _program(raw.get("stages"), mesh, err) if mesh is not None else None
    reaction = _reaction(raw.get("reaction"), mesh, err) if mesh is not None else None

    dsec = raw.get("design", {})
    err.unknown("design", dsec, _DESIGN_KEYS)
    proj = err.build("design", D.ProjectionParams, **{k: dsec[k] for k in dsec if k in _PROJ_KEYS})
    interp = err.build("design", D.InterpolationParams, **{k: dsec[k] for k in dsec if k in _INTERP_KEYS})
    radius = float(dsec.get("filter_radius", 0.0))
    if radius < 0:
        err.add("design.filter_radius", "must be >= 0")
    init_rho = float(dsec.get("initial_rho", 0.5))
    init_xi = float(dsec.get("initial_xi", 0.5))
    for key, v in (("initial_rho", init_rho), ("initial_xi", init_xi)):
        if not 0 <= v <= 1:
            err.add(f"design.{key}", "must lie in [0, 1]")

    ssec = raw.get("solver", {})
    err.unknown("solver", ssec, _SOLVER_KEYS)
    solver = err.build("solver", SolverSettings, **{k: v for k, v in ssec.items() if k in _SOLVER_KEYS})

    osec = raw.get("objective", {"w_energy": 1.0})
    err.unknown("objective", osec, {"w_stiff", "w_force", "w_energy"})
    weights = err.build("objective", ObjectiveWeights,
                        **{k: float(v) for k, v in osec.items() if k in {"w_stiff", "w_force", "w_energy"}})

    constraints = _constraints(raw.get("constraints", {}), catalog, err)
    optimizer = _optimizer(raw.get("optimizer", {}), raw.get("continuation", {}), err)

    gsec = raw.get("gradients", {})
    err.unknown("gradients", gsec, {f.name for f in fields(GradientCheckSettings)})
    grads = err.build("gradients", GradientCheckSettings, **gsec)
    if grads is not None and not (1e-8 <= grads.eps <= 1e-3):
        err.add("gradients.eps", "finite-difference step must lie in [1e-8, 1e-3]")

    vsec = raw.get("verify", {})
    err.unknown("verify", vsec, {"steps_per_leg"})
    spl = vsec.get("steps_per_leg", 40)
    if not isinstance(spl, int) or spl < 1:
        err.add("verify.steps_per_leg", "must be a positive integer")

    out = raw.get("output", {})
    err.unknown("output", out, {"dir", "vtk_every"})
    vtk_every = out.get("vtk_every", 0)
    if not isinstance(vtk_every, int) or vtk_every < 0:
        err.add("output.vtk_every", "must be a non-negative integer")

    if err.errors:
        raise ConfigError(err.errors)
    return RunConfig(mesh, catalog, program, reaction, radius, proj, interp, init_rho, init_xi, solver, weights,
                     constraints, optimizer, grads, spl, out.get("dir", "out"), threads, vtk_every, raw)


def _mesh(sec, err):
    if sec is None:
        err.add("mesh", "missing section")
        return None
    err.unknown("mesh", sec, {"dim", "counts", "lengths", "thickness"})
    try:
        return build_structured_mesh(int(sec["dim"]), sec["counts"], sec["lengths"], sec.get("thickness", 1.0))
    except KeyError as exc:
        err.add(f"mesh.{exc.args[0]}", "missing")
    except (TypeError, ValueError) as exc:
        err.add("mesh", str(exc))
    return None


def _catalog(entries, err):
    if not entries:
        err.add("materials", "at least one material is required")
        return None
    lib = builtin_catalog()
    mats = []
    for i, ent in enumerate(entries):
        key = f"materials[{i}]"
        if isinstance(ent, str):
            ent = {"name": ent}
        err.unknown(key, ent, _MATERIAL_KEYS)
        ent = dict(ent)
        name = ent.get("name")
        if not name:
            err.add(f"{key}.name", "missing")
            continue
        base = ent.pop("base", None)
        if base is None and set(ent) == {"name"}:
            try:
                mats.append(lib.lookup(name))
            except KeyError as exc:
                err.add(f"{key}.name", str(exc.args[0]))
            continue
        try:
            if base is not None:
                mats.append(lib.lookup(base).scaled(**{k: v for k, v in ent.items() if k not in ("E", "nu")}))
            elif "E" in ent:
                E, nu = ent.pop("E"), ent.pop("nu", None)
                if nu is None:
                    raise ValueError("nu is required together with E")
                mats.append(MaterialSpec.from_young(ent.pop("name"), E, nu, ent.pop("sigma_y"), **ent))
            else:
                mats.append(MaterialSpec(**ent))
        except KeyError as exc:
            err.add(f"{key}.{exc.args[0]}", "missing")
        except (TypeError, ValueError) as exc:
            err.add(key, str(exc))
    try:
        return MaterialCatalog(mats) if mats else None
    except ValueError as exc:
        err.add("materials", str(exc))
        return None


def _nodes(mesh, bc, key, err):
    if "side" not in bc and "box" not in bc:
        err.add(key, "needs 'side' or 'box'")
        return None
    try:
        nodes = mesh.select_nodes(bc.get("side"), bc.get("box"))
    except ValueError as exc:
        err.add(key, str(exc))
        return None
    if len(nodes) == 0:
        err.add(key, "selects no nodes")
        return None
    return nodes


def _program(entries, mesh, err):
    if not entries:
        err.add("stages", "at least one stage is required")
        return None
    stages = []
    for i, st in enumerate(entries):
        key = f"stages[{i}]"
        err.unknown(key, st, _STAGE_KEYS)
        table = None
        if "levels" in st:
            table, times = cycle_table(st["levels"], st.get("steps_per_leg", 1))
        elif "times" in st:
            times = np.asarray(st["times"], float)
        elif "steps" in st:
            n = int(st["steps"])
            times = np.arange(1, n + 1, dtype=float) / n
        else:
            err.add(key, "needs 'levels', 'times' or 'steps'")
            continue
        if "amplitude" in st:
            table = np.asarray(st["amplitude"], float)
            if table.ndim != 2 or table.shape[1] != 2:
                err.add(f"{key}.amplitude", "must be a list of [time, value] pairs")
                continue
        dsets = []
        for j, bc in enumerate(st.get("dirichlet", [])):
            bkey = f"{key}.dirichlet[{j}]"
            err.unknown(bkey, bc, _BC_KEYS)
            nodes = _nodes(mesh, bc, bkey, err)
            comps = tuple(int(c) for c in bc.get("components", ()))
            vals = tuple(float(v) for v in bc.get("values", ()))
            if not comps or len(comps) != len(vals) or any(not 0 <= c < mesh.dim for c in comps):
                err.add(bkey, f"components and values must be equal-length with components in 0..{mesh.dim - 1}")
                continue
            if nodes is not None:
                dsets.append(DirichletSet(nodes, comps, vals))
        nsets = []
        for j, nb in enumerate(st.get("neumann", [])):
            nkey = f"{key}.neumann[{j}]"
            err.unknown(nkey, nb, {"side", "traction"})
            if nb.get("side") not in mesh.facets or len(nb.get("traction", ())) != mesh.dim:
                err.add(nkey, f"needs a known side and a traction of length {mesh.dim}")
                continue
            nsets.append(NeumannSet(nb["side"], tuple(float(v) for v in nb["traction"])))
        body = st.get("body_force")
        if body is not None and len(body) != mesh.dim:
            err.add(f"{key}.body_force", f"needs {mesh.dim} components")
            body = None
        try:
            stages.append(Stage(times, dsets, nsets, None if body is None else tuple(body), table,
                                st.get("name", f"stage{i + 1}")))
        except ValueError as exc:
            err.add(key, str(exc))
    return LoadProgram(stages) if stages else None


def _reaction(sec, mesh, err):
    if sec is None:
        return None
    err.unknown("reaction", sec, {"side", "box", "direction"})
    nodes = _nodes(mesh, sec, "reaction", err)
    direction = sec.get("direction", 0)
    if not isinstance(direction, int) or not 0 <= direction < mesh.dim:
        err.add("reaction.direction", f"must be an integer in 0..{mesh.dim - 1}")
        return None
    return None if nodes is None else (nodes, direction)


def _constraints(sec, catalog, err):
    err.unknown("constraints", sec, {"volume", "material_volumes", "price", "mass", "co2"})
    mv = {}
    for name, bound in sec.get("material_volumes", {}).items():
        if catalog is None:
            break
        try:
            mv[catalog.names.index(catalog.lookup(name).name)] = float(bound)
        except KeyError as exc:
            err.add(f"constraints.material_volumes.{name}", str(exc.args[0]))
    kw = {k: sec[k] for k in ("volume", "price", "mass", "co2") if k in sec}
    return err.build("constraints", ConstraintSet, material_volumes=mv, **kw)


def _optimizer(sec, csec, err):
    keys = {"max_iter", "tol_change"} | _MMA_KEYS
    err.unknown("optimizer", sec, keys)
    err.unknown("continuation", csec, _CONT_KEYS)
    mma = err.build("optimizer", MmaSettings, **{k: v for k, v in sec.items() if k in _MMA_KEYS})
    cont = err.build("continuation", Continuation, **csec)
    if cont is not None and (cont.every < 1 or cont.start < 1):
        err.add("continuation", "start and every must be >= 1")
    max_iter = sec.get("max_iter", 300)
    if not isinstance(max_iter, int) or max_iter < 1:
        err.add("optimizer.max_iter", "must be a positive integer")
    if mma is None or cont is None:
        return None
    return OptimizerSettings(max_iter=max_iter, tol_change=float(sec.get("tol_change", 1e-3)), mma=mma,
                             continuation=cont)
