"""Command line entry point: analyze, optimize, verify-uniaxial and check-gradients."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4
UNIAXIAL_TOL = 1e-8

log = logging.getLogger("plastopt")


def build_parser():
    p = argparse.ArgumentParser(prog="plastopt", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)
    specs = {
        "analyze": "run the forward analysis of the configured (or a saved) design",
        "optimize": "run the MMA design loop",
        "verify-uniaxial": "compare the single-element cyclic stretch test with the semi-analytical oracle",
        "check-gradients": "finite-difference check of the adjoint sensitivities",
    }
    for name, help_ in specs.items():
        s = sub.add_parser(name, help=help_)
        s.add_argument("--config", metavar="PATH", required=name != "verify-uniaxial")
        s.add_argument("--out-dir", metavar="PATH")
        s.add_argument("--threads", type=int, metavar="N")
        s.add_argument("--verbose", "-v", action="count", default=0)
        if name == "analyze":
            s.add_argument("--design", metavar="CSV", help="physical design file written by optimize")
    return p


def _limit_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)
    if n == 1:
        os.environ["XLA_FLAGS"] = os.environ.get("XLA_FLAGS", "") + " --xla_cpu_multi_thread_eigen=false"


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=[logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)],
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    from .config import ConfigError, load_config

    cfg = None
    if args.config:
        try:
            cfg = load_config(args.config)
        except ConfigError as exc:
            for key, reason in exc.errors:
                print(f"config error: {key}: {reason}", file=sys.stderr)
            return EXIT_CONFIG
    threads = args.threads if args.threads is not None else (cfg.threads if cfg else 1)
    if threads < 1:
        print("config error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    _limit_threads(threads)
    out_dir = args.out_dir or (cfg.out_dir if cfg else "out")
    os.makedirs(out_dir, exist_ok=True)

    from .constitutive import ConstitutiveError
    from .solver import AnalysisFailure

    commands = {"analyze": cmd_analyze, "optimize": cmd_optimize, "verify-uniaxial": cmd_verify_uniaxial,
                "check-gradients": cmd_check_gradients}
    try:
        return commands[args.command](cfg, out_dir, args)
    except (AnalysisFailure, ConstitutiveError) as exc:
        print(f"solver error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


def _uniform_design(cfg, problem):
    import numpy as np
    return np.full(problem.n_el, cfg.initial_rho), np.full((problem.n_el, problem.n_xi), cfg.initial_xi)


def _read_design(path, n_el):
    import numpy as np
    from .config import ConfigError
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if len(rows) != n_el:
        raise ConfigError([("design", f"{path} has {len(rows)} rows, mesh has {n_el} elements")])
    rho = np.array([float(r["rho_bar"]) for r in rows])
    keys = sorted((k for k in rows[0] if k.startswith("xi_bar_")), key=lambda k: int(k.rsplit("_", 1)[1]))
    xi = np.array([[float(r[k]) for k in keys] for r in rows]).reshape(n_el, len(keys))
    return rho, xi


def _write_outputs(out_dir, problem, model, hist, design_field, vtk_every, prefix=""):
    """Response CSV, VTK snapshots and the force / Newton figures of one analysis."""
    from . import io, plotting

    rows = io.write_response_csv(os.path.join(out_dir, f"{prefix}response.csv"), hist, model, problem.reaction)
    steps = range(vtk_every, len(hist), vtk_every) if vtk_every else []
    for n in sorted(set(steps) | {len(hist) - 1}):
        io.write_vtk(os.path.join(out_dir, f"{prefix}step_{n:04d}.vtk"), problem.mesh, hist.U[n],
                     cell_data=io.step_cell_fields(hist, model, n, design_field.rho_bar, design_field.xi_bar))
    if problem.reaction is not None:
        u = [r[2] for r in rows]
        F = [r[3] for r in rows]
        plotting.force_displacement(os.path.join(out_dir, f"{prefix}force_displacement.png"), u, F)
    if len(hist) > 1:
        plotting.newton_convergence(os.path.join(out_dir, f"{prefix}newton_convergence.png"), hist.logs)


def cmd_analyze(cfg, out_dir, args):
    from . import design as D
    from . import io, plotting
    from .objectives import eval_objective
    from .solver import Model, run_analysis

    problem = cfg.problem()
    if args.design:
        rho_bar, xi_bar = _read_design(args.design, problem.n_el)
        dfield = D.DesignField(rho_bar, xi_bar, rho_bar, xi_bar, rho_bar, xi_bar, rho_bar, xi_bar)
    else:
        dfield = problem.physical(*_uniform_design(cfg, problem))
    mf = D.material_field(dfield.rho_bar, dfield.xi_bar, problem.catalog, problem.interp, problem.proj)
    model = Model(problem.mesh, mf, problem.quad, isochoric=cfg.solver.isochoric)
    t0 = time.time()
    hist = run_analysis(model, problem.program, cfg.solver)
    obj = eval_objective(hist, model, problem.weights)
    summary = {"J": obj.J, **{f"J_{k}": v for k, v in obj.terms.items()}, "steps": hist.n_steps,
               "newton_iterations": sum(lg.iterations for lg in hist.logs), "seconds": time.time() - t0}
    _write_outputs(out_dir, problem, model, hist, dfield, cfg.vtk_every)
    io.write_design_csv(os.path.join(out_dir, "design.csv"), dfield.rho_bar, dfield.xi_bar, problem.mesh.centroids)
    if problem.mesh.dim == 2:
        plotting.design_map(os.path.join(out_dir, "design.png"), problem.mesh, dfield.rho_bar, dfield.xi_bar,
                            problem.catalog.names)
    _dump(out_dir, "summary.json", summary)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_optimize(cfg, out_dir, args):
    from . import io, plotting
    from .mma import optimize_loop

    problem = cfg.problem()
    rho0, xi0 = _uniform_design(cfg, problem)
    hist_path = os.path.join(out_dir, "history.csv")

    res = optimize_loop(problem, rho0, xi0, cfg.optimizer)
    ev = res.evaluation
    res.write_history(hist_path, ev.g_names)
    df = ev.design
    io.write_design_csv(os.path.join(out_dir, "design.csv"), df.rho_bar, df.xi_bar, problem.mesh.centroids)
    model = problem.model_for(df)
    _write_outputs(out_dir, problem, model, ev.history, df, cfg.vtk_every, prefix="final_")
    plotting.optimization_history(os.path.join(out_dir, "history.png"), res.records, ev.g_names)
    if problem.mesh.dim == 2:
        plotting.design_map(os.path.join(out_dir, "design.png"), problem.mesh, df.rho_bar, df.xi_bar,
                            problem.catalog.names)
    summary = {"iterations": len(res.records), "converged": res.converged, "J": ev.J,
               **{f"J_{k}": v for k, v in ev.terms.items()}, **dict(zip(ev.g_names, map(float, ev.g)))}
    _dump(out_dir, "summary.json", summary)
    print(json.dumps(summary, indent=2))
    return EXIT_OK


def cmd_verify_uniaxial(cfg, out_dir, args):
    from . import plotting
    from .problems import verify_uniaxial

    spl = cfg.verify_steps_per_leg if cfg else 40
    settings = cfg.solver if cfg else None
    rep = verify_uniaxial(spl, settings=settings)
    with open(os.path.join(out_dir, "uniaxial.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "lambda", "branch", "tau11_fea", "tau11_oracle", "lam_l_fea", "lam_l_oracle",
                    "det_be_fea", "det_be_oracle"])
        ref = rep.reference
        for n, lam in enumerate(rep.lams):
            w.writerow([n + 1, f"{lam:.12g}", ref.branch[n], f"{rep.fea['tau11'][n]:.15e}", f"{ref.tau11[n]:.15e}",
                        f"{rep.fea['lam_l'][n]:.15e}", f"{ref.lam_l[n]:.15e}", f"{rep.fea['det_be'][n]:.15e}",
                        f"{ref.det_be[n]:.15e}"])
    plotting.oracle_comparison(os.path.join(out_dir, "uniaxial.png"), rep.lams, rep.fea,
                               {"tau11": rep.reference.tau11, "lam_l": rep.reference.lam_l})
    ok = all(v <= UNIAXIAL_TOL for v in rep.errors.values())
    summary = {"errors_2norm": rep.errors, "tolerance": UNIAXIAL_TOL, "seconds": rep.seconds, "passed": ok}
    _dump(out_dir, "uniaxial_report.json", summary)
    for k, v in rep.errors.items():
        print(f"{k:7s} 2-norm error {v:.3e}  {'PASS' if v <= UNIAXIAL_TOL else 'FAIL'}")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_check_gradients(cfg, out_dir, args):
    import numpy as np
    from . import plotting
    from .pipeline import check_gradients

    problem = cfg.problem()
    gs = cfg.gradients
    rng = np.random.default_rng(gs.seed)
    n_el, n_xi = problem.n_el, problem.n_xi
    rho = np.full(n_el, gs.rho) if gs.rho is not None else rng.uniform(0.3, 1.0, n_el)
    xi = np.full((n_el, n_xi), gs.xi) if gs.xi is not None else rng.uniform(0.0, 1.0, (n_el, n_xi))
    rep = check_gradients(problem, rho, xi, rng, gs.per_family, gs.eps)
    rep.write_csv(os.path.join(out_dir, "gradients.csv"))
    if rep.samples:
        plotting.gradient_check(os.path.join(out_dir, "gradients.png"), rep)
    summary = {"functions": rep.summary(), "flagged": [list(f) for f in rep.flagged], "tolerance": gs.tol,
               "passed": rep.passed(gs.tol)}
    _dump(out_dir, "gradients_report.json", summary)
    for name, s in summary["functions"].items():
        print(f"{name:9s} max rel {s['max_rel']:.2e}  median rel {s['median_rel']:.2e}")
    print(f"{len(rep.flagged)} flagged samples; {'PASS' if summary['passed'] else 'FAIL'} at {gs.tol:g}")
    return EXIT_OK if summary["passed"] else EXIT_VERIFY


def _dump(out_dir, name, obj):
    with open(os.path.join(out_dir, name), "w") as fh:
        json.dump(obj, fh, indent=2, default=float)


if __name__ == "__main__":
    sys.exit(main())
