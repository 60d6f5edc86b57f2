import numpy as np
import pytest

from plastopt import design as D
from plastopt.materials import MaterialCatalog, builtin_catalog
from plastopt.objectives import (ConstraintSet, ObjectiveWeights, eval_constraints, eval_objective,
                                 objective_partials)
from plastopt.problems import cantilever_beam
from plastopt.solver import Model, run_analysis

STEEL = builtin_catalog().lookup("steel")


def _run(mat, **kw):
    mesh, program, _ = cantilever_beam(**kw)
    model = Model(mesh, D.solid_field(MaterialCatalog([mat]), mesh.n_elements))
    return model, run_analysis(model, program)


def test_weights_validation():
    with pytest.raises(ValueError):
        ObjectiveWeights(0.5, 0.6, 0.0)
    with pytest.raises(ValueError):
        ObjectiveWeights(-0.1, 0.1, 1.0)
    ObjectiveWeights(0.2, 0.3, 0.5)


def test_single_step_terms(dummy):
    model, hist = _run(dummy.scaled(sigma_y=50.0, sigma_inf=50.0), u_max=0.3, levels=(1.0,), steps_per_leg=1)
    t = eval_objective(hist, model, ObjectiveWeights()).terms
    assert t["energy"] == pytest.approx(t["stiff"], rel=1e-14)
    assert t["force"] == pytest.approx(2 * t["stiff"], rel=1e-14)
    J = eval_objective(hist, model, ObjectiveWeights(0.2, 0.3, 0.5)).J
    assert J == pytest.approx(0.2 * t["stiff"] + 0.3 * t["force"] + 0.5 * t["energy"], rel=1e-14)


def test_closed_elastic_cycle_dissipates_nothing(dummy):
    model, hist = _run(dummy.scaled(sigma_y=50.0, sigma_inf=50.0), u_max=0.4, levels=(1.0, 0.0), steps_per_leg=4)
    energy = eval_objective(hist, model, ObjectiveWeights()).terms["energy"]
    w = model.point_weights
    peak = max(abs(0.5 * np.sum(w * np.einsum("pij,pij->p", P, model.grad_u(U)))) for P, U in zip(hist.P, hist.U))
    assert abs(energy) <= 1e-8 * peak


def test_objective_partials_exact_for_bilinear_terms(rng):
    model, hist = _run(STEEL.scaled(sigma_y=50.0, sigma_inf=50.0), u_max=0.05, levels=(1.0, 0.4), steps_per_leg=2)
    weights = ObjectiveWeights(0.2, 0.3, 0.5)
    cP, cH = objective_partials(hist, model, weights)
    J0 = eval_objective(hist, model, weights).J
    N = hist.n_steps
    for n in range(1, N + 1):
        dP = rng.standard_normal(hist.P[n].shape)
        keep = hist.P[n]
        hist.P[n] = keep + dP
        dJ = eval_objective(hist, model, weights).J - J0
        hist.P[n] = keep
        assert dJ == pytest.approx(np.sum(cP[n] * dP), rel=1e-9)
        dU = 1e-3 * rng.standard_normal(hist.U[n].shape)
        keep = hist.U[n]
        hist.U[n] = keep + dU
        Jp = eval_objective(hist, model, weights).J
        hist.U[n] = keep - dU
        Jm = eval_objective(hist, model, weights).J
        hist.U[n] = keep
        dH = model.grad_u(dU)
        assert (Jp - Jm) / 2 == pytest.approx(np.sum(cH[n] * dH), rel=1e-9)
    # the end-force term touches only the last step
    cPf, cHf = objective_partials(hist, model, ObjectiveWeights(0.0, 1.0, 0.0))
    assert all(not np.any(cPf[n]) and not np.any(cHf[n]) for n in range(1, N))


def test_constraint_examples():
    cat = builtin_catalog().subset(["titanium", "bronze", "nickel-chromium", "steel"])
    vol = np.ones(8)
    names, g, _, _ = eval_constraints(np.ones(8), np.tile([1.0, 0, 0, 0], (8, 1)), cat, ConstraintSet(volume=0.5), vol)
    assert names == ["g_V0"] and g[0] == pytest.approx(0.5)
    cs = ConstraintSet(volume=0.5, material_volumes={0: 0.1, 2: 0.2})
    names, g, _, _ = eval_constraints(np.zeros(8), np.full((8, 4), 0.25), cat, cs, vol)
    assert names == ["g_V0", "g_V1", "g_V3"]
    assert np.allclose(g, [-0.5, -0.1, -0.2])
    cs = ConstraintSet(price=17.31, mass=7340.0, co2=17.64)
    names, g, _, _ = eval_constraints(np.ones(8), np.full((8, 4), 0.25), cat, cs, vol)
    assert names == ["g_P", "g_M", "g_C"]
    assert g[0] == pytest.approx(np.mean(cat.column("price")) - 17.31, abs=1e-12)
    assert g[1] == pytest.approx(np.mean(cat.column("mass_density")) - 7340.0, abs=1e-9)
    assert g[2] == pytest.approx(np.mean(cat.column("co2")) - 17.64, abs=1e-12)
    with pytest.raises(ValueError):
        ConstraintSet(volume=0.3, material_volumes={0: 0.4})


def test_constraint_gradients_fd(rng):
    cat = builtin_catalog().subset(["titanium", "bronze", "steel"])
    cs = ConstraintSet(volume=0.4, material_volumes={1: 0.2}, price=12.0, mass=6000.0, co2=10.0)
    vol = rng.uniform(0.5, 1.5, 5)
    rho = rng.uniform(0, 1, 5)
    xi = rng.dirichlet(np.ones(3), 5)
    _, g, dr, dx = eval_constraints(rho, xi, cat, cs, vol)
    h = 1e-6
    for e in range(5):
        r = rho.copy()
        r[e] += h
        fd = (eval_constraints(r, xi, cat, cs, vol)[1] - g) / h
        assert np.allclose(dr[:, e], fd, rtol=1e-6, atol=1e-8)
        for m in range(3):
            x = xi.copy()
            x[e, m] += h
            fd = (eval_constraints(rho, x, cat, cs, vol)[1] - g) / h
            assert np.allclose(dx[:, e, m], fd, rtol=1e-6, atol=1e-8)
