import numpy as np
import pytest

from plastopt import constitutive as C
from plastopt import design as D
from plastopt.materials import MaterialCatalog, MaterialSpec
from plastopt.mesh import DirichletSet, LoadProgram, Stage, build_structured_mesh, external_force
from plastopt.oracle import elastic_lateral, kirchhoff_uniaxial
from plastopt.problems import bend_then_pull, cantilever_beam, uniaxial_column
from plastopt.solver import (AnalysisFailure, Model, SolverSettings, assemble_residual, assemble_tangent,
                             reaction_force, run_analysis, stage_context)

SOFT = MaterialSpec.from_young("soft", 1.0, 0.3, 0.02, h_kin=0.05, K_iso=0.02)


def solid_model(mesh, mat):
    return Model(mesh, D.solid_field(MaterialCatalog([mat]), mesh.n_elements))


def linear_stiffness(mesh, quad, kappa, mu):
    """Plane-strain small-strain stiffness from Voigt B matrices, element by element."""
    lam = kappa - 2 * mu / 3
    K = np.zeros((mesh.n_dofs, mesh.n_dofs))
    for e in range(mesh.n_elements):
        Dm = np.array([[lam[e] + 2 * mu[e], lam[e], 0], [lam[e], lam[e] + 2 * mu[e], 0], [0, 0, mu[e]]])
        Ke = np.zeros((8, 8))
        for q in range(quad.n_qp):
            dN = quad.dN[e, q]
            B = np.zeros((3, 8))
            B[0, 0::2] = dN[:, 0]
            B[1, 1::2] = dN[:, 1]
            B[2, 0::2] = dN[:, 1]
            B[2, 1::2] = dN[:, 0]
            Ke += B.T @ Dm @ B * quad.weights[e, q]
        ed = mesh.element_dofs[e]
        K[np.ix_(ed, ed)] += Ke
    return K


def clamped_stage(mesh, times=(1.0,)):
    return Stage(np.asarray(times), [DirichletSet(mesh.select_nodes("left"), (0, 1), (0.0, 0.0))])


def test_zero_load_is_stress_free(dummy):
    mesh = build_structured_mesh(2, (2, 1), (2.0, 1.0))
    model = solid_model(mesh, dummy)
    hist = run_analysis(model, LoadProgram([clamped_stage(mesh)]))
    assert len(hist) == 2
    assert hist.logs[1].iterations == 0 and hist.logs[1].residuals == [0.0]
    assert np.all(hist.U[1] == 0)


def test_reactions_balance_under_affine_motion(dummy):
    mesh = build_structured_mesh(2, (1, 1), (1.0, 1.0))
    model = solid_model(mesh, dummy)
    G = np.array([[0.08, 0.05], [-0.02, -0.03]])
    nodes = np.arange(mesh.n_nodes)
    disp = mesh.nodes @ G.T
    sets = [DirichletSet(np.array([a]), (0, 1), tuple(disp[a])) for a in nodes]
    hist = run_analysis(model, LoadProgram([Stage([1.0], sets)]))
    f = hist.f_int[1].reshape(-1, 2)
    assert np.allclose(f.sum(axis=0), 0.0, atol=1e-14)
    assert np.abs(f).max() > 1e-3


def test_single_hex_uniaxial_reaction(dummy):
    lam = 1.05
    mesh, program = uniaxial_column([lam])
    model = solid_model(mesh, dummy)
    hist = run_analysis(model, program)
    ll = elastic_lateral(lam, 1.0, dummy)
    t11, _ = kirchhoff_uniaxial(lam, ll, 1.0, dummy)
    F = reaction_force(hist, model, mesh.select_nodes("right"), 0)[-1]
    assert F == pytest.approx(t11 / lam * 1.0, rel=1e-9)


def test_tangent_at_identity_is_linear_stiffness(dummy):
    mesh = build_structured_mesh(2, (3, 2), (3.0, 1.0), thickness=0.5)
    model = solid_model(mesh, dummy)
    resp = model.response(np.zeros(mesh.n_dofs), np.zeros(mesh.n_dofs), C.QuadPointState.virgin(model.n_pt))
    K = assemble_tangent(model, resp).toarray()
    ref = linear_stiffness(mesh, model.quad, np.full(6, dummy.kappa), np.full(6, dummy.mu))
    assert np.allclose(K, ref, atol=1e-13 * np.abs(ref).max())
    assert np.allclose(K, K.T, atol=1e-14)


def test_void_element_uses_interpolated_linear_stiffness(dummy, rng):
    mesh = build_structured_mesh(2, (2, 2), (2.0, 2.0))
    cat = MaterialCatalog([dummy])
    field = D.material_field(np.zeros(4), np.ones((4, 1)), cat, D.InterpolationParams())
    assert np.all(field.phi == 0)
    model = Model(mesh, field)
    U = 0.3 * rng.standard_normal(mesh.n_dofs)
    resp = model.response(U, np.zeros(mesh.n_dofs), C.QuadPointState.virgin(model.n_pt))
    K = assemble_tangent(model, resp).toarray()
    ref = linear_stiffness(mesh, model.quad, field.kappa, field.mu)
    assert np.allclose(K, ref, atol=1e-12 * np.abs(ref).max())


def _plastic_step(model, program, settings=None):
    hist = run_analysis(model, program, settings)
    n = next(i for i in range(1, len(hist)) if hist.plastic[i].sum() >= 4)
    return hist, n


def test_tangent_matches_residual_fd_at_plastic_state(rng):
    mesh, program, _ = cantilever_beam(nx=4, ny=2, u_max=0.4, levels=(1.0,), steps_per_leg=2)
    model = solid_model(mesh, SOFT)
    hist, n = _plastic_step(model, program)
    stage = program.stages[0]
    f_unit = external_force(mesh, model.quad, stage)
    ctx = stage_context(model, stage, f_unit, hist.U[0], hist.times[n])
    prev = hist.states[n - 1]
    U = hist.U[n]
    _, _, _, resp = assemble_residual(model, ctx, U, hist.U[n - 1], prev)
    K = assemble_tangent(model, resp)
    h = 1e-6
    for _ in range(5):
        V = rng.standard_normal(mesh.n_dofs)
        rp = assemble_residual(model, ctx, U + h * V, hist.U[n - 1], prev)[0]
        rm = assemble_residual(model, ctx, U - h * V, hist.U[n - 1], prev)[0]
        fd = -(rp - rm) / (2 * h)
        an = K @ V
        assert np.linalg.norm(fd - an) <= 1e-6 * np.linalg.norm(fd)


def test_elastic_step_converges_quadratically(dummy):
    mesh = build_structured_mesh(2, (4, 2), (4.0, 2.0))
    model = solid_model(mesh, dummy.scaled(sigma_y=50.0, sigma_inf=50.0))
    right = mesh.select_nodes("right")
    stage = Stage([1.0], [DirichletSet(mesh.select_nodes("left"), (0, 1), (0.0, 0.0)),
                          DirichletSet(right, (0, 1), (0.6, 0.8))])
    hist = run_analysis(model, LoadProgram([stage]), SolverSettings(eps_rel=1e-14, floor_rel=1e-15))
    r = np.asarray(hist.logs[1].residuals[1:])
    assert r[-1] / r[0] <= 1e-8
    big = r[r > 1e-9 * r[0]]
    rates = np.log(big[2:] / big[1:-1]) / np.log(big[1:-1] / big[:-2])
    assert len(rates) >= 1 and rates[-1] >= 1.7


def test_residual_criterion_and_line_search_lengths():
    mesh, program, _ = cantilever_beam(nx=4, ny=2, u_max=0.6, levels=(1.0, -0.5), steps_per_leg=2)
    settings = SolverSettings()
    hist = run_analysis(solid_model(mesh, SOFT), program, settings)
    for lg in hist.logs[1:]:
        r = lg.residuals
        assert lg.converged and lg.iterations <= 25
        assert r[-1] / r[1] <= settings.eps_rel or r[-1] <= 1e-9
        for length in lg.step_lengths:
            k = -np.log2(length)
            assert k == int(k) and 0 <= k < settings.n_search


def test_bisection_agrees_with_fine_steps():
    mesh, program, _ = cantilever_beam(nx=4, ny=2, u_max=0.8, levels=(1.0,), steps_per_leg=1)
    coarse = run_analysis(solid_model(mesh, SOFT), program, SolverSettings(max_iter=4))
    assert len(coarse) > 2
    times = np.asarray(coarse.times[1:])
    amp = program.stages[0].amplitude_table
    fine_prog = LoadProgram([Stage(times, program.stages[0].dirichlet, amplitude_table=amp)])
    fine = run_analysis(solid_model(mesh, SOFT), fine_prog)
    assert coarse.times[-1] == 1.0
    assert np.allclose(coarse.U[-1], fine.U[-1], rtol=0, atol=1e-9 * np.abs(fine.U[-1]).max())


def test_exhausted_bisection_raises():
    mesh, program, _ = cantilever_beam(nx=2, ny=1, u_max=0.8, levels=(1.0,), steps_per_leg=1)
    with pytest.raises(AnalysisFailure) as exc:
        run_analysis(solid_model(mesh, SOFT), program, SolverSettings(max_iter=1, n_try=1))
    assert exc.value.stage == 0 and exc.value.t_conv == 0.0


def test_two_stage_inheritance():
    mesh, program, (right, direction) = bend_then_pull(u_bend=0.6, u_pull=0.2, steps=2)
    model = solid_model(mesh, SOFT)
    hist = run_analysis(model, program)
    assert hist.stage == [0, 0, 0, 1, 1]
    end1 = hist.states[2]
    assert end1.alpha.max() > 0
    for a, b in zip(hist.states[:-1], hist.states[1:]):
        assert np.all(b.alpha >= a.alpha)
    # stage 2 starts from the bent shape: its vertical tip displacement is held where stage 1 left it
    tip_y = hist.U[2][right * 2 + 1]
    assert np.allclose(hist.U[4][right * 2 + 1], tip_y, atol=1e-14)
    assert np.allclose(hist.U[4][right * 2] - hist.U[2][right * 2], 0.2, atol=1e-14)
    F = reaction_force(hist, model, right, direction, steps=range(3, 5))
    assert F[-1] > 0
    with pytest.raises(ValueError):
        reaction_force(hist, model, mesh.select_nodes("top"), 0)


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(eps_search=1.5)
    with pytest.raises(ValueError):
        SolverSettings(max_iter=0)
