import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from voroto.fea import MacroMesh, assemble_solve, parse_bc, problem
from voroto.homogenize import plane_stress_matrix
from voroto.optimize import (
    ALPHA,
    BETA,
    N_DELTA,
    THETA,
    ConvergenceLog,
    DesignState,
    LogEntry,
    Neighborhood,
    OptConfig,
    OptimizationDiverged,
    Optimizer,
    RadialFilter,
    build_surrogate_inputs,
    load_state,
    optimize,
    penalty_loss,
    radial_filter,
    save_state,
    step,
    volume_constraint,
)
from voroto.surrogate import MlpModel
from voroto.voronoi import BASE_GRID, NEIGHBOR_OFFSETS


def smooth_model(seed=1):
    """Random surrogate with outputs in a plausible range."""
    m = MlpModel.initialize(seed)
    for W in m.weights:
        W *= 0.5
    m.biases[-1][:] = [1, 0.2, 1, 0.1, 0.1, 0.6, 0.4]
    return m


# filter

def test_filter_preserves_constants_and_identity_radius():
    mesh = MacroMesh(7, 4)
    np.testing.assert_allclose(radial_filter(np.full(28, 2.5), mesh, 3.0), 2.5, rtol=1e-15)
    x = np.random.default_rng(0).normal(size=28)
    np.testing.assert_array_equal(radial_filter(x, mesh, 0.9), x)
    np.testing.assert_array_equal(radial_filter(x, mesh, 0.0), x)


def test_filter_spike_hand_weights():
    mesh = MacroMesh(5, 5)
    x = np.zeros(25)
    x[mesh.element_index(2, 2)] = 1.0
    y = radial_filter(x, mesh, 3.0)
    for i in range(5):
        for j in range(5):
            # weight table of element (i, j): cone weights to every in-domain element
            ws = {(a, b): max(0.0, 3 - math.hypot(a - i, b - j)) for a in range(5) for b in range(5)}
            expected = ws[(2, 2)] / sum(ws.values())
            assert y[mesh.element_index(i, j)] == pytest.approx(expected, rel=1e-14)


@settings(max_examples=25)
@given(st.integers(1, 6), st.integers(1, 6), st.floats(0, 4), st.integers(0, 2**32 - 1))
def test_filter_transpose_is_adjoint(nx, ny, r, seed):
    mesh = MacroMesh(nx, ny)
    f = RadialFilter(mesh, r)
    rng = np.random.default_rng(seed)
    x, y = rng.normal(size=(2, mesh.n_elements))
    assert np.dot(f(x), y) == pytest.approx(np.dot(x, f.transpose(y)), rel=1e-12, abs=1e-12)
    X, Y = rng.normal(size=(2, mesh.n_elements, 3))
    assert np.sum(f(X) * Y) == pytest.approx(np.sum(X * f.transpose(Y)), rel=1e-12, abs=1e-12)


# neighborhood inputs

def _state(mesh, z=None, config=OptConfig()):
    st_ = DesignState.initial(mesh, config)
    if z is not None:
        st_.z[:] = z
    return st_


def test_interior_zero_perturbation_inputs():
    mesh = MacroMesh(3, 3)
    X = build_surrogate_inputs(_state(mesh), mesh)
    e = mesh.element_index(1, 1)
    expected = (NEIGHBOR_OFFSETS[:, None, :] + BASE_GRID[None]).ravel()
    np.testing.assert_allclose(X[e, :72], expected, atol=1e-15)
    cfg = OptConfig()
    np.testing.assert_allclose(X[e, 72:], [1.65, 1.25, math.pi / 2], rtol=1e-12)
    np.testing.assert_allclose(X[:, 72:], X[e, 72:][None].repeat(9, 0), rtol=1e-12)
    assert X.shape == (9, 75)


def _mirror_neighborhood(mesh, P, i, j):
    """Hand construction: mirror whole elements across the domain edges in global coordinates."""
    out = []
    for di, dj in NEIGHBOR_OFFSETS.astype(int):
        ni, nj = i + di, j + dj
        si = min(max(ni, -ni - 1), 2 * mesh.nelx - ni - 1)
        sj = min(max(nj, -nj - 1), 2 * mesh.nely - nj - 1)
        src = P[mesh.element_index(si, sj), :N_DELTA].reshape(4, 2)
        slots = {}
        for s in range(4):
            base = np.array([si, sj]) + BASE_GRID[s]
            pt = base + src[s]
            if ni != si:
                base[0], pt[0] = 2 * (0 if ni < 0 else mesh.nelx) - base[0], 2 * (0 if ni < 0 else mesh.nelx) - pt[0]
            if nj != sj:
                base[1], pt[1] = 2 * (0 if nj < 0 else mesh.nely) - base[1], 2 * (0 if nj < 0 else mesh.nely) - pt[1]
            slot = int(np.argmin(np.linalg.norm(BASE_GRID + [ni, nj] - base, axis=1)))
            slots[slot] = pt - [i, j]
        out.append(np.array([slots[s] for s in range(4)]))
    return np.concatenate(out).ravel()


@pytest.mark.parametrize("nx,ny", [(3, 3), (1, 1), (4, 2)])
def test_reflected_neighborhoods(nx, ny):
    mesh = MacroMesh(nx, ny)
    z = np.random.default_rng(nx * 10 + ny).normal(size=(mesh.n_elements, 11))
    st_ = _state(mesh, z)
    X = build_surrogate_inputs(st_, mesh)
    P = st_.values()
    for i in range(nx):
        for j in range(ny):
            np.testing.assert_allclose(X[mesh.element_index(i, j), :72],
                                       _mirror_neighborhood(mesh, P, i, j), atol=1e-14)


def test_one_by_one_mesh_all_reflections():
    mesh = MacroMesh(1, 1)
    z = np.random.default_rng(0).normal(size=(1, 11))
    X = build_surrogate_inputs(_state(mesh, z), mesh)[0, :72].reshape(9, 4, 2)
    center = X[4]
    for k, (di, dj) in enumerate(NEIGHBOR_OFFSETS):
        expected = center.copy()
        if di:
            expected[:, 0] = 2 * (0 if di < 0 else 1) - expected[:, 0]
        if dj:
            expected[:, 1] = 2 * (0 if dj < 0 else 1) - expected[:, 1]
        got = {tuple(np.round(p, 12)) for p in X[k]}
        assert got == {tuple(np.round(p, 12)) for p in expected}


def test_neighborhood_transpose_is_adjoint():
    mesh = MacroMesh(4, 3)
    nb = Neighborhood.build(mesh)
    rng = np.random.default_rng(0)
    d, g = rng.normal(size=(12, 8)), rng.normal(size=(12, 72))
    lin = nb.coords(d) - nb.offset
    assert np.sum(lin * g) == pytest.approx(np.sum(d * nb.coords_transpose(g, 12)), rel=1e-12)


# constraint, loss, schedule

def test_volume_constraint_examples():
    assert volume_constraint(np.full(5, 0.4), 0.4) == pytest.approx(0.0, abs=1e-15)
    assert volume_constraint(np.full(5, 0.2), 0.4) == pytest.approx(-0.5)
    v = np.random.default_rng(0).uniform(size=17)
    assert volume_constraint(v, 0.3) == pytest.approx(v.mean() / 0.3 - 1, rel=1e-14)
    with pytest.raises(ValueError):
        volume_constraint(v, 0.0)


def test_penalty_loss_and_schedule():
    cfg = OptConfig()
    assert penalty_loss(5.0, 5.0, 0.0, cfg.gamma(0)) == 1.0
    assert cfg.gamma(0) == 0.1
    assert cfg.gamma(4) == pytest.approx(1.1, abs=1e-15)
    assert penalty_loss(2.0, 1.0, 0.1, 1.0) == pytest.approx(2.01, rel=1e-15)
    with pytest.raises(ValueError):
        penalty_loss(1.0, 0.0, 0.0, 0.1)


def test_config_validation():
    for bad in (dict(vmax=0), dict(vmax=1.2), dict(filter_radius=-1), dict(beta=(2, 1))):
        with pytest.raises(ValueError):
            OptConfig(**bad)


@settings(max_examples=30)
@given(st.lists(st.floats(-60, 60), min_size=11, max_size=11))
def test_mapped_values_inside_bounds(zs):
    mesh = MacroMesh(1, 1)
    cfg = OptConfig()
    lo, hi = cfg.bounds()
    P = _state(mesh, np.array(zs)[None], cfg).values()
    assert np.all(P >= lo) and np.all(P <= hi)


# gradient, step, run

def _fd_gradient(opt, z, gamma, h=1e-4):
    fd = np.zeros_like(z)
    for idx in np.ndindex(z.shape):
        zp, zm = z.copy(), z.copy()
        zp[idx] += h
        zm[idx] -= h
        fd[idx] = (opt.evaluate(zp, gamma, False).loss - opt.evaluate(zm, gamma, False).loss) / (2 * h)
    return fd


@pytest.mark.parametrize("seed", [0, 1])
def test_end_to_end_gradient_matches_fd(seed):
    mesh = MacroMesh(3, 2)
    bc = parse_bc(mesh, "edge left xy", "node 1 0.5 y -1")
    opt = Optimizer(smooth_model(seed + 1), mesh, bc, OptConfig(vmax=0.5, filter_radius=1.5))
    z = np.random.default_rng(seed).normal(size=opt.state.z.shape)
    ev = opt.evaluate(z, gamma=1.3)
    fd = _fd_gradient(opt, z, 1.3)
    assert np.max(np.abs(ev.grad - fd) / np.abs(fd)) < 1e-4


def test_zero_learning_rate_keeps_state():
    mesh, bc = problem("mid-cantilever", 4, 2)
    opt = Optimizer(smooth_model(), mesh, bc, OptConfig(learning_rate=0.0))
    z0 = opt.state.z.copy()
    state, entry = step(opt)
    np.testing.assert_array_equal(state.z, z0)
    assert len(opt.log) == 1 and entry.iteration == 0
    assert entry.loss == pytest.approx(1.0 + 0.1 * entry.g_v**2)


def test_run_stops_on_tolerance_and_logs_contiguously(tmp_path):
    mesh, bc = problem("mid-cantilever", 4, 2)
    state, log, opt = optimize(smooth_model(), mesh, bc, OptConfig(max_iter=40, tol=1e-3))
    its = log.column("iteration")
    np.testing.assert_array_equal(its, np.arange(len(log)))
    np.testing.assert_allclose(log.column("gamma"), 0.1 + 0.25 * its)
    if len(log) < 40:
        assert abs(log.entries[-1].loss - log.entries[-2].loss) < 1e-3
        assert abs(log.entries[-1].g_v) < 0.05
    # returned state is the one evaluated last
    assert opt.evaluate(state.z, log.entries[-1].gamma, False).loss == pytest.approx(log.entries[-1].loss)
    log.write_csv(tmp_path / "log.csv")
    back = ConvergenceLog.read_csv(tmp_path / "log.csv")
    assert back.entries == log.entries
    with pytest.raises(ValueError):
        log.append(LogEntry(len(log) + 3, 1, 1, 0, 0, 1, 0))


def test_small_loss_steps_do_not_stop_an_infeasible_run():
    # constant surrogate: g_V stays at 0.06 and each loss step is 0.25 * 0.06**2 < tol
    m = smooth_model()
    for W in m.weights:
        W[:] = 0
    m.biases[-1][6] = 0.4 * 1.06
    mesh, bc = problem("tensile-bar", 4, 2)
    _, log, _ = optimize(m, mesh, bc, OptConfig(vmax=0.4, max_iter=12))
    assert np.all(np.abs(np.diff(log.column("loss"))) < 1e-3)
    np.testing.assert_allclose(log.column("g_v"), 0.06, rtol=1e-12)
    assert len(log) == 12
    _, log, _ = optimize(m, mesh, bc, OptConfig(vmax=0.4, max_iter=12, feasibility_tol=0.1))
    assert len(log) == 2


def test_runs_are_deterministic():
    mesh, bc = problem("heel-bone", 4, 2)
    cfg = OptConfig(max_iter=15)
    _, a, _ = optimize(smooth_model(), mesh, bc, cfg)
    _, b, _ = optimize(smooth_model(), mesh, bc, cfg)
    for name in ("compliance", "g_v", "loss"):
        np.testing.assert_array_equal(a.column(name), b.column(name))


def test_nan_aborts_with_last_good_state():
    mesh, bc = problem("mid-cantilever", 2, 2)
    m = smooth_model()
    m.biases[0][:] = np.nan
    opt = Optimizer(m, mesh, bc)
    with pytest.raises(OptimizationDiverged) as info:
        opt.step()
    np.testing.assert_array_equal(info.value.last_good_state.z, opt.state.z)


def test_theta_fixed_config_and_state_roundtrip(tmp_path):
    cfg = OptConfig().with_theta_fixed(0.0)
    mesh = MacroMesh(3, 2)
    st_ = DesignState.initial(mesh, cfg)
    st_.z[:] = np.random.default_rng(0).normal(size=st_.z.shape)
    assert np.all(st_.values()[:, THETA] == 0.0)
    save_state(tmp_path / "s.bin", st_, {"note": 1})
    back, header = load_state(tmp_path / "s.bin")
    np.testing.assert_array_equal(back.z, st_.z)
    np.testing.assert_array_equal(back.values(), st_.values())
    assert header["note"] == 1 and back.mesh == mesh


def test_initial_state_values():
    P = DesignState.initial(MacroMesh(2, 2), OptConfig()).values()
    np.testing.assert_allclose(P[:, :N_DELTA], 0, atol=1e-15)
    np.testing.assert_allclose(P[:, BETA], 1.65)
    np.testing.assert_allclose(P[:, ALPHA], 1.25)
    np.testing.assert_allclose(P[:, THETA], math.pi / 2)


def test_solid_limit_matches_solid_fea():
    """A surrogate that always predicts solid material reproduces the solid compliance."""
    C = plane_stress_matrix()
    L = np.linalg.cholesky(C)
    m = MlpModel.zeros()
    m.biases[-1][:] = [L[0, 0], L[1, 0], L[1, 1], L[2, 0], L[2, 1], L[2, 2], 1.0]
    mesh, bc = problem("mid-cantilever", 8, 4)
    cfg = OptConfig(vmax=1.0, beta=(3.0, 3.0), max_iter=3)
    _, log, _ = optimize(m, mesh, bc, cfg)
    J_solid = assemble_solve(mesh, bc, np.repeat(C[None], mesh.n_elements, 0)).compliance
    assert log.entries[-1].compliance == pytest.approx(J_solid, rel=1e-10)
    assert log.entries[-1].g_v == pytest.approx(0.0, abs=1e-12)
