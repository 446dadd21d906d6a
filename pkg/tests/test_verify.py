import numpy as np
import pytest

from voroto.dataset import decode
from voroto.fea import MacroMesh, problem
from voroto.optimize import N_DELTA, DesignState, OptConfig, build_surrogate_inputs
from voroto.surrogate import MlpModel
from voroto.verify import (
    HomogenizationPredictor,
    VerificationReport,
    reconstruct,
    relative_error,
    verify,
    write_report,
)
from voroto.voronoi import total_density

R = 12


def random_state(mesh, seed, uniform_params=False):
    st = DesignState.initial(mesh, OptConfig())
    rng = np.random.default_rng(seed)
    st.z[:] = rng.normal(size=st.z.shape)
    if uniform_params:
        st.z[:, N_DELTA:] = st.z[0, N_DELTA:]
    return st


def test_uniform_state_tiles_identical():
    mesh = MacroMesh(3, 2)
    field = reconstruct(DesignState.initial(mesh, OptConfig()), R).values
    assert field.shape == (3 * R, 2 * R)
    tile = field[:R, :R]
    for i in range(3):
        for j in range(2):
            assert field[i * R:(i + 1) * R, j * R:(j + 1) * R].tobytes() == tile.tobytes()


def test_reconstruct_range_and_determinism():
    mesh = MacroMesh(4, 3)
    st = random_state(mesh, 0)
    a = reconstruct(st, R).values
    assert a.shape == (4 * R, 3 * R)
    assert a.min() >= 0 and a.max() <= 1
    assert reconstruct(st, R).values.tobytes() == a.tobytes()


def _border_gap(k, seed):
    mesh = MacroMesh(4, 4)
    X = build_surrogate_inputs(random_state(mesh, seed, uniform_params=True), mesh)
    worst = 0.0
    for i in (1, 2):
        for j in (1, 2):
            left = decode(X[mesh.element_index(i, j)], k)
            right = decode(X[mesh.element_index(i + 1, j)], k)
            below = decode(X[mesh.element_index(j, i)], k)
            above = decode(X[mesh.element_index(j, i + 1)], k)
            for t in np.linspace(0.02, 0.98, 17):
                worst = max(worst, abs(total_density((1.0, t), left) - total_density((0.0, t), right)))
                worst = max(worst, abs(total_density((t, 1.0), below) - total_density((t, 0.0), above)))
    return worst


def test_interior_border_continuity():
    """Each tile sees only its own 9-neighborhood, so borders agree up to the
    softmax mass of sites two elements away; that mass shrinks quickly with k."""
    sharp = [_border_gap(60.0, s) for s in range(10)]
    soft = [_border_gap(8.0, s) for s in range(10)]
    assert np.median(sharp) < 1e-10 and max(sharp) < 1e-5
    assert max(soft) < 5e-2
    assert np.median(sharp) < 1e-6 * np.median(soft)


def test_self_comparison_has_zero_error(tmp_path):
    mesh, bc = problem("mid-cantilever", 3, 2)
    st = random_state(mesh, 1)
    truth = HomogenizationPredictor(R)
    rep = verify(st, truth, mesh, bc, resolution=R)
    assert rep.compliance_error == 0 and rep.volume_error == 0 and rep.C_error_max == 0
    assert rep.n_elements == 6 and rep.resolution == R
    write_report(tmp_path / "r.csv", rep, {"resolution": R})
    text = (tmp_path / "r.csv").read_text().splitlines()
    assert text[0] == f"# resolution={R}" and text[1].startswith("J_nn,J_fe")


def test_truth_matrices_are_pd_and_model_path_differs():
    mesh, bc = problem("mid-cantilever", 3, 2)
    st = random_state(mesh, 2)
    C, v = HomogenizationPredictor(R)(build_surrogate_inputs(st, mesh))
    assert np.linalg.eigvalsh(C).min() > 0 and np.all((v >= 0) & (v <= 1))
    m = MlpModel.initialize(0)
    m.biases[-1][:] = [1, 0.1, 1, 0, 0, 0.5, 0.5]
    rep = verify(st, m, mesh, bc, resolution=R)
    assert isinstance(rep, VerificationReport)
    assert rep.compliance_error == pytest.approx(relative_error(rep.J_nn, rep.J_fe))
    assert rep.volume_error == pytest.approx(abs(rep.v_nn - rep.v_fe) / rep.v_fe)
    assert rep.C_error_max > 0


def test_parallel_truth_matches_serial():
    mesh = MacroMesh(3, 2)
    X = build_surrogate_inputs(random_state(mesh, 4), mesh)
    a = HomogenizationPredictor(R, threads=1)(X)
    b = HomogenizationPredictor(R, threads=2)(X)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_verify_requires_bc():
    with pytest.raises(ValueError):
        verify(random_state(MacroMesh(1, 1), 0), HomogenizationPredictor(R))
