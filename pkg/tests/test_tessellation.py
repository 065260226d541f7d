import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gradflow_fv.errors import MeshFormatError
from gradflow_fv.tessellation import (Tessellation, build_cartesian, build_rectilinear,
                                      diffusion_tensor, first_moment_residual, load_mesh,
                                      save_mesh, validate)


def test_cartesian_1d_example():
    t = build_cartesian((0.0, 1.0), 0.25)
    assert t.n_cells == 4 and t.n_faces == 3
    np.testing.assert_array_equal(t.volumes, 0.25)
    np.testing.assert_allclose(t.tau, 4.0, rtol=1e-15)
    assert t.h == 0.25


def test_cartesian_2d_example():
    t = build_cartesian([(0, 1), (0, 1)], 0.5)
    assert t.n_cells == 4 and t.n_faces == 4
    np.testing.assert_allclose(t.tau, 1.0, rtol=1e-15)
    assert t.h == pytest.approx(0.5 * math.sqrt(2))
    assert np.all(t.faces[:, 0] < t.faces[:, 1])


def test_cartesian_rejects_bad_spacing():
    with pytest.raises(ValueError):
        build_cartesian((0, 1), 0.0)
    with pytest.raises(ValueError):
        build_cartesian((0, 1), 2.0)
    with pytest.warns(UserWarning):
        t = build_cartesian((0, 1), 0.3)
    assert t.n_cells == 3


def test_faces_reoriented_and_arrays_frozen():
    t = Tessellation([1.0, 1.0], [[0.5], [1.5]], [[1, 0]], [1.0])
    assert tuple(t.faces[0]) == (0, 1)
    with pytest.raises(ValueError):
        t.volumes[0] = 2.0


def test_neighbors():
    t = build_cartesian([(0, 1), (0, 1)], 1 / 3)
    np.testing.assert_array_equal(t.neighbors(4), [1, 3, 5, 7])
    assert t.n_neighbors.tolist() == [2, 3, 2, 3, 4, 3, 2, 3, 2]
    for f in t.cell_faces(4):
        assert 4 in t.faces[f]


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_diffusion_tensor_interior(dim):
    t = build_cartesian([(0, 1)] * dim, 0.25)
    T = diffusion_tensor(t)
    interior = t.n_neighbors == 2 * dim
    assert interior.any()
    np.testing.assert_allclose(T[interior], np.broadcast_to(2 * np.eye(dim), T[interior].shape),
                               rtol=0, atol=1e-14)
    # corner cell: one neighbour per axis
    np.testing.assert_allclose(T[0], np.eye(dim), atol=1e-14)


def test_first_moment_zero_interior():
    t = build_cartesian([(0, 1), (0, 2)], 0.25)
    r = first_moment_residual(t)
    interior = t.n_neighbors == 4
    assert np.all(r[interior] == 0.0)


def test_validate_cartesian():
    rep1 = validate(build_cartesian((0, 1), 0.1))
    assert rep1.zeta_inner == pytest.approx(0.5)
    rep2 = validate(build_cartesian([(0, 1), (0, 1)], 0.1))
    assert rep2.orthogonality_max_angle == 0.0
    assert rep2.passes_orthogonality
    assert rep2.zeta_inner == pytest.approx(1 / (2 * math.sqrt(2)))
    assert rep2.zeta_face == pytest.approx(1 / math.sqrt(2))
    assert rep2.passes_nondegeneracy
    assert not validate(build_cartesian([(0, 1), (0, 1)], 0.1), zeta_min=0.49).passes_nondegeneracy


def test_validate_without_boxes():
    t = Tessellation([1.0, 1.0, 1.0], [[0.5], [1.5], [2.5]], [[0, 1], [1, 2]], [1.0, 1.0])
    rep = validate(t)
    assert math.isnan(rep.orthogonality_max_angle)
    assert not rep.passes_orthogonality
    assert rep.zeta_inner >= 0


def test_rectilinear_nonuniform():
    t = build_rectilinear([np.array([0.0, 0.1, 0.4, 1.0])])
    np.testing.assert_allclose(t.volumes, [0.1, 0.3, 0.6])
    np.testing.assert_allclose(t.tau, [1 / 0.2, 1 / 0.45])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.integers(2, 6), st.integers(0, 2**31))
def test_divergence_sums_to_zero(dim, n, seed):
    t = build_cartesian([(0, 1)] * dim, 1.0 / n)
    J = np.random.default_rng(seed).normal(size=t.n_faces)
    div = t.face_divergence(J)
    assert abs(div.sum()) <= 1e-13 * max(1.0, np.abs(J).sum())


def test_divergence_example():
    t = build_cartesian((0, 1), 1 / 3)
    np.testing.assert_array_equal(t.face_divergence([1.0, 1.0]), [1.0, 0.0, -1.0])


@pytest.mark.parametrize("dim", [1, 2, 3])
def test_mesh_roundtrip(tmp_path, dim):
    t = build_cartesian([(0, 1)] * dim, 1 / 3)
    p = tmp_path / "m.fvmesh"
    save_mesh(t, p)
    u = load_mesh(p)
    assert u == t
    assert u.grid_edges is not None
    assert save_mesh(u, tmp_path / "n.fvmesh") is None
    assert (tmp_path / "n.fvmesh").read_text() == p.read_text()


def test_load_minimal_file(tmp_path):
    p = tmp_path / "m.fvmesh"
    p.write_text("# three cells\nFVMESH 1 1 3 2\nC 0 1 0.5\nC 1 1 1.5\nC 2 1 2.5\n"
                 "F 0 1 1\nF 1 2 1  # trailing comment\n")
    t = load_mesh(p)
    assert t.n_cells == 3 and t.boxes is None
    np.testing.assert_allclose(t.tau, 1.0)


BAD = [
    ("FVMESH 1 1 2 1\nC 0 1 0.5\nC 1 1 1.5\nF 0 1 -1\n", "negative face area, line 4"),
    ("FVMESH 1 1 2 1\nC 0 1 0.5\nC 1 1 1.5\n", "expected 1 faces"),
    ("FVMESH 1 1 2 1\nC 0 1 0.5\nC 1 1 1.5\nF 0 7 1\n", "missing cell 7, line 4"),
    ("FVMESH 1 1 2 1\nC 0 1 0.5\nC 0 1 1.5\nF 0 1 1\n", "duplicate cell id 0"),
    ("FVMESH 1 1 2 1\nC 0 1 0.5\nC 1 -1 1.5\nF 0 1 1\n", "negative volume, line 3"),
    ("FVMESH 1 1 2 1\nC 0 1 0.5\nQ 1 1 1.5\n", "unknown record type 'Q', line 3"),
    ("MESH 1 1 2 1\n", "missing FVMESH header, line 1"),
    ("FVMESH 1 1 2 1\nC 0 1 x\n", "malformed number in C record, line 2"),
    ("", "empty mesh file"),
]


@pytest.mark.parametrize("text,msg", BAD)
def test_load_errors(tmp_path, text, msg):
    p = tmp_path / "bad.fvmesh"
    p.write_text(text)
    with pytest.raises(MeshFormatError, match=msg):
        load_mesh(p)


def test_load_missing_file(tmp_path):
    with pytest.raises(MeshFormatError):
        load_mesh(tmp_path / "nope.fvmesh")
