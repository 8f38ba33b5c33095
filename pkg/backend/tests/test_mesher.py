import numpy as np
import pytest

from app.data_import import mesher
from app.services.fem_core import check_jacobians


def test_graded_coordinates_pass_through_breaks():
    coordinates = mesher.graded_coordinates([0.0, 0.025, 0.175, 0.2], 0.01)
    for point in (0.0, 0.025, 0.175, 0.2):
        assert np.isclose(coordinates, point).any()
    assert np.diff(coordinates).max() <= 0.01 + 1e-12
    assert np.all(np.diff(coordinates) > 0.0)


def test_structured_mesh_has_no_centre_nodes():
    mesh = mesher.structured_mesh(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0]))
    assert mesh.n_elements == 2
    assert mesh.n_nodes == 13
    assert check_jacobians(mesh) == []


def test_removed_cells_leave_unused_nodes_out():
    mesh = mesher.structured_mesh(np.array([0.0, 1.0, 2.0]), np.array([0.0, 1.0, 2.0]), removed=[(1, 0)])
    assert mesh.n_elements == 3
    assert np.unique(mesh.elements).size == mesh.n_nodes


class TestBeam:
    def test_default_beam(self):
        mesh = mesher.bending_beam()
        assert mesh.n_elements == 39 * 5 - 2
        assert check_jacobians(mesh) == []
        assert np.allclose(mesh.nodes[mesh.node_sets["load"][0]], [0.42, 0.10])
        assert np.allclose(mesh.nodes[mesh.node_sets["support_left"][0]], [0.02, 0.0])
        assert np.allclose(mesh.nodes[mesh.node_sets["support_right"][0]], [0.82, 0.0])
        left = mesh.nodes[mesh.node_sets["mouth_left"][0]]
        right = mesh.nodes[mesh.node_sets["mouth_right"][0]]
        assert 0.5 * (left[0] + right[0]) == pytest.approx(0.42)
        assert right[0] - left[0] == pytest.approx(0.8 / 37)

    def test_notch_is_open(self):
        mesh = mesher.bending_beam()
        centroids = np.array([mesh.corner_coordinates(e).mean(axis=0) for e in range(mesh.n_elements)])
        in_notch = (np.abs(centroids[:, 0] - 0.42) < 0.005) & (centroids[:, 1] < 0.03)
        assert not in_notch.any()

    @pytest.mark.parametrize("rows, notch_rows", [(4, 1), (5, 2), (6, 2), (8, 2), (10, 3)])
    def test_notch_row_split_rounds_half_up(self, rows, notch_rows):
        mesh = mesher.bending_beam(columns=11, rows=rows)
        assert mesh.n_elements == 11 * rows - notch_rows
        notch_top = mesh.nodes[mesh.elements[:, :4]].reshape(-1, 2)
        assert np.isclose(notch_top[:, 1], 0.03).any()

    def test_even_column_count_is_rejected(self):
        with pytest.raises(ValueError):
            mesher.bending_beam(columns=40)


def test_tension_shear_specimen():
    mesh = mesher.tension_shear_specimen()
    assert check_jacobians(mesh) == []
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    assert x.max() == pytest.approx(0.2) and y.max() == pytest.approx(0.2)
    upper = mesh.nodes[mesh.node_sets["left_upper"]]
    assert np.allclose(upper[:, 0], 0.0) and (upper[:, 1] > 0.1025).all()
    centroids = np.array([mesh.corner_coordinates(e).mean(axis=0) for e in range(mesh.n_elements)])
    in_notch = (np.abs(centroids[:, 1] - 0.1) < 0.0025) & ((centroids[:, 0] < 0.025) | (centroids[:, 0] > 0.175))
    assert not in_notch.any()


def test_gravity_dam():
    mesh = mesher.gravity_dam()
    assert check_jacobians(mesh) == []
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    width = 1.8 - 1.4 * y / 2.4
    assert (x <= width + 1e-9).all() and (x >= -1e-12).all()
    assert np.allclose(y[mesh.node_sets["base"]], 0.0)
    lower = mesh.nodes[mesh.node_sets["mouth_lower"][0]]
    upper = mesh.nodes[mesh.node_sets["mouth_upper"][0]]
    assert upper[1] - lower[1] == pytest.approx(0.05)
    assert lower[0] == pytest.approx(0.0) and upper[0] == pytest.approx(0.0)


def test_generate_converts_counts():
    mesh = mesher.generate("beam", columns=11.0, rows=4.0)
    assert mesh.n_elements == 11 * 4 - 1
    with pytest.raises(ValueError, match="unknown mesh generator"):
        mesher.generate("plate")
