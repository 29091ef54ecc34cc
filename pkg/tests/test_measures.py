import numpy as np
import pytest

from eulerian_pf.exceptions import DegenerateGeometryError, InvalidTestFunctionError
from eulerian_pf.fixtures import characterization_fixtures
from eulerian_pf.measures import (atom_consistency, band_volume, bump_field, characterization_check,
                                  level_set_measure, pair_with_atoms, pairing_h, pairing_p, reduced_boundary,
                                  spline_field, threshold_selection, total_variation_p)
from eulerian_pf.mesh import build_box_mesh


@pytest.fixture(scope="module")
def square():
    return build_box_mesh(2, (1.0, 1.0), (8, 8))


def _shear(mesh):
    return mesh.nodes @ np.array([[1.2, 0.4], [0.1, 0.8]]).T


def test_reduced_boundary_of_half(square):
    rb = reduced_boundary(square, square.centroids[:, 0] < 0.5)
    assert rb.perimeter == pytest.approx(1.0)
    assert np.allclose(rb.normal, [1.0, 0.0])


def test_total_variation_of_affine_half_split(square):
    s = total_variation_p(square, _shear(square), square.centroids[:, 0] < 0.5)
    # image of the segment x_1 = 1/2 is the vector A e_2
    assert s.total_variation == pytest.approx(np.hypot(0.4, 0.8), rel=1e-13)
    assert s.discrepancy < 1e-13


def test_total_variation_of_empty_and_full(square):
    for mask in (np.zeros(square.n_elements, bool), np.ones(square.n_elements, bool)):
        s = total_variation_p(square, square.nodes, mask)
        assert s.total_variation == 0.0 and s.oracle_perimeter == 0.0


def test_characterization_over_fixture_suite():
    for f in characterization_fixtures(seed=1, cells_2d=4, cells_3d=4):
        rep = characterization_check(f.mesh, f.y, f.E)
        assert rep.passed, f.name
        assert atom_consistency(f.mesh, f.y, f.E) < 1e-12


def test_inverted_element_at_interface_raises(square):
    y = square.nodes.copy()
    y[:, 0] *= -1
    with pytest.raises(DegenerateGeometryError):
        total_variation_p(square, y, square.centroids[:, 0] < 0.5)


def test_piola_identity_with_splines(square):
    y = _shear(square)
    psi = spline_field([0.5, 0.5], 0.125, direction=[1.0, -0.5], matrix=[[0.3, 1.0], [0.0, 2.0]])
    full = np.ones(square.n_elements, bool)
    assert abs(pairing_p(square, y, full, psi, order=8)) < 1e-14


def test_piola_identity_with_bump_at_high_order():
    mesh = build_box_mesh(2, (1.0, 1.0), (16, 16))
    psi = bump_field([0.5, 0.5], 0.3, direction=[1.0, 0.5])
    val = pairing_p(mesh, _shear(mesh), np.ones(mesh.n_elements, bool), psi, order=16)
    assert abs(val) < 1e-6


def test_pairing_equals_minus_atom_pairing(square):
    y = _shear(square)
    E = square.centroids[:, 0] < 0.5
    psi = spline_field([0.5, 0.5], 0.125, direction=[1.0, 0.5])
    # int_E cof F : grad psi = -<div(chi_E cof F), psi> = int_interface psi . (cof F) n_E
    lhs = pairing_p(square, y, E, psi, order=8)
    rhs = pair_with_atoms(square, y, E, psi, order=8)
    assert abs(lhs) > 1e-3
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_boundary_touching_field_rejected(square):
    psi = bump_field([0.0, 0.5], 0.3, direction=[1.0, 0.0])
    with pytest.raises(InvalidTestFunctionError):
        pairing_p(square, square.nodes, np.ones(square.n_elements, bool), psi)


def test_pairing_h_vanishes_for_splines():
    mesh = build_box_mesh(3, (1.0, 1.0, 1.0), (8, 8, 8))
    y = mesh.nodes @ np.array([[1.1, 0.2, 0.0], [0.0, 0.9, 0.1], [0.0, 0.0, 1.2]]).T
    psi = spline_field([0.5, 0.5, 0.5], 0.125, direction=[1.0, 0.0, 1.0])
    assert np.max(np.abs(pairing_h(mesh, y, np.ones(mesh.n_elements, bool), psi, order=6))) < 1e-14


def test_level_set_of_linear_field(square):
    A = np.diag([2.0, 3.0])
    z = square.nodes[:, 0]
    for s in (0.3, 0.5, 0.77):
        assert level_set_measure(square, square.nodes @ A.T, z, s) == pytest.approx(3.0, rel=1e-12)
    mesh3 = build_box_mesh(3, (1.0, 1.0, 1.0), (3, 3, 3))
    z3 = mesh3.nodes @ np.array([1.0, 1.0, 0.0]) / 2
    # plane x + y = 1 through the cube: a 1 x sqrt(2) rectangle
    assert level_set_measure(mesh3, mesh3.nodes, z3, 0.5) == pytest.approx(np.sqrt(2), rel=1e-12)


def test_threshold_selection_and_band_volume(square):
    z = square.nodes[:, 0]
    mask = threshold_selection(square, z, 0.5)
    assert np.array_equal(mask, square.centroids[:, 0] > 0.5)
    y = square.nodes @ np.diag([2.0, 1.0]).T
    assert band_volume(square, y, z, 0.25, 0.75, subdivisions=8) == pytest.approx(1.0, rel=2e-2)
