import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad
from scipy.stats import special_ortho_group

from eulerian_pf.energy import (DoubleWell, bulk_energy, check_homogeneity, default_model, diffuse_interface_energy,
                                eulerian_area_integrand, evaluate_diffuse, full_norm_integrand,
                                general_interface_energy, sharp_interface_energy, total_energy_diffuse,
                                total_energy_sharp)
from eulerian_pf.mesh import build_box_mesh
from eulerian_pf.oracle import deformed_interface_measure, fd_gradient, profile_energy_1d


@pytest.mark.parametrize("gamma", [0.5, 1.0, 3.0])
def test_double_well_zeros_and_normalization(gamma):
    w = DoubleWell(gamma)
    assert w.phi(0.0) == 0 and w.phi(1.0) == 0
    val, _ = quad(lambda s: float(w.sqrt_2phi(s)), 0, 1, epsabs=1e-13, epsrel=1e-12)
    assert val == pytest.approx(gamma, abs=1e-12)
    s = np.linspace(0, 1, 11)
    h = 1e-6
    assert np.allclose(w.dphi(s), (w.phi(s + h) - w.phi(s - h)) / (2 * h), atol=1e-6)


def test_double_well_rejects_nonpositive_gamma():
    with pytest.raises(ValueError):
        DoubleWell(0.0)


def test_profile_width_matches_levels():
    w = DoubleWell(2.0)
    eps = 0.3
    width = w.profile_width(eps)
    assert width == pytest.approx(2 * np.log(9) * eps / 12)
    d = np.array([-width / 2, width / 2])
    assert np.allclose(w.profile(d, eps), [0.1, 0.9])


@pytest.mark.parametrize("gamma", [0.5, 1.0, 2.0])
def test_optimal_profile_energy_is_gamma(gamma):
    rep = profile_energy_1d(gamma, 0.1, 3.0)
    assert rep.value == pytest.approx(gamma, abs=max(rep.error_bound, 1e-12))


@pytest.mark.parametrize("dim", [2, 3])
def test_wells_have_zero_energy(dim):
    model = default_model(dim, second_well=1.2)
    for phase in model.bulk.phases:
        U = phase.well
        assert phase(U[None])[0] == pytest.approx(0.0, abs=1e-12)
        assert np.all(phase(U[None] * 1.05) > 0)
        assert np.allclose(phase.stress(U[None]), 0.0, atol=1e-8)


@given(st.integers(0, 2**31 - 1), st.sampled_from([2, 3]))
@settings(max_examples=30, deadline=None)
def test_frame_indifference(seed, dim):
    rng = np.random.default_rng(seed)
    phase = default_model(dim, second_well=1.1).bulk.phases[1]
    F = rng.normal(size=(4, dim, dim)) + 2 * np.eye(dim)
    F = F[np.linalg.det(F) > 0.05]
    R = special_ortho_group.rvs(dim, size=len(F), random_state=rng).reshape(-1, dim, dim)
    assert np.allclose(phase(R @ F), phase(F), rtol=1e-10)


@pytest.mark.parametrize("dim", [2, 3])
def test_stress_matches_finite_differences(dim):
    rng = np.random.default_rng(dim)
    phase = default_model(dim, second_well=1.3).bulk.phases[1]
    F = np.eye(dim) + 0.2 * rng.normal(size=(dim, dim))
    P = phase.stress(F[None])[0]
    h = 1e-6
    fd = np.zeros_like(F)
    for i in range(dim):
        for j in range(dim):
            E = np.zeros_like(F)
            E[i, j] = h
            fd[i, j] = (phase((F + E)[None])[0] - phase((F - E)[None])[0]) / (2 * h)
    assert np.allclose(P, fd, rtol=1e-6, atol=1e-8)


def test_density_infinite_for_nonpositive_det():
    phase = default_model(2).bulk.phases[0]
    assert np.all(np.isinf(phase(np.stack([np.diag([1.0, -1.0]), np.zeros((2, 2))]))))


@pytest.fixture(scope="module")
def square():
    return build_box_mesh(2, (1.0, 1.0), (6, 6))


def test_energies_infinite_after_inversion(square):
    y = square.nodes.copy()
    y[:, 0] *= -1
    z = np.full(square.n_nodes, 0.5)
    model = default_model(2)
    assert np.isinf(bulk_energy(square, y, z, model))
    assert np.isinf(diffuse_interface_energy(square, y, z, 0.1, model))
    assert np.isinf(total_energy_diffuse(square, y, z, 0.1, model))


def test_diffuse_energy_of_constant_phase_is_zero(square):
    for c in (0.0, 1.0):
        z = np.full(square.n_nodes, c)
        assert diffuse_interface_energy(square, square.nodes * 1.7, z, 0.1, DoubleWell()) == 0.0


def test_diffuse_gradient_term_is_eulerian(square):
    # zeta(xi) = xi_1 / 2 on y(Omega) = 2 Omega: gradient energy eps/2 * 1/4 * |y(Omega)| = eps/2
    y = 2 * square.nodes
    z = square.nodes[:, 0]
    eps = 0.1
    well = DoubleWell()
    expected = 0.5 * eps * 0.25 * 4.0 + np.dot(square.volumes * 4, well.phi(z[square.elements].mean(1))) / eps
    assert diffuse_interface_energy(square, y, z, eps, well) == pytest.approx(expected, rel=1e-13)


def test_diffuse_gradient_matches_fd(square):
    rng = np.random.default_rng(3)
    model = default_model(2, second_well=1.2)
    y = square.nodes @ np.array([[1.1, 0.2], [0.0, 0.9]]).T
    z = rng.uniform(0.1, 0.9, square.n_nodes)
    ev = evaluate_diffuse(square, y, z, 0.2, model)
    assert ev.total == pytest.approx(total_energy_diffuse(square, y, z, 0.2, model), rel=1e-13)
    x0 = np.concatenate([y.ravel(), z])
    grad = np.concatenate([ev.grad_y.ravel(), ev.grad_z])
    n_y = y.size
    f = lambda x: evaluate_diffuse(square, x[:n_y].reshape(y.shape), x[n_y:], 0.2, model, with_gradient=False).total
    for _ in range(5):
        d = rng.normal(size=x0.size)
        rep = fd_gradient(f, x0, d)
        assert grad @ d == pytest.approx(rep.value, rel=1e-6)


@pytest.mark.parametrize("dim", [2, 3])
def test_sharp_interface_is_deformed_measure(dim):
    mesh = build_box_mesh(dim, (1.0,) * dim, (4,) * dim)
    rng = np.random.default_rng(dim)
    y = mesh.nodes @ (np.eye(dim) + 0.3 * rng.normal(size=(dim, dim))).T + 0.01 * rng.normal(size=mesh.nodes.shape)
    E = mesh.centroids[:, 0] < 0.5
    assert sharp_interface_energy(mesh, y, E, 2.0) == pytest.approx(
        2 * deformed_interface_measure(mesh, y, E), rel=1e-12)
    assert sharp_interface_energy(mesh, y, np.zeros(mesh.n_elements, bool)) == 0.0


def test_total_sharp_energy_at_wells(square):
    model = default_model(2)
    E = square.centroids[:, 0] < 0.5
    assert total_energy_sharp(square, square.nodes, E, model) == pytest.approx(1.0, abs=1e-12)


def test_general_interface_energy_and_homogeneity():
    mesh = build_box_mesh(3, (1.0, 1.0, 1.0), (2, 2, 2))
    E = mesh.centroids[:, 2] < 0.5
    A = np.diag([2.0, 1.0, 1.0])
    y = mesh.nodes @ A.T
    assert general_interface_energy(mesh, y, E, eulerian_area_integrand()) == pytest.approx(2.0, rel=1e-12)
    rng = np.random.default_rng(0)
    n, G, c = rng.normal(size=(5, 3)), rng.normal(size=(5, 3, 3)), rng.normal(size=(5, 3))
    assert check_homogeneity(full_norm_integrand(), n, G, c, 3.0) < 1e-14
