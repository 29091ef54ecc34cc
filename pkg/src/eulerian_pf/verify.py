"""Self-checks shared by the CLI and the test suite."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .energy import EnergyModel, evaluate_diffuse
from .fixtures import characterization_fixtures, perturbed_map, random_affine
from .measures import characterization_check
from .mesh import SimplicialMesh
from .oracle import fd_gradient


@dataclass
class GradientSample:
    state: int
    direction: int
    analytic: float
    finite_difference: float
    fd_error: float

    @property
    def relative_error(self) -> float:
        scale = max(abs(self.analytic), abs(self.finite_difference), 1e-300)
        return abs(self.analytic - self.finite_difference) / scale


def random_state(mesh: SimplicialMesh, rng: np.random.Generator, det_min: float = 0.1):
    """Perturbed affine ``y`` with ``det F > det_min`` and ``z`` uniform in ``[0.05, 0.95]``."""
    y = perturbed_map(mesh, random_affine(mesh.dim, rng, max_condition=3.0), rng, det_min=det_min)
    z = rng.uniform(0.05, 0.95, mesh.n_nodes)
    return y, z


def gradient_check(mesh: SimplicialMesh, model: EnergyModel, eps: float, n_states: int = 10,
                   n_directions: int = 10, seed: int = 0, step: float = 1e-4) -> list[GradientSample]:
    """Analytic directional derivatives of the diffuse energy against central differences."""
    rng = np.random.default_rng(seed)
    shape_y = (mesh.n_nodes, mesh.dim)
    n_y = mesh.n_nodes * mesh.dim
    samples = []
    for s in range(n_states):
        y, z = random_state(mesh, rng)
        ev = evaluate_diffuse(mesh, y, z, eps, model)
        grad = np.concatenate([ev.grad_y.ravel(), ev.grad_z])
        x0 = np.concatenate([y.ravel(), z])

        def energy(x):
            return evaluate_diffuse(mesh, x[:n_y].reshape(shape_y), x[n_y:], eps, model,
                                    with_gradient=False).total

        for k in range(n_directions):
            d = rng.normal(size=x0.size)
            d /= np.linalg.norm(d)
            rep = fd_gradient(energy, x0, d, step=step)
            samples.append(GradientSample(s, k, float(grad @ d), rep.value, rep.error_bound))
    return samples


def write_gradient_csv(samples, path, header=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write("# " + line + "\n")
        w = csv.writer(fh)
        w.writerow(["state", "direction", "analytic", "finite_difference", "fd_error", "relative_error"])
        for g in samples:
            w.writerow([g.state, g.direction, repr(g.analytic), repr(g.finite_difference),
                        repr(g.fd_error), repr(g.relative_error)])


def characterization_suite(seed: int = 0, threshold: float = 1e-10):
    """``(fixture name, CharacterizationReport)`` for the builtin fixture suite."""
    return [(f.name, characterization_check(f.mesh, f.y, f.E, threshold))
            for f in characterization_fixtures(seed)]


def write_characterization_csv(rows, path, header=()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write("# " + line + "\n")
        w = csv.writer(fh)
        w.writerow(["fixture", "total_variation", "oracle_perimeter", "discrepancy", "passed"])
        for name, rep in rows:
            w.writerow([name, repr(rep.total_variation), repr(rep.oracle_perimeter),
                        repr(rep.discrepancy), str(rep.passed).lower()])
