"""Brute-force reference computations.

Nothing here touches cofactors, shape gradients or the facet tables of
:class:`SimplicialMesh`; the point is to stay independent of the code paths
being checked.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from itertools import combinations
from typing import Callable

import numpy as np
from scipy.integrate import quad

from .quadrature import box_rule


@dataclass
class OracleReport:
    value: float
    method: str
    resolution: float
    error_bound: float

    def __post_init__(self):
        if self.error_bound < 0:
            raise ValueError("error bound must be nonnegative")


def _interface_facets_bruteforce(elements, mask):
    all_faces = Counter()
    e_faces = Counter()
    for elem, inside in zip(elements.tolist(), mask.tolist()):
        for face in combinations(sorted(elem), len(elem) - 1):
            all_faces[face] += 1
            if inside:
                e_faces[face] += 1
    # interior facet (shared by 2 elements) with exactly one E-side neighbour
    return [f for f, k in e_faces.items() if k == 1 and all_faces[f] == 2]


def deformed_interface_measure(mesh, y, E) -> float:
    """(n-1)-measure of the deformed interface, from deformed node positions only."""
    elements = np.asarray(mesh.elements)
    mask = np.asarray(getattr(E, "mask", E), dtype=bool)
    yv = np.asarray(getattr(y, "values", y), dtype=float)
    total = 0.0
    for face in _interface_facets_bruteforce(elements, mask):
        pts = yv[list(face)]
        if len(face) == 2:
            total += float(np.sqrt(np.sum((pts[1] - pts[0]) ** 2)))
        else:
            u, v = pts[1] - pts[0], pts[2] - pts[0]
            cross = np.array([u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]])
            total += 0.5 * float(np.sqrt(np.sum(cross**2)))
    return total


def referential_interface_measure(mesh, E) -> float:
    return deformed_interface_measure(mesh, mesh.nodes, E)


def fd_gradient(energy: Callable[[np.ndarray], float], state, direction, step: float = 1e-4,
                max_shrink: int = 4) -> OracleReport:
    """Directional derivative by central differences with one Richardson step.

    ``energy`` maps a flat state vector to a float. If a perturbed state has
    infinite energy the step is halved, at most ``max_shrink`` times.
    """
    x = np.asarray(state, dtype=float)
    d = np.asarray(direction, dtype=float)
    if not np.any(d):
        return OracleReport(0.0, "central-richardson", 0.0, 0.0)
    h = step
    for _ in range(max_shrink + 1):
        vals = [energy(x + s * d) for s in (h, -h, h / 2, -h / 2)]
        if all(np.isfinite(vals)):
            d1 = (vals[0] - vals[1]) / (2 * h)
            d2 = (vals[2] - vals[3]) / h
            rich = (4 * d2 - d1) / 3
            return OracleReport(float(rich), "central-richardson", h, float(abs(rich - d2)))
        h /= 2
    raise ValueError("finite-difference stencil leaves the feasible set")


def profile_energy_1d(gamma: float, eps: float, half_width: float, phi=None) -> OracleReport:
    """``int (eps/2 zeta'^2 + Phi(zeta)/eps) dt`` over ``[-half_width, half_width]``.

    The profile is the optimal one for ``Phi(s) = 18 gamma^2 s^2 (1-s)^2``;
    the integrand decays like ``exp(-12 gamma |t| / eps)``, which gives the
    reported bound on the truncated tails.
    """
    if phi is None:
        phi = lambda s: 18.0 * gamma**2 * s**2 * (1 - s) ** 2
    k = 6.0 * gamma / eps

    def integrand(t):
        zeta = 1.0 / (1.0 + np.exp(-k * t))
        dzeta = k * zeta * (1 - zeta)
        return 0.5 * eps * dzeta**2 + phi(zeta) / eps

    # the profile is symmetric; integrate one side in pieces of width eps
    edges = np.linspace(0.0, half_width, max(2, int(np.ceil(half_width / eps)) + 1))
    val = 0.0
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        v, e = quad(integrand, a, b, epsabs=1e-14, epsrel=1e-13, limit=200)
        val += 2 * v
        err += 2 * e
    tail = 6.0 * gamma * np.exp(-12.0 * gamma * half_width / eps)
    return OracleReport(val, "adaptive-quad", eps, float(err + tail))


def box_integral(f: Callable[[np.ndarray], np.ndarray], lo, hi, points_per_axis: int = 40,
                 splits: int = 8) -> np.ndarray:
    """Composite tensor Gauss-Legendre integral of ``f`` over a box.

    ``f`` maps ``(K, dim)`` points to ``(K, ...)`` values.
    """
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    dim = len(lo)
    edges = [np.linspace(lo[k], hi[k], splits + 1) for k in range(dim)]
    total = None
    for idx in np.ndindex(*([splits] * dim)):
        a = np.array([edges[k][idx[k]] for k in range(dim)])
        b = np.array([edges[k][idx[k] + 1] for k in range(dim)])
        X, W = box_rule(a, b, points_per_axis)
        vals = np.asarray(f(X))
        part = np.tensordot(W, vals, axes=(0, 0))
        total = part if total is None else total + part
    return total


def polygon_area(points) -> float:
    """Shoelace area of a closed polygon (vertices in order)."""
    p = np.asarray(points, float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))
