"""Deterministic test states on unit boxes: maps, phase sets and test fields."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np

from .kinematics import det_cof
from .measures import TestField, _elements_meeting, _quadrature_points, spline_field
from .mesh import SimplicialMesh, build_box_mesh, element_gradients


@dataclass
class Fixture:
    name: str
    mesh: SimplicialMesh
    y: np.ndarray
    E: np.ndarray
    cells: int  # cells per axis of the underlying box mesh


def random_affine(dim: int, rng: np.random.Generator, max_condition: float = 10.0) -> np.ndarray:
    """Orientation-preserving matrix with condition number in ``[1, max_condition]``."""
    q1, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    q2, _ = np.linalg.qr(rng.normal(size=(dim, dim)))
    s = np.sort(rng.uniform(1.0, max_condition, dim))
    s[0] = 1.0
    A = q1 @ np.diag(s / s.prod() ** (1.0 / dim)) @ q2
    if np.linalg.det(A) < 0:
        A[:, 0] *= -1
    return A


def perturbed_map(mesh: SimplicialMesh, A: np.ndarray, rng: np.random.Generator,
                  amplitude: float = 0.2, det_min: float = 0.1) -> np.ndarray:
    """``A x`` plus a random nodal perturbation, shrunk until ``det F > det_min`` everywhere."""
    base = mesh.nodes @ A.T
    noise = rng.uniform(-1.0, 1.0, mesh.nodes.shape) * mesh.h
    amp = amplitude
    for _ in range(60):
        y = base + amp * noise
        det, _ = det_cof(element_gradients(mesh, y))
        if det.min() > det_min:
            return y
        amp *= 0.7
    raise RuntimeError("could not build a perturbation with det above the floor")


def wrap_map(nodes: np.ndarray) -> np.ndarray:
    """Angle doubling ``(r, theta) -> (r, 2 theta)`` in the plane; covers an annulus twice."""
    r = np.linalg.norm(nodes, axis=1)
    th = np.arctan2(nodes[:, 1], nodes[:, 0])
    return np.stack([r * np.cos(2 * th), r * np.sin(2 * th)], axis=1)


def _cell_index(mesh: SimplicialMesh, cells: int) -> np.ndarray:
    return np.minimum((mesh.centroids * cells).astype(int), cells - 1)


def half_split(mesh: SimplicialMesh) -> np.ndarray:
    return mesh.centroids[:, 0] < 0.5


def quarter(mesh: SimplicialMesh) -> np.ndarray:
    c = mesh.centroids
    return (c[:, 0] < 0.5) & (c[:, 1] < 0.5)


def random_union(mesh: SimplicialMesh, cells: int, rng: np.random.Generator, pieces: int = 3,
                 min_side: int = 4) -> np.ndarray:
    """Connected union of cell-aligned boxes, each overlapping the previous one."""
    dim = mesh.dim
    idx = _cell_index(mesh, cells)
    mask = np.zeros(mesh.n_elements, bool)
    lo = rng.integers(0, cells - min_side + 1, dim)
    for _ in range(pieces):
        side = rng.integers(min_side, max(min_side, cells // 2) + 1, dim)
        hi = np.minimum(lo + side, cells)
        lo = hi - side
        mask |= np.all((idx >= lo) & (idx < hi), axis=1)
        # next box starts inside this one so the union stays connected
        lo = np.array([rng.integers(lo[k], hi[k]) for k in range(dim)])
        lo = np.minimum(lo, cells - min_side)
    return mask


def characterization_fixtures(seed: int = 0, cells_2d: int = 8, cells_3d: int = 8) -> list[Fixture]:
    """2 dims x 5 maps x 3 sets = 30 states."""
    rng = np.random.default_rng(seed)
    out = []
    for dim, cells in ((2, cells_2d), (3, cells_3d)):
        mesh = build_box_mesh(dim, (1.0,) * dim, (cells,) * dim)
        maps = {"identity": mesh.nodes.copy()}
        for k in range(2):
            maps[f"affine{k}"] = mesh.nodes @ random_affine(dim, rng).T
        for k in range(2):
            maps[f"perturbed{k}"] = perturbed_map(mesh, random_affine(dim, rng), rng)
        sets = {"half": half_split(mesh), "quarter": quarter(mesh),
                "union": random_union(mesh, cells, rng)}
        for (mname, y), (sname, E) in product(maps.items(), sets.items()):
            out.append(Fixture(f"{dim}d-{mname}-{sname}", mesh, y, E, cells))
    return out


def interior_spline(fix: Fixture, rng: np.random.Generator, inside=None) -> TestField | None:
    """Spline test field on a 4-cell block inside ``inside`` (default: E), or None if no block fits."""
    mesh, cells = fix.mesh, fix.cells
    mask = fix.E if inside is None else inside
    idx = _cell_index(mesh, cells)
    in_all = np.zeros((cells,) * mesh.dim, int)
    np.add.at(in_all, tuple(idx.T), 1)
    # a cell is usable if every element in it belongs to the set
    counts = np.zeros((cells,) * mesh.dim, int)
    np.add.at(counts, tuple(idx[mask].T), 1)
    full = counts == in_all
    candidates = []
    for corner in product(range(cells - 3), repeat=mesh.dim):
        block = tuple(slice(c, c + 4) for c in corner)
        if full[block].all():
            candidates.append(corner)
    if not candidates:
        return None
    corner = np.array(candidates[rng.integers(len(candidates))])
    width = 1.0 / cells
    center = (corner + 2) * width
    return spline_field(center, width, direction=rng.normal(size=mesh.dim),
                        matrix=rng.normal(size=(mesh.dim, mesh.dim)))


def pairing_scale(mesh: SimplicialMesh, y, E, psi: TestField, order: int = 4) -> float:
    """``int_E |cof grad y| |grad psi| dx``, the natural size of the pairing."""
    elems = _elements_meeting(mesh, psi, np.flatnonzero(E))
    _, cof = det_cof(element_gradients(mesh, y)[elems])
    pts, w = _quadrature_points(mesh, elems, order)
    K, Q, n = pts.shape
    g = psi.grad(pts.reshape(-1, n)).reshape(K, Q, n, n)
    vals = np.linalg.norm(cof, axis=(1, 2))[:, None] * np.linalg.norm(g, axis=(2, 3))
    return float(np.dot(mesh.volumes[elems], vals @ w))
