"""Weak pairings against ``chi_E cof(grad y)`` and deformed perimeters.

For a P1 deformation the cofactor is constant on each element and its
normal component ``(cof F) n`` is continuous across interior facets, so the
distributional divergence of ``chi_E cof(grad y)`` is a sum of facet atoms
``|facet| (cof F) n_E`` supported on the interface of E. Their total
variation is the deformed perimeter of ``y(E)`` in ``y(Omega)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import oracle
from .energy import interface_facets
from .exceptions import DegenerateGeometryError, InvalidTestFunctionError, UnsupportedDimensionError
from .kinematics import det_cof
from .mesh import FieldLike, SimplicialMesh, element_gradients, field_values, selection_mask
from .quadrature import simplex_rule


@dataclass(frozen=True, eq=False)
class ReducedBoundary:
    facet_ids: np.ndarray
    measure: np.ndarray
    normal: np.ndarray
    e_side: np.ndarray
    other_side: np.ndarray
    nodes: np.ndarray

    @property
    def perimeter(self) -> float:
        return float(np.sum(self.measure))

    @property
    def atoms_a(self) -> np.ndarray:
        """Atoms of ``n_E H^{n-1}`` restricted to the interface."""
        return self.measure[:, None] * self.normal


def reduced_boundary(mesh: SimplicialMesh, E) -> ReducedBoundary:
    ids, e_side, other, normal = interface_facets(mesh, E)
    f = mesh.interior_facets
    return ReducedBoundary(ids, f.measure[ids], normal, e_side, other, f.nodes[ids])


# -- test fields ---------------------------------------------------------------------


@dataclass
class TestField:
    """Vector field with analytic Jacobian; ``grad(x)[k, i, j] = d psi_i / d x_j``."""

    __test__ = False  # not a pytest class

    value: Callable[[np.ndarray], np.ndarray]
    grad: Callable[[np.ndarray], np.ndarray]
    support: Optional[tuple] = None  # closed box (lo, hi) containing the support, if known

    def __add__(self, other: "TestField") -> "TestField":
        box = None
        if self.support is not None and other.support is not None:
            box = (np.minimum(self.support[0], other.support[0]), np.maximum(self.support[1], other.support[1]))
        return TestField(lambda x: self.value(x) + other.value(x), lambda x: self.grad(x) + other.grad(x), box)

    def __mul__(self, lam: float) -> "TestField":
        return TestField(lambda x: lam * self.value(x), lambda x: lam * self.grad(x), self.support)

    __rmul__ = __mul__


def _bump(x, center, radius):
    """eta = exp(-1 / (1 - s)), s = |x - c|^2 / r^2, with gradient and Hessian."""
    r = x - center
    s = np.sum(r**2, axis=1) / radius**2
    inside = s < 1
    one_m = np.where(inside, 1 - s, 1.0)
    f = np.where(inside, np.exp(-1.0 / one_m), 0.0)
    f1 = np.where(inside, -f / one_m**2, 0.0)
    f2 = np.where(inside, f * (2 * s - 1) / one_m**4, 0.0)
    grad = (2.0 / radius**2) * f1[:, None] * r
    n = x.shape[1]
    hess = (4.0 / radius**4) * f2[:, None, None] * np.einsum("ki,kj->kij", r, r) \
        + (2.0 / radius**2) * f1[:, None, None] * np.eye(n)
    return f, grad, hess


def bump_field(center, radius: float, direction=None, matrix=None) -> TestField:
    """``psi(x) = eta(x) (A (x - c) + v)`` with a smooth bump ``eta`` of given radius."""
    center = np.asarray(center, float)
    n = len(center)
    v = np.zeros(n) if direction is None else np.asarray(direction, float)
    A = np.zeros((n, n)) if matrix is None else np.asarray(matrix, float)

    def value(x):
        eta, _, _ = _bump(x, center, radius)
        return eta[:, None] * ((x - center) @ A.T + v)

    def grad(x):
        eta, deta, _ = _bump(x, center, radius)
        inner = (x - center) @ A.T + v
        return eta[:, None, None] * A + np.einsum("ki,kj->kij", inner, deta)

    return TestField(value, grad, (center - radius, center + radius))


def _bspline3(t):
    a = np.abs(t)
    r = np.maximum(2.0 - a, 0.0)
    inner = a <= 1
    val = np.where(inner, (4.0 - a * a * (6.0 - 3.0 * a)) / 6.0, r * r * r / 6.0)
    der = np.where(inner, t * (1.5 * a - 2.0), -0.5 * r * r * np.sign(t))
    return val, der


def spline_field(center, width: float, direction=None, matrix=None) -> TestField:
    """``psi(x) = B(x) (A (x - c) + v)`` with a tensor cubic B-spline ``B``.

    The knots sit at ``c + k * width`` along every axis (support half-width
    ``2 * width``). When they coincide with mesh planes of a box mesh, psi is
    a polynomial on every element and the quadrature rules are exact.
    """
    center = np.asarray(center, float)
    n = len(center)
    v = np.zeros(n) if direction is None else np.asarray(direction, float)
    A = np.zeros((n, n)) if matrix is None else np.asarray(matrix, float)

    def parts(x):
        t = (x - center) / width
        val, der = _bspline3(t)
        B = np.prod(val, axis=1)
        dB = np.empty_like(x)
        for k in range(n):
            others = np.prod(np.delete(val, k, axis=1), axis=1)
            dB[:, k] = der[:, k] * others / width
        return B, dB

    def value(x):
        B, _ = parts(x)
        return B[:, None] * ((x - center) @ A.T + v)

    def grad(x):
        B, dB = parts(x)
        inner = (x - center) @ A.T + v
        return B[:, None, None] * A + np.einsum("ki,kj->kij", inner, dB)

    return TestField(value, grad, (center - 2 * width, center + 2 * width))


def gradient_bump_field(center, radius: float) -> TestField:
    """``psi = grad eta``; curl-free by construction."""
    center = np.asarray(center, float)
    return TestField(lambda x: _bump(x, center, radius)[1], lambda x: _bump(x, center, radius)[2],
                     (center - radius, center + radius))


def _elements_meeting(mesh: SimplicialMesh, psi: TestField, elems: np.ndarray) -> np.ndarray:
    """Subset of ``elems`` whose bounding boxes meet the support box of ``psi``."""
    if psi.support is None:
        return elems
    lo, hi = (np.asarray(b, float) for b in psi.support)
    X = mesh.nodes[mesh.elements[elems]]
    keep = np.all((X.max(axis=1) >= lo) & (X.min(axis=1) <= hi), axis=1)
    return elems[keep]


def _quadrature_points(mesh: SimplicialMesh, elems: np.ndarray, order: int):
    bary, w = simplex_rule(mesh.dim, order)
    X = mesh.nodes[mesh.elements[elems]]  # (K, n+1, n)
    pts = np.einsum("qi,kin->kqn", bary, X)
    return pts, w


def check_test_field(mesh: SimplicialMesh, psi: TestField, tol: float = 1e-12, order: int = 4):
    """Raise if ``psi`` is not negligible on boundary facets."""
    bf = mesh.boundary_facets
    X = mesh.nodes[bf.nodes]  # (B, n, n)
    bary, _ = simplex_rule(mesh.dim - 1, order) if mesh.dim == 3 else _segment_rule(order)
    pts = np.einsum("qi,kin->kqn", bary, X).reshape(-1, mesh.dim)
    pts = np.concatenate([pts, mesh.nodes[np.unique(bf.nodes)]])
    boundary_max = float(np.max(np.abs(psi.value(pts))))
    # a rough interior size is enough to scale the boundary tolerance
    interior, _ = _quadrature_points(mesh, _elements_meeting(mesh, psi, np.arange(mesh.n_elements)), 2)
    scale = max(float(np.max(np.abs(psi.value(interior.reshape(-1, mesh.dim))))), 1e-300)
    if boundary_max > tol * scale:
        raise InvalidTestFunctionError(
            f"test field reaches the boundary: max |psi| on boundary = {boundary_max:.3e} "
            f"(interior scale {scale:.3e})"
        )


def _segment_rule(order: int):
    t, w = np.polynomial.legendre.leggauss(order // 2 + 1)
    s = (t + 1) / 2
    return np.stack([1 - s, s], axis=1), w / 2


def pairing_p(mesh: SimplicialMesh, y: FieldLike, E, psi: TestField, order: int = 4,
              check: bool = True) -> float:
    """``int_E cof(grad y) : grad psi dx`` by per-element quadrature."""
    if check:
        check_test_field(mesh, psi, order=order)
    elems = _elements_meeting(mesh, psi, np.flatnonzero(selection_mask(E)))
    if len(elems) == 0:
        return 0.0
    _, cof = det_cof(element_gradients(mesh, y)[elems])
    pts, w = _quadrature_points(mesh, elems, order)
    K, Q, n = pts.shape
    gpsi = psi.grad(pts.reshape(-1, n)).reshape(K, Q, n, n)
    integrand = np.einsum("kij,kqij->kq", cof, gpsi)
    return float(np.dot(mesh.volumes[elems], integrand @ w))


def _curl(g: np.ndarray) -> np.ndarray:
    return np.stack([g[..., 2, 1] - g[..., 1, 2], g[..., 0, 2] - g[..., 2, 0], g[..., 1, 0] - g[..., 0, 1]], -1)


def pairing_h(mesh: SimplicialMesh, y: FieldLike, E, psi: TestField, order: int = 4,
              check: bool = True) -> np.ndarray:
    """``int_E grad y (curl psi) dx`` (3D only)."""
    if mesh.dim != 3:
        raise UnsupportedDimensionError("pairing_h is defined for 3D meshes only")
    if check:
        check_test_field(mesh, psi, order=order)
    elems = _elements_meeting(mesh, psi, np.flatnonzero(selection_mask(E)))
    if len(elems) == 0:
        return np.zeros(3)
    F = element_gradients(mesh, y)[elems]
    pts, w = _quadrature_points(mesh, elems, order)
    K, Q, n = pts.shape
    curl = _curl(psi.grad(pts.reshape(-1, n))).reshape(K, Q, 3)
    avg = np.einsum("kqi,q->ki", curl, w)
    return np.einsum("k,kij,kj->i", mesh.volumes[elems], F, avg)


@dataclass
class SilhavySummary:
    facet_ids: np.ndarray
    normals: np.ndarray
    atoms: np.ndarray
    total_variation: float
    oracle_perimeter: float
    discrepancy: float
    h_total_variation: Optional[float] = None
    pairings: dict = field(default_factory=dict)

    def to_csv(self, path, header=()) -> None:
        with open(path, "w", newline="") as fh:
            for line in header:
                fh.write("# " + line + "\n")
            w = csv.writer(fh)
            n = self.normals.shape[1] if len(self.normals) else 0
            w.writerow(["facet"] + [f"n{i}" for i in range(n)] + [f"p{i}" for i in range(n)] + ["abs_p"])
            for fid, nrm, atom in zip(self.facet_ids.tolist(), self.normals.tolist(), self.atoms.tolist()):
                w.writerow([fid] + [repr(v) for v in nrm] + [repr(v) for v in atom]
                           + [repr(float(np.linalg.norm(atom)))])
            w.writerow(["total"] + [""] * (2 * n) + [repr(self.total_variation)])


def _atoms(mesh, y, rb: ReducedBoundary, side: str = "E") -> np.ndarray:
    elems = rb.e_side if side == "E" else rb.other_side
    F = element_gradients(mesh, y)[elems]
    det, cof = det_cof(F)
    if np.any(det <= 0):
        bad = elems[np.argmin(det)]
        raise DegenerateGeometryError(f"element {bad} next to the interface has det F <= 0")
    return rb.measure[:, None] * np.einsum("kij,kj->ki", cof, rb.normal)


def total_variation_p(mesh: SimplicialMesh, y: FieldLike, E, floor: float = 1e-14) -> SilhavySummary:
    yv = field_values(y)
    rb = reduced_boundary(mesh, E)
    if len(rb.facet_ids) == 0:
        atoms = np.zeros((0, mesh.dim))
        tv = 0.0
    else:
        atoms = _atoms(mesh, yv, rb)
        tv = float(np.sum(np.linalg.norm(atoms, axis=1)))
    ref = oracle.deformed_interface_measure(mesh, yv, E)
    summary = SilhavySummary(
        facet_ids=rb.facet_ids,
        normals=rb.normal,
        atoms=atoms,
        total_variation=tv,
        oracle_perimeter=ref,
        discrepancy=abs(tv - ref) / max(ref, floor),
    )
    if mesh.dim == 3 and len(rb.facet_ids):
        from .energy import cross_matrix

        F = element_gradients(mesh, yv)[rb.e_side]
        Gx = cross_matrix(F, rb.normal)
        summary.h_total_variation = float(np.dot(rb.measure, np.linalg.norm(Gx, axis=(1, 2))))
    return summary


def atom_consistency(mesh: SimplicialMesh, y: FieldLike, E) -> float:
    """Max relative difference of facet atoms computed from the two adjacent elements."""
    rb = reduced_boundary(mesh, E)
    if len(rb.facet_ids) == 0:
        return 0.0
    yv = field_values(y)
    a, b = _atoms(mesh, yv, rb, "E"), _atoms(mesh, yv, rb, "other")
    scale = np.maximum(np.linalg.norm(a, axis=1), 1e-300)
    return float(np.max(np.linalg.norm(a - b, axis=1) / scale))


def pair_with_atoms(mesh: SimplicialMesh, y: FieldLike, E, psi: TestField, order: int = 4) -> float:
    """``int psi . dp`` with the facet atoms, psi integrated over each facet."""
    rb = reduced_boundary(mesh, E)
    if len(rb.facet_ids) == 0:
        return 0.0
    atoms = _atoms(mesh, field_values(y), rb)
    X = mesh.nodes[rb.nodes]
    bary, w = simplex_rule(2, order) if mesh.dim == 3 else _segment_rule(order)
    pts = np.einsum("qi,kin->kqn", bary, X)
    K, Q, n = pts.shape
    vals = psi.value(pts.reshape(-1, n)).reshape(K, Q, n)
    avg = np.einsum("kqn,q->kn", vals, w)
    return float(np.sum(avg * atoms))


@dataclass
class CharacterizationReport:
    total_variation: float
    oracle_perimeter: float
    discrepancy: float
    passed: bool


def characterization_check(mesh, y, E, threshold: float = 1e-10) -> CharacterizationReport:
    s = total_variation_p(mesh, y, E)
    return CharacterizationReport(s.total_variation, s.oracle_perimeter, s.discrepancy,
                                  bool(s.discrepancy < threshold))


# -- level sets of P1 fields --------------------------------------------------------


def level_set_measure(mesh: SimplicialMesh, y: FieldLike, z: FieldLike, s: float) -> float:
    """Deformed (n-1)-measure of ``{zeta = s}`` for the P1 field ``zeta = z o y^{-1}``.

    Each element's cut is a straight segment (2D) or planar polygon (3D)
    whose vertices are interpolated on the deformed element edges.
    """
    yv, zv = field_values(y), field_values(z)
    Y = yv[mesh.elements]
    Z = zv[mesh.elements]
    order = np.argsort(Z, axis=1, kind="stable")
    Zs = np.take_along_axis(Z, order, axis=1)
    Ys = np.take_along_axis(Y, order[..., None], axis=1)
    below = np.sum(Zs <= s, axis=1)  # vertices at or below the level

    def cut(i, j, sel):
        zi, zj = Zs[sel, i], Zs[sel, j]
        t = (s - zi) / (zj - zi)
        return Ys[sel, i] + t[:, None] * (Ys[sel, j] - Ys[sel, i])

    total = 0.0
    if mesh.dim == 2:
        for k, (e1, e2) in ((1, ((0, 1), (0, 2))), (2, ((0, 2), (1, 2)))):
            sel = below == k
            if np.any(sel):
                total += float(np.sum(np.linalg.norm(cut(*e1, sel) - cut(*e2, sel), axis=1)))
        return total
    tri = {1: ((0, 1), (0, 2), (0, 3)), 3: ((0, 3), (1, 3), (2, 3))}
    for k, edges in tri.items():
        sel = below == k
        if np.any(sel):
            p = [cut(i, j, sel) for i, j in edges]
            total += 0.5 * float(np.sum(np.linalg.norm(np.cross(p[1] - p[0], p[2] - p[0]), axis=1)))
    sel = below == 2
    if np.any(sel):
        p0, p1, p2, p3 = (cut(0, 2, sel), cut(0, 3, sel), cut(1, 3, sel), cut(1, 2, sel))
        total += 0.5 * float(np.sum(np.linalg.norm(np.cross(p2 - p0, p3 - p1), axis=1)))
    return total


def threshold_selection(mesh: SimplicialMesh, z: FieldLike, s: float) -> np.ndarray:
    """Element mask ``{zbar > s}`` from element means of ``z``."""
    return field_values(z)[mesh.elements].mean(axis=1) > s


def band_volume(mesh: SimplicialMesh, y: FieldLike, z: FieldLike, lo: float, hi: float,
                subdivisions: int = 8) -> float:
    """Deformed volume of ``{lo < zeta < hi}``, sampled per element."""
    # positive-weight Gauss rule used as a stratified sampler of the indicator
    bary, w = simplex_rule(mesh.dim, 2 * subdivisions)
    Z = field_values(z)[mesh.elements]
    vals = Z @ bary.T
    frac = ((vals > lo) & (vals < hi)).astype(float) @ w
    F = element_gradients(mesh, y)
    det, _ = det_cof(F)
    return float(np.dot(mesh.volumes * det, frac))
