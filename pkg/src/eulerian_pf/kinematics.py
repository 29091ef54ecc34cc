"""Deformation gradients, cofactors, distortion and admissibility diagnostics.

The deformed volume ``|y(Omega)|`` is estimated by rasterizing the deformed
simplices on a cell-centred grid and counting covering elements per grid
point (the Banach indicatrix). Points on a deformed facet are attributed
with a half-open rule: a simplex owns a point on one of its faces only when
the outward face normal is lexicographically positive. Two simplices that
share a facet without folding see opposite normals, so the point is counted
once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import shapely
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .mesh import FieldLike, SimplicialMesh, element_gradients, field_values

_BARY_TOL = 1e-12


def det_cof(F: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Closed-form determinant and cofactor of a stack of 2x2 or 3x3 matrices.

    ``cof F`` satisfies ``cof(F) @ F.T == det(F) * I``.
    """
    F = np.asarray(F, dtype=float)
    n = F.shape[-1]
    if n == 2:
        a, b = F[..., 0, 0], F[..., 0, 1]
        c, d = F[..., 1, 0], F[..., 1, 1]
        det = a * d - b * c
        cof = np.stack([np.stack([d, -c], -1), np.stack([-b, a], -1)], -2)
        return det, cof
    if n == 3:
        c0 = np.cross(F[..., 1, :], F[..., 2, :])
        c1 = np.cross(F[..., 2, :], F[..., 0, :])
        c2 = np.cross(F[..., 0, :], F[..., 1, :])
        cof = np.stack([c0, c1, c2], axis=-2)
        det = np.einsum("...j,...j->...", F[..., 0, :], c0)
        return det, cof
    raise ValueError(f"only 2x2 and 3x3 matrices are supported, got {n}x{n}")


def distortion(F: np.ndarray, det: np.ndarray) -> np.ndarray:
    """Optimal distortion ``|F|^n / det F`` (Frobenius norm).

    ``K = 1`` where ``det == 0``; ``K = inf`` where ``det < 0`` (not a map of
    finite distortion there).
    """
    n = F.shape[-1]
    fro = np.linalg.norm(F, axis=(-2, -1))
    with np.errstate(divide="ignore", invalid="ignore"):
        K = np.where(det > 0, fro**n / np.where(det > 0, det, 1.0), np.inf)
    return np.where(det == 0, 1.0, K)


@dataclass(frozen=True, eq=False)
class DeformationState:
    F: np.ndarray
    detF: np.ndarray
    cofF: np.ndarray
    K: np.ndarray

    @property
    def min_det(self) -> float:
        return float(np.min(self.detF))


def deformation_state(mesh: SimplicialMesh, y: FieldLike) -> DeformationState:
    yv = field_values(y)
    if yv.shape != (mesh.n_nodes, mesh.dim):
        raise ValueError(f"deformation must have shape ({mesh.n_nodes}, {mesh.dim})")
    F = element_gradients(mesh, yv)
    det, cof = det_cof(F)
    return DeformationState(F=F, detF=det, cofF=cof, K=distortion(F, det))


# -- point location ------------------------------------------------------------


def _deformed_simplices(mesh: SimplicialMesh, y: FieldLike) -> np.ndarray:
    return field_values(y)[mesh.elements]


class _Locator:
    """Per-simplex barycentric transforms and face ownership flags."""

    def __init__(self, simplices: np.ndarray):
        n = simplices.shape[2]
        self.v0 = simplices[:, 0, :]
        B = simplices[:, 1:, :] - simplices[:, :1, :]
        det = np.linalg.det(B)
        self.ok = np.abs(det) > 1e-300
        Bs = np.where(self.ok[:, None, None], B, np.eye(n))
        # lam_tail = B^{-T} (p - v0)
        self.M = np.linalg.inv(Bs).transpose(0, 2, 1)
        grads = np.concatenate([-self.M.sum(axis=1, keepdims=True), self.M], axis=1)
        outward = -grads
        scale = np.abs(outward).max(axis=2, keepdims=True)
        first_nz = np.argmax(np.abs(outward) > 1e-12 * scale, axis=2)
        lead = np.take_along_axis(outward, first_nz[..., None], axis=2)[..., 0]
        self.owns_face = lead > 0

    def owns(self, elem: np.ndarray, points: np.ndarray) -> np.ndarray:
        """Half-open containment of ``points[k]`` in simplex ``elem[k]``."""
        tail = np.einsum("kij,kj->ki", self.M[elem], points - self.v0[elem])
        lam = np.concatenate([1.0 - tail.sum(axis=1, keepdims=True), tail], axis=1)
        inside = (lam > _BARY_TOL) | ((np.abs(lam) <= _BARY_TOL) & self.owns_face[elem])
        return self.ok[elem] & inside.all(axis=1)


def _coverage_counts(simplices: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Number of simplices owning each point (Banach indicatrix at the points)."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    counts = np.zeros(len(points), dtype=np.int64)
    if len(points) == 0:
        return counts
    loc = _Locator(simplices)
    tree = cKDTree(points)
    centers = simplices.mean(axis=1)
    radii = np.linalg.norm(simplices - centers[:, None, :], axis=2).max(axis=1) * (1 + 1e-9) + 1e-12
    hits = tree.query_ball_point(centers, radii)
    sizes = np.fromiter((len(h) for h in hits), dtype=np.int64, count=len(hits))
    if sizes.sum() == 0:
        return counts
    elem_idx = np.repeat(np.arange(len(simplices)), sizes)
    pt_idx = np.concatenate([np.asarray(h, dtype=np.int64) for h in hits if h])
    chunk = 1 << 20
    for s in range(0, len(pt_idx), chunk):
        e, p = elem_idx[s:s + chunk], pt_idx[s:s + chunk]
        own = loc.owns(e, points[p])
        counts += np.bincount(p[own], minlength=len(points))
    return counts


def banach_indicatrix(mesh: SimplicialMesh, y: FieldLike, xi) -> int | np.ndarray:
    """Number of deformed elements containing ``xi`` (one point or an array of points)."""
    xi = np.asarray(xi, dtype=float)
    counts = _coverage_counts(_deformed_simplices(mesh, y), xi.reshape(-1, mesh.dim))
    return int(counts[0]) if xi.ndim == 1 else counts


def _grid(lo: np.ndarray, hi: np.ndarray, pitch: float):
    shape = np.maximum(np.ceil((hi - lo) / pitch - 1e-9).astype(np.int64), 1)
    return shape


def raster_counts(mesh: SimplicialMesh, y: FieldLike, pitch: float,
                  lo: np.ndarray | None = None, hi: np.ndarray | None = None):
    """Indicatrix on the cell-centred grid of spacing ``pitch`` over [lo, hi].

    Returns ``(counts, lo, shape)`` with ``counts`` flattened in C order.
    """
    simp = _deformed_simplices(mesh, y)
    pts = simp.reshape(-1, mesh.dim)
    lo = pts.min(axis=0) if lo is None else np.asarray(lo, float)
    hi = pts.max(axis=0) if hi is None else np.asarray(hi, float)
    shape = _grid(lo, hi, pitch)
    counts = np.zeros(int(np.prod(shape)), dtype=np.int64)
    loc = _Locator(simp)
    # per element, grid index ranges covering its bounding box
    emin = np.clip(np.ceil((simp.min(axis=1) - lo) / pitch - 0.5).astype(np.int64), 0, shape - 1)
    emax = np.clip(np.floor((simp.max(axis=1) - lo) / pitch - 0.5).astype(np.int64), 0, shape - 1)
    ext = np.maximum(emax - emin + 1, 0)
    ext[np.any(emax < emin, axis=1)] = 0
    sizes = np.prod(ext, axis=1)
    order = np.arange(len(simp))
    # process elements in batches with bounded pair counts
    budget = 1 << 21
    start = 0
    csum = np.cumsum(sizes)
    while start < len(simp):
        base = csum[start - 1] if start else 0
        stop = int(np.searchsorted(csum, base + budget, side="right"))
        stop = max(stop, start + 1)
        sel = order[start:stop]
        sz = sizes[sel]
        if sz.sum():
            e = np.repeat(sel, sz)
            local = np.arange(sz.sum()) - np.repeat(np.cumsum(sz) - sz, sz)
            idx = np.empty((len(e), mesh.dim), dtype=np.int64)
            rem = local
            for d in reversed(range(mesh.dim)):
                span = ext[e, d]
                idx[:, d] = emin[e, d] + rem % span
                rem = rem // span
            points = lo + (idx + 0.5) * pitch
            own = loc.owns(e, points)
            flat = np.ravel_multi_index(idx[own].T, shape)
            counts += np.bincount(flat, minlength=len(counts))
        start = stop
    return counts, lo, shape


def deformed_volume(mesh: SimplicialMesh, y: FieldLike, pitch: float) -> float:
    """Rasterized measure of ``y(Omega)``: cell volume times #grid points with N >= 1."""
    if mesh.n_elements == 0:
        raise ValueError("empty mesh")
    if pitch <= 0:
        raise ValueError("pitch must be positive")
    counts, _, _ = raster_counts(mesh, y, pitch)
    return float(np.count_nonzero(counts) * pitch**mesh.dim)


def exact_deformed_area(mesh: SimplicialMesh, y: FieldLike) -> float:
    """Area of the union of deformed triangles (2D only, polygon union)."""
    if mesh.dim != 2:
        raise ValueError("polygon union is only available in 2D")
    simp = _deformed_simplices(mesh, y)
    polys = shapely.polygons(np.concatenate([simp, simp[:, :1]], axis=1))
    return float(shapely.union_all(polys).area)


def _simple_boundary_certificate(mesh: SimplicialMesh, y: np.ndarray, state: DeformationState) -> bool:
    """True if det > 0 everywhere and the deformed boundary is one simple loop.

    A locally injective P1 map of a disc-like domain whose boundary image is
    a simple closed curve is injective, so the Ciarlet-Necas ratio is 1.
    """
    if mesh.dim != 2 or np.any(state.detF <= 0):
        return False
    edges = mesh.boundary_facets.nodes
    nxt = dict(zip(edges[:, 0].tolist(), edges[:, 1].tolist()))
    if len(nxt) != len(edges):
        return False
    start = int(edges[0, 0])
    loop = [start]
    cur = nxt[start]
    while cur != start and len(loop) <= len(edges):
        loop.append(cur)
        cur = nxt.get(cur, start)
    if len(loop) != len(edges):
        return False
    return bool(shapely.LinearRing(y[loop]).is_simple)


@dataclass
class AdmissibilityReport:
    min_detF: float
    cn_lhs: float
    cn_rhs: float
    cn_ratio: float
    cn_satisfied: bool
    distortion_q_norm: float = float("nan")
    indicatrix_histogram: dict = field(default_factory=dict)
    injectivity_fraction: float = float("nan")
    method: str = "raster"

    def to_text(self) -> str:
        """Flat ``key = value`` block."""
        lines = [
            f"min_detF = {self.min_detF!r}",
            f"cn_lhs = {self.cn_lhs!r}",
            f"cn_rhs = {self.cn_rhs!r}",
            f"cn_ratio = {self.cn_ratio!r}",
            f"cn_satisfied = {str(self.cn_satisfied).lower()}",
            f"cn_method = {self.method}",
            f"distortion_q_norm = {self.distortion_q_norm!r}",
            f"injectivity_fraction = {self.injectivity_fraction!r}",
        ]
        for k in sorted(self.indicatrix_histogram):
            lines.append(f"indicatrix_N{k} = {self.indicatrix_histogram[k]}")
        return "\n".join(lines) + "\n"


def ciarlet_necas_check(mesh: SimplicialMesh, y: FieldLike, tol: float = 1e-3,
                        pitch: float | None = None, method: str = "raster",
                        state: DeformationState | None = None) -> AdmissibilityReport:
    """Compare ``int det grad y`` with ``|y(Omega)|``.

    ``method``: ``raster`` (grid of spacing ``pitch``), ``exact`` (2D polygon
    union) or ``auto`` (2D: injectivity certificate, else polygon union;
    3D: raster).
    """
    yv = field_values(y)
    state = deformation_state(mesh, yv) if state is None else state
    lhs = float(np.dot(state.detF, mesh.volumes))
    used = method
    if method == "auto":
        if mesh.dim == 2 and _simple_boundary_certificate(mesh, yv, state):
            rhs, used = lhs, "certificate"
        elif mesh.dim == 2:
            rhs, used = exact_deformed_area(mesh, yv), "exact"
        else:
            used = "raster"
    if used == "exact":
        rhs = exact_deformed_area(mesh, yv)
    elif used == "raster":
        if pitch is None:
            pitch = mesh.h / 8
        rhs = deformed_volume(mesh, yv, pitch)
    ratio = lhs / rhs if rhs > 0 else float("inf")
    return AdmissibilityReport(
        min_detF=state.min_det,
        cn_lhs=lhs,
        cn_rhs=rhs,
        cn_ratio=ratio,
        cn_satisfied=bool(lhs <= rhs * (1 + tol) + tol),
        method=used,
    )


def distortion_norm(mesh: SimplicialMesh, state: DeformationState, q: float) -> float:
    return float(np.dot(state.K**q, mesh.volumes) ** (1.0 / q))


def injectivity_report(mesh: SimplicialMesh, y: FieldLike, sample_count: int = 4096,
                       seed: int = 0, q: float = 2.0, tol: float = 1e-3,
                       pitch: float | None = None, cn_method: str = "raster") -> AdmissibilityReport:
    """Full admissibility report incl. indicatrix histogram over quasi-random samples.

    Samples are drawn (scrambled Halton) in the bounding box of ``y(Omega)``;
    only points with ``N >= 1`` enter the histogram.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    yv = field_values(y)
    state = deformation_state(mesh, yv)
    report = ciarlet_necas_check(mesh, yv, tol=tol, pitch=pitch, method=cn_method, state=state)
    lo, hi = yv.min(axis=0), yv.max(axis=0)
    pts = qmc.scale(qmc.Halton(d=mesh.dim, scramble=True, seed=seed).random(sample_count), lo, hi)
    counts = banach_indicatrix(mesh, yv, pts)
    covered = counts[counts >= 1]
    hist = {int(k): int(v) for k, v in zip(*np.unique(covered, return_counts=True))}
    report.indicatrix_histogram = hist
    report.injectivity_fraction = float(hist.get(1, 0) / len(covered)) if len(covered) else float("nan")
    report.distortion_q_norm = distortion_norm(mesh, state, q)
    return report


def symmetric_difference_volume(mesh_a: SimplicialMesh, y_a: FieldLike,
                                mesh_b: SimplicialMesh, y_b: FieldLike, pitch: float) -> float:
    """Rasterized ``|y_a(Omega_a) xor y_b(Omega_b)|`` on a common grid."""
    pa, pb = field_values(y_a), field_values(y_b)
    lo = np.minimum(pa.min(axis=0), pb.min(axis=0))
    hi = np.maximum(pa.max(axis=0), pb.max(axis=0))
    ca, _, _ = raster_counts(mesh_a, pa, pitch, lo, hi)
    cb, _, _ = raster_counts(mesh_b, pb, pitch, lo, hi)
    return float(np.count_nonzero((ca > 0) != (cb > 0)) * pitch**mesh_a.dim)
