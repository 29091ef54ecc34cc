"""Recovery sequences, coarea lower bounds and epsilon sweeps.

The recovery phase for a sharp set E is the optimal 1D profile of the double
well evaluated at the signed distance, measured in the deformed
configuration, from ``y(x)`` to the deformed interface ``y(dE)``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .energy import DoubleWell, diffuse_interface_energy
from .measures import band_volume, level_set_measure, reduced_boundary, threshold_selection, total_variation_p
from .mesh import FieldLike, SimplicialMesh, field_values, selection_mask


def _point_segment_distance(P, A, B):
    """Distances from points P (K, n) to segments [A, B] (S, n): (K, S)."""
    AB = B - A
    denom = np.maximum(np.sum(AB**2, axis=1), 1e-300)
    AP = P[:, None, :] - A[None, :, :]
    t = np.clip(np.einsum("ksn,sn->ks", AP, AB) / denom, 0.0, 1.0)
    closest = A[None] + t[..., None] * AB[None]
    return np.linalg.norm(P[:, None, :] - closest, axis=2)


def _point_triangle_distance(P, A, B, C):
    """Distances from points P (K, 3) to triangles ABC (S, 3): (K, S)."""
    nrm = np.cross(B - A, C - A)
    area2 = np.maximum(np.sum(nrm**2, axis=1), 1e-300)
    AP = P[:, None, :] - A[None]
    # barycentric coordinates of the projection onto the plane
    v = np.einsum("ksn,sn->ks", np.cross(AP, (C - A)[None]), nrm) / area2
    w = np.einsum("ksn,sn->ks", np.cross((B - A)[None], AP), nrm) / area2
    u = 1 - v - w
    plane = np.abs(np.einsum("ksn,sn->ks", AP, nrm)) / np.sqrt(area2)
    edge = np.minimum(np.minimum(_point_segment_distance(P, A, B), _point_segment_distance(P, B, C)),
                      _point_segment_distance(P, C, A))
    inside = (u >= 0) & (v >= 0) & (w >= 0)
    return np.where(inside, plane, edge)


def deformed_signed_distance(mesh: SimplicialMesh, y: FieldLike, E, chunk: int = 4096) -> np.ndarray:
    """Signed distance at each node, positive inside ``y(E)``; zero on the interface."""
    yv = field_values(y)
    mask = selection_mask(E)
    rb = reduced_boundary(mesh, E)
    # nodes touching E-elements only are inside, touching none are outside
    touches_e = np.zeros(mesh.n_nodes, bool)
    touches_c = np.zeros(mesh.n_nodes, bool)
    touches_e[mesh.elements[mask].ravel()] = True
    touches_c[mesh.elements[~mask].ravel()] = True
    sign = np.where(touches_e & ~touches_c, 1.0, np.where(touches_c & ~touches_e, -1.0, 0.0))
    if len(rb.facet_ids) == 0:
        return np.where(mask.any(), np.inf, -np.inf) * np.ones(mesh.n_nodes)
    V = yv[rb.nodes]  # (S, n, n)
    dist = np.empty(mesh.n_nodes)
    for s in range(0, mesh.n_nodes, chunk):
        P = yv[s:s + chunk]
        if mesh.dim == 2:
            d = _point_segment_distance(P, V[:, 0], V[:, 1])
        else:
            d = _point_triangle_distance(P, V[:, 0], V[:, 1], V[:, 2])
        dist[s:s + chunk] = d.min(axis=1)
    return sign * dist


def recovery_phase(mesh: SimplicialMesh, y: FieldLike, E, eps: float, gamma: float = 1.0) -> np.ndarray:
    """Nodal ``z = profile(d / eps)`` with the optimal double-well profile.

    For gamma = 1 the profile is ``1 / (1 + exp(-6 d / eps))``.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    d = deformed_signed_distance(mesh, y, E)
    z = DoubleWell(gamma).profile(np.clip(d, -1e300, 1e300), eps)
    return np.clip(z, 0.0, 1.0)


def coarea_lower_bound(mesh: SimplicialMesh, y: FieldLike, z: FieldLike, gamma: float = 1.0,
                       slice_count: int = 64) -> float:
    """Midpoint rule for ``int_0^1 sqrt(2 Phi(s)) Per({zeta > s}, y(Omega)) ds``.

    Slice perimeters are the deformed measures of the P1 level sets.
    """
    if slice_count < 2:
        raise ValueError("slice_count must be >= 2")
    well = DoubleWell(gamma)
    ds = 1.0 / slice_count
    levels = (np.arange(slice_count) + 0.5) * ds
    return float(sum(well.sqrt_2phi(s) * level_set_measure(mesh, y, z, s) for s in levels) * ds)


def interface_width(mesh: SimplicialMesh, y: FieldLike, z: FieldLike, lo: float = 0.1, hi: float = 0.9) -> float:
    """``|{lo < zeta < hi}| / Per({zeta = 1/2})`` in the deformed configuration."""
    per = level_set_measure(mesh, y, z, 0.5)
    if per <= 0:
        return float("nan")
    return band_volume(mesh, y, z, lo, hi) / per


def matched_resolution(eps: float, dim: int = 2, ratio: float = 8.0, length: float = 1.0) -> int:
    """Even cells-per-axis count of a Kuhn box mesh whose longest edge is <= eps / ratio.

    Even counts keep the mid-plane ``x_1 = length / 2`` on mesh facets.
    """
    return 2 * int(np.ceil(np.sqrt(dim) * length * ratio / eps / 2))


@dataclass
class SweepRecord:
    eps: float
    F_eps_int: float
    gamma_per: float
    coarea_bound: float
    width: float
    target: float

    @property
    def ratio(self) -> float:
        return self.F_eps_int / self.target if self.target > 0 else float("nan")


def eps_sweep(mesh: SimplicialMesh, y: FieldLike, E, eps_list: Sequence[float], gamma: float = 1.0,
              slice_count: int = 64, meshes: Sequence[SimplicialMesh] | None = None,
              deformations: Sequence[FieldLike] | None = None, selections=None) -> list[SweepRecord]:
    """Recovery-state energies for each eps.

    By default every eps uses ``(mesh, y, E)``. Pass ``meshes``/``deformations``/
    ``selections`` (one per eps) to refine the mesh along with eps.
    """
    eps_list = list(eps_list)
    if any(e <= 0 for e in eps_list):
        raise ValueError("eps values must be positive")
    if any(b >= a for a, b in zip(eps_list, eps_list[1:])):
        raise ValueError("eps_list must be strictly decreasing")
    well = DoubleWell(gamma)
    records = []
    for k, eps in enumerate(eps_list):
        m = meshes[k] if meshes is not None else mesh
        yk = deformations[k] if deformations is not None else y
        Ek = selections[k] if selections is not None else E
        target = gamma * total_variation_p(m, yk, Ek).total_variation
        if not selection_mask(Ek).any() or selection_mask(Ek).all():
            records.append(SweepRecord(eps, 0.0, 0.0, 0.0, float("nan"), 0.0))
            continue
        z = recovery_phase(m, yk, Ek, eps, gamma)
        fint = diffuse_interface_energy(m, yk, z, eps, well)
        thresholded = threshold_selection(m, z, 0.5)
        gper = gamma * total_variation_p(m, yk, thresholded).total_variation
        records.append(SweepRecord(
            eps=eps,
            F_eps_int=fint,
            gamma_per=gper,
            coarea_bound=coarea_lower_bound(m, yk, z, gamma, slice_count),
            width=interface_width(m, yk, z),
            target=target,
        ))
    return records


def write_sweep_csv(records: Sequence[SweepRecord], path, header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write("# " + line + "\n")
        w = csv.writer(fh)
        w.writerow(["eps", "F_eps_int", "gamma_per", "coarea_bound", "width", "target", "ratio"])
        for r in records:
            w.writerow([repr(float(v)) for v in (r.eps, r.F_eps_int, r.gamma_per, r.coarea_bound,
                                                 r.width, r.target, r.ratio)])
