"""Simplicial meshes of boxes (and annuli), P1 fields and cellwise integration.

Elements are stored as ``(n_elements, dim + 1)`` integer arrays of node
indices, positively oriented. Geometry that every other module needs (element
volumes, P1 shape-function gradients, facet adjacency, normals) is computed
once at construction and exposed read-only.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Sequence, Union

import numpy as np

from .exceptions import DegenerateGeometryError

_REL_DEGENERATE = 1e-14


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class SimplicialMesh:
    """Conforming simplicial mesh in dimension 2 or 3.

    ``boundary_tags`` holds one string per boundary facet (same order as
    ``boundary_facets``). Everything else is derived.
    """

    nodes: np.ndarray
    elements: np.ndarray
    boundary_tags_by_facet: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        elements = np.asarray(self.elements, dtype=np.int64)
        if nodes.ndim != 2 or nodes.shape[1] not in (2, 3):
            raise ValueError(f"nodes must have shape (N, 2) or (N, 3), got {nodes.shape}")
        if elements.ndim != 2 or elements.shape[1] != nodes.shape[1] + 1:
            raise ValueError(
                f"elements must have shape (M, {nodes.shape[1] + 1}), got {elements.shape}"
            )
        if elements.size and (elements.min() < 0 or elements.max() >= len(nodes)):
            raise ValueError("element connectivity references missing nodes")
        if not np.all(np.isfinite(nodes)):
            raise ValueError("node coordinates must be finite")
        object.__setattr__(self, "nodes", _readonly(nodes))
        object.__setattr__(self, "elements", _readonly(elements))
        self._check_orientation()

    def _check_orientation(self):
        if len(self.elements) == 0:
            raise ValueError("mesh has no elements")
        edges = self.nodes[self.elements[:, 1:]] - self.nodes[self.elements[:, :1]]
        dets = np.linalg.det(edges)
        scale = np.max(np.abs(edges)) ** self.dim
        if np.any(dets <= _REL_DEGENERATE * scale):
            bad = int(np.argmin(dets))
            raise DegenerateGeometryError(
                f"element {bad} is degenerate or negatively oriented (det={dets[bad]:.3e})"
            )

    # -- basic sizes -------------------------------------------------------
    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    # -- element geometry --------------------------------------------------
    @cached_property
    def _edge_matrices(self) -> np.ndarray:
        return self.nodes[self.elements[:, 1:]] - self.nodes[self.elements[:, :1]]

    @cached_property
    def volumes(self) -> np.ndarray:
        """Element volumes (areas in 2D)."""
        return _readonly(np.linalg.det(self._edge_matrices) / math.factorial(self.dim))

    @cached_property
    def shape_gradients(self) -> np.ndarray:
        """Gradients of the P1 hat functions, shape ``(M, dim + 1, dim)``."""
        # x = x0 + B^T lam  =>  lam = B^{-T} (x - x0)
        binv_t = np.linalg.inv(self._edge_matrices).transpose(0, 2, 1)
        grads = np.empty((self.n_elements, self.dim + 1, self.dim))
        grads[:, 1:, :] = binv_t
        grads[:, 0, :] = -binv_t.sum(axis=1)
        return _readonly(grads)

    @cached_property
    def centroids(self) -> np.ndarray:
        return _readonly(self.nodes[self.elements].mean(axis=1))

    @cached_property
    def h(self) -> float:
        """Longest element edge."""
        pts = self.nodes[self.elements]
        longest = 0.0
        for i, j in itertools.combinations(range(self.dim + 1), 2):
            longest = max(longest, float(np.max(np.linalg.norm(pts[:, i] - pts[:, j], axis=1))))
        return longest

    # -- facets ------------------------------------------------------------
    @cached_property
    def _facet_table(self):
        n = self.dim
        m = self.n_elements
        # facet k of an element is the one opposite local vertex k
        local = np.array([[j for j in range(n + 1) if j != k] for k in range(n + 1)])
        facets = self.elements[:, local].reshape(m * (n + 1), n)
        owner = np.repeat(np.arange(m), n + 1)
        opposite = np.tile(np.arange(n + 1), m)
        keys = np.sort(facets, axis=1)
        uniq, inverse, counts = np.unique(keys, axis=0, return_inverse=True, return_counts=True)
        inverse = inverse.ravel()
        if np.any(counts > 2):
            raise ValueError("non-manifold mesh: a facet is shared by more than two elements")
        order = np.argsort(inverse, kind="stable")
        return uniq, inverse, counts, owner, opposite, order

    def _facet_normal_measure(self, elem: np.ndarray, opposite: np.ndarray):
        g = self.shape_gradients[elem, opposite]
        gnorm = np.linalg.norm(g, axis=1)
        normal = -g / gnorm[:, None]
        measure = self.dim * self.volumes[elem] * gnorm
        return normal, measure

    @cached_property
    def interior_facets(self) -> "FacetSet":
        """Facets shared by two elements; normals point from ``elem_a`` to ``elem_b``."""
        uniq, inverse, counts, owner, opposite, order = self._facet_table
        sorted_inv = inverse[order]
        first = order[np.r_[True, sorted_inv[1:] != sorted_inv[:-1]]]
        ids = inverse[first]
        mask = counts[ids] == 2
        first = first[mask]
        # second occurrence immediately follows the first in sorted order
        pos = np.searchsorted(sorted_inv, inverse[first])
        second = order[pos + 1]
        ea, eb = owner[first], owner[second]
        normal, measure = self._facet_normal_measure(ea, opposite[first])
        return FacetSet(
            nodes=_readonly(uniq[inverse[first]]),
            elem_a=_readonly(ea),
            elem_b=_readonly(eb),
            local_a=_readonly(opposite[first]),
            local_b=_readonly(opposite[second]),
            normal=_readonly(normal),
            measure=_readonly(measure),
        )

    @cached_property
    def boundary_facets(self) -> "FacetSet":
        """Facets owned by one element; normals are outward."""
        uniq, inverse, counts, owner, opposite, order = self._facet_table
        occ = np.flatnonzero(counts[inverse] == 1)
        occ = occ[np.argsort(inverse[occ], kind="stable")]
        normal, measure = self._facet_normal_measure(owner[occ], opposite[occ])
        # 2D: counter-clockwise edge order, so boundary facets chain into loops
        if self.dim == 2:
            local = np.array([[1, 2], [2, 0], [0, 1]])
        else:
            local = np.array([[j for j in range(4) if j != k] for k in range(4)])
        facet_nodes = self.elements[owner[occ][:, None], local[opposite[occ]]]
        return FacetSet(
            nodes=_readonly(facet_nodes),
            elem_a=_readonly(owner[occ]),
            elem_b=_readonly(np.full(len(occ), -1)),
            local_a=_readonly(opposite[occ]),
            local_b=_readonly(np.full(len(occ), -1)),
            normal=_readonly(normal),
            measure=_readonly(measure),
        )

    @cached_property
    def boundary_tags(self) -> np.ndarray:
        """One tag per boundary facet ("boundary" if untagged)."""
        keys = [tuple(sorted(f)) for f in self.boundary_facets.nodes.tolist()]
        return np.array([self.boundary_tags_by_facet.get(k, "boundary") for k in keys], dtype=object)

    def boundary_nodes(self, tags: Sequence[str] | None = None) -> np.ndarray:
        """Sorted node indices on boundary facets carrying any of ``tags`` (all if None)."""
        facets = self.boundary_facets.nodes
        if tags is not None:
            facets = facets[np.isin(self.boundary_tags, list(tags))]
        return np.unique(facets)

    @cached_property
    def element_neighbors(self) -> list[list[int]]:
        nb: list[list[int]] = [[] for _ in range(self.n_elements)]
        f = self.interior_facets
        for a, b in zip(f.elem_a.tolist(), f.elem_b.tolist()):
            nb[a].append(b)
            nb[b].append(a)
        return nb

    @cached_property
    def node_volumes(self) -> np.ndarray:
        """Lumped (barycentric) node volumes."""
        share = np.repeat(self.volumes / (self.dim + 1), self.dim + 1)
        return _readonly(np.bincount(self.elements.ravel(), weights=share, minlength=self.n_nodes))

    @property
    def total_volume(self) -> float:
        return float(np.sum(self.volumes))


@dataclass(frozen=True, eq=False)
class FacetSet:
    nodes: np.ndarray
    elem_a: np.ndarray
    elem_b: np.ndarray
    local_a: np.ndarray
    local_b: np.ndarray
    normal: np.ndarray
    measure: np.ndarray

    def __len__(self) -> int:
        return len(self.measure)


@dataclass(frozen=True, eq=False)
class NodalField:
    """Values attached to mesh nodes; scalar (N,) or vector (N, dim)."""

    mesh: SimplicialMesh
    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape[0] != self.mesh.n_nodes:
            raise ValueError(
                f"field has {values.shape[0]} values but mesh has {self.mesh.n_nodes} nodes"
            )
        if values.ndim == 2 and values.shape[1] != self.mesh.dim or values.ndim > 2:
            raise ValueError(f"vector field must have shape (N, {self.mesh.dim})")
        object.__setattr__(self, "values", _readonly(values))

    @property
    def kind(self) -> str:
        return "scalar" if self.values.ndim == 1 else "vector"


@dataclass(frozen=True, eq=False)
class CellSelection:
    """Boolean mask over elements, the discrete phase-1 region E."""

    mesh: SimplicialMesh
    mask: np.ndarray

    def __post_init__(self):
        mask = np.asarray(self.mask, dtype=bool)
        if mask.shape != (self.mesh.n_elements,):
            raise ValueError(f"mask needs {self.mesh.n_elements} entries, got {mask.shape}")
        object.__setattr__(self, "mask", _readonly(mask))

    @classmethod
    def from_predicate(cls, mesh: SimplicialMesh, predicate) -> "CellSelection":
        """Select elements whose centroid satisfies ``predicate(points) -> bool array``."""
        return cls(mesh, np.asarray(predicate(mesh.centroids), dtype=bool))

    @property
    def is_trivial(self) -> bool:
        return bool(self.mask.all() or not self.mask.any())

    def complement(self) -> "CellSelection":
        return CellSelection(self.mesh, ~self.mask)


FieldLike = Union[NodalField, np.ndarray]


def field_values(f: FieldLike) -> np.ndarray:
    return np.asarray(f.values if isinstance(f, NodalField) else f, dtype=float)


def selection_mask(E) -> np.ndarray:
    return np.asarray(E.mask if isinstance(E, CellSelection) else E, dtype=bool)


# -- builders ---------------------------------------------------------------

_AXIS_NAMES = "xyz"


def build_box_mesh(dim: int, lengths: Sequence[float], resolution: Sequence[int]) -> SimplicialMesh:
    """Structured Kuhn triangulation of ``[0, L_0] x ... x [0, L_{n-1}]``.

    Each cell is split into ``dim!`` simplices along the main diagonal, which
    keeps neighbouring cells conforming. Boundary facets are tagged
    ``xmin``, ``xmax``, ``ymin``, ... by the face of the box they lie on.
    """
    if dim not in (2, 3):
        raise ValueError(f"dim must be 2 or 3, got {dim}")
    lengths = np.asarray(lengths, dtype=float)
    res = np.asarray(resolution)
    if lengths.shape != (dim,) or res.shape != (dim,):
        raise ValueError("lengths and resolution need one entry per dimension")
    if np.any(lengths <= 0):
        raise ValueError(f"lengths must be positive, got {lengths.tolist()}")
    if np.any(res < 1) or not np.all(np.equal(np.mod(res, 1), 0)):
        raise ValueError(f"resolution must be positive integers, got {res.tolist()}")
    res = res.astype(np.int64)

    axes = [np.linspace(0.0, lengths[d], res[d] + 1) for d in range(dim)]
    grid = np.meshgrid(*axes, indexing="ij")
    # node id = i + (r0+1) * (j + (r1+1) * k): x runs fastest
    nodes = np.stack([g.transpose(*reversed(range(dim))).ravel() for g in grid], axis=1)
    strides = np.cumprod(np.r_[1, res[:-1] + 1])

    cells = np.stack(
        np.meshgrid(*[np.arange(r) for r in res], indexing="ij"), axis=-1
    ).reshape(-1, dim)
    base = cells @ strides
    simplices = []
    for perm in itertools.permutations(range(dim)):
        offs = [0]
        for axis in perm:
            offs.append(offs[-1] + strides[axis])
        simplices.append(base[:, None] + np.asarray(offs)[None, :])
    elements = np.concatenate(simplices, axis=0)
    elements = _orient_positive(nodes, elements)

    tags = _box_tags(nodes, elements, lengths)
    return SimplicialMesh(nodes, elements, tags)


def build_annulus_mesh(r_inner: float, r_outer: float, n_r: int, n_theta: int) -> SimplicialMesh:
    """Full annulus in the plane, structured in (r, theta); tags ``inner``/``outer``."""
    if not 0 < r_inner < r_outer:
        raise ValueError("need 0 < r_inner < r_outer")
    if n_r < 1 or n_theta < 3:
        raise ValueError("need n_r >= 1 and n_theta >= 3")
    r = np.linspace(r_inner, r_outer, n_r + 1)
    th = np.arange(n_theta) * (2 * np.pi / n_theta)
    R, T = np.meshgrid(r, th, indexing="ij")
    nodes = np.stack([(R * np.cos(T)).ravel(), (R * np.sin(T)).ravel()], axis=1)

    def nid(i, j):
        return i * n_theta + (j % n_theta)

    elements = []
    for i in range(n_r):
        for j in range(n_theta):
            a, b, c, d = nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)
            elements.append((a, b, c))
            elements.append((a, c, d))
    elements = _orient_positive(nodes, np.asarray(elements))
    radius = np.linalg.norm(nodes, axis=1)
    tags = {}
    mesh = SimplicialMesh(nodes, elements)
    for f in mesh.boundary_facets.nodes.tolist():
        key = tuple(sorted(f))
        tags[key] = "inner" if np.all(np.isclose(radius[f], r_inner)) else "outer"
    return SimplicialMesh(nodes, elements, tags)


def _orient_positive(nodes: np.ndarray, elements: np.ndarray) -> np.ndarray:
    elements = np.array(elements, dtype=np.int64)
    edges = nodes[elements[:, 1:]] - nodes[elements[:, :1]]
    neg = np.linalg.det(edges) < 0
    elements[neg, 0], elements[neg, 1] = elements[neg, 1], elements[neg, 0].copy()
    return elements


def _box_tags(nodes, elements, lengths) -> dict:
    mesh = SimplicialMesh(nodes, elements)
    tags = {}
    bf = mesh.boundary_facets
    for facet, normal in zip(bf.nodes.tolist(), bf.normal):
        axis = int(np.argmax(np.abs(normal)))
        side = "max" if normal[axis] > 0 else "min"
        tags[tuple(sorted(facet))] = f"{_AXIS_NAMES[axis]}{side}"
    return tags


# -- P1 calculus --------------------------------------------------------------


def element_gradients(mesh: SimplicialMesh, values: FieldLike) -> np.ndarray:
    """Constant per-element gradients of a P1 field.

    Scalar field -> ``(M, dim)``; vector field -> ``(M, dim, dim)`` with
    ``out[e, a, b] = d y_a / d x_b``.
    """
    v = field_values(values)
    G = mesh.shape_gradients
    local = v[mesh.elements]
    if v.ndim == 1:
        return np.einsum("mi,mib->mb", local, G)
    return np.einsum("mia,mib->mab", local, G)


def element_gradient(mesh: SimplicialMesh, values: FieldLike, elem: int) -> np.ndarray:
    """Gradient of the affine interpolant of ``values`` on one element."""
    if not 0 <= elem < mesh.n_elements:
        raise IndexError(f"element {elem} out of range")
    v = field_values(values)
    X = mesh.nodes[mesh.elements[elem]]
    B = X[1:] - X[0]
    det = np.linalg.det(B)
    if abs(det) <= _REL_DEGENERATE * np.max(np.abs(B)) ** mesh.dim:
        raise DegenerateGeometryError(f"element {elem} is degenerate")
    dv = v[mesh.elements[elem]]
    dv = dv[1:] - dv[0]
    # B grad^T = dv  (each row of B is an edge vector)
    return np.linalg.solve(B, dv).T


def integrate_cellwise(mesh: SimplicialMesh, per_element_values) -> float:
    """Sum of value * element volume."""
    vals = np.asarray(per_element_values, dtype=float)
    if vals.shape != (mesh.n_elements,):
        raise ValueError(f"expected {mesh.n_elements} element values, got shape {vals.shape}")
    return float(np.dot(vals, mesh.volumes))


def element_means(mesh: SimplicialMesh, values: FieldLike) -> np.ndarray:
    return field_values(values)[mesh.elements].mean(axis=1)


def map_nodes(mesh: SimplicialMesh, y: FieldLike) -> SimplicialMesh:
    """The deformed mesh ``y(mesh)`` (same connectivity); requires det > 0."""
    return SimplicialMesh(field_values(y), mesh.elements)


# -- snapshot I/O -------------------------------------------------------------

_MAGIC = "eulerian-pf-mesh 1"


def write_snapshot(path: Union[str, Path], mesh: SimplicialMesh, fields: dict | None = None,
                   header: Sequence[str] = ()) -> None:
    """Write mesh, boundary tags and named nodal/element fields as text.

    Floats are written with ``repr`` so a read gives bit-identical values.
    """
    fields = fields or {}
    out = []
    for line in header:
        out.append("# " + line)
    out.append(_MAGIC)
    out.append(f"dim {mesh.dim}")
    out.append(f"nodes {mesh.n_nodes}")
    out.extend(" ".join(repr(float(c)) for c in row) for row in mesh.nodes.tolist())
    out.append(f"elements {mesh.n_elements}")
    out.extend(" ".join(str(i) for i in row) for row in mesh.elements.tolist())
    bf = mesh.boundary_facets.nodes.tolist()
    out.append(f"boundary {len(bf)}")
    for facet, tag in zip(bf, mesh.boundary_tags):
        out.append(" ".join(str(i) for i in facet) + " " + str(tag))
    for name, values in fields.items():
        values = np.asarray(values, dtype=float)
        if any(ch.isspace() for ch in name):
            raise ValueError(f"field name {name!r} contains whitespace")
        if values.shape[0] == mesh.n_nodes:
            where = "node"
        elif values.shape[0] == mesh.n_elements:
            where = "element"
        else:
            raise ValueError(f"field {name!r} matches neither node nor element count")
        width = 1 if values.ndim == 1 else values.shape[1]
        out.append(f"field {name} {where} {width}")
        rows = values.reshape(len(values), -1).tolist()
        out.extend(" ".join(repr(float(c)) for c in row) for row in rows)
    out.append("end")
    Path(path).write_text("\n".join(out) + "\n")


def read_snapshot(path: Union[str, Path]) -> tuple[SimplicialMesh, dict]:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln and not ln.startswith("#")]
    it = iter(enumerate(lines, 1))

    def take():
        try:
            return next(it)
        except StopIteration:
            raise ValueError(f"{path}: unexpected end of file") from None

    def expect(keyword):
        lineno, ln = take()
        parts = ln.split()
        if parts[0] != keyword:
            raise ValueError(f"{path}: line {lineno}: expected '{keyword}', got {ln!r}")
        return parts[1:]

    _, magic = take()
    if magic.strip() != _MAGIC:
        raise ValueError(f"{path}: not a mesh snapshot (missing '{_MAGIC}' header)")
    dim = int(expect("dim")[0])
    n_nodes = int(expect("nodes")[0])
    nodes = np.array([[float(v) for v in take()[1].split()] for _ in range(n_nodes)]).reshape(n_nodes, dim)
    n_el = int(expect("elements")[0])
    elements = np.array([[int(v) for v in take()[1].split()] for _ in range(n_el)]).reshape(n_el, dim + 1)
    n_bf = int(expect("boundary")[0])
    tags = {}
    for _ in range(n_bf):
        parts = take()[1].split()
        tags[tuple(sorted(int(v) for v in parts[:dim]))] = parts[dim]
    fields = {}
    while True:
        lineno, ln = take()
        parts = ln.split()
        if parts[0] == "end":
            break
        if parts[0] != "field" or len(parts) != 4:
            raise ValueError(f"{path}: line {lineno}: malformed field header {ln!r}")
        name, where, width = parts[1], parts[2], int(parts[3])
        count = n_nodes if where == "node" else n_el
        vals = np.array([[float(v) for v in take()[1].split()] for _ in range(count)])
        fields[name] = vals.reshape(count) if width == 1 else vals.reshape(count, width)
    return SimplicialMesh(nodes, elements, tags), fields
