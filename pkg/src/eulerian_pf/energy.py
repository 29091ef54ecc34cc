"""Two-phase bulk energy, double-well potential and interface energies.

Bulk densities belong to the polyconvex family

    W(F) = a |G|^p + b (|G|^n / det G)^q + c / det G + d (det G - J)^2 - e,
    G = F U^{-1},

with ``W = +inf`` for ``det F <= 0``. ``U`` is the stretch of the phase well
and ``e`` shifts the minimum value to zero. The diffuse interface energy is
Eulerian; it is assembled on the reference mesh by pulling back with
``grad(zeta) o y = F^{-T} grad z`` and ``d xi = det F dx``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from .exceptions import InfeasibleStateError, UnsupportedDimensionError
from .kinematics import det_cof
from .mesh import (CellSelection, FieldLike, SimplicialMesh, element_gradients, field_values,
                   selection_mask)


# -- double well ----------------------------------------------------------------


@dataclass(frozen=True)
class DoubleWell:
    """Phi(s) = 18 gamma^2 s^2 (1 - s)^2, so that int_0^1 sqrt(2 Phi) = gamma."""

    gamma: float = 1.0

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("surface tension gamma must be positive")

    def phi(self, s):
        s = np.asarray(s, dtype=float)
        return 18.0 * self.gamma**2 * s**2 * (1.0 - s) ** 2

    def dphi(self, s):
        s = np.asarray(s, dtype=float)
        return 36.0 * self.gamma**2 * s * (1.0 - s) * (1.0 - 2.0 * s)

    def sqrt_2phi(self, s):
        s = np.asarray(s, dtype=float)
        return 6.0 * self.gamma * np.abs(s * (1.0 - s))

    def profile(self, d, eps: float):
        """Optimal 1D profile at signed distance ``d``: logistic of rate 6 gamma / eps."""
        return 0.5 * (1.0 + np.tanh(3.0 * self.gamma * np.asarray(d, float) / eps))

    def profile_width(self, eps: float, lo: float = 0.1, hi: float = 0.9) -> float:
        """Distance between the ``lo`` and ``hi`` level sets of :meth:`profile`."""
        logit = lambda s: np.log(s / (1 - s))
        return float((logit(hi) - logit(lo)) * eps / (6.0 * self.gamma))


# -- bulk densities --------------------------------------------------------------


@dataclass
class PhaseDensity:
    """One phase of the polyconvex family (see module docstring)."""

    dim: int
    p: float
    q: float
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    d: float = 1.0
    J: float = 1.0
    stretch: Optional[np.ndarray] = None
    offset: float = field(init=False)
    well_scale: float = field(init=False)

    def __post_init__(self):
        if min(self.a, self.b, self.c, self.d) < 0:
            raise ValueError("coefficients a, b, c, d must be nonnegative")
        if self.p <= self.dim:
            raise ValueError(f"need p > {self.dim}, got {self.p}")
        if self.q < 1:
            raise ValueError("need q >= 1")
        U = np.eye(self.dim) if self.stretch is None else np.asarray(self.stretch, float)
        if U.shape != (self.dim, self.dim) or np.linalg.det(U) <= 0:
            raise ValueError("well stretch must be a square matrix with positive determinant")
        self.stretch = U
        self._u_inv = np.linalg.inv(U)
        self.offset = 0.0
        self.well_scale, self.offset = self._locate_minimum()

    @classmethod
    def with_well_at(cls, dim: int, p: float, q: float, a: float, b: float, d: float,
                     J: float = 1.0, scale: float = 1.0, stretch=None) -> "PhaseDensity":
        """Choose ``c`` so the minimum sits at ``G = scale * I`` (i.e. ``F = scale * U``)."""
        n, t = dim, scale
        c = t ** (n + 1) / n * (a * p * n ** (p / 2) * t ** (p - 1) + 2 * d * n * t ** (n - 1) * (t**n - J))
        if c < 0:
            raise ValueError("requested well needs a negative 1/det coefficient")
        return cls(dim=dim, p=p, q=q, a=a, b=b, c=c, d=d, J=J, stretch=stretch)

    # conformal G = t I realizes the minimum: every term is nondecreasing in |G| at fixed det
    def _radial(self, t):
        n = self.dim
        return (self.a * n ** (self.p / 2) * t**self.p + self.b * n ** (n * self.q / 2)
                + self.c * t ** (-n) + self.d * (t**n - self.J) ** 2)

    def _radial_slope(self, t):
        n = self.dim
        return (self.a * self.p * n ** (self.p / 2) * t ** (self.p - 1) - n * self.c * t ** (-n - 1)
                + 2 * self.d * n * t ** (n - 1) * (t**n - self.J))

    def _locate_minimum(self):
        res = minimize_scalar(lambda s: self._radial(np.exp(s)), bounds=(-12.0, 8.0),
                              method="bounded", options={"xatol": 1e-12})
        t = float(np.exp(res.x))
        for _ in range(50):
            h = 1e-7 * t
            curv = (self._radial_slope(t + h) - self._radial_slope(t - h)) / (2 * h)
            if curv <= 0:
                break
            step = self._radial_slope(t) / curv
            t -= step
            if abs(step) < 1e-15 * t:
                break
        return t, float(self._radial(t))

    @property
    def well(self) -> np.ndarray:
        """A deformation gradient at which the density vanishes."""
        return self.well_scale * self.stretch

    @property
    def coercivity_constant(self) -> float:
        """C with ``W(F) + offset >= C (|F|^p + (|F|^n / det F)^q - 1)``."""
        n = self.dim
        unorm = np.linalg.norm(self.stretch, 2)
        udet = np.linalg.det(self.stretch)
        return float(min(self.a * unorm ** (-self.p), self.b * (udet / unorm**n) ** self.q))

    def _invariants(self, F):
        G = np.asarray(F, float) @ self._u_inv
        det, cof = det_cof(G)
        fro = np.linalg.norm(G, axis=(-2, -1))
        return G, det, cof, fro

    def __call__(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        if F.shape[-2:] != (self.dim, self.dim):
            raise ValueError(f"F must be {self.dim}x{self.dim}, got shape {F.shape[-2:]}")
        return self.unnormalized(F) - self.offset

    def unnormalized(self, F) -> np.ndarray:
        """Density before the well shift (the polyconvex function h itself)."""
        G, det, cof, fro = self._invariants(F)
        n = self.dim
        pos = det > 0
        safe = np.where(pos, det, 1.0)
        val = (self.a * fro**self.p + self.b * (fro**n / safe) ** self.q + self.c / safe
               + self.d * (safe - self.J) ** 2)
        return np.where(pos, val, np.inf)

    def stress(self, F) -> np.ndarray:
        """dW/dF; undefined (nan) where det F <= 0."""
        G, det, cof, fro = self._invariants(F)
        n = self.dim
        pos = det > 0
        safe = np.where(pos, det, 1.0)[..., None, None]
        fro_ = fro[..., None, None]
        D = fro_**n / safe
        with np.errstate(invalid="ignore", divide="ignore"):
            dfro_p = np.where(fro_ > 0, self.p * fro_ ** (self.p - 2), 0.0) * G
            dD = np.where(fro_ > 0, n * fro_ ** (n - 2), 0.0) * G / safe - D * cof / safe
        PG = (self.a * dfro_p + self.b * self.q * D ** (self.q - 1) * dD
              - self.c * cof / safe**2 + 2 * self.d * (safe - self.J) * cof)
        PF = PG @ self._u_inv.T
        return np.where(pos[..., None, None], PF, np.nan)


@dataclass
class BulkModel:
    phases: tuple

    def __post_init__(self):
        if len(self.phases) != 2:
            raise ValueError("need exactly two phase densities")
        w0, w1 = self.phases
        if (w0.dim, w0.p, w0.q) != (w1.dim, w1.p, w1.q):
            raise ValueError("both phases must share dim, p and q")

    @property
    def dim(self) -> int:
        return self.phases[0].dim

    @property
    def coercivity_constant(self) -> float:
        return min(w.coercivity_constant for w in self.phases)


@dataclass
class EnergyModel:
    bulk: BulkModel
    well: DoubleWell = field(default_factory=DoubleWell)

    @property
    def gamma(self) -> float:
        return self.well.gamma

    @property
    def dim(self) -> int:
        return self.bulk.dim


def default_model(dim: int = 2, gamma: float = 1.0, second_well: float | None = None,
                  a: float = 0.05, b: float = 0.05, d: float = 1.0, p: float = 4.0,
                  q: float | None = None) -> EnergyModel:
    """Phase 0 has its well at the identity; phase 1 at ``diag(lam, 1/lam, ...)``.

    ``second_well=None`` makes the two phases identical.
    """
    if q is None:
        q = 2.0 if dim == 2 else 3.0
    w0 = PhaseDensity.with_well_at(dim, p, q, a=a, b=b, d=d)
    if second_well is None:
        w1 = PhaseDensity.with_well_at(dim, p, q, a=a, b=b, d=d)
    else:
        U = np.eye(dim)
        U[0, 0], U[1, 1] = second_well, 1.0 / second_well
        w1 = PhaseDensity.with_well_at(dim, p, q, a=a, b=b, d=d, stretch=U)
    return EnergyModel(BulkModel((w0, w1)), DoubleWell(gamma))


def bulk_density(model, F, phase: int) -> np.ndarray:
    bulk = model.bulk if isinstance(model, EnergyModel) else model
    return bulk.phases[phase](F)


def tabulate_density(phase: PhaseDensity, samples: np.ndarray, path) -> None:
    """Write ``F`` samples and their densities as CSV (debugging hook)."""
    samples = np.asarray(samples, float)
    n = phase.dim
    vals = phase(samples)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([f"F{i}{j}" for i in range(n) for j in range(n)] + ["W"])
        for Fs, v in zip(samples.reshape(len(samples), -1).tolist(), vals.tolist()):
            w.writerow([repr(x) for x in Fs] + [repr(v)])


# -- assembly -------------------------------------------------------------------


def _phase_weights(mesh: SimplicialMesh, z) -> np.ndarray:
    return field_values(z)[mesh.elements].mean(axis=1)


def _bulk_from_weights(mesh, F, w, model: EnergyModel) -> float:
    W0 = model.bulk.phases[0](F)
    W1 = model.bulk.phases[1](F)
    if not (np.all(np.isfinite(W0)) and np.all(np.isfinite(W1))):
        return float("inf")
    return float(np.dot(mesh.volumes, w * W1 + (1.0 - w) * W0))


def bulk_energy(mesh: SimplicialMesh, y: FieldLike, z: FieldLike, model: EnergyModel) -> float:
    """Reference-configuration bulk energy with element-mean phase weights."""
    F = element_gradients(mesh, y)
    return _bulk_from_weights(mesh, F, _phase_weights(mesh, z), model)


def diffuse_interface_energy(mesh: SimplicialMesh, y: FieldLike, z: FieldLike, eps: float,
                             model) -> float:
    """Eulerian ``int (eps/2 |grad zeta|^2 + Phi(zeta)/eps) d xi`` via pullback."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    well = model.well if isinstance(model, EnergyModel) else model
    F = element_gradients(mesh, y)
    det, cof = det_cof(F)
    if np.any(det <= 0):
        return float("inf")
    g = element_gradients(mesh, z)
    # F^{-T} = cof / det
    a = np.einsum("mij,mj->mi", cof, g) / det[:, None]
    zbar = _phase_weights(mesh, z)
    dens = 0.5 * eps * np.einsum("mi,mi->m", a, a) + well.phi(zbar) / eps
    return float(np.dot(mesh.volumes, det * dens))


def total_energy_diffuse(mesh, y, z, eps, model: EnergyModel) -> float:
    bulk = bulk_energy(mesh, y, z, model)
    if not np.isfinite(bulk):
        return float("inf")
    return bulk + diffuse_interface_energy(mesh, y, z, eps, model)


@dataclass
class DiffuseEvaluation:
    bulk: float
    interface: float
    grad_y: Optional[np.ndarray] = None
    grad_z: Optional[np.ndarray] = None

    @property
    def total(self) -> float:
        return self.bulk + self.interface


def evaluate_diffuse(mesh: SimplicialMesh, y: FieldLike, z: FieldLike, eps: float,
                     model: EnergyModel, with_gradient: bool = True) -> DiffuseEvaluation:
    """Bulk and interface energy and, optionally, the exact nodal gradients.

    Infeasible states (some det F <= 0) return infinite energies and no
    gradient. Element contributions are reduced with ``np.bincount`` over a
    fixed element order, so results are reproducible bit for bit.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    yv, zv = field_values(y), field_values(z)
    F = element_gradients(mesh, yv)
    det, cof = det_cof(F)
    if np.any(det <= 0):
        return DiffuseEvaluation(float("inf"), float("inf"))
    vol = mesh.volumes
    n = mesh.dim
    w0, w1 = model.bulk.phases
    well = model.well
    zbar = zv[mesh.elements].mean(axis=1)
    W0, W1 = w0(F), w1(F)
    bulk = float(np.dot(vol, zbar * W1 + (1.0 - zbar) * W0))

    g = element_gradients(mesh, zv)
    a = np.einsum("mij,mj->mi", cof, g) / det[:, None]
    aa = np.einsum("mi,mi->m", a, a)
    phi = well.phi(zbar)
    interface = float(np.dot(vol, det * (0.5 * eps * aa + phi / eps)))
    if not with_gradient:
        return DiffuseEvaluation(bulk, interface)

    # dE/dF per element
    P = zbar[:, None, None] * w1.stress(F) + (1.0 - zbar)[:, None, None] * w0.stress(F)
    Finv_a = np.linalg.solve(F, a[..., None])[..., 0]
    P += (0.5 * eps * aa + phi / eps)[:, None, None] * cof
    P -= eps * det[:, None, None] * np.einsum("mi,mj->mij", a, Finv_a)
    # dE/dg and dE/dzbar per element
    dg = eps * det[:, None] * Finv_a
    dzbar = (W1 - W0) + det * well.dphi(zbar) / eps

    G = mesh.shape_gradients
    local_y = vol[:, None, None] * np.einsum("mab,mib->mia", P, G)
    local_z = vol[:, None] * (np.einsum("mb,mib->mi", dg, G) + dzbar[:, None] / (n + 1))
    idx = mesh.elements.ravel()
    grad_y = np.stack(
        [np.bincount(idx, weights=local_y[..., k].ravel(), minlength=mesh.n_nodes) for k in range(n)],
        axis=1,
    )
    grad_z = np.bincount(idx, weights=local_z.ravel(), minlength=mesh.n_nodes)
    return DiffuseEvaluation(bulk, interface, grad_y, grad_z)


def gradient_diffuse(mesh, y, z, eps, model: EnergyModel, fixed_nodes=None):
    """Nodal gradients ``(dE/dy, dE/dz)``; entries of ``fixed_nodes`` are zeroed in dE/dy."""
    ev = evaluate_diffuse(mesh, y, z, eps, model)
    if ev.grad_y is None:
        raise InfeasibleStateError("energy is infinite (det F <= 0); gradient undefined")
    gy = ev.grad_y
    if fixed_nodes is not None:
        gy = gy.copy()
        gy[np.asarray(fixed_nodes)] = 0.0
    return gy, ev.grad_z


# -- sharp interface --------------------------------------------------------------


def interface_facets(mesh: SimplicialMesh, E):
    """Interior facets separating E from its complement.

    Returns ``(facet_ids, e_side_elem, other_elem, normal_out_of_E)``.
    """
    mask = selection_mask(E)
    f = mesh.interior_facets
    ma, mb = mask[f.elem_a], mask[f.elem_b]
    ids = np.flatnonzero(ma != mb)
    a_in = ma[ids]
    e_side = np.where(a_in, f.elem_a[ids], f.elem_b[ids])
    other = np.where(a_in, f.elem_b[ids], f.elem_a[ids])
    normal = np.where(a_in[:, None], f.normal[ids], -f.normal[ids])
    return ids, e_side, other, normal


def sharp_interface_energy(mesh: SimplicialMesh, y: FieldLike, E, gamma: float = 1.0) -> float:
    """``gamma * sum_facets |(cof F) n| * |facet|``: the deformed interface measure."""
    ids, e_side, _, normal = interface_facets(mesh, E)
    if len(ids) == 0:
        return 0.0
    _, cof = det_cof(element_gradients(mesh, y)[e_side])
    v = np.einsum("kij,kj->ki", cof, normal)
    return float(gamma * np.dot(mesh.interior_facets.measure[ids], np.linalg.norm(v, axis=1)))


@dataclass
class InterfaceIntegrand:
    """Psi(n, F x n, cof F n), evaluated on stacks of facet data.

    ``func(n, G, c)`` takes ``n`` (K, 3), ``G`` (K, 3, 3), ``c`` (K, 3).
    """

    func: Callable
    name: str = "psi"
    coercivity: Optional[float] = None

    def __call__(self, n, G, c) -> np.ndarray:
        return np.asarray(self.func(np.asarray(n, float), np.asarray(G, float), np.asarray(c, float)))


def eulerian_area_integrand(gamma: float = 1.0) -> InterfaceIntegrand:
    """gamma |cof F n|: the deformed surface measure."""
    return InterfaceIntegrand(lambda n, G, c: gamma * np.linalg.norm(c, axis=-1), "eulerian_area")


def referential_area_integrand(kappa: float = 1.0) -> InterfaceIntegrand:
    return InterfaceIntegrand(lambda n, G, c: kappa * np.linalg.norm(n, axis=-1), "referential_area")


def full_norm_integrand(gamma: float = 1.0, kappa: float = 1.0) -> InterfaceIntegrand:
    """gamma |c| + kappa |(n, G, c)|; coercive with constant kappa."""
    def f(n, G, c):
        full = np.sqrt(np.sum(n**2, -1) + np.sum(G**2, (-2, -1)) + np.sum(c**2, -1))
        return gamma * np.linalg.norm(c, axis=-1) + kappa * full
    return InterfaceIntegrand(f, "full_norm", coercivity=kappa)


def cross_matrix(F: np.ndarray, n: np.ndarray) -> np.ndarray:
    """Matrix of ``a -> F (n x a)``."""
    n = np.asarray(n, float)
    zero = np.zeros(n.shape[:-1])
    skew = np.stack([
        np.stack([zero, -n[..., 2], n[..., 1]], -1),
        np.stack([n[..., 2], zero, -n[..., 0]], -1),
        np.stack([-n[..., 1], n[..., 0], zero], -1),
    ], -2)
    return np.asarray(F) @ skew


def general_interface_energy(mesh: SimplicialMesh, y: FieldLike, E, psi: InterfaceIntegrand) -> float:
    """``sum_facets |facet| * Psi(n, F x n, (cof F) n)`` with F from the E side (3D)."""
    if mesh.dim != 3:
        raise UnsupportedDimensionError("general interface integrands need a 3D mesh")
    ids, e_side, _, normal = interface_facets(mesh, E)
    if len(ids) == 0:
        return 0.0
    F = element_gradients(mesh, y)[e_side]
    _, cof = det_cof(F)
    c = np.einsum("kij,kj->ki", cof, normal)
    vals = psi(normal, cross_matrix(F, normal), c)
    return float(np.dot(mesh.interior_facets.measure[ids], vals))


def total_energy_sharp(mesh, y, E, model: EnergyModel) -> float:
    F = element_gradients(mesh, y)
    bulk = _bulk_from_weights(mesh, F, selection_mask(E).astype(float), model)
    if not np.isfinite(bulk):
        return float("inf")
    return bulk + sharp_interface_energy(mesh, y, E, model.gamma)


def check_homogeneity(psi: InterfaceIntegrand, n, G, c, lam: float = 2.0) -> float:
    """Max relative deviation of ``Psi(lam A)`` from ``lam Psi(A)``."""
    base = psi(n, G, c)
    scaled = psi(lam * np.asarray(n), lam * np.asarray(G), lam * np.asarray(c))
    return float(np.max(np.abs(scaled - lam * base) / np.maximum(np.abs(lam * base), 1e-300)))
