"""Feasibility-preserving minimization of the diffuse energy.

The solver is a projected gradient method on the free nodal unknowns
``(y, z)``. A Barzilai-Borwein step proposes a trial length, and monotone
Armijo backtracking shrinks it until the trial state has
``det F > det_floor`` on every element, passes the Ciarlet-Necas check and
decreases the energy sufficiently. ``z`` is clipped to ``[0, 1]``; ``y`` is
never projected.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve

from .energy import EnergyModel, evaluate_diffuse
from .exceptions import ConfigError, InfeasibleStateError
from .kinematics import AdmissibilityReport, ciarlet_necas_check, det_cof
from .measures import threshold_selection
from .mesh import FieldLike, SimplicialMesh, element_gradients, field_values

log = logging.getLogger(__name__)

LOG_COLUMNS = ("iteration", "energy", "bulk", "interface", "step", "min_det", "cn_ratio", "pg_norm")


@dataclass
class MinimizeConfig:
    eps: float = 0.1
    max_iterations: int = 2000
    gradient_tolerance: float = 1e-6
    initial_step: float = 1.0
    backtracking: float = 0.5
    armijo: float = 1e-4
    min_step: float = 1e-16
    cn_tol: float = 1e-3
    det_floor: float = 1e-8
    seed: int = 0
    schedule: str = "simultaneous"  # or "alternate"
    freeze_y: bool = False
    cn_method: str = "auto"
    cn_pitch: float | None = None
    noise: float = 0.01

    def __post_init__(self):
        for name in ("eps", "gradient_tolerance", "initial_step", "armijo", "min_step", "cn_tol", "det_floor"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if not 0 < self.backtracking < 1:
            raise ConfigError("backtracking factor must lie in (0, 1)")
        if self.armijo >= 1:
            raise ConfigError("armijo constant must be < 1")
        if self.max_iterations < 0:
            raise ConfigError("max_iterations must be >= 0")
        if self.schedule not in ("simultaneous", "alternate"):
            raise ConfigError(f"unknown schedule {self.schedule!r}")
        if self.noise < 0:
            raise ConfigError("noise must be nonnegative")


@dataclass
class MinimizeResult:
    mesh: SimplicialMesh
    y: np.ndarray
    z: np.ndarray
    eps: float
    energy: float
    bulk: float
    interface: float
    iterations: int
    pg_norm: float
    admissibility: AdmissibilityReport
    converged: bool
    status: str
    log: list = field(default_factory=list)

    @property
    def phase_set(self) -> np.ndarray:
        """Element mask of the recovered sharp phase ``{zbar > 1/2}``."""
        return threshold_selection(self.mesh, self.z, 0.5)


def harmonic_extension(mesh: SimplicialMesh, y0: np.ndarray, dirichlet: np.ndarray) -> np.ndarray:
    """P1 harmonic extension of ``y0`` from the Dirichlet nodes; all nodes keep ``y0`` if none are free."""
    y0 = np.asarray(y0, float)
    n_nodes = mesh.n_nodes
    fixed = np.zeros(n_nodes, bool)
    fixed[dirichlet] = True
    if fixed.all() or not fixed.any():
        return y0.copy()
    G = mesh.shape_gradients
    local = mesh.volumes[:, None, None] * np.einsum("mik,mjk->mij", G, G)
    rows = np.repeat(mesh.elements, mesh.dim + 1, axis=1).ravel()
    cols = np.tile(mesh.elements, (1, mesh.dim + 1)).ravel()
    K = sp.csr_matrix((local.ravel(), (rows, cols)), shape=(n_nodes, n_nodes))
    free = ~fixed
    A = K[free][:, free].tocsc()
    B = K[free][:, fixed]
    y = y0.copy()
    y[free] = np.column_stack([spsolve(A, -B @ y0[fixed, k]) for k in range(mesh.dim)])
    return y


def initial_state(mesh: SimplicialMesh, y0: FieldLike, dirichlet: np.ndarray, config: MinimizeConfig):
    """Harmonic blend of the boundary data and ``z = 0.5 + noise`` (seeded)."""
    y = harmonic_extension(mesh, field_values(y0), np.asarray(dirichlet, int))
    rng = np.random.default_rng(config.seed)
    z = np.clip(0.5 + config.noise * rng.uniform(-1.0, 1.0, mesh.n_nodes), 0.0, 1.0)
    return y, z


class _Problem:
    def __init__(self, mesh, model, dirichlet, config):
        self.mesh, self.model, self.config = mesh, model, config
        self.fixed = np.zeros(mesh.n_nodes, bool)
        self.fixed[np.asarray(dirichlet, int)] = True

    def evaluate(self, y, z, gradient=True):
        return evaluate_diffuse(self.mesh, y, z, self.config.eps, self.model, with_gradient=gradient)

    def feasible(self, y):
        det, _ = det_cof(element_gradients(self.mesh, y))
        min_det = float(det.min())
        if not min_det > self.config.det_floor:
            return False, min_det, float("nan")
        rep = ciarlet_necas_check(self.mesh, y, tol=self.config.cn_tol, pitch=self.config.cn_pitch,
                                  method=self.config.cn_method)
        return bool(rep.cn_ratio <= 1.0 + self.config.cn_tol), min_det, rep.cn_ratio

    def masks(self, iteration):
        """Which blocks move in this iteration: (y, z)."""
        move_y = not self.config.freeze_y
        move_z = True
        if self.config.schedule == "alternate" and move_y:
            move_y, move_z = iteration % 2 == 0, iteration % 2 == 1
        return move_y, move_z

    def projected_gradient(self, y, z, gy, gz):
        py = np.where(self.fixed[:, None], 0.0, gy)
        if self.config.freeze_y:
            py = np.zeros_like(gy)
        pz = z - np.clip(z - gz, 0.0, 1.0)
        return py, pz


def _norm(py, pz) -> float:
    return float(np.sqrt(np.sum(py * py) + np.sum(pz * pz)))


def minimize_diffuse(mesh: SimplicialMesh, model: EnergyModel, y0: FieldLike, dirichlet,
                     init=None, config: MinimizeConfig | None = None) -> MinimizeResult:
    """Minimize the diffuse energy with ``y = y0`` on the ``dirichlet`` nodes.

    ``dirichlet`` is an index array of constrained nodes. ``init`` is an
    optional ``(y, z)`` pair; by default :func:`initial_state` is used.
    Raises :class:`InfeasibleStateError` if the initial state is infeasible.
    """
    config = config or MinimizeConfig()
    dirichlet = np.asarray(dirichlet, int)
    y0v = field_values(y0)
    if init is None:
        y, z = initial_state(mesh, y0v, dirichlet, config)
    else:
        y, z = (np.array(field_values(v), dtype=float) for v in init)
        y[dirichlet] = y0v[dirichlet]
    if np.any(z < 0) or np.any(z > 1):
        raise InfeasibleStateError("initial phase field leaves [0, 1]")
    prob = _Problem(mesh, model, dirichlet, config)
    ok, min_det, cn = prob.feasible(y)
    if not ok:
        raise InfeasibleStateError(f"infeasible start: min det {min_det!r}, CN ratio {cn!r}")

    ev = prob.evaluate(y, z)
    energy = ev.total
    py, pz = prob.projected_gradient(y, z, ev.grad_y, ev.grad_z)
    pg = _norm(py, pz)
    rows = [(0, energy, ev.bulk, ev.interface, 0.0, min_det, cn, pg)]
    # last BB step per block pattern, so alternating blocks keep separate curvature estimates
    steps: dict = {}
    prev: dict = {}
    status = "max_iterations"
    converged = pg < config.gradient_tolerance
    if converged:
        status = "converged"
    it = 0
    while not converged and it < config.max_iterations:
        it += 1
        move_y, move_z = prob.masks(it)
        # a block already at a stationary point hands its turn to the other block
        if move_y != move_z and not np.any(py if move_y else pz):
            move_y, move_z = move_z, move_y
        key = (move_y, move_z)
        dy = -py if move_y else np.zeros_like(y)
        gz_dir = ev.grad_z if move_z else None
        t = steps.get(key, config.initial_step)
        accepted = False
        while t >= config.min_step:
            y_try = y + t * dy
            z_try = np.clip(z - t * gz_dir, 0.0, 1.0) if move_z else z
            dz = z_try - z
            decrease = float(np.sum(ev.grad_y * (y_try - y)) + np.dot(ev.grad_z, dz))
            if decrease >= 0 and not (np.any(dz) or np.any(y_try != y)):
                break
            if move_y:
                ok, min_det_try, cn_try = prob.feasible(y_try)
            else:
                ok, min_det_try, cn_try = True, min_det, cn
            if ok:
                ev_try = prob.evaluate(y_try, z_try)
                if ev_try.total <= energy + config.armijo * decrease and ev_try.total <= energy:
                    accepted = True
                    break
            t *= config.backtracking
        if not accepted:
            status = "stalled"
            log.info("line search stalled at iteration %d", it)
            it -= 1
            break
        s_vec = np.concatenate([(y_try - y).ravel(), dz])
        g_diff = np.concatenate([(ev_try.grad_y - ev.grad_y).ravel(), ev_try.grad_z - ev.grad_z])
        if move_y:
            g_diff[: y.size] *= ~np.repeat(prob.fixed, mesh.dim)
        else:
            g_diff[: y.size] = 0.0
        if not move_z:
            g_diff[y.size:] = 0.0
        sy = float(np.dot(s_vec, g_diff))
        ss = float(np.dot(s_vec, s_vec))
        steps[key] = min(max(ss / sy, 1e-10), 1e10) if sy > 0 else config.initial_step
        prev[key] = it
        y, z, ev = y_try, z_try, ev_try
        energy, min_det, cn = ev.total, min_det_try, cn_try
        py, pz = prob.projected_gradient(y, z, ev.grad_y, ev.grad_z)
        pg = _norm(py, pz)
        rows.append((it, energy, ev.bulk, ev.interface, t, min_det, cn, pg))
        if pg < config.gradient_tolerance:
            converged, status = True, "converged"

    final = prob.evaluate(y, z, gradient=False)
    report = ciarlet_necas_check(mesh, y, tol=config.cn_tol, pitch=config.cn_pitch, method=config.cn_method)
    return MinimizeResult(mesh=mesh, y=y, z=z, eps=config.eps, energy=final.total, bulk=final.bulk,
                          interface=final.interface, iterations=it, pg_norm=pg, admissibility=report,
                          converged=converged, status=status, log=rows)


def continuation_eps(mesh: SimplicialMesh, model: EnergyModel, y0: FieldLike, dirichlet,
                     eps_schedule: Sequence[float], config: MinimizeConfig | None = None,
                     init=None) -> list[MinimizeResult]:
    """Warm-started minimizations along a decreasing ``eps`` schedule.

    Stops after the first stalled run; that result is still returned.
    """
    eps_schedule = list(eps_schedule)
    if not eps_schedule or any(e <= 0 for e in eps_schedule):
        raise ValueError("eps schedule must be nonempty and positive")
    if any(b >= a for a, b in zip(eps_schedule, eps_schedule[1:])):
        raise ValueError("eps schedule must be strictly decreasing")
    config = config or MinimizeConfig()
    results = []
    state = init
    for eps in eps_schedule:
        cfg = MinimizeConfig(**{**config.__dict__, "eps": eps})
        res = minimize_diffuse(mesh, model, y0, dirichlet, init=state, config=cfg)
        results.append(res)
        if res.status == "stalled":
            log.warning("continuation halted at eps=%r (stalled)", eps)
            break
        state = (res.y, res.z)
    return results


def write_iteration_log(rows, path, header: Sequence[str] = ()) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write("# " + line + "\n")
        w = csv.writer(fh)
        w.writerow(LOG_COLUMNS)
        for r in rows:
            w.writerow([str(r[0])] + [repr(float(v)) for v in r[1:]])
