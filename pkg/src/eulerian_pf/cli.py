"""Command-line front end.

Subcommands: eval, minimize, sweep, verify, gradcheck, compare.
Exit codes: 0 ok, 1 a self-check failed, 2 configuration error, 3 infeasible input.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .energy import bulk_energy, diffuse_interface_energy, sharp_interface_energy, total_energy_sharp
from .exceptions import ConfigError, InfeasibleStateError
from .gamma import eps_sweep, matched_resolution, recovery_phase, write_sweep_csv
from .kinematics import det_cof, deformation_state, injectivity_report, symmetric_difference_volume
from .mesh import element_gradients, write_snapshot
from .optimize import continuation_eps, write_iteration_log
from .verify import characterization_suite, gradient_check, write_characterization_csv, write_gradient_csv

log = logging.getLogger("eulerian_pf")

EXIT_OK, EXIT_CHECK_FAILED, EXIT_CONFIG, EXIT_INFEASIBLE = 0, 1, 2, 3


def _write_csv(path: Path, header, columns, rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in header:
            fh.write("# " + line + "\n")
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def _write_text(path: Path, header, body: str) -> None:
    path.write_text("".join("# " + line + "\n" for line in header) + body)


def _state(cfg):
    mesh = cfgmod.build_mesh(cfg)
    y = cfgmod.build_deformation(cfg, mesh.nodes)
    return mesh, y


def _require_feasible(mesh, y):
    st = deformation_state(mesh, y)
    if not st.min_det > 0:
        bad = int(np.sum(st.detF <= 0))
        raise InfeasibleStateError(f"det F <= 0 on {bad} element(s) (min det F = {st.min_det!r})")
    return st


def cmd_eval(cfg, out: Path) -> int:
    mesh, y = _state(cfg)
    _require_feasible(mesh, y)
    model = cfgmod.build_model(cfg, mesh.dim)
    E = cfgmod.build_phase_set(cfg, mesh)
    rep = injectivity_report(mesh, y, seed=cfg.seed, tol=cfg.optimizer.cn_tol, cn_method="auto")
    body = rep.to_text()
    warn = not rep.cn_satisfied
    body += f"warning = {'cn_violated' if warn else 'none'}\n"
    _write_text(out / "admissibility.txt", cfg.header(), body)
    if warn:
        log.warning("Ciarlet-Necas condition violated: ratio %.6g", rep.cn_ratio)

    sharp_total = total_energy_sharp(mesh, y, E, model)
    sharp_int = sharp_interface_energy(mesh, y, E, model.gamma)
    columns = ["bulk", "sharp_interface", "sharp_total"]
    row = [sharp_total - sharp_int, sharp_int, sharp_total]
    for eps in cfg.eps:
        z = recovery_phase(mesh, y, E, eps, model.gamma)
        columns += [f"diffuse_bulk[eps={eps!r}]", f"diffuse_interface[eps={eps!r}]"]
        row += [bulk_energy(mesh, y, z, model), diffuse_interface_energy(mesh, y, z, eps, model)]
    _write_csv(out / "energies.csv", cfg.header(), columns, [row])
    print(f"sharp interface {sharp_int!r}, CN ratio {rep.cn_ratio!r}" + (" (CN VIOLATED)" if warn else ""))
    return EXIT_OK


def cmd_minimize(cfg, out: Path) -> int:
    mesh, y0 = _state(cfg)
    _require_feasible(mesh, y0)
    model = cfgmod.build_model(cfg, mesh.dim)
    dirichlet = cfgmod.dirichlet_nodes(cfg, mesh)
    schedule = cfg.eps or (cfg.optimizer.eps,)
    results = continuation_eps(mesh, model, y0, dirichlet, schedule, cfg.optimizer)
    rows = []
    for k, res in enumerate(results):
        head = cfg.header() + [f"stage {k}: eps = {res.eps!r}, converged = {str(res.converged).lower()}, "
                               f"status = {res.status}"]
        write_iteration_log(res.log, out / f"iterations_{k}.csv", head)
        rows.append([k, res.eps, res.energy, res.bulk, res.interface, res.iterations, res.pg_norm,
                     res.admissibility.cn_ratio, str(res.converged).lower(), res.status])
    _write_csv(out / "energies.csv", cfg.header(),
               ["stage", "eps", "energy", "bulk", "interface", "iterations", "pg_norm", "cn_ratio",
                "converged", "status"], rows)
    final = results[-1]
    _write_text(out / "admissibility.txt", cfg.header(), final.admissibility.to_text())
    write_snapshot(out / "snapshot.txt", mesh, {"y": final.y, "z": final.z}, cfg.header())
    print(f"energy {final.energy!r} after {final.iterations} iterations; converged={final.converged} "
          f"({final.status})")
    return EXIT_OK


def cmd_sweep(cfg, out: Path) -> int:
    if not cfg.eps:
        raise ConfigError("[sweep] eps: at least one value is required for the sweep command")
    model = cfgmod.build_model(cfg, cfg.mesh.dim)
    meshes = []
    for eps in cfg.eps:
        if cfg.refine:
            length = max(cfg.mesh.lengths)
            n = matched_resolution(eps, cfg.mesh.dim, length=length)
            cells = [max(2, int(np.ceil(n * L / length / 2)) * 2) for L in cfg.mesh.lengths]
            meshes.append(cfgmod.build_mesh(cfg, cells))
        else:
            meshes.append(cfgmod.build_mesh(cfg))
    ys = [cfgmod.build_deformation(cfg, m.nodes) for m in meshes]
    for m, y in zip(meshes, ys):
        _require_feasible(m, y)
    Es = [cfgmod.build_phase_set(cfg, m) for m in meshes]
    records = eps_sweep(None, None, None, cfg.eps, model.gamma, cfg.slice_count,
                        meshes=meshes, deformations=ys, selections=Es)
    write_sweep_csv(records, out / "sweep.csv", cfg.header())
    for k, (eps, m, y, E) in enumerate(zip(cfg.eps, meshes, ys, Es)):
        z = recovery_phase(m, y, E, eps, model.gamma)
        write_snapshot(out / f"snapshot_{k}.txt", m, {"y": y, "z": z}, cfg.header() + [f"eps = {eps!r}"])
    for r in records:
        print(f"eps {r.eps!r}: F_int {r.F_eps_int!r}, gamma Per {r.gamma_per!r}, ratio {r.ratio!r}")
    return EXIT_OK


def cmd_verify(cfg, out: Path) -> int:
    rows = characterization_suite(cfg.seed)
    write_characterization_csv(rows, out / "characterization.csv", cfg.header())
    worst = max(rep.discrepancy for _, rep in rows)
    ok = all(rep.passed for _, rep in rows)
    print(f"{len(rows)} fixtures, max discrepancy {worst:.3e}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def cmd_gradcheck(cfg, out: Path, tolerance: float = 1e-5) -> int:
    mesh = cfgmod.build_mesh(cfg)
    model = cfgmod.build_model(cfg, mesh.dim)
    samples = gradient_check(mesh, model, cfg.optimizer.eps, seed=cfg.seed)
    write_gradient_csv(samples, out / "gradcheck.csv", cfg.header())
    worst = max(s.relative_error for s in samples)
    ok = worst < tolerance
    print(f"{len(samples)} directional derivatives, max relative error {worst:.3e}: {'PASS' if ok else 'FAIL'}")
    return EXIT_OK if ok else EXIT_CHECK_FAILED


def _deformed_perimeter(mesh, y) -> float:
    bf = mesh.boundary_facets
    _, cof = det_cof(element_gradients(mesh, y)[bf.elem_a])
    return float(np.dot(bf.measure, np.linalg.norm(np.einsum("kij,kj->ki", cof, bf.normal), axis=1)))


def cmd_compare(cfg_a, cfg_b, out: Path, pitch: float | None = None) -> int:
    mesh_a, y_a = _state(cfg_a)
    mesh_b, y_b = _state(cfg_b)
    if mesh_a.dim != mesh_b.dim:
        raise ConfigError("compare: both configurations must have the same dimension")
    _require_feasible(mesh_a, y_a)
    _require_feasible(mesh_b, y_b)
    if pitch is None:
        pitch = min(mesh_a.h, mesh_b.h) / 8
    sym = symmetric_difference_volume(mesh_a, y_a, mesh_b, y_b, pitch)
    # each grid cell met by either deformed boundary can be misclassified
    tol = pitch * np.sqrt(mesh_a.dim) * (_deformed_perimeter(mesh_a, y_a) + _deformed_perimeter(mesh_b, y_b))
    header = [f"config a: {cfg_a.source}", f"config b: {cfg_b.source}"] + cfg_a.header() + cfg_b.header()
    _write_csv(out / "compare.csv", header, ["symmetric_difference", "pitch", "grid_tolerance"],
               [[sym, float(pitch), float(tol)]])
    print(f"|A xor B| = {sym!r} (grid tolerance {tol:.3e})")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="INI configuration file")
    common.add_argument("--out", type=Path, help="output directory (overrides [run] out)")
    common.add_argument("--seed", type=int, help="random seed (overrides [run] seed)")
    common.add_argument("--threads", type=int, help="cap on BLAS/OpenMP worker threads")
    common.add_argument("-v", "--verbose", action="store_true")
    parser = argparse.ArgumentParser(prog="eulerian-pf", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("eval", parents=[common], help="energies and admissibility of a configured state")
    sub.add_parser("minimize", parents=[common], help="minimize the diffuse energy")
    sub.add_parser("sweep", parents=[common], help="recovery-state energies over an eps list")
    sub.add_parser("verify", parents=[common], help="total variation vs oracle on the fixture suite")
    g = sub.add_parser("gradcheck", parents=[common], help="analytic vs finite-difference gradients")
    g.add_argument("--tolerance", type=float, default=1e-5)
    c = sub.add_parser("compare", parents=[common], help="volume of the symmetric difference of two images")
    c.add_argument("--other", type=Path, required=True, help="configuration of the second state")
    c.add_argument("--pitch", type=float, help="raster pitch (default: min h / 8)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    overrides = {"seed": args.seed, "out": str(args.out) if args.out else None, "threads": args.threads}
    try:
        cfg = cfgmod.load_config(args.config, overrides=overrides)
        out = Path(cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        if cfg.threads is not None:
            from threadpoolctl import threadpool_limits

            limiter = threadpool_limits(limits=cfg.threads)
        else:
            limiter = nullcontext()
        with limiter:
            if args.command == "eval":
                return cmd_eval(cfg, out)
            if args.command == "minimize":
                return cmd_minimize(cfg, out)
            if args.command == "sweep":
                return cmd_sweep(cfg, out)
            if args.command == "verify":
                return cmd_verify(cfg, out)
            if args.command == "gradcheck":
                return cmd_gradcheck(cfg, out, args.tolerance)
            other = cfgmod.load_config(args.other, overrides=overrides)
            return cmd_compare(cfg, other, out, args.pitch)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleStateError as exc:
        print(f"infeasible input: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE


if __name__ == "__main__":
    sys.exit(main())
