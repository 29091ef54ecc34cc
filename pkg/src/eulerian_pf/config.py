"""INI run configuration.

Example::

    [mesh]
    builder = box            ; box | annulus | file
    dim = 2
    lengths = 1 1
    cells = 16 16

    [model]
    gamma = 1.0
    second_well = 1.1        ; omit for two identical phases
    a = 0.05
    b = 0.05
    d = 1.0
    p = 4
    q = 2

    [deformation]
    family = affine          ; identity | affine | stretch | wrap
    matrix = 2 0 0 1         ; row-major, affine only
    offset = 0 0
    dirichlet = all          ; all | none | list of boundary tags

    [phase]
    set = half               ; half | quarter | all | none
    axis = 0
    position = 0.5

    [optimizer]
    eps = 0.1
    max_iterations = 2000

    [sweep]
    eps = 0.2 0.1 0.05
    refine = true            ; rebuild the box mesh with longest edge eps/8

    [run]
    seed = 0
    out = results
"""

from __future__ import annotations

import configparser
import re
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .optimize import MinimizeConfig

SECTIONS = {
    "mesh": {"builder", "dim", "lengths", "cells", "r_inner", "r_outer", "n_r", "n_theta", "path"},
    "model": {"gamma", "second_well", "a", "b", "d", "p", "q"},
    "deformation": {"family", "matrix", "offset", "stretch", "dirichlet"},
    "phase": {"set", "axis", "position"},
    "optimizer": {f.name for f in fields(MinimizeConfig)},
    "sweep": {"eps", "refine", "slice_count"},
    "run": {"seed", "out", "threads"},
}

_OPTIMIZER_TYPES = {"max_iterations": int, "seed": int, "freeze_y": bool, "schedule": str, "cn_method": str}


@dataclass
class MeshSpec:
    builder: str = "box"
    dim: int = 2
    lengths: tuple = (1.0, 1.0)
    cells: tuple = (16, 16)
    r_inner: float = 1.0
    r_outer: float = 2.0
    n_r: int = 8
    n_theta: int = 64
    path: str = ""


@dataclass
class ModelSpec:
    gamma: float = 1.0
    second_well: float | None = None
    a: float = 0.05
    b: float = 0.05
    d: float = 1.0
    p: float = 4.0
    q: float | None = None


@dataclass
class DeformationSpec:
    family: str = "identity"
    matrix: tuple | None = None
    offset: tuple | None = None
    stretch: float = 1.0
    dirichlet: tuple = ("all",)


@dataclass
class PhaseSpec:
    set: str = "half"
    axis: int = 0
    position: float = 0.5


@dataclass
class RunConfig:
    mesh: MeshSpec = field(default_factory=MeshSpec)
    model: ModelSpec = field(default_factory=ModelSpec)
    deformation: DeformationSpec = field(default_factory=DeformationSpec)
    phase: PhaseSpec = field(default_factory=PhaseSpec)
    optimizer: MinimizeConfig = field(default_factory=MinimizeConfig)
    eps: tuple = ()
    refine: bool = False
    slice_count: int = 64
    seed: int = 0
    out: str = "results"
    threads: int | None = None
    source: str = "<defaults>"
    raw: dict = field(default_factory=dict)

    def header(self) -> list[str]:
        """Comment lines echoing the fully resolved configuration."""
        lines = [f"config source: {self.source}"]
        for section, values in self.resolved().items():
            lines.append(f"[{section}]")
            lines.extend(f"{k} = {v}" for k, v in values.items())
        return lines

    def resolved(self) -> dict:
        def fmt(v):
            if isinstance(v, (tuple, list)):
                return " ".join(fmt(x) for x in v)
            if isinstance(v, float):
                return repr(v)
            return "none" if v is None else str(v)

        out = {}
        for name in ("mesh", "model", "deformation", "phase", "optimizer"):
            part = getattr(self, name)
            out[name] = {f.name: fmt(getattr(part, f.name)) for f in fields(part)}
        out["sweep"] = {"eps": fmt(self.eps), "refine": fmt(self.refine), "slice_count": fmt(self.slice_count)}
        out["run"] = {"seed": fmt(self.seed), "out": self.out, "threads": fmt(self.threads)}
        return out


def _line_of(text: str, section: str, key: str | None) -> int | None:
    current = None
    for lineno, line in enumerate(text.splitlines(), 1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            current = m.group(1).strip()
            if key is None and current == section:
                return lineno
            continue
        if current == section and key is not None and re.match(rf"\s*{re.escape(key)}\s*[=:]", line):
            return lineno
    return None


class _Reader:
    def __init__(self, parser: configparser.ConfigParser, text: str, source: str):
        self.parser, self.text, self.source = parser, text, source

    def fail(self, section, key, message):
        line = _line_of(self.text, section, None if key == "*" else key)
        where = f"{self.source}:{line}" if line else self.source
        raise ConfigError(f"{where}: [{section}] {key}: {message}")

    def has(self, section, key):
        return self.parser.has_option(section, key)

    def get(self, section, key, kind, default):
        if not self.has(section, key):
            return default
        raw = self.parser.get(section, key).strip()
        try:
            if raw.lower() == "none" and kind is not bool:
                return None
            if kind is bool:
                return self.parser.getboolean(section, key)
            return kind(raw)
        except ValueError as exc:
            self.fail(section, key, f"cannot parse {raw!r} as {kind.__name__} ({exc})")

    def vector(self, section, key, kind, default, length=None):
        if not self.has(section, key):
            return default
        raw = self.parser.get(section, key).replace(",", " ").split()
        try:
            vals = tuple(kind(v) for v in raw)
        except ValueError:
            self.fail(section, key, f"expected a list of {kind.__name__}, got {' '.join(raw)!r}")
        if length is not None and len(vals) != length:
            self.fail(section, key, f"expected {length} values, got {len(vals)}")
        return vals


def load_config(path=None, text: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Parse and validate an INI configuration (file ``path`` or string ``text``)."""
    if text is None:
        if path is None:
            text, source = "", "<defaults>"
        else:
            try:
                text = Path(path).read_text()
            except OSError as exc:
                raise ConfigError(f"{path}: cannot read configuration ({exc.strerror})") from None
            source = str(path)
    else:
        source = "<string>"
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from None
    r = _Reader(parser, text, source)
    for section in parser.sections():
        if section not in SECTIONS:
            r.fail(section, "*", f"unknown section (expected one of {', '.join(sorted(SECTIONS))})")
        for key in parser.options(section):
            if key not in SECTIONS[section]:
                r.fail(section, key, "unknown key")

    cfg = RunConfig(source=source, raw={s: dict(parser.items(s)) for s in parser.sections()})
    m = cfg.mesh
    m.builder = r.get("mesh", "builder", str, m.builder)
    if m.builder not in ("box", "annulus", "file"):
        r.fail("mesh", "builder", f"unknown builder {m.builder!r}")
    m.dim = r.get("mesh", "dim", int, m.dim)
    if m.dim not in (2, 3):
        r.fail("mesh", "dim", "must be 2 or 3")
    m.lengths = r.vector("mesh", "lengths", float, (1.0,) * m.dim, m.dim)
    m.cells = r.vector("mesh", "cells", int, (16,) * m.dim, m.dim)
    if any(v <= 0 for v in m.lengths):
        r.fail("mesh", "lengths", "must be positive")
    if any(v < 1 for v in m.cells):
        r.fail("mesh", "cells", "must be >= 1")
    m.r_inner = r.get("mesh", "r_inner", float, m.r_inner)
    m.r_outer = r.get("mesh", "r_outer", float, m.r_outer)
    if m.builder == "annulus" and not 0 < m.r_inner < m.r_outer:
        r.fail("mesh", "r_outer", "need 0 < r_inner < r_outer")
    m.n_r = r.get("mesh", "n_r", int, m.n_r)
    m.n_theta = r.get("mesh", "n_theta", int, m.n_theta)
    m.path = r.get("mesh", "path", str, m.path)
    if m.builder == "file" and not m.path:
        r.fail("mesh", "path", "required when builder = file")
    if m.builder == "annulus":
        m.dim = 2

    md = cfg.model
    for key in ("gamma", "a", "b", "d", "p"):
        setattr(md, key, r.get("model", key, float, getattr(md, key)))
        if not getattr(md, key) > 0:
            r.fail("model", key, "must be positive")
    md.second_well = r.get("model", "second_well", float, md.second_well)
    md.q = r.get("model", "q", float, md.q)
    if md.q is not None and not md.q > 0:
        r.fail("model", "q", "must be positive")

    dfm = cfg.deformation
    dfm.family = r.get("deformation", "family", str, dfm.family)
    if dfm.family not in ("identity", "affine", "stretch", "wrap"):
        r.fail("deformation", "family", f"unknown family {dfm.family!r}")
    dfm.matrix = r.vector("deformation", "matrix", float, None, m.dim * m.dim)
    dfm.offset = r.vector("deformation", "offset", float, None, m.dim)
    dfm.stretch = r.get("deformation", "stretch", float, dfm.stretch)
    if not dfm.stretch > 0:
        r.fail("deformation", "stretch", "must be positive")
    if dfm.family == "affine" and dfm.matrix is None:
        r.fail("deformation", "matrix", "required for the affine family")
    if dfm.family == "wrap" and m.builder != "annulus":
        r.fail("deformation", "family", "wrap needs builder = annulus")
    dfm.dirichlet = r.vector("deformation", "dirichlet", str, dfm.dirichlet)

    ph = cfg.phase
    ph.set = r.get("phase", "set", str, ph.set)
    if ph.set not in ("half", "quarter", "all", "none"):
        r.fail("phase", "set", f"unknown phase set {ph.set!r}")
    ph.axis = r.get("phase", "axis", int, ph.axis)
    if not 0 <= ph.axis < m.dim:
        r.fail("phase", "axis", f"must be in [0, {m.dim - 1}]")
    ph.position = r.get("phase", "position", float, ph.position)

    opt = {}
    for f in fields(MinimizeConfig):
        if r.has("optimizer", f.name):
            opt[f.name] = r.get("optimizer", f.name, _OPTIMIZER_TYPES.get(f.name, float), None)
    cfg.seed = r.get("run", "seed", int, cfg.seed)
    cfg.out = r.get("run", "out", str, cfg.out)
    cfg.threads = r.get("run", "threads", int, cfg.threads)
    overrides = overrides or {}
    if overrides.get("seed") is not None:
        cfg.seed = overrides["seed"]
    if overrides.get("out") is not None:
        cfg.out = overrides["out"]
    if overrides.get("threads") is not None:
        cfg.threads = overrides["threads"]
    if cfg.threads is not None and cfg.threads < 1:
        raise ConfigError(f"{source}: [run] threads: must be >= 1")
    opt.setdefault("seed", cfg.seed)
    if overrides.get("seed") is not None:
        opt["seed"] = cfg.seed
    try:
        cfg.optimizer = MinimizeConfig(**opt)
    except ConfigError as exc:
        line = _line_of(text, "optimizer", None)
        raise ConfigError(f"{source}:{line or ''} [optimizer]: {exc}") from None

    cfg.eps = r.vector("sweep", "eps", float, ())
    if any(e <= 0 for e in cfg.eps):
        r.fail("sweep", "eps", "values must be positive")
    if any(b >= a for a, b in zip(cfg.eps, cfg.eps[1:])):
        r.fail("sweep", "eps", "values must be strictly decreasing")
    cfg.refine = r.get("sweep", "refine", bool, cfg.refine)
    if cfg.refine and m.builder != "box":
        r.fail("sweep", "refine", "mesh refinement needs builder = box")
    cfg.slice_count = r.get("sweep", "slice_count", int, cfg.slice_count)
    if cfg.slice_count < 2:
        r.fail("sweep", "slice_count", "must be >= 2")
    return cfg


# -- building objects from a configuration ------------------------------------


def build_mesh(cfg: RunConfig, cells=None):
    from .mesh import build_annulus_mesh, build_box_mesh, read_snapshot

    m = cfg.mesh
    if m.builder == "box":
        return build_box_mesh(m.dim, m.lengths, cells or m.cells)
    if m.builder == "annulus":
        return build_annulus_mesh(m.r_inner, m.r_outer, m.n_r, m.n_theta)
    try:
        mesh, _ = read_snapshot(m.path)
    except OSError as exc:
        raise ConfigError(f"[mesh] path: cannot read {m.path!r} ({exc.strerror})") from None
    except ValueError as exc:
        raise ConfigError(f"[mesh] path: {exc}") from None
    return mesh


def build_model(cfg: RunConfig, dim: int):
    from .energy import default_model

    md = cfg.model
    return default_model(dim, gamma=md.gamma, second_well=md.second_well, a=md.a, b=md.b, d=md.d,
                         p=md.p, q=md.q)


def build_deformation(cfg: RunConfig, nodes: np.ndarray) -> np.ndarray:
    from .fixtures import wrap_map

    dfm = cfg.deformation
    dim = nodes.shape[1]
    if dfm.family == "identity":
        y = nodes.copy()
    elif dfm.family == "affine":
        y = nodes @ np.asarray(dfm.matrix).reshape(dim, dim).T
    elif dfm.family == "stretch":
        U = np.eye(dim)
        U[0, 0] = dfm.stretch
        y = nodes @ U.T
    else:
        y = wrap_map(nodes)
    if dfm.offset is not None:
        y = y + np.asarray(dfm.offset)
    return y


def build_phase_set(cfg: RunConfig, mesh) -> np.ndarray:
    ph = cfg.phase
    c = mesh.centroids
    if ph.set == "all":
        return np.ones(mesh.n_elements, bool)
    if ph.set == "none":
        return np.zeros(mesh.n_elements, bool)
    mask = c[:, ph.axis] < ph.position
    if ph.set == "quarter":
        other = 1 if ph.axis == 0 else 0
        mask &= c[:, other] < ph.position
    return mask


def dirichlet_nodes(cfg: RunConfig, mesh) -> np.ndarray:
    tags = cfg.deformation.dirichlet
    if tags == ("none",):
        return np.zeros(0, int)
    if tags == ("all",):
        return mesh.boundary_nodes()
    known = set(np.unique(mesh.boundary_tags).tolist())
    unknown = [t for t in tags if t not in known]
    if unknown:
        raise ConfigError(f"[deformation] dirichlet: unknown boundary tags {unknown} "
                          f"(mesh has {sorted(known)})")
    return mesh.boundary_nodes(tags)
