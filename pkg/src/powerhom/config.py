"""Run configuration: YAML schema, validation with line numbers, canonical echo.

Schema (version 1); every key except ``law`` and ``microstructure`` is optional::

    version: 1
    law: {p1: 2, p2: 3, sigma1: 1, sigma2: 2}
    microstructure: {kind: layered, axis: 1, a: 0.25, b: 0.75}
    #   or {kind: dispersed, center: [0.5, 0.5], radius: 0.25} or {kind: homogeneous}
    dim: 2
    cell: {n: 16, xi: [[1, 0], [0, 1], [1, 1]]}
    domain: {N: 128, side: 1.0, load: 1.0}     # load: number or path to a .npy nodal field
    eps: [0.5, 0.25, 0.125]
    solver: {tol: 1.0e-10, max_iter: 200, delta_reg: 1.0e-8, continuation: 4}
    table: {spacing: 0.025, cap: 10.0, max_refinements: 2, holdout: 4}
    corrector: {cell_n: null}                   # null: one cell node per element
    moments: {q: [2, 3], box: {lower: [0.25, 0.25], upper: [0.75, 0.75]}}
    thresholds: {apriori_ratio: 1.5, decay_factor: 1.3, moment_slack: 0.05}
    output: {dir: out, cache: null}
    threads: 1
"""
from __future__ import annotations

import hashlib
import os
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .constitutive import FluxLaw
from .errors import ConfigError
from .microstructure import DISPERSED, HOMOGENEOUS, LAYERED, Microstructure
from .solver import SolverConfig

SCHEMA_VERSION = 1
ENV_CACHE = "POWERHOM_CACHE"
ENV_OUT = "POWERHOM_OUT"

_SCHEMA = {
    "version": None,
    "law": {"p1", "p2", "sigma1", "sigma2"},
    "microstructure": {"kind", "axis", "a", "b", "center", "radius"},
    "dim": None,
    "cell": {"n", "xi"},
    "domain": {"N", "side", "load"},
    "eps": None,
    "solver": {"tol", "max_iter", "delta_reg", "backtrack", "armijo", "continuation",
               "stage_tol", "forcing"},
    "table": {"spacing", "cap", "max_refinements", "holdout"},
    "corrector": {"cell_n"},
    "moments": {"q", "box"},
    "thresholds": {"apriori_ratio", "decay_factor", "moment_slack"},
    "output": {"dir", "cache"},
    "threads": None,
}


@dataclass(frozen=True)
class TableConfig:
    spacing: float = 0.025
    cap: float = 10.0
    max_refinements: int = 2
    holdout: int = 4


@dataclass(frozen=True)
class Thresholds:
    apriori_ratio: float = 1.5
    decay_factor: float = 1.3
    moment_slack: float = 0.05


@dataclass(frozen=True)
class RunConfig:
    law: FluxLaw
    micro: Microstructure
    dim: int = 2
    cell_n: int = 16
    xi_list: tuple = ((1.0, 0.0), (0.0, 1.0), (1.0, 1.0))
    N: int = 128
    side: float = 1.0
    load: float | str = 1.0
    eps_list: tuple = (0.5, 0.25, 0.125)
    solver: SolverConfig = field(default_factory=SolverConfig)
    table: TableConfig = field(default_factory=TableConfig)
    corrector_cell_n: int | None = None
    q_list: tuple = (2.0, 3.0)
    box: tuple = ((0.25, 0.25), (0.75, 0.75))
    thresholds: Thresholds = field(default_factory=Thresholds)
    out_dir: str = "out"
    cache_path: str | None = None
    threads: int = 1

    def to_dict(self) -> dict:
        m = self.micro
        micro = {"kind": m.kind}
        if m.kind == LAYERED:
            micro.update(axis=m.axis, a=m.a, b=m.b)
        elif m.kind == DISPERSED:
            micro.update(center=list(m.center), radius=m.radius)
        s = self.solver
        return {
            "version": SCHEMA_VERSION,
            "law": {"p1": self.law.p1, "p2": self.law.p2,
                    "sigma1": self.law.sigma1, "sigma2": self.law.sigma2},
            "microstructure": micro,
            "dim": self.dim,
            "cell": {"n": self.cell_n, "xi": [list(x) for x in self.xi_list]},
            "domain": {"N": self.N, "side": self.side, "load": self.load},
            "eps": list(self.eps_list),
            "solver": {"tol": s.tol, "max_iter": s.max_iter, "delta_reg": s.delta_reg,
                       "backtrack": s.backtrack, "armijo": s.armijo,
                       "continuation": s.continuation, "stage_tol": s.stage_tol,
                       "forcing": s.forcing},
            "table": {"spacing": self.table.spacing, "cap": self.table.cap,
                      "max_refinements": self.table.max_refinements,
                      "holdout": self.table.holdout},
            "corrector": {"cell_n": self.corrector_cell_n},
            "moments": {"q": list(self.q_list),
                        "box": {"lower": list(self.box[0]), "upper": list(self.box[1])}},
            "thresholds": {"apriori_ratio": self.thresholds.apriori_ratio,
                           "decay_factor": self.thresholds.decay_factor,
                           "moment_slack": self.thresholds.moment_slack},
            "output": {"dir": self.out_dir, "cache": self.cache_path},
            "threads": self.threads,
        }

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False, default_flow_style=None)

    def science_dict(self) -> dict:
        """The part of the config that determines the numbers (no paths or threads)."""
        d = self.to_dict()
        for key in ("output", "threads"):
            d.pop(key)
        return d

    def hash(self) -> str:
        text = yaml.safe_dump(self.science_dict(), sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]

    def load_values(self):
        """Scalar load or the nodal array read from ``load``."""
        if isinstance(self.load, str):
            arr = np.load(self.load)
            n1 = self.N + 1
            if arr.size != n1 ** self.dim:
                raise ConfigError(f"load file {self.load} has {arr.size} values, "
                                  f"expected {n1 ** self.dim}")
            return arr.reshape((n1,) * self.dim)
        return float(self.load)

    def with_overrides(self, cache=None, out=None, threads=None) -> "RunConfig":
        """Apply environment variables, then explicit arguments."""
        cache = cache or os.environ.get(ENV_CACHE) or self.cache_path
        out = out or os.environ.get(ENV_OUT) or self.out_dir
        threads = self.threads if threads is None else int(threads)
        if threads < 1:
            raise ConfigError("threads must be >= 1")
        return replace(self, cache_path=cache, out_dir=out, threads=threads)


# ---------------------------------------------------------------- parsing

def _plain(node, lines, path=()):
    """Python value of a composed YAML node; records each key's line."""
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            if key in out:
                raise ConfigError(f"duplicate key '{key}'", k.start_mark.line + 1)
            lines[path + (key,)] = k.start_mark.line + 1
            out[key] = _plain(v, lines, path + (key,))
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_plain(v, lines, path + (i,)) for i, v in enumerate(node.value)]
    lines.setdefault(path, node.start_mark.line + 1)
    return yaml.safe_load(yaml.serialize(node)) if node.tag != "tag:yaml.org,2002:str" else node.value


class _Reader:
    def __init__(self, data: dict, lines: dict):
        self.data = data
        self.lines = lines

    def line(self, *path):
        while path:
            if path in self.lines:
                return self.lines[path]
            path = path[:-1]
        return None

    def fail(self, message, *path):
        raise ConfigError(message, self.line(*path))

    def get(self, *path, default=None):
        cur = self.data
        for key in path:
            if isinstance(cur, dict) and key in cur:
                cur = cur[key]
            elif isinstance(cur, list) and isinstance(key, int) and key < len(cur):
                cur = cur[key]
            else:
                return default
        return cur

    def number(self, *path, default=None, kind=float):
        v = self.get(*path, default=default)
        if isinstance(v, bool) or v is None:
            self.fail(f"'{'.'.join(map(str, path))}' must be a number", *path)
        try:
            x = float(v)
        except (TypeError, ValueError):
            self.fail(f"'{'.'.join(map(str, path))}' must be a number, got {v!r}", *path)
        if kind is int:
            if x != int(x):
                self.fail(f"'{'.'.join(map(str, path))}' must be an integer, got {v!r}", *path)
            return int(x)
        return x

    def vector(self, *path, default=None):
        v = self.get(*path, default=default)
        if not isinstance(v, (list, tuple)):
            self.fail(f"'{'.'.join(map(str, path))}' must be a list", *path)
        try:
            return tuple(float(x) for x in v)
        except (TypeError, ValueError):
            self.fail(f"'{'.'.join(map(str, path))}' must be a list of numbers", *path)


def _check_keys(r: _Reader):
    if not isinstance(r.data, dict):
        raise ConfigError("config must be a mapping", 1)
    for key, value in r.data.items():
        if key not in _SCHEMA:
            r.fail(f"unknown key '{key}'", key)
        allowed = _SCHEMA[key]
        if allowed is not None:
            if not isinstance(value, dict):
                r.fail(f"'{key}' must be a mapping", key)
            for sub in value:
                if sub not in allowed:
                    r.fail(f"unknown key '{key}.{sub}'", key, sub)
    for sub in r.get("moments", "box", default={}) or {}:
        if sub not in ("lower", "upper"):
            r.fail(f"unknown key 'moments.box.{sub}'", "moments", "box", sub)


def _parse_law(r: _Reader) -> FluxLaw:
    if r.get("law") is None:
        r.fail("missing required section 'law'")
    p1 = r.number("law", "p1")
    p2 = r.number("law", "p2")
    s1 = r.number("law", "sigma1", default=1.0)
    s2 = r.number("law", "sigma2", default=1.0)
    if p1 < 2:
        r.fail(f"p1 must be >= 2, got {p1}", "law", "p1")
    if p2 < p1:
        r.fail(f"p2 must be >= p1, got p1={p1}, p2={p2}", "law", "p2")
    for name, s in (("sigma1", s1), ("sigma2", s2)):
        if not s > 0:
            r.fail(f"{name} must be positive, got {s}", "law", name)
    try:
        return FluxLaw(p1, p2, s1, s2)
    except ValueError as exc:
        r.fail(str(exc), "law")


def _parse_micro(r: _Reader, dim: int) -> Microstructure:
    if r.get("microstructure") is None:
        r.fail("missing required section 'microstructure'")
    kind = r.get("microstructure", "kind")
    try:
        if kind == LAYERED:
            return Microstructure.layered(r.number("microstructure", "a"),
                                          r.number("microstructure", "b"),
                                          axis=r.number("microstructure", "axis", default=1, kind=int))
        if kind == DISPERSED:
            center = r.vector("microstructure", "center")
            if len(center) != dim:
                r.fail(f"inclusion center needs {dim} coordinates", "microstructure", "center")
            return Microstructure.dispersed(center, r.number("microstructure", "radius"))
        if kind == HOMOGENEOUS:
            return Microstructure.homogeneous()
    except ValueError as exc:
        r.fail(str(exc), "microstructure")
    r.fail(f"unknown microstructure kind {kind!r}", "microstructure", "kind")


def _is_reciprocal(eps: float) -> bool:
    k = 1.0 / eps
    return abs(k - round(k)) < 1e-9 and round(k) >= 1


def parse_config(text: str) -> RunConfig:
    try:
        node = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"invalid YAML: {getattr(exc, 'problem', exc)}",
                          None if mark is None else mark.line + 1) from None
    if node is None:
        raise ConfigError("empty config", 1)
    lines: dict = {}
    r = _Reader(_plain(node, lines), lines)
    _check_keys(r)
    version = r.number("version", default=SCHEMA_VERSION, kind=int)
    if version != SCHEMA_VERSION:
        r.fail(f"unsupported config version {version}", "version")
    dim = r.number("dim", default=2, kind=int)
    if dim not in (2, 3):
        r.fail(f"dim must be 2 or 3, got {dim}", "dim")
    law = _parse_law(r)
    micro = _parse_micro(r, dim)

    cell_n = r.number("cell", "n", default=16, kind=int)
    if cell_n < 2:
        r.fail("cell.n must be >= 2", "cell", "n")
    xi_raw = r.get("cell", "xi", default=np.eye(dim).tolist())
    if not isinstance(xi_raw, list):
        r.fail("cell.xi must be a list of vectors", "cell", "xi")
    xi_list = []
    for i in range(len(xi_raw)):
        xi = r.vector("cell", "xi", i, default=xi_raw[i])
        if len(xi) != dim:
            r.fail(f"cell.xi entries need {dim} components", "cell", "xi", i)
        xi_list.append(xi)

    N = r.number("domain", "N", default=128, kind=int)
    if N < 4:
        r.fail("domain.N must be >= 4", "domain", "N")
    side = r.number("domain", "side", default=1.0)
    if not side > 0:
        r.fail("domain.side must be positive", "domain", "side")
    load = r.get("domain", "load", default=1.0)
    if not isinstance(load, str):
        load = r.number("domain", "load", default=1.0)

    eps_raw = r.get("eps", default=[0.5, 0.25, 0.125])
    if not isinstance(eps_raw, list) or not eps_raw:
        r.fail("eps must be a non-empty list", "eps")
    eps_list = r.vector("eps")
    for i, e in enumerate(eps_list):
        if not e > 0 or not _is_reciprocal(e):
            r.fail(f"eps={e} is not of the form 1/k", "eps", i)
        per = e * N / side
        if abs(per - round(per)) > 1e-9 or round(per) < 2:
            r.fail(f"eps={e} does not align with the N={N} element grid "
                   "(need an integer number >= 2 of elements per period)", "eps", i)
        if abs(side / e - round(side / e)) > 1e-9:
            r.fail(f"eps={e} does not tile the domain side {side}", "eps", i)
    if list(eps_list) != sorted(eps_list, reverse=True) or len(set(eps_list)) != len(eps_list):
        r.fail("eps list must be strictly decreasing", "eps")

    sv = SolverConfig()
    try:
        solver = SolverConfig(
            tol=r.number("solver", "tol", default=sv.tol),
            max_iter=r.number("solver", "max_iter", default=sv.max_iter, kind=int),
            delta_reg=r.number("solver", "delta_reg", default=sv.delta_reg),
            backtrack=r.number("solver", "backtrack", default=sv.backtrack),
            armijo=r.number("solver", "armijo", default=sv.armijo),
            continuation=r.number("solver", "continuation", default=sv.continuation, kind=int),
            stage_tol=r.number("solver", "stage_tol", default=sv.stage_tol),
            forcing=r.number("solver", "forcing", default=sv.forcing))
    except ValueError as exc:
        r.fail(str(exc), "solver")

    tc = TableConfig()
    table = TableConfig(r.number("table", "spacing", default=tc.spacing),
                        r.number("table", "cap", default=tc.cap),
                        r.number("table", "max_refinements", default=tc.max_refinements, kind=int),
                        r.number("table", "holdout", default=tc.holdout, kind=int))
    if not table.spacing > 0 or not table.cap > table.spacing:
        r.fail("table needs 0 < spacing < cap", "table")
    if table.max_refinements < 0 or table.holdout < 0:
        r.fail("table.max_refinements and table.holdout must be >= 0", "table")

    cn = r.get("corrector", "cell_n")
    corrector_cell_n = None if cn is None else r.number("corrector", "cell_n", kind=int)
    if corrector_cell_n is not None and corrector_cell_n < 2:
        r.fail("corrector.cell_n must be >= 2", "corrector", "cell_n")

    q_raw = r.get("moments", "q", default=[2, 3])
    q_list = () if q_raw in (None, []) else r.vector("moments", "q", default=[2, 3])
    for i, q in enumerate(q_list):
        if q < 2:
            r.fail(f"moment exponent q={q} must be >= 2", "moments", "q", i)
    lower = r.vector("moments", "box", "lower", default=[0.25] * dim)
    upper = r.vector("moments", "box", "upper", default=[0.75] * dim)
    if len(lower) != dim or len(upper) != dim:
        r.fail(f"moments.box corners need {dim} coordinates", "moments", "box")
    h = side / N
    for v in lower + upper:
        if v < 0 or v > side or abs(v / h - round(v / h)) > 1e-9:
            r.fail(f"moments.box face {v} is not an element line", "moments", "box")
    if any(u <= l for l, u in zip(lower, upper)):
        r.fail("moments.box needs lower < upper", "moments", "box")

    th = Thresholds()
    thresholds = Thresholds(r.number("thresholds", "apriori_ratio", default=th.apriori_ratio),
                            r.number("thresholds", "decay_factor", default=th.decay_factor),
                            r.number("thresholds", "moment_slack", default=th.moment_slack))

    out_dir = r.get("output", "dir", default="out")
    cache = r.get("output", "cache")
    for name, v in (("dir", out_dir), ("cache", cache)):
        if v is not None and not isinstance(v, str):
            r.fail(f"output.{name} must be a path string", "output", name)
    threads = r.number("threads", default=1, kind=int)
    if threads < 1:
        r.fail("threads must be >= 1", "threads")

    return RunConfig(law, micro, dim, cell_n, tuple(xi_list), N, side, load, tuple(eps_list),
                     solver, table, corrector_cell_n, tuple(q_list), (lower, upper), thresholds,
                     out_dir, cache, threads)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(fh.read())
