"""Run configuration files (TOML).

A configuration describes the areas, the tie-lines (upper triangle, areas
numbered from 1), the performance-output weights, the design scalars, solver
tolerances and the simulation schedule. See the bundled files under
``lfcsynth/data`` for a complete example; ``bundled:<name>`` loads one.
"""

import hashlib
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .model import (AreaParams, CompositeSystem, OutputSelection, ParameterError, TieLineMatrix,
                    build_system, output_selection)
from .sdp import SolverOptions
from .sim import DisturbanceSchedule, SimConfig
from .synthesis import DesignSpec, Strip, StripSpec

CONFIG_VERSION = 1
BUNDLED = ("three_area_moderate", "three_area_tight")


class ConfigError(ValueError):
    """Malformed or inconsistent configuration."""


@dataclass
class RunConfig:
    params: list
    ties: TieLineMatrix
    system: CompositeSystem
    output: OutputSelection
    spec: DesignSpec
    solver: SolverOptions
    schedule: DisturbanceSchedule
    sim: SimConfig
    name: str = ""
    source: str = ""
    sha256: str = ""
    raw: dict = field(default_factory=dict)


def bundled_path(name):
    if name not in BUNDLED:
        raise ConfigError(f"unknown bundled config {name!r}; available: {', '.join(BUNDLED)}")
    return resources.files("lfcsynth") / "data" / f"{name}.toml"


def read_config_bytes(path):
    """Raw bytes and display name of a config path or ``bundled:<name>``."""
    p = str(path)
    if p.startswith("bundled:"):
        res = bundled_path(p.split(":", 1)[1])
        return res.read_bytes(), p
    try:
        return Path(p).read_bytes(), p
    except OSError as exc:
        raise ConfigError(f"cannot read config {p}: {exc.strerror}") from exc


def _num(tbl, key, where, default=None, positive=False):
    if key not in tbl:
        if default is None:
            raise ConfigError(f"{where}: missing key {key!r}")
        return default
    v = tbl[key]
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {v!r}")
    if positive and not v > 0:
        raise ConfigError(f"{where}.{key}: must be positive, got {v!r}")
    return float(v)


def _strip_list(val, n, where):
    if not isinstance(val, list) or not val:
        raise ConfigError(f"{where}: expected [a, b] or a list of per-area [a, b]")
    if all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
        val = [val] * n
    if len(val) != n:
        raise ConfigError(f"{where}: expected {n} per-area strips, got {len(val)}")
    out = []
    for k, ab in enumerate(val):
        if not (isinstance(ab, list) and len(ab) == 2):
            raise ConfigError(f"{where}[{k}]: expected [a, b]")
        try:
            out.append(Strip(float(ab[0]), float(ab[1])))
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{where}[{k}]: {exc}") from exc
    return tuple(out)


def parse_config(data: dict, source="", sha256="") -> RunConfig:
    """Validate a decoded TOML document and build every run object."""
    if not isinstance(data, dict):
        raise ConfigError("config root must be a table")
    ver = data.get("format_version", CONFIG_VERSION)
    if ver != CONFIG_VERSION:
        raise ConfigError(f"unsupported config format_version {ver!r}")
    areas = data.get("areas")
    if not isinstance(areas, list) or not areas:
        raise ConfigError("config needs at least one [[areas]] table")
    params = []
    for k, a in enumerate(areas):
        where = f"areas[{k + 1}]"
        if not isinstance(a, dict):
            raise ConfigError(f"{where}: expected a table")
        unknown = set(a) - {"M", "D", "T_g", "T_ch", "R", "beta", "name"}
        if unknown:
            raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")
        try:
            params.append(AreaParams(*(_num(a, key, where) for key in ("M", "D", "T_g", "T_ch", "R", "beta"))))
        except ParameterError as exc:
            raise ConfigError(f"{where}: {exc}") from exc
    N = len(params)
    entries = {}
    for k, t in enumerate(data.get("tie_lines", [])):
        where = f"tie_lines[{k + 1}]"
        pair = t.get("areas") if isinstance(t, dict) else None
        if not (isinstance(pair, list) and len(pair) == 2 and all(isinstance(v, int) for v in pair)):
            raise ConfigError(f"{where}: 'areas' must be a pair of area numbers")
        i, j = sorted(pair)
        if not (1 <= i < j <= N):
            raise ConfigError(f"{where}: invalid area pair {pair} for {N} areas")
        if (i - 1, j - 1) in entries:
            raise ConfigError(f"{where}: pair {pair} given twice")
        entries[(i - 1, j - 1)] = _num(t, "T", where)
    try:
        ties = TieLineMatrix.from_upper(N, entries)
        system = build_system(params, ties)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from exc

    out_tbl = data.get("output", {})
    try:
        output = output_selection(system, out_tbl.get("state_weight", 1.0),
                                  out_tbl.get("error_weight", 1.0))
    except (ParameterError, TypeError, ValueError) as exc:
        raise ConfigError(f"output: {exc}") from exc

    d = data.get("design")
    if not isinstance(d, dict):
        raise ConfigError("config needs a [design] table")
    strips = None
    if "strips" in d:
        st = d["strips"]
        if not isinstance(st, dict) or "control" not in st or "observer" not in st:
            raise ConfigError("design.strips needs 'control' and 'observer'")
        strips = StripSpec(_strip_list(st["control"], N, "design.strips.control"),
                           _strip_list(st["observer"], N, "design.strips.observer"))
    try:
        spec = DesignSpec(_num(d, "gamma", "design"), _num(d, "eps1", "design"),
                          _num(d, "eps2", "design"), strips,
                          _num(d, "tie_mode_rate", "design", default=2.0))
    except ParameterError as exc:
        raise ConfigError(f"design: {exc}") from exc

    s = data.get("solver", {})
    solver = SolverOptions(
        feas_margin=_num(s, "feas_margin", "solver", default=1e-7, positive=True),
        max_iter=int(_num(s, "max_iter", "solver", default=200, positive=True)),
        pd_floor=_num(s, "pd_floor", "solver", default=1e-6, positive=True))

    sim = data.get("simulation", {})
    events = []
    for k, e in enumerate(sim.get("events", [])):
        where = f"simulation.events[{k + 1}]"
        if not isinstance(e, dict):
            raise ConfigError(f"{where}: expected a table")
        area = e.get("area")
        if not isinstance(area, int) or not 1 <= area <= N:
            raise ConfigError(f"{where}: area must be an integer in 1..{N}")
        events.append((_num(e, "time", where), area - 1, _num(e, "magnitude", where)))
    try:
        schedule = DisturbanceSchedule(tuple(sorted(events, key=lambda ev: ev[0])))
        simcfg = SimConfig(_num(sim, "t_end", "simulation", default=300.0),
                           _num(sim, "dt", "simulation", default=1e-3),
                           int(_num(sim, "record_stride", "simulation", default=10)))
    except ValueError as exc:
        raise ConfigError(f"simulation: {exc}") from exc
    return RunConfig(params, ties, system, output, spec, solver, schedule, simcfg,
                     str(data.get("name", "")), source, sha256, data)


def load_config(path) -> RunConfig:
    """Read, hash and validate a configuration file."""
    raw, source = read_config_bytes(path)
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{source}: not valid TOML: {exc}") from exc
    return parse_config(data, source, hashlib.sha256(raw).hexdigest())


def load_schedule(path, n_areas) -> DisturbanceSchedule:
    """Schedule from a TOML file holding ``[[events]]`` tables."""
    raw, source = read_config_bytes(path)
    try:
        data = tomllib.loads(raw.decode("utf-8"))
    except (UnicodeDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{source}: not valid TOML: {exc}") from exc
    events = []
    for k, e in enumerate(data.get("events", [])):
        where = f"events[{k + 1}]"
        area = e.get("area") if isinstance(e, dict) else None
        if not isinstance(area, int) or not 1 <= area <= n_areas:
            raise ConfigError(f"{where}: area must be an integer in 1..{n_areas}")
        events.append((_num(e, "time", where), area - 1, _num(e, "magnitude", where)))
    try:
        return DisturbanceSchedule(tuple(sorted(events, key=lambda ev: ev[0])))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
