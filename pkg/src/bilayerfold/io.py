"""Scenario files, geometry snapshots and diagnostics tables.

Scenario files are plain text with ``[section]`` headers and ``key = value``
lines.  Every dimensional value carries its unit after the numbers, e.g.
``tau = 3e-3 s`` or ``epsilon = 4e-6 mm4_per_MPa``.  Values made of several
quantities separate them by commas::

    [mesh]
    region = hinge, -1 -1 mm, -0.92 1 mm

Keys marked repeatable may occur several times.  Parsing collects every
problem with its line number before giving up.
"""
from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mesh as meshmod
from .plate import HalfSpace, NoObstacle, SphereUnion, isometry_defect_per_node
from .simulation import (DIAGNOSTIC_COLUMNS, Diagnostics, HeatSourceSpec, MaterialField,
                         RegionMaterial, ScenarioConfig)


class ConfigError(ValueError):
    """All problems found in a scenario file, one message per entry."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


# value kinds: unit token, or None for plain numbers / words
@dataclass(frozen=True)
class Key:
    kind: str  # "float", "int", "bool", "word", "words", "points", "region", ...
    unit: str | None = None
    repeat: bool = False


SCHEMA = {
    "scenario": {"name": Key("word")},
    "mesh": {"lower": Key("point", "mm"), "upper": Key("point", "mm"),
             "refinements": Key("int"), "region": Key("region", "mm", True)},
    "material": {"mu_bar": Key("float", "MPa"), "alpha_bar": Key("float", "per_mm_C"),
                 "diffusivity": Key("float", "mm2_per_s")},
    "boundary": {"robin_velocity": Key("float", "mm_per_s"), "edge": Key("region", "mm", True),
                 "dirichlet": Key("float", "C"), "dirichlet_ramp": Key("float", "s"),
                 "ambient": Key("float", "C"), "source": Key("source", None, True),
                 "clamp_region": Key("word", None, True), "pin_point": Key("point", "mm", True)},
    "obstacle": {"kind": Key("word"), "height": Key("float", "mm"),
                 "center": Key("point3", "mm", True), "radius": Key("float", "mm")},
    "time": {"tau": Key("float", "s"), "t_max": Key("float", "s"),
             "stationary_tol": Key("float"), "stop_at_stationary": Key("bool"),
             "stationary_after": Key("float", "s"), "time_scale": Key("float", "s"),
             "length_scale": Key("float", "mm"), "subiterations": Key("int"),
             "solve_plate": Key("bool")},
    "penalty": {"epsilon": Key("float", "mm4_per_MPa")},
    "output": {"snapshot_every": Key("int"), "snapshot_times": Key("floats", "s")},
}
REQUIRED = ("mesh", "time", "penalty")
SOURCE_UNITS = ("mm", "mm", "C_per_s", "s", "s")  # center, radius, rate, on, off


class _Reader:
    def __init__(self):
        self.errors = []

    def err(self, line, where, msg):
        self.errors.append(f"line {line}: [{where}]: {msg}")

    def quantity(self, text, unit, line, where, count=None):
        parts = text.split()
        if unit is not None:
            if not parts or parts[-1] != unit:
                got = parts[-1] if parts else "nothing"
                self.err(line, where, f"unit mismatch: expected {unit}, got {got}")
                return None
            parts = parts[:-1]
        try:
            vals = [float(p) for p in parts]
        except ValueError:
            self.err(line, where, f"not a number in {text!r}")
            return None
        if count is not None and len(vals) != count:
            self.err(line, where, f"expected {count} value(s), got {len(vals)}")
            return None
        if not all(math.isfinite(v) or math.isinf(v) for v in vals):
            self.err(line, where, "value is not a number")
            return None
        return vals

    def value(self, key: Key, text, line, where):
        if key.kind == "word":
            if len(text.split()) != 1:
                self.err(line, where, f"expected a single word, got {text!r}")
                return None
            return text
        if key.kind == "int":
            try:
                return int(text)
            except ValueError:
                self.err(line, where, f"expected an integer, got {text!r}")
                return None
        if key.kind == "bool":
            low = text.lower()
            if low not in ("true", "false"):
                self.err(line, where, f"expected true or false, got {text!r}")
                return None
            return low == "true"
        if key.kind == "float":
            v = self.quantity(text, key.unit, line, where, 1)
            return None if v is None else v[0]
        if key.kind == "floats":
            v = self.quantity(text, key.unit, line, where)
            return None if v is None else tuple(v)
        if key.kind in ("point", "point3"):
            v = self.quantity(text, key.unit, line, where, 2 if key.kind == "point" else 3)
            return None if v is None else tuple(v)
        if key.kind == "region":
            parts = [p.strip() for p in text.split(",")]
            if len(parts) != 3:
                self.err(line, where, "expected 'name, x0 y0 mm, x1 y1 mm'")
                return None
            lo = self.quantity(parts[1], key.unit, line, where, 2)
            up = self.quantity(parts[2], key.unit, line, where, 2)
            if lo is None or up is None:
                return None
            return (parts[0], tuple(lo), tuple(up))
        if key.kind == "source":
            parts = [p.strip() for p in text.split(",")]
            if len(parts) != 5:
                self.err(line, where, "expected 'cx cy mm, radius mm, rate C_per_s, "
                                      "t_on s, t_off s'")
                return None
            vals = [self.quantity(p, u, line, where, 2 if i == 0 else 1)
                    for i, (p, u) in enumerate(zip(parts, SOURCE_UNITS))]
            if any(v is None for v in vals):
                return None
            return HeatSourceSpec(tuple(vals[0]), vals[1][0], vals[2][0], vals[3][0], vals[4][0])
        raise AssertionError(key.kind)


def _split_lines(text):
    """Yield (line number, section, key, value) and section headers."""
    section = None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            yield no, section, None, None
            continue
        if "=" not in line:
            yield no, section, line, None
            continue
        k, v = line.split("=", 1)
        yield no, section, k.strip(), v.strip()


def parse_config_text(text: str) -> ScenarioConfig:
    rd = _Reader()
    data: dict = {}
    seen_lines: dict = {}
    malformed = set()
    for no, section, key, val in _split_lines(text):
        if key is None:
            base = section.split(".", 1)[0]
            if base not in SCHEMA or (base == "material") != ("." in section):
                rd.err(no, section, "unknown section")
            elif section in data:
                rd.err(no, section, "section given twice")
            else:
                data[section] = {}
                seen_lines[section] = no
            continue
        if section is None:
            rd.err(no, "-", "key outside any section")
            continue
        if section not in data:
            continue  # unknown section already reported
        where = f"{section}.{key}"
        if val is None:
            rd.err(no, where, "expected 'key = value'")
            continue
        schema = SCHEMA[section.split(".", 1)[0]]
        if key not in schema:
            rd.err(no, where, "unknown key")
            continue
        spec = schema[key]
        parsed = rd.value(spec, val, no, where)
        if parsed is None:
            malformed.add((section, key))
            continue
        if spec.repeat:
            data[section].setdefault(key, []).append(parsed)
        elif key in data[section]:
            rd.err(no, where, "key given twice")
        else:
            data[section][key] = (parsed, no)

    for sec in REQUIRED:
        if sec not in data:
            rd.err(0, sec, "missing section")
    materials = {s.split(".", 1)[1]: v for s, v in data.items() if s.startswith("material.")}
    if not materials:
        rd.err(0, "material.<region>", "missing section")

    def get(sec, key, default=None, required=False):
        entry = data.get(sec, {}).get(key)
        if entry is None:
            if required and (sec, key) not in malformed:
                rd.err(seen_lines.get(sec, 0), f"{sec}.{key}", "missing required key")
            return default
        return entry[0] if isinstance(entry, tuple) and not SCHEMA[sec.split(".")[0]][key].repeat \
            else entry

    def line_of(sec, key):
        entry = data.get(sec, {}).get(key)
        return entry[1] if isinstance(entry, tuple) else seen_lines.get(sec, 0)

    mats = {}
    for name, entries in materials.items():
        sec = f"material.{name}"
        mu = get(sec, "mu_bar", required=True)
        al = get(sec, "alpha_bar", required=True)
        di = get(sec, "diffusivity", required=True)
        if mu is None or al is None or di is None:
            continue
        try:
            mats[name] = RegionMaterial(mu, al, di)
        except ValueError as exc:
            rd.err(seen_lines[sec], sec, str(exc))

    lower = get("mesh", "lower", required=True)
    upper = get("mesh", "upper", required=True)
    refinements = get("mesh", "refinements", required=True)
    tau = get("time", "tau", required=True)
    t_max = get("time", "t_max", required=True)
    eps = get("penalty", "epsilon", required=True)
    if tau is not None and not tau > 0:
        rd.err(line_of("time", "tau"), "time.tau", "tau must be positive")
    if t_max is not None and not t_max > 0:
        rd.err(line_of("time", "t_max"), "time.t_max", "t_max must be positive")
    if eps is not None and not eps > 0:
        rd.err(line_of("penalty", "epsilon"), "penalty.epsilon", "epsilon must be positive")
    if refinements is not None and refinements < 0:
        rd.err(line_of("mesh", "refinements"), "mesh.refinements", "must be nonnegative")
    if lower is not None and upper is not None and not (upper[0] > lower[0]
                                                        and upper[1] > lower[1]):
        rd.err(line_of("mesh", "upper"), "mesh.upper", "upper corner must exceed lower corner")

    edges = tuple(get("boundary", "edge", []))
    for tag, _, _ in edges:
        if tag not in meshmod.BOUNDARY_TAGS:
            rd.err(seen_lines.get("boundary", 0), "boundary.edge", f"unknown boundary tag {tag!r}")
    regions = tuple(get("mesh", "region", []))
    region_names = {r[0] for r in regions} or {meshmod.DEFAULT_REGION}
    for n in sorted(region_names - set(materials)):
        rd.err(seen_lines.get("mesh", 0), "mesh.region", f"no [material.{n}] section")

    kind = get("obstacle", "kind", "none")
    obstacle = NoObstacle()
    if kind == "halfspace":
        h = get("obstacle", "height", required=True)
        if h is not None:
            obstacle = HalfSpace(h)
    elif kind == "spheres":
        centers = get("obstacle", "center", [])
        r = get("obstacle", "radius", required=True)
        if not centers:
            rd.err(seen_lines.get("obstacle", 0), "obstacle.center", "need at least one sphere")
        elif r is not None:
            try:
                obstacle = SphereUnion(tuple(centers), r)
            except ValueError as exc:
                rd.err(line_of("obstacle", "radius"), "obstacle.radius", str(exc))
    elif kind != "none":
        rd.err(line_of("obstacle", "kind"), "obstacle.kind",
               f"expected none, halfspace or spheres, got {kind!r}")
    if rd.errors:
        raise ConfigError(rd.errors)

    defaults = ScenarioConfig(name="", domain=((0, 0), (1, 1)), refinements=0)
    cfg = ScenarioConfig(
        name=get("scenario", "name", "custom"),
        domain=(tuple(lower), tuple(upper)), refinements=refinements, regions=regions,
        material=MaterialField(mats, get("boundary", "robin_velocity", 0.0)),
        boundary=edges,
        dirichlet_value=get("boundary", "dirichlet", 0.0),
        dirichlet_ramp=get("boundary", "dirichlet_ramp", 0.0),
        ambient=get("boundary", "ambient", 0.0),
        sources=tuple(get("boundary", "source", [])),
        obstacle=obstacle,
        clamp_regions=tuple(get("boundary", "clamp_region", [])),
        pin_points=tuple(get("boundary", "pin_point", [])),
        tau=tau, epsilon=eps, t_max=t_max,
        **{k: get("time", k, getattr(defaults, k))
           for k in ("stationary_tol", "stop_at_stationary", "stationary_after",
                     "time_scale", "length_scale", "subiterations", "solve_plate")},
        snapshot_every=get("output", "snapshot_every", 0),
        snapshot_times=get("output", "snapshot_times", ()),
    )
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError([f"line 0: [scenario]: {m}" for m in str(exc).split("; ")])
    return cfg


def parse_config(path) -> ScenarioConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"cannot read {path}: {exc}"])
    return parse_config_text(text)


def _num(*vals):
    return " ".join(repr(float(v)) for v in vals)


def serialize_config(cfg: ScenarioConfig) -> str:
    out = ["[scenario]", f"name = {cfg.name}", "", "[mesh]",
           f"lower = {_num(*cfg.domain[0])} mm", f"upper = {_num(*cfg.domain[1])} mm",
           f"refinements = {int(cfg.refinements)}"]
    out += [f"region = {n}, {_num(*lo)} mm, {_num(*up)} mm" for n, lo, up in cfg.regions]
    for name, m in cfg.material.regions.items():
        out += ["", f"[material.{name}]", f"mu_bar = {_num(m.mu_bar)} MPa",
                f"alpha_bar = {_num(m.alpha_bar)} per_mm_C",
                f"diffusivity = {_num(m.diffusivity)} mm2_per_s"]
    out += ["", "[boundary]", f"robin_velocity = {_num(cfg.material.robin_velocity)} mm_per_s"]
    out += [f"edge = {t}, {_num(*lo)} mm, {_num(*up)} mm" for t, lo, up in cfg.boundary]
    out += [f"dirichlet = {_num(cfg.dirichlet_value)} C",
            f"dirichlet_ramp = {_num(cfg.dirichlet_ramp)} s",
            f"ambient = {_num(cfg.ambient)} C"]
    out += [f"source = {_num(*s.center)} mm, {_num(s.radius)} mm, {_num(s.rate)} C_per_s, "
            f"{_num(s.t_on)} s, {_num(s.t_off)} s" for s in cfg.sources]
    out += [f"clamp_region = {n}" for n in cfg.clamp_regions]
    out += [f"pin_point = {_num(*p)} mm" for p in cfg.pin_points]
    out += ["", "[obstacle]"]
    ob = cfg.obstacle
    if isinstance(ob, HalfSpace):
        out += ["kind = halfspace", f"height = {_num(ob.height)} mm"]
    elif isinstance(ob, SphereUnion):
        out += ["kind = spheres", f"radius = {_num(ob.radius)} mm"]
        out += [f"center = {_num(*c)} mm" for c in ob.centers]
    else:
        out += ["kind = none"]
    out += ["", "[time]", f"tau = {_num(cfg.tau)} s", f"t_max = {_num(cfg.t_max)} s",
            f"stationary_tol = {_num(cfg.stationary_tol)}",
            f"stop_at_stationary = {str(cfg.stop_at_stationary).lower()}",
            f"stationary_after = {_num(cfg.stationary_after)} s",
            f"time_scale = {_num(cfg.time_scale)} s",
            f"length_scale = {_num(cfg.length_scale)} mm",
            f"subiterations = {int(cfg.subiterations)}",
            f"solve_plate = {str(cfg.solve_plate).lower()}",
            "", "[penalty]", f"epsilon = {_num(cfg.epsilon)} mm4_per_MPa",
            "", "[output]", f"snapshot_every = {int(cfg.snapshot_every)}"]
    if cfg.snapshot_times:
        out.append(f"snapshot_times = {_num(*cfg.snapshot_times)} s")
    return "\n".join(out) + "\n"


# -- writers ------------------------------------------------------------------------
def _fmt(v):
    return f"{float(v):.17g}"


def snapshot_path(directory, step):
    return Path(directory) / f"snap_{int(step):06d}.vtk"


def write_snapshot(y, s, theta, mesh, step, directory):
    """Legacy ASCII unstructured grid with the deformed surface and point data."""
    y = np.asarray(y)
    pts = y[:, 0, :]
    gap = np.linalg.norm(np.asarray(s) - pts, axis=1)
    defect = isometry_defect_per_node(y)
    n, e = mesh.n_nodes, mesh.n_elements
    lines = ["# vtk DataFile Version 3.0", f"bilayer plate step {int(step)}", "ASCII",
             "DATASET UNSTRUCTURED_GRID", f"POINTS {n} double"]
    lines += [" ".join(_fmt(c) for c in p) for p in pts]
    lines.append(f"CELLS {e} {5 * e}")
    lines += ["4 " + " ".join(str(int(i)) for i in el) for el in mesh.elements]
    lines.append(f"CELL_TYPES {e}")
    lines += ["9"] * e
    lines.append(f"POINT_DATA {n}")
    for name, arr in (("temperature", theta), ("isometry_defect", defect), ("gap", gap)):
        lines += [f"SCALARS {name} double 1", "LOOKUP_TABLE default"]
        lines += [_fmt(v) for v in np.asarray(arr)]
    os.makedirs(directory, exist_ok=True)
    path = snapshot_path(directory, step)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_snapshot_points(path):
    """Point coordinates and point-data arrays of a snapshot written above."""
    with open(path) as fh:
        lines = fh.read().splitlines()
    i = next(k for k, ln in enumerate(lines) if ln.startswith("POINTS"))
    n = int(lines[i].split()[1])
    pts = np.array([[float(v) for v in ln.split()] for ln in lines[i + 1:i + 1 + n]])
    data = {}
    for k, ln in enumerate(lines):
        if ln.startswith("SCALARS"):
            data[ln.split()[1]] = np.array([float(v) for v in lines[k + 2:k + 2 + n]])
    return pts, data


def write_diagnostics(diag: Diagnostics, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(DIAGNOSTIC_COLUMNS)
        for row in diag.rows:
            w.writerow([_fmt(v) for v in row])
    return Path(path)
