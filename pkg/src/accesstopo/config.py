"""Problem files: TOML text describing grid, regions, physics, build, tools and run settings.

Lengths are millimetres, angles degrees, moduli MPa. Every section is
optional except ``[grid]`` and at least one ``[[tools]]`` entry; unknown keys
are reported as errors so typos do not pass silently. See ``docs/config.md``
in the repository for the full schema.
"""
from __future__ import annotations

import math
import re
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - exercised on 3.10
    import tomli as tomllib

from .accessibility import MachiningSetup, SetupError, ToolAssembly
from .fea import BoundaryConditions, MaterialModel
from .grid import GridDims, Primitive, Rotation, ScalarGrid, rasterize
from .planner import PlannerConfig
from .problem import OptimizationProblem, ProblemError
from .supports import BuildSpec, SupportError, rotation_to_build_axis
from .topopt import OptimizationConfig


class ConfigParseError(ProblemError):
    """Malformed TOML; carries the 1-based ``line`` and ``column``."""

    def __init__(self, path, message: str, line: int | None, column: int | None):
        self.path, self.line, self.column = str(path), line, column
        where = f"{path}:{line}:{column}" if line is not None else str(path)
        super().__init__([f"{where}: parse error: {message}"])


_AXES = {"x": 0, "y": 1, "z": 2}
_TOP_KEYS = {"name", "grid", "regions", "material", "build", "bc", "tools", "optimization",
             "planner", "fea", "output"}
_PRIM_KEYS = {"shape", "center", "size", "radius", "length", "rotation"}
_OPT_KEYS = {f.name for f in fields(OptimizationConfig)} | {"lambda"}
_PLANNER_KEYS = {f.name for f in fields(PlannerConfig)}


class _Errors(list):
    def unknown(self, where: str, table: dict, allowed):
        for k in table:
            if k not in allowed:
                self.append(f"{where}: unknown key {k!r}")


def _vec(v, n_min: int, n_max: int, where: str, errs: _Errors):
    if not isinstance(v, (list, tuple)) or not n_min <= len(v) <= n_max \
            or not all(isinstance(c, (int, float)) and not isinstance(c, bool) and math.isfinite(c) for c in v):
        errs.append(f"{where}: expected {n_min}-{n_max} finite numbers, got {v!r}")
        return None
    return [float(c) for c in v]


def _num(tab: dict, key: str, default, where: str, errs: _Errors, kind=float):
    v = tab.get(key, default)
    if kind is int:
        if isinstance(v, bool) or not isinstance(v, int):
            errs.append(f"{where}.{key}: expected an integer, got {v!r}")
            return default
        return v
    if kind is bool:
        if not isinstance(v, bool):
            errs.append(f"{where}.{key}: expected true/false, got {v!r}")
            return default
        return v
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        errs.append(f"{where}.{key}: expected a number, got {v!r}")
        return default
    return float(v)


def _rotation(spec, where: str, errs: _Errors, tool_axis=None) -> Rotation | None:
    """``{angle}`` (in-plane), ``{axis, angle}`` or ``{direction}`` (tool axis onto direction)."""
    if not isinstance(spec, dict):
        errs.append(f"{where}: expected a table, got {spec!r}")
        return None
    errs.unknown(where, spec, {"angle", "axis", "direction"})
    if "direction" in spec:
        d = _vec(spec["direction"], 2, 3, f"{where}.direction", errs)
        if d is None:
            return None
        d = np.array(d + [0.0] * (3 - len(d)))
        if np.linalg.norm(d) == 0:
            errs.append(f"{where}.direction: must be nonzero")
            return None
        if tool_axis is None:
            errs.append(f"{where}: 'direction' needs the tool 'axis'")
            return None
        return rotation_to_build_axis(tool_axis, d / np.linalg.norm(d))
    if "angle" not in spec:
        errs.append(f"{where}: give 'angle' (degrees) or 'direction'")
        return None
    ang = _num(spec, "angle", 0.0, where, errs)
    axis = spec.get("axis", [0.0, 0.0, 1.0])
    a = _vec(axis, 3, 3, f"{where}.axis", errs)
    if a is None:
        return None
    try:
        return Rotation.axis_angle(a, math.radians(ang))
    except ValueError as exc:
        errs.append(f"{where}: {exc}")
        return None


def _primitives(items, where: str, errs: _Errors) -> list[Primitive]:
    if items is None:
        return []
    if isinstance(items, dict):
        items = [items]
    if not isinstance(items, list):
        errs.append(f"{where}: expected a list of primitive tables")
        return []
    out = []
    for n, it in enumerate(items):
        w = f"{where}[{n}]"
        if not isinstance(it, dict):
            errs.append(f"{w}: expected a table")
            continue
        errs.unknown(w, it, _PRIM_KEYS)
        kw = {}
        c = _vec(it.get("center", [0.0, 0.0, 0.0]), 2, 3, f"{w}.center", errs)
        if c is None:
            continue
        kw["center"] = tuple(c)
        if "size" in it:
            s = _vec(it["size"], 2, 3, f"{w}.size", errs)
            if s is None:
                continue
            kw["size"] = tuple(s)
        for k in ("radius", "length"):
            if k in it:
                kw[k] = _num(it, k, 0.0, w, errs)
        if "rotation" in it:
            r = _rotation(it["rotation"], f"{w}.rotation", errs)
            if r is None:
                continue
            kw["rotation"] = r
        try:
            out.append(Primitive(str(it.get("shape", "")), **kw))
        except ValueError as exc:
            errs.append(f"{w}: {exc}")
    return out


def _node_selection(sel, dims: GridDims, where: str, errs: _Errors) -> np.ndarray | None:
    """Grid-corner nodes inside the closed box ``[min, max]`` (mm), as an (n, d) index array."""
    d = 2 if dims.nz == 1 else 3
    lo = _vec(sel.get("min"), d, d, f"{where}.min", errs)
    hi = _vec(sel.get("max"), d, d, f"{where}.max", errs)
    if lo is None or hi is None:
        return None
    h = dims.spacing
    tol = 1e-6 * h
    shape = (dims.nx + 1, dims.ny + 1) + ((dims.nz + 1,) if d == 3 else ())
    idx = np.indices(shape).reshape(d, -1).T
    pos = np.asarray(dims.origin[:d]) + idx * h
    inside = np.all((pos >= np.asarray(lo) - tol) & (pos <= np.asarray(hi) + tol), axis=1)
    if not inside.any():
        errs.append(f"{where}: box {lo}..{hi} selects no grid nodes")
        return None
    return idx[inside]


def _bc(tab: dict, dims: GridDims, errs: _Errors) -> BoundaryConditions:
    errs.unknown("bc", tab, {"fixed", "loads"})
    d = 2 if dims.nz == 1 else 3
    fixed, loads = [], []
    for n, sel in enumerate(tab.get("fixed", [])):
        w = f"bc.fixed[{n}]"
        errs.unknown(w, sel, {"min", "max", "axes"})
        axes = sel.get("axes", ["x", "y", "z"][:d])
        bad = [a for a in axes if a not in _AXES or _AXES[a] >= d]
        if bad:
            errs.append(f"{w}.axes: invalid axes {bad}")
            continue
        nodes = _node_selection(sel, dims, w, errs)
        if nodes is None:
            continue
        fixed += [(tuple(int(c) for c in nd), _AXES[a]) for nd in nodes for a in axes]
    for n, sel in enumerate(tab.get("loads", [])):
        w = f"bc.loads[{n}]"
        errs.unknown(w, sel, {"min", "max", "force"})
        f = _vec(sel.get("force"), d, d, f"{w}.force", errs)
        nodes = _node_selection(sel, dims, w, errs)
        if f is None or nodes is None:
            continue
        # the total force is shared evenly by the selected nodes
        for nd in nodes:
            for a, v in enumerate(f):
                if v != 0:
                    loads.append((tuple(int(c) for c in nd), a, v / len(nodes)))
    if not loads:
        errs.append("bc: no loads given")
    return BoundaryConditions(fixed, loads)


def _tools(items, dims: GridDims, errs: _Errors) -> list[ToolAssembly]:
    if not items:
        errs.append("tools: the tool list is empty; at least one tool is required")
        return []
    d = 2 if dims.nz == 1 else 3
    out = []
    for n, t in enumerate(items):
        w = f"tools[{n}]"
        errs.unknown(w, t, {"name", "cutter", "holder", "axis", "sharp_points", "orientations"})
        name = str(t.get("name", f"tool{n}"))
        cutter = _primitives(t.get("cutter"), f"{w}.cutter", errs)
        holder = _primitives(t.get("holder"), f"{w}.holder", errs)
        if not cutter:
            errs.append(f"{w}.cutter: at least one primitive is required")
        axis = _vec(t["axis"], d, d, f"{w}.axis", errs) if "axis" in t else None
        pts = t.get("sharp_points")
        if axis is None and pts is None:
            errs.append(f"{w}: give 'axis' or 'sharp_points'")
        axis3 = None if axis is None else np.array(axis + [0.0] * (3 - d))
        ors = t.get("orientations", [{"angle": 0.0}])
        if not ors:
            errs.append(f"{w}.orientations: list is empty")
        rots = [_rotation(o, f"{w}.orientations[{k}]", errs, axis3) for k, o in enumerate(ors)]
        if not cutter or any(r is None for r in rots) or not rots or (axis is None and pts is None):
            continue
        try:
            out.append(ToolAssembly.from_primitives(holder, cutter, dims.spacing, d, rots,
                                                    sharp_points=pts, name=name, axis=axis))
        except (SetupError, ValueError) as exc:
            errs.append(f"{w}: {exc}")
    return out


def parse_problem(text: str, source="<string>") -> OptimizationProblem:
    """Build and validate a problem from TOML text; raises ProblemError listing every issue."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        line, col = getattr(exc, "lineno", None), getattr(exc, "colno", None)
        msg = getattr(exc, "msg", str(exc))
        if line is None:
            m = re.search(r"line (\d+), column (\d+)", str(exc))
            if m:
                line, col = int(m.group(1)), int(m.group(2))
        raise ConfigParseError(source, msg, line, col) from None
    errs = _Errors()
    errs.unknown("top level", doc, _TOP_KEYS)

    g = doc.get("grid")
    if not isinstance(g, dict):
        raise ProblemError(errs + ["grid: missing [grid] section"])
    errs.unknown("grid", g, {"nx", "ny", "nz", "spacing", "origin"})
    try:
        dims = GridDims(g.get("nx", 0), g.get("ny", 0), g.get("nz", 1), g.get("spacing", 1.0),
                        tuple(g.get("origin", (0.0, 0.0, 0.0))))
    except (ValueError, TypeError) as exc:
        raise ProblemError(errs + [f"grid: {exc}"]) from None

    reg = doc.get("regions", {})
    errs.unknown("regions", reg, {"design", "platform", "fixture", "solid", "part"})

    def region(key):
        prims = _primitives(reg.get(key), f"regions.{key}", errs)
        return rasterize(prims, dims) if prims else None

    platform = region("platform")
    platform = ScalarGrid.zeros(dims) if platform is None else platform
    fixture = region("fixture")
    fixture = ScalarGrid.zeros(dims) if fixture is None else fixture
    solid = region("solid")
    part = region("part")
    design = region("design")
    if design is None:
        blocked = (platform.values > 0) | (fixture.values > 0)
        design = ScalarGrid(dims, (~blocked).astype(float))

    mt = doc.get("material", {})
    errs.unknown("material", mt, {"youngs_modulus", "poisson_ratio", "simp_penalty", "rho_min"})
    mvals = [_num(mt, k, d, "material", errs) for k, d in
             (("youngs_modulus", 270e3), ("poisson_ratio", 0.3), ("simp_penalty", 3.0), ("rho_min", 1e-3))]
    try:
        material = MaterialModel(*mvals)
    except ValueError as exc:
        errs += [f"material: {m}" for m in str(exc).split("; ")]
        material = MaterialModel()

    bt = doc.get("build", {})
    errs.unknown("build", bt, {"direction", "overhang_angle", "density_threshold"})
    default_b = [0.0, 1.0] if dims.nz == 1 else [0.0, 0.0, 1.0]
    b = _vec(bt.get("direction", default_b), 2, 3, "build.direction", errs) or default_b
    b = b + [0.0] * (3 - len(b))
    try:
        build = BuildSpec(tuple(b[:2]) if dims.nz == 1 and b[2] == 0 else tuple(b),
                          _num(bt, "overhang_angle", 90.0, "build", errs),
                          _num(bt, "density_threshold", 0.5, "build", errs))
    except (ValueError, SupportError) as exc:
        errs.append(f"build: {exc}")
        build = BuildSpec(tuple(default_b))

    bc = _bc(doc.get("bc", {}), dims, errs)
    tools = _tools(doc.get("tools", []), dims, errs)

    ot = dict(doc.get("optimization", {}))
    errs.unknown("optimization", ot, _OPT_KEYS)
    if "lambda" in ot:
        ot["lam"] = ot.pop("lambda")
    ocfg = OptimizationConfig()
    for f in fields(OptimizationConfig):
        if f.name in ot:
            kind = type(f.default) if isinstance(f.default, (bool, int, float)) else float
            setattr(ocfg, f.name, _num(ot, f.name, f.default, "optimization", errs, kind))

    pt = doc.get("planner", {})
    errs.unknown("planner", pt, _PLANNER_KEYS)
    pcfg = PlannerConfig()
    for f in fields(PlannerConfig):
        if f.name in pt:
            setattr(pcfg, f.name, _num(pt, f.name, f.default, "planner", errs,
                                       int if f.name == "max_steps" else float))

    ft = doc.get("fea", {})
    errs.unknown("fea", ft, {"tol", "solver"})
    fea_tol = _num(ft, "tol", 1e-8, "fea", errs)
    solver = ft.get("solver", "auto")
    if solver not in ("auto", "direct", "cg"):
        errs.append(f"fea.solver: expected 'auto', 'direct' or 'cg', got {solver!r}")
    if not fea_tol > 0:
        errs.append(f"fea.tol must be positive, got {fea_tol}")

    out = doc.get("output", {})
    errs.unknown("output", out, {"snapshot_every", "formats"})
    output = {"snapshot_every": _num(out, "snapshot_every", 0, "output", errs, int),
              "formats": list(out.get("formats", ["grid", "vtk"] + (["pgm"] if dims.nz == 1 else []))),
              "solver": solver}
    for fmt in output["formats"]:
        if fmt not in ("grid", "vtk", "pgm"):
            errs.append(f"output.formats: unknown format {fmt!r}")
        elif fmt == "pgm" and dims.nz > 1:
            errs.append("output.formats: pgm export needs a 2D grid")

    setup = None
    if tools:
        try:
            setup = MachiningSetup(tools, platform, fixture)
        except SetupError as exc:
            errs += str(exc).split("; ")
    errs += ocfg.validate() + pcfg.validate()
    if setup is None:
        raise ProblemError(errs)
    prob = OptimizationProblem(dims, design, bc, material, build, setup, ocfg, pcfg, solid,
                               output, fea_tol, str(doc.get("name", Path(str(source)).stem)), part=part)
    # the problem-level checks repeat the component checks already collected
    errs += [e for e in prob.validate() if e not in errs]
    if errs:
        raise ProblemError(errs)
    return prob


def load_problem(path) -> OptimizationProblem:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ProblemError([f"{path}: cannot read problem file: {exc.strerror}"]) from None
    return parse_problem(text, source=p)


def example_path(name: str) -> Path:
    """Path of a config shipped with the package (``cantilever2d.cfg`` etc.)."""
    p = Path(__file__).parent / "examples" / name
    if not p.exists():
        raise FileNotFoundError(f"no shipped example {name!r}")
    return p


__all__ = ["ConfigParseError", "example_path", "load_problem", "parse_problem"]
