"""Tool assemblies, machining setups and the inaccessibility measure field (IMF).

For a query voxel ``x`` the IMF of one oriented tool is the smallest
normalized collision volume over the tool's sharp points ``k``: the tool is
rotated, translated so that its rotated sharp point sits on ``x``, and its
overlap with the obstacle density is divided by the tool volume. The overall
IMF is the pointwise minimum over every tool and orientation.
"""
from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .convolution import SpectrumCache, convolve_full
from .grid import (GridDims, Primitive, Rotation, ScalarGrid, _int_origin_index, rasterize,
                   reflect, rotate_resample)

log = logging.getLogger(__name__)

DEFAULT_LAMBDA = 0.005


class SetupError(ValueError):
    pass


@dataclass(frozen=True)
class OrientedTool:
    """A tool assembly resampled at one orientation."""

    indicator: np.ndarray          # rotated tool RT on its own lattice grid
    origin_index: np.ndarray       # index of the lattice voxel at the tool origin
    shifts: np.ndarray             # rotated sharp points as voxel offsets, (n_k, 3)
    voxel_count: int

    @cached_property
    def offsets(self) -> np.ndarray:
        """Lattice offsets of the occupied tool voxels, (n, 3)."""
        return np.argwhere(self.indicator != 0) - self.origin_index

    @cached_property
    def reflected(self) -> tuple[np.ndarray, np.ndarray]:
        k = self.indicator[::-1, ::-1, ::-1] if self.indicator.shape[2] > 1 else self.indicator[::-1, ::-1, :]
        o = np.array(self.indicator.shape) - 1 - self.origin_index
        if self.indicator.shape[2] == 1:
            o[2] = 0
        return np.ascontiguousarray(k), o


class ToolAssembly:
    """Holder plus cutter on a common tool-local lattice grid.

    Parameters
    ----------
    holder, cutter:
        Indicator grids sharing dims; voxel centers on the integer lattice
        about the tool origin.
    sharp_points:
        Cutting points in tool-local world coordinates. When omitted they are
        derived from ``axis`` as the cutter voxels furthest along it.
    orientations:
        Allowed rotations of the assembly.
    """

    def __init__(self, holder: ScalarGrid, cutter: ScalarGrid, orientations: Sequence[Rotation],
                 sharp_points=None, name: str = "tool", axis=None):
        if holder.dims != cutter.dims:
            raise SetupError(f"{name}: holder and cutter grids must share dims")
        if not holder.is_indicator() or not cutter.is_indicator():
            raise SetupError(f"{name}: holder and cutter must be indicator grids")
        _int_origin_index(holder.dims)
        self.holder = holder
        self.cutter = cutter
        self.name = name
        self.orientations = list(orientations)
        if not self.orientations:
            raise SetupError(f"{name}: orientation list is empty")
        if sharp_points is None:
            if axis is None:
                raise SetupError(f"{name}: give sharp points or a tool axis to derive them")
            sharp_points = derive_sharp_points(cutter, axis)
        pts = np.atleast_2d(np.asarray(sharp_points, dtype=float))
        if pts.size == 0:
            raise SetupError(f"{name}: sharp-point list is empty")
        if pts.shape[1] == 2:
            pts = np.hstack([pts, np.zeros((len(pts), 1))])
        self.sharp_points = pts
        self._check_sharp_points()
        union = np.maximum(holder.values, cutter.values)
        if not union.any():
            raise SetupError(f"{name}: tool has zero volume")
        self.indicator = ScalarGrid(holder.dims, union)
        self._oriented: dict[int, OrientedTool] = {}

    @classmethod
    def from_primitives(cls, holder: Sequence[Primitive], cutter: Sequence[Primitive], spacing: float,
                        ndim: int, orientations: Sequence[Rotation], sharp_points=None,
                        name: str = "tool", axis=None) -> "ToolAssembly":
        dims = tool_dims_for(list(holder) + list(cutter), spacing, ndim)
        return cls(rasterize(holder, dims), rasterize(cutter, dims), orientations,
                   sharp_points=sharp_points, name=name, axis=axis)

    def _check_sharp_points(self):
        h = self.cutter.dims.spacing
        o = _int_origin_index(self.cutter.dims)
        for p in self.sharp_points:
            idx = np.rint(p / h).astype(int) + o
            if self.cutter.dims.nz == 1:
                idx[2] = 0
            if np.any(idx < 0) or np.any(idx >= np.array(self.cutter.dims.shape)) \
                    or self.cutter.values[tuple(idx)] == 0:
                raise SetupError(f"{self.name}: sharp point {tuple(p)} is not inside the cutter")

    @property
    def volume(self) -> float:
        return float(self.indicator.values.sum() * self.indicator.dims.voxel_volume)

    def oriented(self, j: int) -> OrientedTool:
        hit = self._oriented.get(j)
        if hit is None:
            hit = orient_tool(self.indicator, self.sharp_points, self.orientations[j])
            self._oriented[j] = hit
        return hit

    def __repr__(self):
        return (f"ToolAssembly({self.name!r}, voxels={int(self.indicator.values.sum())}, "
                f"sharp_points={len(self.sharp_points)}, orientations={len(self.orientations)})")


def tool_dims_for(prims: Sequence[Primitive], spacing: float, ndim: int) -> GridDims:
    """Lattice-aligned tool grid enclosing ``prims``."""
    lo = np.full(3, np.inf)
    hi = np.full(3, -np.inf)
    for p in prims:
        c = np.array(p.center)
        if p.kind == "box":
            r = np.linalg.norm([s for s in p.size if np.isfinite(s)]) / 2
        elif p.kind == "sphere":
            r = p.radius
        elif p.kind in ("cylinder", "capsule"):
            r = p.radius + p.length / 2 + (p.radius if p.kind == "capsule" else 0)
        else:
            raise SetupError("half-spaces cannot be part of a tool")
        lo = np.minimum(lo, c - r)
        hi = np.maximum(hi, c + r)
    ilo = np.floor(lo / spacing).astype(int) - 1
    ihi = np.ceil(hi / spacing).astype(int) + 1
    if ndim == 2:
        ilo[2] = ihi[2] = 0
    shape = ihi - ilo + 1
    origin = tuple(-(float(-a) + 0.5) * spacing for a in ilo)
    if ndim == 2:
        origin = (origin[0], origin[1], -0.5 * spacing)
    return GridDims(*shape, spacing=spacing, origin=origin)


def derive_sharp_points(cutter: ScalarGrid, axis) -> np.ndarray:
    """Cutter voxel centers that lie furthest along ``axis`` (the tool tip)."""
    a = np.asarray(axis, dtype=float)
    if a.size == 2:
        a = np.append(a, 0.0)
    idx = np.argwhere(cutter.values != 0)
    if len(idx) == 0:
        raise SetupError("cutter is empty")
    pts = (idx - _int_origin_index(cutter.dims)) * cutter.dims.spacing
    proj = pts @ a
    return pts[proj >= proj.max() - 1e-9 * max(1.0, abs(proj.max()))]


def orient_tool(indicator: ScalarGrid, sharp_points: np.ndarray, r: Rotation) -> OrientedTool:
    rt = rotate_resample(indicator, r)
    h = indicator.dims.spacing
    shifts = np.rint(r.apply(sharp_points) / h).astype(int)
    if indicator.dims.nz == 1:
        shifts[:, 2] = 0
    shifts = np.unique(shifts, axis=0)
    return OrientedTool(rt.values, _int_origin_index(rt.dims), shifts, int(np.count_nonzero(rt.values)))


@dataclass
class MachiningSetup:
    tools: list
    platform: ScalarGrid
    fixture: ScalarGrid

    def __post_init__(self):
        errors = self.validate()
        if errors:
            raise SetupError("; ".join(errors))

    def validate(self) -> list[str]:
        errs = []
        if not self.tools:
            errs.append("machining setup needs at least one tool")
        if self.platform.dims != self.fixture.dims:
            errs.append("platform and fixture must share the design-domain grid")
        else:
            if not self.platform.is_indicator() or not self.fixture.is_indicator():
                errs.append("platform and fixture must be indicator grids")
            elif np.any((self.platform.values > 0) & (self.fixture.values > 0)):
                errs.append("platform and fixture overlap")
        for t in self.tools:
            if abs(t.indicator.dims.spacing - self.platform.dims.spacing) > 1e-12 * self.platform.dims.spacing:
                errs.append(f"{t.name}: tool spacing differs from domain spacing")
            if t.indicator.dims.ndim != self.platform.dims.ndim:
                errs.append(f"{t.name}: tool dimensionality differs from the domain")
        return errs

    @property
    def dims(self) -> GridDims:
        return self.platform.dims

    def pairs(self):
        for i, t in enumerate(self.tools):
            for j in range(len(t.orientations)):
                yield i, j


@dataclass
class IMFField:
    values: ScalarGrid
    provenance: np.ndarray | None = field(default=None, repr=False)

    def tool_at(self, idx) -> tuple[int, int] | None:
        if self.provenance is None:
            return None
        return tuple(int(v) for v in self.provenance[tuple(idx)])


@dataclass(frozen=True)
class SecludedResult:
    grid: ScalarGrid
    volume: float
    support_volume: float

    @property
    def ratio(self) -> float:
        return self.volume / self.support_volume if self.support_volume > 0 else 0.0


def assemble_obstacle_density(rho_part: ScalarGrid, setup: MachiningSetup) -> ScalarGrid:
    P, F = setup.platform.values, setup.fixture.values
    if rho_part.dims.shape != P.shape:
        raise SetupError(f"part grid {rho_part.dims.shape} does not match setup grid {P.shape}")
    rho = rho_part.values
    bad = (rho > 1e-6) & ((P > 0) | (F > 0))
    if bad.any():
        i = tuple(int(v) for v in np.argwhere(bad)[0])
        raise SetupError(f"part density overlaps platform/fixture at {int(bad.sum())} voxels (first at {i})")
    out = rho + P + F
    if out.max(initial=0) > 1 + 1e-9:
        raise SetupError("obstacle density exceeds 1; platform and fixture must be disjoint")
    return ScalarGrid(rho_part.dims, np.minimum(out, 1.0))


def imf_from_obstacle(obstacle: np.ndarray, ot: OrientedTool, cache: SpectrumCache | None = None,
                      clip: bool = True) -> np.ndarray:
    """Normalized IMF of one oriented tool on a raw obstacle array.

    ``obstacle`` may carry weights above 1 (used by the removal planner), in
    which case ``clip`` should be False.
    """
    kern, ko = ot.reflected
    full = convolve_full(obstacle, kern, ko, cache)
    out = None
    for s in ot.shifts:
        h = full.sample_shifted(s)
        out = h if out is None else np.minimum(out, h, out=out)
    out /= ot.voxel_count
    if clip:
        np.clip(out, 0.0, 1.0, out=out)
    return out


def imf_rotated_tool(rho_O: ScalarGrid, r: Rotation, tool: ToolAssembly) -> ScalarGrid:
    if len(tool.sharp_points) == 0:
        raise SetupError("empty sharp-point list")
    ot = orient_tool(tool.indicator, tool.sharp_points, r)
    return ScalarGrid(rho_O.dims, imf_from_obstacle(rho_O.values, ot))


def imf_overall_from_obstacle(obstacle: np.ndarray, tools: Sequence[ToolAssembly], provenance: bool = False,
                              threads: int = 1, clip: bool = True):
    """Pointwise minimum IMF over every (tool, orientation); returns (values, provenance)."""
    pairs = [(i, j) for i, t in enumerate(tools) for j in range(len(t.orientations))]
    cache = SpectrumCache(obstacle)

    def one(pair):
        i, j = pair
        return imf_from_obstacle(obstacle, tools[i].oriented(j), cache, clip=clip)

    if threads > 1 and len(pairs) > 1:
        for i, t in enumerate(tools):
            for j in range(len(t.orientations)):
                t.oriented(j)
        with ThreadPoolExecutor(threads) as ex:
            fields = list(ex.map(one, pairs))
    else:
        fields = map(one, pairs)
    best = None
    prov = None
    # fixed reduction order: strict improvement keeps the lowest (tool, orientation)
    for (i, j), f in zip(pairs, fields):
        if best is None:
            best = f
            if provenance:
                prov = np.zeros(obstacle.shape + (2,), dtype=np.int32)
            continue
        if provenance:
            better = f < best
            prov[better] = (i, j)
        np.minimum(best, f, out=best)
    return best, prov


def imf_overall(rho_part: ScalarGrid, setup: MachiningSetup, provenance: bool = False,
                extra_obstacle: ScalarGrid | None = None, threads: int = 1) -> IMFField:
    """Overall normalized IMF of a part density inside a machining setup.

    ``extra_obstacle`` adds further indicator material (e.g. supports) to the
    obstacle; the result is clipped to [0, 1].
    """
    rho_O = assemble_obstacle_density(rho_part, setup).values
    if extra_obstacle is not None:
        rho_O = np.minimum(rho_O + extra_obstacle.values, 1.0)
    vals, prov = imf_overall_from_obstacle(rho_O, setup.tools, provenance, threads)
    return IMFField(ScalarGrid(rho_part.dims, vals), prov)


def secluded_supports(imf: IMFField | ScalarGrid, supports: ScalarGrid,
                      lam: float = DEFAULT_LAMBDA) -> SecludedResult:
    if not 0 < lam < 1:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    f = imf.values if isinstance(imf, IMFField) else imf
    gamma = (supports.values > 0) & (f.values > lam)
    g = ScalarGrid(supports.dims, gamma.astype(float))
    vv = supports.dims.voxel_volume
    return SecludedResult(g, float(gamma.sum() * vv), float((supports.values > 0).sum() * vv))


def placement_sweep(obstacle: np.ndarray, ot: OrientedTool, query: np.ndarray | None = None,
                    chunk: int = 4096) -> np.ndarray:
    """Direct evaluation of the oriented-tool IMF by placing the tool at each query voxel.

    For each query voxel and sharp point the obstacle values under the placed
    tool are summed; placements reaching outside the grid see free space.
    Returns an array on the obstacle grid (NaN where not queried).
    """
    shape = np.array(obstacle.shape)
    out = np.full(obstacle.shape, np.nan)
    q = np.argwhere(np.ones(obstacle.shape, bool) if query is None else query)
    offs = ot.offsets
    for a in range(0, len(q), chunk):
        xs = q[a:a + chunk]
        best = np.full(len(xs), np.inf)
        for s in ot.shifts:
            pos = xs[:, None, :] - s[None, None, :] + offs[None, :, :]
            ok = np.all((pos >= 0) & (pos < shape), axis=-1)
            pos = np.where(ok[..., None], pos, 0)
            vals = obstacle[pos[..., 0], pos[..., 1], pos[..., 2]] * ok
            best = np.minimum(best, vals.sum(axis=1))
        out[tuple(xs.T)] = best / ot.voxel_count
    return out


__all__ = [
    "ToolAssembly",
    "OrientedTool",
    "MachiningSetup",
    "IMFField",
    "SecludedResult",
    "SetupError",
    "assemble_obstacle_density",
    "derive_sharp_points",
    "imf_from_obstacle",
    "imf_rotated_tool",
    "imf_overall",
    "imf_overall_from_obstacle",
    "orient_tool",
    "placement_sweep",
    "secluded_supports",
    "tool_dims_for",
]
