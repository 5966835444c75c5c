"""Overhang detection and dense support synthesis along an axis-aligned build direction."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .grid import GridDims, Rotation, ScalarGrid, rotate_resample

__all__ = [
    "BuildSpec",
    "NearNetShape",
    "SupportError",
    "build_axis",
    "overhang_points",
    "generate_supports",
    "supported_violations",
    "layer_coefficients",
    "layer_index",
    "layer_weight_field",
    "rotation_to_build_axis",
]


class SupportError(ValueError):
    pass


@dataclass(frozen=True)
class BuildSpec:
    b: tuple = (0.0, 0.0, 1.0)
    alpha: float = 90.0
    density_threshold: float = 0.5

    def __post_init__(self):
        b = tuple(float(v) for v in self.b)
        if len(b) == 2:
            b = b + (0.0,)
        if len(b) != 3:
            raise ValueError("build direction needs 2 or 3 components")
        if abs(math.sqrt(sum(v * v for v in b)) - 1.0) > 1e-9:
            raise ValueError(f"build direction {b} is not a unit vector")
        object.__setattr__(self, "b", b)
        if not 0 < self.alpha <= 90:
            raise ValueError(f"overhang angle must lie in (0, 90], got {self.alpha}")
        if not 0 < self.density_threshold < 1:
            raise ValueError("density_threshold must lie in (0, 1)")

    @property
    def diagonal_stencil(self) -> bool:
        # 90 deg: only the voxel directly below; 45 deg: the full neighbourhood below
        return self.alpha < 67.5


@dataclass(frozen=True)
class NearNetShape:
    part: ScalarGrid
    supports: ScalarGrid
    platform: ScalarGrid
    layer_axis: int
    layer_sign: int = 1

    def __post_init__(self):
        if np.any((self.part.values > 0.5) & (self.supports.values > 0)):
            raise SupportError("part and supports overlap")

    @property
    def indicator(self) -> ScalarGrid:
        """Near-net indicator: union of the (thresholded) part and its supports."""
        return ScalarGrid(self.part.dims, ((self.part.values > 0.5) | (self.supports.values > 0)).astype(float))


def build_axis(spec: BuildSpec, dims: GridDims) -> tuple[int, int]:
    """Grid axis and sign aligned with the build direction."""
    b = np.asarray(spec.b)
    ax = int(np.argmax(np.abs(b)))
    if abs(abs(b[ax]) - 1.0) > 1e-9:
        raise SupportError(
            f"build direction {spec.b} is not grid-axis aligned; rotate the domain first "
            "(see rotation_to_build_axis)")
    if dims.nz == 1 and ax == 2:
        raise SupportError("2D grids build along x or y")
    return ax, (1 if b[ax] > 0 else -1)


def rotation_to_build_axis(b, target=(0.0, 0.0, 1.0)) -> Rotation:
    """Rotation taking unit vector ``b`` onto ``target``; used to pre-rotate oblique builds."""
    b = np.asarray(b, float) / np.linalg.norm(b)
    t = np.asarray(target, float)
    v = np.cross(b, t)
    s = np.linalg.norm(v)
    c = float(b @ t)
    if s < 1e-12:
        if c > 0:
            return Rotation.identity()
        perp = np.array([1.0, 0, 0]) if abs(b[0]) < 0.9 else np.array([0, 1.0, 0])
        return Rotation.axis_angle(np.cross(b, perp), math.pi)
    return Rotation.axis_angle(v / s, math.atan2(s, c))


def align_grid_to_build(g: ScalarGrid, b) -> ScalarGrid:
    return rotate_resample(g, rotation_to_build_axis(b))


def _to_layers(a: np.ndarray, ax: int, sign: int) -> np.ndarray:
    """View with the build axis last and increasing upward."""
    v = np.moveaxis(a, ax, -1)
    return v[..., ::-1] if sign < 0 else v


def _from_layers(v: np.ndarray, ax: int, sign: int) -> np.ndarray:
    if sign < 0:
        v = v[..., ::-1]
    return np.moveaxis(v, -1, ax)


def _spread(layer: np.ndarray, diagonal: bool) -> np.ndarray:
    """Voxels of a layer whose support cone covers some set voxel of ``layer``."""
    if not diagonal:
        return layer
    out = layer.copy()
    n0, n1 = layer.shape
    for di in (-1, 0, 1):
        for dj in (-1, 0, 1):
            if di == dj == 0:
                continue
            if (di and n0 == 1) or (dj and n1 == 1):
                continue
            out[max(di, 0):n0 + min(di, 0), max(dj, 0):n1 + min(dj, 0)] |= \
                layer[max(-di, 0):n0 + min(-di, 0), max(-dj, 0):n1 + min(-dj, 0)]
    return out


def _material(part: ScalarGrid, spec: BuildSpec) -> np.ndarray:
    return part.values > spec.density_threshold


def overhang_points(part: ScalarGrid, spec: BuildSpec, platform: ScalarGrid | None = None) -> ScalarGrid:
    """Material voxels with no material (or platform) in their support cone one layer below."""
    ax, sign = build_axis(spec, part.dims)
    m = _to_layers(_material(part, spec), ax, sign)
    base = m if platform is None else m | _to_layers(platform.values > 0, ax, sign)
    out = np.zeros_like(m)
    for k in range(1, m.shape[-1]):
        out[..., k] = m[..., k] & ~_spread(base[..., k - 1], spec.diagonal_stencil)
    return ScalarGrid(part.dims, _from_layers(out, ax, sign).astype(float))


def generate_supports(part: ScalarGrid, spec: BuildSpec, platform: ScalarGrid | None = None) -> NearNetShape:
    """Dense supports so that every part/support voxel rests on its cone below.

    Layers are swept top to bottom; each unsupported voxel receives a support
    voxel directly beneath it, which in turn needs support, until a column
    lands on part material or the platform. The bottom layer rests on the
    build plate.
    """
    ax, sign = build_axis(spec, part.dims)
    if platform is None:
        platform = ScalarGrid.zeros(part.dims)
    m = _to_layers(_material(part, spec), ax, sign)
    p = _to_layers(platform.values > 0, ax, sign)
    _check_platform(m, p)
    solid = m | p
    s = np.zeros_like(m)
    diag = spec.diagonal_stencil
    for k in range(m.shape[-1] - 1, 0, -1):
        need = (m[..., k] | s[..., k]) & ~_spread(solid[..., k - 1], diag)
        s[..., k - 1] = need
    supports = ScalarGrid(part.dims, _from_layers(s, ax, sign).astype(float))
    return NearNetShape(part, supports, platform, ax, sign)


def _check_platform(m: np.ndarray, p: np.ndarray):
    if not p.any():
        return
    n = p.shape[-1]
    idx = np.arange(n)
    top = np.where(p, idx, -1).max(axis=-1)
    below = m & (idx < top[..., None])
    if below.any():
        raise SupportError(f"{int(below.sum())} part voxels lie below the platform top surface")
    if (m & p).any():
        raise SupportError("part overlaps the platform")


def supported_violations(part: ScalarGrid, supports: ScalarGrid, spec: BuildSpec,
                         platform: ScalarGrid | None = None) -> np.ndarray:
    """Voxels of part or supports above the bottom layer lacking support in their cone."""
    ax, sign = build_axis(spec, part.dims)
    m = _to_layers(_material(part, spec) | (supports.values > 0), ax, sign)
    p = m if platform is None else m | _to_layers(platform.values > 0, ax, sign)
    bad = np.zeros_like(m)
    for k in range(1, m.shape[-1]):
        bad[..., k] = m[..., k] & ~_spread(p[..., k - 1], spec.diagonal_stencil)
    return _from_layers(bad, ax, sign)


def layer_coefficients(n_layers: int, q: float) -> np.ndarray:
    """``((n - k + 1) / n) ** q`` for layers k = 1 (bottom) .. n."""
    if n_layers < 1:
        raise ValueError("need at least one layer")
    if q < 0:
        raise ValueError("q must be non-negative")
    k = np.arange(1, n_layers + 1)
    return ((n_layers - k + 1) / n_layers) ** q


def layer_index(dims: GridDims, spec: BuildSpec) -> np.ndarray:
    """1-based build layer of each voxel, broadcast to the grid shape."""
    ax, sign = build_axis(spec, dims)
    n = dims.shape[ax]
    k = np.arange(1, n + 1) if sign > 0 else np.arange(n, 0, -1)
    shape = [1, 1, 1]
    shape[ax] = n
    return np.broadcast_to(k.reshape(shape), dims.shape)


def layer_weight_field(dims: GridDims, spec: BuildSpec, q: float) -> np.ndarray:
    ax, _ = build_axis(spec, dims)
    w = layer_coefficients(dims.shape[ax], q)
    return w[layer_index(dims, spec) - 1]
