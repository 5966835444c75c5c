"""Uniform voxel grids and the geometric primitives built on them.

Values are stored as numpy arrays of shape ``(nx, ny, nz)``; the flat
serialization order is x fastest, then y, then z (Fortran order).
A 2D grid is one with ``nz == 1``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "GridDims",
    "ScalarGrid",
    "Rotation",
    "Primitive",
    "rasterize",
    "rasterize_primitive",
    "rotate_resample",
    "reflect",
    "shift",
    "integrate",
    "combine",
]


@dataclass(frozen=True)
class GridDims:
    """Voxel counts, isotropic spacing and the world position of voxel (0,0,0)'s corner."""

    nx: int
    ny: int
    nz: int = 1
    spacing: float = 1.0
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        for name in ("nx", "ny", "nz"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not (self.spacing > 0 and math.isfinite(self.spacing)):
            raise ValueError(f"spacing must be positive, got {self.spacing!r}")
        origin = tuple(float(c) for c in self.origin)
        if len(origin) == 2:
            origin = origin + (0.0,)
        if len(origin) != 3:
            raise ValueError("origin must have 2 or 3 components")
        object.__setattr__(self, "origin", origin)
        object.__setattr__(self, "spacing", float(self.spacing))

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def size(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def ndim(self) -> int:
        return 2 if self.nz == 1 else 3

    @property
    def voxel_volume(self) -> float:
        return self.spacing ** self.ndim

    def centers(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Broadcastable world coordinates of voxel centers along x, y, z."""
        h = self.spacing
        ox, oy, oz = self.origin
        x = ox + (np.arange(self.nx) + 0.5) * h
        y = oy + (np.arange(self.ny) + 0.5) * h
        z = oz + (np.arange(self.nz) + 0.5) * h
        return x[:, None, None], y[None, :, None], z[None, None, :]

    def with_shape(self, shape: Sequence[int], origin=None) -> "GridDims":
        return GridDims(*shape, spacing=self.spacing,
                        origin=self.origin if origin is None else origin)


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    """A scalar field sampled at voxel centers of ``dims``."""

    dims: GridDims
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            if v.size != self.dims.size:
                raise ValueError(f"expected {self.dims.size} values, got {v.size}")
            v = v.reshape(self.dims.shape, order="F")
        elif v.ndim == 2 and self.dims.nz == 1:
            v = v[:, :, None]
        if v.shape != self.dims.shape:
            raise ValueError(f"values shape {v.shape} does not match dims {self.dims.shape}")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, dims: GridDims) -> "ScalarGrid":
        return cls(dims, np.zeros(dims.shape))

    @classmethod
    def full(cls, dims: GridDims, value: float) -> "ScalarGrid":
        return cls(dims, np.full(dims.shape, float(value)))

    def flat(self) -> np.ndarray:
        """Values in x-fastest order."""
        return self.values.ravel(order="F")

    def is_indicator(self) -> bool:
        return bool(np.all((self.values == 0) | (self.values == 1)))

    def is_density(self, tol: float = 0.0) -> bool:
        return bool(np.all((self.values >= -tol) & (self.values <= 1 + tol)))

    def count(self) -> int:
        return int(np.count_nonzero(self.values))

    def __eq__(self, other):
        if not isinstance(other, ScalarGrid):
            return NotImplemented
        return self.dims == other.dims and np.array_equal(self.values, other.values)

    __hash__ = None


class Rotation:
    """A proper rotation stored as a 3x3 orthonormal matrix."""

    def __init__(self, matrix, label: str | None = None):
        m = np.asarray(matrix, dtype=float)
        if m.shape == (2, 2):
            full = np.eye(3)
            full[:2, :2] = m
            m = full
        if m.shape != (3, 3):
            raise ValueError("rotation matrix must be 2x2 or 3x3")
        if not np.allclose(m @ m.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(m) - 1) > 1e-9:
            raise ValueError("matrix is not a proper rotation")
        self.matrix = m
        self.label = label

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3), "I")

    @classmethod
    def axis_angle(cls, axis, angle: float) -> "Rotation":
        a = np.asarray(axis, dtype=float)
        n = np.linalg.norm(a)
        if n == 0:
            raise ValueError("rotation axis must be nonzero")
        x, y, z = a / n
        c, s = math.cos(angle), math.sin(angle)
        C = 1 - c
        m = np.array([
            [c + x * x * C, x * y * C - z * s, x * z * C + y * s],
            [y * x * C + z * s, c + y * y * C, y * z * C - x * s],
            [z * x * C - y * s, z * y * C + x * s, c + z * z * C],
        ])
        # snap the rounding noise of multiples of 90 degrees
        m[np.abs(m) < 1e-15] = 0.0
        return cls(m, f"axis={tuple(np.round(a / n, 6))},angle={angle:.6g}")

    @classmethod
    def x(cls, angle: float) -> "Rotation":
        return cls.axis_angle((1, 0, 0), angle)

    @classmethod
    def z(cls, angle: float) -> "Rotation":
        return cls.axis_angle((0, 0, 1), angle)

    @classmethod
    def planar(cls, angle: float) -> "Rotation":
        """2D rotation R(angle) in the x-y plane."""
        return cls.z(angle)

    @property
    def inverse(self) -> "Rotation":
        return Rotation(self.matrix.T)

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        if p.shape[-1] == 2:
            p = np.concatenate([p, np.zeros(p.shape[:-1] + (1,))], axis=-1)
        return p @ self.matrix.T

    def __matmul__(self, other: "Rotation") -> "Rotation":
        return Rotation(self.matrix @ other.matrix)

    def __repr__(self):
        return f"Rotation({self.label or self.matrix.round(6).tolist()})"


# --- rasterization -----------------------------------------------------------

_KINDS = ("box", "sphere", "cylinder", "capsule", "halfspace")


@dataclass(frozen=True)
class Primitive:
    """A solid primitive in world coordinates.

    ``center`` and ``rotation`` place the primitive's local frame. Local
    conventions: a box has half-extents ``size/2`` about the center; a sphere
    has ``radius``; cylinders and capsules run along local +z from ``-length/2``
    to ``+length/2``; a half-space keeps the side ``n . (p - center) <= 0``
    where ``n`` is local +z.
    """

    kind: str
    center: tuple = (0.0, 0.0, 0.0)
    size: tuple = (1.0, 1.0, 1.0)
    radius: float = 0.0
    length: float = 0.0
    rotation: Rotation | None = None

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown primitive kind {self.kind!r}; expected one of {_KINDS}")
        c = tuple(float(v) for v in self.center)
        if len(c) == 2:
            c = c + (0.0,)
        if len(c) != 3 or not all(map(math.isfinite, c)):
            raise ValueError(f"primitive center must be 3 finite numbers, got {self.center!r}")
        object.__setattr__(self, "center", c)
        if self.kind == "box":
            s = tuple(float(v) for v in self.size)
            if len(s) == 2:
                s = s + (math.inf,)
            if len(s) != 3 or min(s) <= 0:
                raise ValueError(f"degenerate box: size {self.size!r} must be positive")
            object.__setattr__(self, "size", s)
        elif self.kind == "sphere":
            if not self.radius > 0:
                raise ValueError(f"degenerate sphere: radius {self.radius!r} must be positive")
        elif self.kind in ("cylinder", "capsule"):
            if not self.radius > 0:
                raise ValueError(f"degenerate {self.kind}: radius {self.radius!r} must be positive")
            if not self.length > 0 and self.kind == "cylinder":
                raise ValueError(f"degenerate cylinder: length {self.length!r} must be positive")
            if self.length < 0:
                raise ValueError(f"capsule length must be non-negative, got {self.length!r}")

    def contains(self, x, y, z) -> np.ndarray:
        px, py, pz = np.broadcast_arrays(x - self.center[0], y - self.center[1], z - self.center[2])
        if self.rotation is not None:
            # express in local coordinates: p_local = R^T p
            m = self.rotation.matrix
            px, py, pz = (m[0, 0] * px + m[1, 0] * py + m[2, 0] * pz,
                          m[0, 1] * px + m[1, 1] * py + m[2, 1] * pz,
                          m[0, 2] * px + m[1, 2] * py + m[2, 2] * pz)
        if self.kind == "box":
            hx, hy, hz = (s / 2 for s in self.size)
            return (np.abs(px) <= hx) & (np.abs(py) <= hy) & (np.abs(pz) <= hz)
        if self.kind == "sphere":
            return px ** 2 + py ** 2 + pz ** 2 <= self.radius ** 2
        if self.kind == "cylinder":
            return (px ** 2 + py ** 2 <= self.radius ** 2) & (np.abs(pz) <= self.length / 2)
        if self.kind == "capsule":
            zc = np.clip(pz, -self.length / 2, self.length / 2)
            return px ** 2 + py ** 2 + (pz - zc) ** 2 <= self.radius ** 2
        return pz <= 0


def rasterize(shapes: Iterable[Primitive], dims: GridDims) -> ScalarGrid:
    """Union of primitives sampled at voxel centers."""
    x, y, z = dims.centers()
    out = np.zeros(dims.shape, dtype=bool)
    for s in shapes:
        # 2D grids sample the primitive's own mid-plane
        out |= s.contains(x, y, z if dims.nz > 1 else np.full_like(z, s.center[2]))
    return ScalarGrid(dims, out.astype(float))


def rasterize_primitive(shape: Primitive | Iterable[Primitive], dims: GridDims) -> ScalarGrid:
    if isinstance(shape, Primitive):
        shape = [shape]
    return rasterize(shape, dims)


# --- lattice helpers ---------------------------------------------------------
#
# Tool-local grids keep voxel centers on the integer lattice: the voxel at
# index ``o`` has center 0 where ``origin = -(o + 0.5) * spacing``.

def lattice_origin_index(dims: GridDims) -> np.ndarray:
    """Index of the voxel whose center sits at world 0 (may be fractional).

    For 2D grids the z component is always 0.
    """
    o = np.array([-(c / dims.spacing) - 0.5 for c in dims.origin])
    if dims.nz == 1:
        o[2] = 0.0
    return o


def _origin_for_index(idx, spacing) -> tuple[float, float, float]:
    return tuple(-(float(i) + 0.5) * spacing for i in idx)


def _int_origin_index(dims: GridDims) -> np.ndarray:
    o = lattice_origin_index(dims)
    r = np.rint(o)
    if np.any(np.abs(o - r) > 1e-6):
        raise ValueError("grid voxel centers are not on the integer lattice about the origin")
    return r.astype(int)


def rotate_resample(g: ScalarGrid, r: Rotation) -> ScalarGrid:
    """Rotate a grid about world point 0 using nearest-neighbour inverse mapping.

    The grid must be lattice-aligned about 0 (see ``lattice_origin_index``).
    The output box is enlarged to contain the rotated support.
    """
    dims = g.dims
    o = _int_origin_index(dims)
    m = r.matrix
    if dims.nz == 1 and not (np.allclose(m[2], [0, 0, 1]) and np.allclose(m[:, 2], [0, 0, 1])):
        raise ValueError("2D grids only admit rotations about the z axis")
    nz_mask = np.argwhere(g.values != 0)
    if nz_mask.size == 0:
        return ScalarGrid(dims, np.zeros(dims.shape))
    lo = nz_mask.min(0) - o - 0.5
    hi = nz_mask.max(0) - o + 0.5
    corners = np.array([[a, b, c] for a in (lo[0], hi[0]) for b in (lo[1], hi[1])
                        for c in (lo[2], hi[2])])
    rc = corners @ m.T
    new_lo = np.floor(rc.min(0) + 0.5 + 1e-9).astype(int)
    new_hi = np.ceil(rc.max(0) - 0.5 - 1e-9).astype(int)
    if dims.nz == 1:
        new_lo[2] = new_hi[2] = 0
    shape = new_hi - new_lo + 1
    ii, jj, kk = np.meshgrid(*(np.arange(a, b + 1) for a, b in zip(new_lo, new_hi)), indexing="ij")
    pts = np.stack([ii, jj, kk], axis=-1).astype(float)
    src = pts @ m  # r^-1 p = R^T p, as row vectors p @ R
    src_idx = np.floor(src + 0.5 + 1e-9).astype(int) + o
    inside = np.all((src_idx >= 0) & (src_idx < np.array(dims.shape)), axis=-1)
    out = np.zeros(tuple(shape))
    si = src_idx[inside]
    out[inside] = g.values[si[:, 0], si[:, 1], si[:, 2]]
    new_origin = _origin_for_index(-new_lo, dims.spacing)
    if dims.nz == 1:
        new_origin = (new_origin[0], new_origin[1], dims.origin[2])
    return ScalarGrid(GridDims(*shape, spacing=dims.spacing, origin=new_origin), out)


def reflect(g: ScalarGrid) -> ScalarGrid:
    """Point reflection through world 0: ``out(p) = g(-p)``."""
    dims = g.dims
    o = lattice_origin_index(dims)
    n = np.array(dims.shape)
    new_o = (n - 1) - o
    origin = _origin_for_index(new_o, dims.spacing)
    if dims.nz == 1:
        origin = (origin[0], origin[1], dims.origin[2])
        vals = g.values[::-1, ::-1, :]
    else:
        vals = g.values[::-1, ::-1, ::-1]
    return ScalarGrid(GridDims(*dims.shape, spacing=dims.spacing, origin=origin), vals.copy())


def shift(g: ScalarGrid, t, fill: float = 0.0) -> ScalarGrid:
    """Translate values by integer voxel offset ``t``: ``out[i] = g[i - t]``."""
    t = tuple(int(v) for v in t) + (0,) * (3 - len(t))
    return ScalarGrid(g.dims, shift_array(g.values, t, fill))


def shift_array(a: np.ndarray, t, fill: float = 0.0) -> np.ndarray:
    out = np.full(a.shape, fill, dtype=a.dtype if np.isfinite(fill) else float)
    dst, src = [], []
    for ti, n in zip(t, a.shape):
        if abs(ti) >= n:
            return out
        if ti >= 0:
            dst.append(slice(ti, n))
            src.append(slice(0, n - ti))
        else:
            dst.append(slice(0, n + ti))
            src.append(slice(-ti, n))
    out[tuple(dst)] = a[tuple(src)]
    return out


def integrate(g: ScalarGrid) -> float:
    return float(g.values.sum() * g.dims.voxel_volume)


def combine(a: ScalarGrid, b, op: str) -> ScalarGrid:
    """Pointwise combination; ``mask-threshold`` takes a scalar threshold as ``b``."""
    if op == "mask-threshold":
        return ScalarGrid(a.dims, (a.values > float(b)).astype(float))
    if a.dims.shape != b.dims.shape or a.dims.spacing != b.dims.spacing:
        raise ValueError(f"dimension mismatch: {a.dims.shape} vs {b.dims.shape}")
    ops = {"min": np.minimum, "max": np.maximum, "sum": np.add, "product": np.multiply}
    try:
        fn = ops[op]
    except KeyError:
        raise ValueError(f"unknown combine op {op!r}") from None
    return ScalarGrid(a.dims, fn(a.values, b.values))
