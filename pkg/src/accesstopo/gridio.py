"""Grid file formats.

Binary container (``.grid``), all little-endian::

    offset  size  field
    0       8     magic b"ATGRID01"
    8       12    nx, ny, nz            uint32
    20      8     spacing               float64
    28      24    origin x, y, z        float64
    52      4*n   values                float32, x fastest

Values are stored as float32, so a round trip is bit-exact for grids whose
values are representable in float32 (indicators, densities written by this
package).
"""
from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .grid import GridDims, ScalarGrid

MAGIC = b"ATGRID01"
_HEADER = struct.Struct("<8s3I d 3d")


class GridFormatError(ValueError):
    pass


def write_grid(path, g: ScalarGrid) -> None:
    d = g.dims
    header = _HEADER.pack(MAGIC, d.nx, d.ny, d.nz, d.spacing, *d.origin)
    data = g.flat().astype("<f4").tobytes()
    Path(path).write_bytes(header + data)


def read_grid(path) -> ScalarGrid:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise GridFormatError(f"{path}: truncated header")
    magic, nx, ny, nz, spacing, ox, oy, oz = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise GridFormatError(f"{path}: bad magic {magic!r}")
    dims = GridDims(nx, ny, nz, spacing=spacing, origin=(ox, oy, oz))
    n = dims.size
    body = raw[_HEADER.size:]
    if len(body) != 4 * n:
        raise GridFormatError(f"{path}: expected {4 * n} data bytes, found {len(body)}")
    vals = np.frombuffer(body, dtype="<f4").astype(float)
    return ScalarGrid(dims, vals)


def write_vtk(path, g: ScalarGrid, name: str = "values") -> None:
    """Legacy ASCII VTK structured points, one CELL_DATA scalar per voxel."""
    d = g.dims
    lines = [
        "# vtk DataFile Version 3.0",
        name,
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {d.nx + 1} {d.ny + 1} {d.nz + 1}",
        "ORIGIN {:.9g} {:.9g} {:.9g}".format(*d.origin),
        f"SPACING {d.spacing:.9g} {d.spacing:.9g} {d.spacing:.9g}",
        f"CELL_DATA {d.size}",
        f"SCALARS {name} float 1",
        "LOOKUP_TABLE default",
    ]
    body = "\n".join(f"{v:.9g}" for v in g.flat())
    Path(path).write_text("\n".join(lines) + "\n" + body + "\n")


def write_pgm(path, g: ScalarGrid, vmin: float | None = None, vmax: float | None = None) -> None:
    """Binary 8-bit PGM of a 2D grid; y grows upward in the image."""
    if g.dims.nz != 1:
        raise ValueError("PGM export needs a 2D grid (nz == 1)")
    v = g.values[:, :, 0].T[::-1]
    lo = float(v.min()) if vmin is None else vmin
    hi = float(v.max()) if vmax is None else vmax
    scale = 255.0 / (hi - lo) if hi > lo else 0.0
    img = np.clip((v - lo) * scale, 0, 255).round().astype(np.uint8)
    header = f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode()
    Path(path).write_bytes(header + img.tobytes())


def read_pgm(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    parts = raw.split(maxsplit=4)
    if parts[0] != b"P5":
        raise GridFormatError(f"{path}: not a binary PGM")
    w, h, maxval = int(parts[1]), int(parts[2]), int(parts[3])
    data = np.frombuffer(parts[4][: w * h], dtype=np.uint8).reshape(h, w)
    return data.astype(float) / maxval
