"""Shared constructors for small hand-built tools and scenes."""
import numpy as np

from accesstopo.accessibility import ToolAssembly
from accesstopo.grid import GridDims, Rotation, ScalarGrid


def lattice_dims(shape, o, h=1.0):
    """Grid whose voxel index ``o`` is centered on world 0."""
    o = np.asarray(o, float)
    origin = tuple(-(o + 0.5) * h)
    if shape[2] == 1:
        origin = (origin[0], origin[1], -0.5 * h)
    return GridDims(*shape, spacing=h, origin=origin)


def tool_from_array(ind, o, sharp_idx, orientations=None, h=1.0, name="t"):
    """Tool whose voxels are ``ind``; ``sharp_idx`` are index positions used as sharp points."""
    ind = np.asarray(ind, float)
    if ind.ndim == 2:
        ind = ind[:, :, None]
    o = tuple(o) + (0,) * (3 - len(o))
    dims = lattice_dims(ind.shape, o, h)
    cutter = np.zeros_like(ind)
    for s in sharp_idx:
        s = tuple(s) + (0,) * (3 - len(s))
        cutter[s] = 1
    holder = np.where(cutter > 0, 0.0, ind)
    pts = [(np.array(tuple(s) + (0,) * (3 - len(s))) - np.asarray(o)) * h for s in sharp_idx]
    if orientations is None:
        orientations = [Rotation.identity()]
    return ToolAssembly(ScalarGrid(dims, holder), ScalarGrid(dims, cutter), orientations,
                        sharp_points=np.array(pts, float), name=name)


def random_tool(rng, size=5, ndim=3, fill=0.5, n_sharp=2):
    shape = (size, size, size if ndim == 3 else 1)
    ind = (rng.random(shape) < fill).astype(float)
    o = tuple(s // 2 for s in shape)
    ind[o] = 1
    occ = np.argwhere(ind > 0)
    pick = occ[rng.choice(len(occ), size=min(n_sharp, len(occ)), replace=False)]
    return tool_from_array(ind, o, [tuple(p) for p in pick])
