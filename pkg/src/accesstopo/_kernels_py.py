"""Pure-numpy element kernels for regular quad/hex meshes.

Nodes are numbered in C order over ``(nx+1, ny+1[, nz+1])``; elements in C
order over ``(nx, ny[, nz])``. Local element nodes are ordered with x fastest:
``n = dx + 2*dy + 4*dz``. Degrees of freedom are interleaved per node.
"""
from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def _corners(ndim):
    if ndim == 2:
        return [(dx, dy) for dy in (0, 1) for dx in (0, 1)]
    return [(dx, dy, dz) for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)]


def _slices(shape, corner):
    return tuple(slice(c, c + n) for c, n in zip(corner, shape))


def gather(u, shape):
    """Element displacement vectors, shape (n_elements, n_local_dofs)."""
    ndim = len(shape)
    U = u.reshape(tuple(n + 1 for n in shape) + (ndim,))
    ue = np.stack([U[_slices(shape, c)] for c in _corners(ndim)], axis=-2)
    return ue.reshape(-1, ndim * 2 ** ndim)


def scatter(fe, shape):
    ndim = len(shape)
    Y = np.zeros(tuple(n + 1 for n in shape) + (ndim,))
    fe = fe.reshape(tuple(shape) + (2 ** ndim, ndim))
    for a, c in enumerate(_corners(ndim)):
        Y[_slices(shape, c)] += fe[..., a, :]
    return Y.ravel()


def matvec(u, scale, Ke, shape):
    fe = gather(u, shape) @ Ke
    fe *= scale[:, None]
    return scatter(fe, shape)


def element_energy(u, Ke, shape):
    ue = gather(u, shape)
    return np.einsum("ei,ij,ej->e", ue, Ke, ue, optimize=True)


def diagonal(scale, Ke, shape):
    fe = scale[:, None] * np.diag(Ke)[None, :]
    return scatter(fe, shape)
