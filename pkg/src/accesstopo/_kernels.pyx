# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled element kernels; same contract as ``_kernels_py``."""
import numpy as np

BACKEND = "cython"


cdef inline void _nodes2(int i, int j, int ny1, Py_ssize_t* nd) noexcept nogil:
    nd[0] = i * ny1 + j
    nd[1] = (i + 1) * ny1 + j
    nd[2] = i * ny1 + j + 1
    nd[3] = (i + 1) * ny1 + j + 1


cdef inline void _nodes3(int i, int j, int k, int ny1, int nz1, Py_ssize_t* nd) noexcept nogil:
    cdef Py_ssize_t b = (i * ny1 + j) * nz1 + k
    cdef Py_ssize_t sx = ny1 * nz1
    nd[0] = b
    nd[1] = b + sx
    nd[2] = b + nz1
    nd[3] = b + sx + nz1
    nd[4] = b + 1
    nd[5] = b + sx + 1
    nd[6] = b + nz1 + 1
    nd[7] = b + sx + nz1 + 1


def _matvec2(const double[::1] u, const double[::1] scale, const double[:, ::1] Ke,
             int nx, int ny, double[::1] out):
    cdef int i, j, a, b, c, ny1 = ny + 1
    cdef Py_ssize_t e = 0
    cdef Py_ssize_t nd[4]
    cdef double ue[8]
    cdef double s, acc
    with nogil:
        for i in range(nx):
            for j in range(ny):
                s = scale[e]
                e += 1
                if s == 0.0:
                    continue
                _nodes2(i, j, ny1, nd)
                for a in range(4):
                    ue[2 * a] = u[2 * nd[a]]
                    ue[2 * a + 1] = u[2 * nd[a] + 1]
                for a in range(8):
                    acc = 0.0
                    for b in range(8):
                        acc = acc + Ke[a, b] * ue[b]
                    out[2 * nd[a >> 1] + (a & 1)] += s * acc


def _matvec3(const double[::1] u, const double[::1] scale, const double[:, ::1] Ke,
             int nx, int ny, int nz, double[::1] out):
    cdef int i, j, k, a, b, ny1 = ny + 1, nz1 = nz + 1
    cdef Py_ssize_t e = 0
    cdef Py_ssize_t nd[8]
    cdef double ue[24]
    cdef double s, acc
    with nogil:
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    s = scale[e]
                    e += 1
                    if s == 0.0:
                        continue
                    _nodes3(i, j, k, ny1, nz1, nd)
                    for a in range(8):
                        ue[3 * a] = u[3 * nd[a]]
                        ue[3 * a + 1] = u[3 * nd[a] + 1]
                        ue[3 * a + 2] = u[3 * nd[a] + 2]
                    for a in range(24):
                        acc = 0.0
                        for b in range(24):
                            acc = acc + Ke[a, b] * ue[b]
                        out[3 * nd[a // 3] + (a % 3)] += s * acc


def _energy2(const double[::1] u, const double[:, ::1] Ke, int nx, int ny, double[::1] out):
    cdef int i, j, a, b, ny1 = ny + 1
    cdef Py_ssize_t e = 0
    cdef Py_ssize_t nd[4]
    cdef double ue[8]
    cdef double acc, tot
    with nogil:
        for i in range(nx):
            for j in range(ny):
                _nodes2(i, j, ny1, nd)
                for a in range(4):
                    ue[2 * a] = u[2 * nd[a]]
                    ue[2 * a + 1] = u[2 * nd[a] + 1]
                tot = 0.0
                for a in range(8):
                    acc = 0.0
                    for b in range(8):
                        acc = acc + Ke[a, b] * ue[b]
                    tot = tot + ue[a] * acc
                out[e] = tot
                e += 1


def _energy3(const double[::1] u, const double[:, ::1] Ke, int nx, int ny, int nz, double[::1] out):
    cdef int i, j, k, a, b, ny1 = ny + 1, nz1 = nz + 1
    cdef Py_ssize_t e = 0
    cdef Py_ssize_t nd[8]
    cdef double ue[24]
    cdef double acc, tot
    with nogil:
        for i in range(nx):
            for j in range(ny):
                for k in range(nz):
                    _nodes3(i, j, k, ny1, nz1, nd)
                    for a in range(8):
                        ue[3 * a] = u[3 * nd[a]]
                        ue[3 * a + 1] = u[3 * nd[a] + 1]
                        ue[3 * a + 2] = u[3 * nd[a] + 2]
                    tot = 0.0
                    for a in range(24):
                        acc = 0.0
                        for b in range(24):
                            acc = acc + Ke[a, b] * ue[b]
                        tot = tot + ue[a] * acc
                    out[e] = tot
                    e += 1


def matvec(u, scale, Ke, shape):
    u = np.ascontiguousarray(u, dtype=np.float64)
    scale = np.ascontiguousarray(scale, dtype=np.float64)
    Ke = np.ascontiguousarray(Ke, dtype=np.float64)
    out = np.zeros_like(u)
    if len(shape) == 2:
        _matvec2(u, scale, Ke, shape[0], shape[1], out)
    else:
        _matvec3(u, scale, Ke, shape[0], shape[1], shape[2], out)
    return out


def element_energy(u, Ke, shape):
    u = np.ascontiguousarray(u, dtype=np.float64)
    Ke = np.ascontiguousarray(Ke, dtype=np.float64)
    out = np.empty(int(np.prod(shape)))
    if len(shape) == 2:
        _energy2(u, Ke, shape[0], shape[1], out)
    else:
        _energy3(u, Ke, shape[0], shape[1], shape[2], out)
    return out


def diagonal(scale, Ke, shape):
    from ._kernels_py import diagonal as _diag
    return _diag(scale, Ke, shape)
