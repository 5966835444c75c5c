"""Collision measure of an obstacle against a translated tool.

For a tool indicator ``T`` placed with its local origin at voxel ``t`` the
overlap with an obstacle density ``O`` is::

    field(t) = sum_x O(x) * T(x - t) * h**d

which is the convolution of ``O`` with the reflected tool. Tool grids are
lattice-aligned about world 0 (see :func:`accesstopo.grid.lattice_origin_index`).
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy import fft as sfft

from .grid import ScalarGrid, _int_origin_index, integrate, reflect

MAX_FFT_POINTS = 2 ** 31
BRUTEFORCE_WORK_LIMIT = 64 ** 3 * 2000


@dataclass(frozen=True)
class CorrelationResult:
    field: ScalarGrid
    tool_volume: float


class FullCorrelation:
    """Linear convolution of an obstacle with a kernel over every overlapping placement.

    ``values[n]`` holds the collision measure for the tool origin at obstacle
    voxel ``n - offset``. Reads outside the stored range are zero (no overlap).
    """

    def __init__(self, values: np.ndarray, offset: np.ndarray, obstacle_shape):
        self.values = values
        self.offset = np.asarray(offset, dtype=int)
        self.obstacle_shape = tuple(obstacle_shape)

    def on_obstacle_grid(self) -> np.ndarray:
        sl = tuple(slice(o, o + n) for o, n in zip(self.offset, self.obstacle_shape))
        return self.values[sl]

    def sample_shifted(self, s) -> np.ndarray:
        """Array ``h`` on the obstacle grid with ``h[x] = field(x - s)``."""
        out = np.zeros(self.obstacle_shape)
        start = self.offset - np.asarray(s, dtype=int)
        dst, src = [], []
        for a, n, m in zip(start, self.obstacle_shape, self.values.shape):
            lo, hi = max(0, -a), min(n, m - a)
            if hi <= lo:
                return out
            dst.append(slice(lo, hi))
            src.append(slice(lo + a, hi + a))
        out[tuple(dst)] = self.values[tuple(src)]
        return out


class SpectrumCache:
    """Caches obstacle spectra keyed by padded FFT shape.

    One obstacle transform serves every tool orientation that pads to the same
    shape. Safe to share between threads.
    """

    def __init__(self, obstacle: np.ndarray):
        self.obstacle = obstacle
        self._spectra: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()

    def spectrum(self, shape, axes) -> np.ndarray:
        key = (tuple(shape), tuple(axes))
        with self._lock:
            hit = self._spectra.get(key)
        if hit is None:
            hit = sfft.rfftn(self.obstacle, s=[shape[a] for a in axes], axes=axes)
            with self._lock:
                self._spectra[key] = hit
        return hit


def _fft_axes(obstacle_shape, kernel_shape):
    # a singleton z axis in both operands needs no transform
    return [a for a in range(3) if not (obstacle_shape[a] == 1 and kernel_shape[a] == 1)]


def convolve_full(obstacle: np.ndarray, kernel: np.ndarray, kernel_origin,
                  cache: SpectrumCache | None = None) -> FullCorrelation:
    """Zero-padded FFT convolution returning every overlapping placement."""
    full_shape = [n + m - 1 for n, m in zip(obstacle.shape, kernel.shape)]
    if np.prod(full_shape, dtype=float) > MAX_FFT_POINTS:
        raise ValueError(f"padded FFT size {full_shape} exceeds the supported limit")
    axes = _fft_axes(obstacle.shape, kernel.shape)
    fshape = [sfft.next_fast_len(full_shape[a], real=True) for a in range(3)]
    if cache is not None:
        fo = cache.spectrum(fshape, axes)
    else:
        fo = sfft.rfftn(obstacle, s=[fshape[a] for a in axes], axes=axes)
    fk = sfft.rfftn(kernel, s=[fshape[a] for a in axes], axes=axes)
    out = sfft.irfftn(fo * fk, s=[fshape[a] for a in axes], axes=axes)
    out = out[tuple(slice(0, n) for n in full_shape)]
    # round-off floor: exact zeros where the operands do not overlap
    floor = 1e-9 * max(1.0, float(np.abs(kernel).sum())) * max(1.0, float(np.abs(obstacle).max(initial=0)))
    out[out < floor] = 0.0
    return FullCorrelation(out, np.asarray(kernel_origin, dtype=int), obstacle.shape)


def _check(obstacle: ScalarGrid, reflected_tool: ScalarGrid):
    if not np.isclose(obstacle.dims.spacing, reflected_tool.dims.spacing, rtol=1e-12):
        raise ValueError(
            f"spacing mismatch: obstacle {obstacle.dims.spacing} vs tool {reflected_tool.dims.spacing}")
    if obstacle.dims.ndim == 2 and reflected_tool.dims.ndim != 2:
        raise ValueError("a 2D obstacle needs a 2D tool")


def tool_volume_of_reflected(reflected_tool: ScalarGrid) -> float:
    return integrate(reflected_tool)


def correlate_fft(obstacle: ScalarGrid, reflected_tool: ScalarGrid,
                  cache: SpectrumCache | None = None) -> CorrelationResult:
    """Collision measure for every tool placement on the obstacle grid via FFT."""
    _check(obstacle, reflected_tool)
    o = _int_origin_index(reflected_tool.dims)
    full = convolve_full(obstacle.values, reflected_tool.values, o, cache)
    vals = full.on_obstacle_grid() * obstacle.dims.voxel_volume
    return CorrelationResult(ScalarGrid(obstacle.dims, vals), tool_volume_of_reflected(reflected_tool))


def correlate_bruteforce(obstacle: ScalarGrid, reflected_tool: ScalarGrid,
                         force: bool = False) -> CorrelationResult:
    """Direct summation over placements; the test oracle for :func:`correlate_fft`."""
    _check(obstacle, reflected_tool)
    kern = reflected_tool.values
    ko = _int_origin_index(reflected_tool.dims)
    nnz = np.argwhere(kern != 0)
    work = obstacle.dims.size * max(len(nnz), 1)
    if work > BRUTEFORCE_WORK_LIMIT and not force:
        raise ValueError(f"brute-force correlation work {work} exceeds guard {BRUTEFORCE_WORK_LIMIT}")
    O = obstacle.values
    field = np.zeros(O.shape)
    shape = np.array(O.shape)
    # field(t) = sum_u refl(u) * O(t - u)
    for idx in nnz:
        u = idx - ko
        w = kern[tuple(idx)]
        t_lo = np.maximum(u, 0)
        t_hi = np.minimum(shape + u, shape)
        if np.any(t_hi <= t_lo):
            continue
        dst = tuple(slice(a, b) for a, b in zip(t_lo, t_hi))
        src = tuple(slice(a - ui, b - ui) for a, b, ui in zip(t_lo, t_hi, u))
        field[dst] += w * O[src]
    field *= obstacle.dims.voxel_volume
    return CorrelationResult(ScalarGrid(obstacle.dims, field), tool_volume_of_reflected(reflected_tool))


def correlate_tool(obstacle: ScalarGrid, tool: ScalarGrid, method: str = "fft") -> CorrelationResult:
    """Convenience wrapper taking the unreflected tool."""
    fn = correlate_fft if method == "fft" else correlate_bruteforce
    return fn(obstacle, reflect(tool))


__all__ = [
    "CorrelationResult",
    "FullCorrelation",
    "SpectrumCache",
    "convolve_full",
    "correlate_fft",
    "correlate_bruteforce",
    "correlate_tool",
]
