"""Linear elasticity on the voxel grid with SIMP-interpolated element stiffness.

2D grids use bilinear plane-stress quads of unit thickness, 3D grids trilinear
hexahedra. One finite element per voxel; nodes sit on voxel corners.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy import ndimage

from . import kernels
from .grid import GridDims, ScalarGrid

log = logging.getLogger(__name__)

DIRECT_SOLVE_MAX_DOFS = 150_000     # 2D only; 3D fill-in makes sparse LU impractical


class FEAError(RuntimeError):
    pass


@dataclass(frozen=True)
class MaterialModel:
    youngs_modulus: float = 1.0
    poisson_ratio: float = 0.3
    simp_penalty: float = 3.0
    rho_min: float = 1e-3

    def __post_init__(self):
        errs = self.validate()
        if errs:
            raise ValueError("; ".join(errs))

    def validate(self) -> list[str]:
        errs = []
        if not self.youngs_modulus > 0:
            errs.append(f"Young's modulus must be positive, got {self.youngs_modulus}")
        if not 0 < self.poisson_ratio < 0.5:
            errs.append(f"Poisson ratio must lie in (0, 0.5), got {self.poisson_ratio}")
        if not self.simp_penalty >= 1:
            errs.append(f"SIMP penalty must be >= 1, got {self.simp_penalty}")
        if not 0 < self.rho_min < 0.1:
            errs.append(f"rho_min must lie in (0, 0.1), got {self.rho_min}")
        return errs

    def stiffness_scale(self, rho: np.ndarray) -> np.ndarray:
        return self.rho_min + (1 - self.rho_min) * rho ** self.simp_penalty

    def stiffness_derivative(self, rho: np.ndarray) -> np.ndarray:
        p = self.simp_penalty
        return p * (1 - self.rho_min) * rho ** (p - 1)


@dataclass
class BoundaryConditions:
    """Fixed dofs as (node, axis) pairs and point loads as (node, axis, value).

    Nodes are integer corner indices ``(i, j)`` or ``(i, j, k)``.
    """

    fixed: list = field(default_factory=list)
    loads: list = field(default_factory=list)

    def validate(self, dims: GridDims | None = None) -> list[str]:
        errs = []
        if not self.fixed:
            errs.append("no fixed degrees of freedom (rigid-body motion unconstrained)")
        for node, axis, value in self.loads:
            if not np.isfinite(value):
                errs.append(f"non-finite load at node {node}")
        if dims is not None:
            nn = _node_shape(dims)
            for node, axis, *_ in list(self.fixed) + list(self.loads):
                if len(node) != len(nn) or any(not 0 <= n < m for n, m in zip(node, nn)):
                    errs.append(f"node {tuple(node)} outside the {nn} node grid")
                if not 0 <= axis < len(nn):
                    errs.append(f"axis {axis} invalid for a {len(nn)}D problem")
        return errs

    def fixed_dofs(self, dims: GridDims) -> np.ndarray:
        nn = _node_shape(dims)
        d = len(nn)
        return np.unique([np.ravel_multi_index(tuple(n), nn) * d + a for n, a in self.fixed]).astype(int)

    def force_vector(self, dims: GridDims) -> np.ndarray:
        nn = _node_shape(dims)
        d = len(nn)
        f = np.zeros(int(np.prod(nn)) * d)
        for n, a, v in self.loads:
            f[np.ravel_multi_index(tuple(n), nn) * d + a] += v
        return f

    @classmethod
    def from_arrays(cls, fixed_mask: np.ndarray, forces: np.ndarray) -> "BoundaryConditions":
        """From a boolean ``(*node_shape, dim)`` mask and a matching force array."""
        fixed = [(tuple(int(v) for v in idx[:-1]), int(idx[-1])) for idx in np.argwhere(fixed_mask)]
        loads = [(tuple(int(v) for v in idx[:-1]), int(idx[-1]), float(forces[tuple(idx)]))
                 for idx in np.argwhere(forces != 0)]
        return cls(fixed, loads)


@dataclass
class FEAResult:
    displacements: np.ndarray
    compliance: float
    iterations: int
    residual: float
    shape: tuple = ()

    def element_displacements(self) -> np.ndarray:
        return kernels.gather(self.displacements, self.shape)


def _node_shape(dims: GridDims) -> tuple:
    if dims.nz == 1:
        return (dims.nx + 1, dims.ny + 1)
    return (dims.nx + 1, dims.ny + 1, dims.nz + 1)


def element_shape(dims: GridDims) -> tuple:
    return (dims.nx, dims.ny) if dims.nz == 1 else (dims.nx, dims.ny, dims.nz)


def _elasticity_matrix(E, nu, ndim):
    if ndim == 2:
        return E / (1 - nu ** 2) * np.array([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]])
    lam = E * nu / ((1 + nu) * (1 - 2 * nu))
    mu = E / (2 * (1 + nu))
    D = np.zeros((6, 6))
    D[:3, :3] = lam
    D[np.arange(3), np.arange(3)] += 2 * mu
    D[np.arange(3, 6), np.arange(3, 6)] = mu
    return D


@lru_cache(maxsize=16)
def element_stiffness(E: float, nu: float, h: float, ndim: int) -> np.ndarray:
    """Element stiffness of a square/cubic element of side ``h`` by 2-point Gauss quadrature."""
    D = _elasticity_matrix(E, nu, ndim)
    corners = list(itertools.product((0, 1), repeat=ndim))
    corners = [c[::-1] for c in corners]  # x fastest
    signs = np.array([[2 * c - 1 for c in corner] for corner in corners], float)
    g = 1 / np.sqrt(3)
    nloc = 2 ** ndim
    K = np.zeros((ndim * nloc, ndim * nloc))
    for xi in itertools.product((-g, g), repeat=ndim):
        xi = np.array(xi)
        # dN/dxi for each node
        dN = np.empty((nloc, ndim))
        for a in range(nloc):
            for d in range(ndim):
                prod = signs[a, d] / 2
                for o in range(ndim):
                    if o != d:
                        prod *= (1 + signs[a, o] * xi[o]) / 2
                dN[a, d] = prod
        dNdx = dN * (2 / h)
        detJ = (h / 2) ** ndim
        if ndim == 2:
            B = np.zeros((3, 8))
            B[0, 0::2] = dNdx[:, 0]
            B[1, 1::2] = dNdx[:, 1]
            B[2, 0::2] = dNdx[:, 1]
            B[2, 1::2] = dNdx[:, 0]
        else:
            B = np.zeros((6, 24))
            B[0, 0::3] = dNdx[:, 0]
            B[1, 1::3] = dNdx[:, 1]
            B[2, 2::3] = dNdx[:, 2]
            B[3, 0::3] = dNdx[:, 1]
            B[3, 1::3] = dNdx[:, 0]
            B[4, 1::3] = dNdx[:, 2]
            B[4, 2::3] = dNdx[:, 1]
            B[5, 0::3] = dNdx[:, 2]
            B[5, 2::3] = dNdx[:, 0]
        K += B.T @ D @ B * detJ
    K = (K + K.T) / 2
    K.setflags(write=False)
    return K


def _rigid_modes(dims: GridDims, fixed: np.ndarray | None = None) -> tuple[np.ndarray, list[str]]:
    nn = _node_shape(dims)
    d = len(nn)
    pts = np.stack(np.meshgrid(*[np.arange(n) for n in nn], indexing="ij"), -1).reshape(-1, d).astype(float)
    # rotate about the fixed nodes so a pinned point leaves a pure rotation
    anchor = pts[np.unique(fixed // d)] if fixed is not None and len(fixed) else pts
    pts -= anchor.mean(0)
    modes, names = [], []
    for a in range(d):
        m = np.zeros((len(pts), d))
        m[:, a] = 1
        modes.append(m.ravel())
        names.append(f"translation along axis {'xyz'[a]}")
    planes = [(0, 1)] if d == 2 else [(1, 2), (2, 0), (0, 1)]
    axes = ["z"] if d == 2 else ["x", "y", "z"]
    for (a, b), name in zip(planes, axes):
        m = np.zeros((len(pts), d))
        m[:, a] = -pts[:, b]
        m[:, b] = pts[:, a]
        modes.append(m.ravel())
        names.append(f"rotation about axis {name}")
    return np.array(modes).T, names


def check_rigid_modes(dims: GridDims, fixed: np.ndarray) -> None:
    """Raise if the fixed dofs leave a rigid-body mode free."""
    modes, names = _rigid_modes(dims, fixed)
    sub = modes[fixed]
    if len(fixed) == 0:
        raise FEAError(f"singular system: no fixed dofs; free rigid mode: {names[0]}")
    _, s, vt = np.linalg.svd(sub, full_matrices=True)
    tol = 1e-9 * max(1.0, s.max(initial=0))
    rank = int((s > tol).sum())
    if rank < modes.shape[1]:
        null = vt[rank]
        raise FEAError(f"singular system: insufficient fixities; free rigid mode: {names[int(np.argmax(np.abs(null)))]}")


class ElasticityModel:
    """Precomputed data for repeated solves on one grid and boundary-condition set."""

    def __init__(self, dims: GridDims, bc: BoundaryConditions, mat: MaterialModel,
                 solver: str = "auto", tol: float = 1e-8, max_iter: int = 20000):
        errs = bc.validate(dims)
        if errs:
            raise FEAError("; ".join(errs))
        self.dims = dims
        self.bc = bc
        self.mat = mat
        self.shape = element_shape(dims)
        self.ndim = len(self.shape)
        self.Ke = element_stiffness(mat.youngs_modulus, mat.poisson_ratio, dims.spacing, self.ndim)
        self.k0 = element_stiffness(1.0, mat.poisson_ratio, dims.spacing, self.ndim)
        self.fixed = bc.fixed_dofs(dims)
        check_rigid_modes(dims, self.fixed)
        self.f = bc.force_vector(dims)
        self.ndof = self.f.size
        self.free_mask = np.ones(self.ndof, bool)
        self.free_mask[self.fixed] = False
        if solver == "auto":
            solver = "direct" if self.ndim == 2 and self.ndof <= DIRECT_SOLVE_MAX_DOFS else "cg"
        if solver not in ("direct", "cg"):
            raise ValueError(f"unknown solver {solver!r}")
        self.solver = solver
        self.tol = tol
        self.max_iter = max_iter
        self._edof = None
        self._u_prev = None

    # -- assembly ---------------------------------------------------------

    def element_dofs(self) -> np.ndarray:
        if self._edof is None:
            nn = tuple(n + 1 for n in self.shape)
            ids = np.arange(int(np.prod(nn))).reshape(nn)
            d = self.ndim
            corners = ([(dx, dy) for dy in (0, 1) for dx in (0, 1)] if d == 2 else
                       [(dx, dy, dz) for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)])
            nodes = np.stack([ids[tuple(slice(c, c + n) for c, n in zip(cr, self.shape))].ravel()
                              for cr in corners], axis=1)
            self._edof = (nodes[:, :, None] * d + np.arange(d)).reshape(len(nodes), -1)
        return self._edof

    def assemble(self, scale: np.ndarray) -> sp.csr_matrix:
        edof = self.element_dofs()
        n = edof.shape[1]
        rows = np.repeat(edof, n, axis=1).ravel()
        cols = np.tile(edof, (1, n)).ravel()
        vals = (scale[:, None, None] * self.Ke[None]).ravel()
        return sp.coo_matrix((vals, (rows, cols)), shape=(self.ndof, self.ndof)).tocsr()

    def matvec(self, u: np.ndarray, scale: np.ndarray) -> np.ndarray:
        return kernels.matvec(u, scale, self.Ke, self.shape)

    # -- solve ------------------------------------------------------------

    def solve(self, rho: np.ndarray, warm_start: bool = True) -> FEAResult:
        rho = np.asarray(rho, float).reshape(self.shape)
        if np.any(rho < -1e-12) or np.any(rho > 1 + 1e-12):
            raise FEAError("densities must lie in [0, 1]")
        scale = self.mat.stiffness_scale(np.clip(rho, 0, 1)).ravel()
        f = self.f
        if not np.any(f):
            u = np.zeros(self.ndof)
            return FEAResult(u, 0.0, 0, 0.0, self.shape)
        if self.solver == "direct":
            u, its, res = self._solve_direct(scale)
        else:
            x0 = self._u_prev if (warm_start and self._u_prev is not None) else None
            u, its, res = self._solve_cg(scale, x0)
        self._u_prev = u
        return FEAResult(u, float(f @ u), its, res, self.shape)

    def _solve_direct(self, scale):
        K = self.assemble(scale)
        fm = self.free_mask
        Kff = K[fm][:, fm].tocsc()
        u = np.zeros(self.ndof)
        u[fm] = spla.spsolve(Kff, self.f[fm])
        r = self.matvec(u, scale) - self.f
        r[~fm] = 0
        res = float(np.linalg.norm(r) / np.linalg.norm(self.f))
        if not np.all(np.isfinite(u)):
            raise FEAError("direct solve produced non-finite displacements")
        return u, 1, res

    def _solve_cg(self, scale, x0=None):
        fm = self.free_mask
        b = np.where(fm, self.f, 0.0)
        diag = kernels.diagonal(scale, self.Ke, self.shape)
        inv_d = np.where(fm, 1.0 / np.where(diag > 0, diag, 1.0), 0.0)

        def A(v):
            y = self.matvec(v * fm, scale)
            y[~fm] = 0.0
            return y

        x = np.zeros(self.ndof) if x0 is None else np.where(fm, x0, 0.0)
        r = b - A(x) if x0 is not None else b.copy()
        bnorm = np.linalg.norm(b)
        z = inv_d * r
        p = z.copy()
        rz = r @ z
        res = np.linalg.norm(r) / bnorm
        it = 0
        while res > self.tol:
            if it >= self.max_iter:
                raise FEAError(f"PCG did not converge in {self.max_iter} iterations (relative residual {res:.3e})")
            Ap = A(p)
            pAp = p @ Ap
            if pAp <= 0:
                raise FEAError(f"PCG breakdown: stiffness not positive definite (p'Ap = {pAp:.3e})")
            a = rz / pAp
            x += a * p
            r -= a * Ap
            z = inv_d * r
            rz_new = r @ z
            p *= rz_new / rz
            p += z
            rz = rz_new
            res = np.linalg.norm(r) / bnorm
            it += 1
        return x, it, float(res)

    # -- sensitivities ----------------------------------------------------

    def element_energy(self, u: np.ndarray) -> np.ndarray:
        """``u_e^T k0 u_e`` per element for unit Young's modulus, times E."""
        return kernels.element_energy(u, self.Ke, self.shape)

    def compliance_gradient(self, rho: np.ndarray, result: FEAResult) -> np.ndarray:
        rho = np.asarray(rho, float).reshape(self.shape)
        ce = self.element_energy(result.displacements).reshape(self.shape)
        return -self.mat.stiffness_derivative(np.clip(rho, 0, 1)) * ce


def _grid_rho(g):
    if isinstance(g, ScalarGrid):
        v = g.values
        return v[:, :, 0] if g.dims.nz == 1 else v
    return np.asarray(g)


def assemble_and_solve(rho_tilde: ScalarGrid, bc: BoundaryConditions, mat: MaterialModel,
                       solver: str = "auto", tol: float = 1e-8) -> FEAResult:
    model = ElasticityModel(rho_tilde.dims, bc, mat, solver=solver, tol=tol)
    return model.solve(_grid_rho(rho_tilde))


def compliance_sensitivity(rho_tilde: ScalarGrid, result: FEAResult, mat: MaterialModel,
                           normalize: bool = True) -> ScalarGrid:
    """Per-element compliance derivative, optionally scaled by its max magnitude."""
    dims = rho_tilde.dims
    shape = element_shape(dims)
    if tuple(result.shape) != shape:
        raise ValueError(f"result shape {result.shape} does not match density grid {shape}")
    Ke = element_stiffness(mat.youngs_modulus, mat.poisson_ratio, dims.spacing, len(shape))
    ce = kernels.element_energy(result.displacements, Ke, shape).reshape(shape)
    rho = np.clip(_grid_rho(rho_tilde), 0, 1)
    dc = -mat.stiffness_derivative(rho) * ce
    if normalize:
        m = np.abs(dc).max(initial=0)
        if m > 0:
            dc = dc / m
    return ScalarGrid(dims, dc.reshape(dims.shape))


def filter_weights(radius: float, ndim: int) -> np.ndarray:
    """Linear hat kernel ``max(0, radius - dist)`` over the integer neighbourhood."""
    r = int(np.ceil(radius)) - 1
    ax = np.arange(-r, r + 1)
    grids = np.meshgrid(*([ax] * ndim), indexing="ij")
    dist = np.sqrt(sum(g.astype(float) ** 2 for g in grids))
    return np.maximum(0.0, radius - dist)


def sensitivity_filter(rho: np.ndarray, dc: np.ndarray, radius: float = 1.5,
                       rho_floor: float = 1e-3) -> np.ndarray:
    """Density-weighted sensitivity filter of the classic 99-line code."""
    w = filter_weights(radius, rho.ndim)
    num = ndimage.correlate(rho * dc, w, mode="constant")
    den = ndimage.correlate(np.ones_like(rho), w, mode="constant")
    return num / (np.maximum(rho_floor, rho) * den)


__all__ = [
    "BoundaryConditions",
    "ElasticityModel",
    "FEAError",
    "FEAResult",
    "MaterialModel",
    "assemble_and_solve",
    "check_rigid_modes",
    "compliance_sensitivity",
    "element_shape",
    "element_stiffness",
    "filter_weights",
    "sensitivity_filter",
]
