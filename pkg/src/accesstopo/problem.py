"""Problem container tying the grid, physics, build and machining setup together."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .accessibility import MachiningSetup, ToolAssembly
from .fea import BoundaryConditions, MaterialModel
from .grid import GridDims, Primitive, Rotation, ScalarGrid
from .planner import PlannerConfig
from .supports import BuildSpec, build_axis
from .topopt import OptimizationConfig


class ProblemError(ValueError):
    """Validation failure; ``errors`` lists every problem found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("\n".join(self.errors))


@dataclass
class OptimizationProblem:
    dims: GridDims
    design: ScalarGrid
    bc: BoundaryConditions
    material: MaterialModel
    build: BuildSpec
    setup: MachiningSetup
    config: OptimizationConfig = field(default_factory=OptimizationConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    solid: ScalarGrid | None = None
    output: dict = field(default_factory=dict)
    fea_tol: float = 1e-8
    name: str = "problem"
    part: ScalarGrid | None = None      # fixed shape for analysis commands


    def validate(self) -> list[str]:
        e = []
        if self.design.dims != self.dims:
            e.append("design mask does not match the grid")
        elif not self.design.is_indicator():
            e.append("design mask must be an indicator grid")
        elif not self.design.values.any():
            e.append("design domain is empty")
        if self.setup.platform.dims.shape != self.dims.shape:
            e.append("platform/fixture grids do not match the problem grid")
        else:
            blocked = (self.setup.platform.values + self.setup.fixture.values) > 0
            if np.any(blocked & (self.design.values > 0)):
                e.append("design domain overlaps the platform or fixture")
            if self.solid is not None and np.any(blocked & (self.solid.values > 0)):
                e.append("solid keep-in region overlaps the platform or fixture")
            if self.part is not None and np.any(blocked & (self.part.values > 0)):
                e.append("analysis part overlaps the platform or fixture")
        e += self.setup.validate()
        e += self.bc.validate(self.dims)
        e += self.material.validate()
        e += self.config.validate()
        e += self.planner.validate()
        try:
            build_axis(self.build, self.dims)
        except ValueError as exc:
            e.append(str(exc))
        return e

    def free_mask(self) -> np.ndarray:
        free = self.design.values > 0
        if self.solid is not None:
            free &= ~(self.solid.values > 0)
        return free

    def solid_mask(self) -> np.ndarray:
        if self.solid is None:
            return np.zeros(self.dims.shape, bool)
        return self.solid.values > 0


def end_mill_2d(spacing: float = 1.0, cutter_len: float = 10.0, cutter_width: float = 3.0,
                holder_len: float = 100.0, holder_width: float = 5.0,
                angles_deg=(0.0,), name: str = "endmill") -> ToolAssembly:
    """Flat end mill pointing along +x with its tip face at the tool origin."""
    h = spacing
    tip = 0.0
    cutter = Primitive("box", center=(tip - (cutter_len - h) / 2, 0.0), size=(cutter_len, cutter_width))
    holder = Primitive("box", center=(tip - cutter_len + h / 2 - holder_len / 2, 0.0),
                       size=(holder_len, holder_width))
    rots = [Rotation.planar(np.deg2rad(a)) for a in angles_deg]
    return ToolAssembly.from_primitives([holder], [cutter], h, 2, rots, axis=(1, 0), name=name)


def cantilever_2d(nx: int = 100, ny: int = 50, volume_fraction: float = 0.5, angles_deg=(0.0,),
                  build_sign: int = 1, alpha: float = 90.0, platform_rows: int = 1,
                  youngs_modulus: float = 270e3, poisson_ratio: float = 0.3, load: float = -1.0,
                  tool: ToolAssembly | None = None, **cfg) -> OptimizationProblem:
    """Cantilever clamped on the left edge, point load at mid-height of the right edge.

    The design domain is ``nx`` by ``ny`` voxels with a platform of
    ``platform_rows`` rows on the side the build starts from (y is the build
    axis). Lengths in millimetres, modulus in MPa.
    """
    gy = ny + platform_rows
    dims = GridDims(nx, gy, 1, spacing=1.0)
    plat = np.zeros(dims.shape)
    design = np.zeros(dims.shape)
    if build_sign > 0:
        plat[:, :platform_rows] = 1
        design[:, platform_rows:] = 1
        y0 = platform_rows
    else:
        plat[:, ny:] = 1
        design[:, :ny] = 1
        y0 = 0
    fixed = [((0, j), a) for j in range(y0, y0 + ny + 1) for a in (0, 1)]
    loads = [((nx, y0 + ny // 2), 1, load)]
    bc = BoundaryConditions(fixed, loads)
    if tool is None:
        tool = end_mill_2d(angles_deg=angles_deg)
    setup = MachiningSetup([tool], ScalarGrid(dims, plat), ScalarGrid.zeros(dims))
    config = OptimizationConfig(volume_fraction=volume_fraction, **cfg)
    return OptimizationProblem(dims, ScalarGrid(dims, design), bc,
                               MaterialModel(youngs_modulus, poisson_ratio),
                               BuildSpec((0, float(build_sign)), alpha), setup, config,
                               name=f"cantilever2d_{nx}x{ny}")


__all__ = ["OptimizationProblem", "ProblemError", "cantilever_2d", "end_mill_2d"]
