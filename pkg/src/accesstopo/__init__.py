"""Topology optimization with machining accessibility of additive support structures.

Voxel grids, FFT-based tool collision fields, dense support generation,
voxel finite elements, the accessibility-filtered optimization loop and a
greedy support-removal planner.
"""
from .accessibility import (IMFField, MachiningSetup, OrientedTool, SetupError, ToolAssembly,
                            imf_overall, imf_rotated_tool, placement_sweep, secluded_supports)
from .config import load_problem, parse_problem
from .convolution import correlate_bruteforce, correlate_fft
from .fea import (BoundaryConditions, ElasticityModel, FEAError, MaterialModel, assemble_and_solve,
                  compliance_sensitivity)
from .grid import (GridDims, Primitive, Rotation, ScalarGrid, combine, integrate, rasterize,
                   reflect, rotate_resample, shift)
from .gridio import read_grid, write_grid, write_pgm, write_vtk
from .kernels import BACKEND as KERNEL_BACKEND
from .planner import PlannerConfig, PlannerError, RemovalPlan, check_connectivity, plan_removal
from .problem import OptimizationProblem, ProblemError, cantilever_2d, end_mill_2d
from .supports import BuildSpec, NearNetShape, generate_supports, layer_coefficients
from .topopt import (OptimizationConfig, OptimizationResult, TopologyOptimizer, heaviside,
                     heaviside_project, optimize)

__version__ = "0.1.0"

__all__ = [
    "BoundaryConditions", "BuildSpec", "ElasticityModel", "FEAError", "GridDims", "IMFField",
    "KERNEL_BACKEND", "MachiningSetup", "MaterialModel", "NearNetShape", "OptimizationConfig",
    "OptimizationProblem", "OptimizationResult", "OrientedTool", "PlannerConfig", "PlannerError",
    "Primitive", "ProblemError", "RemovalPlan", "Rotation", "ScalarGrid", "SetupError",
    "ToolAssembly", "TopologyOptimizer", "assemble_and_solve", "cantilever_2d",
    "check_connectivity", "combine", "compliance_sensitivity", "correlate_bruteforce",
    "correlate_fft", "end_mill_2d", "generate_supports", "heaviside", "heaviside_project",
    "imf_overall", "imf_rotated_tool", "integrate", "layer_coefficients", "load_problem",
    "optimize", "parse_problem", "placement_sweep", "plan_removal", "rasterize", "read_grid",
    "reflect", "rotate_resample", "secluded_supports", "shift", "write_grid", "write_pgm",
    "write_vtk",
]
