"""Greedy support-removal planning by layer batches.

Each step scores every (tool, orientation) on a weighted obstacle in which
part, platform and fixture voxels count ``obstacle_penalty`` times and the
remaining supports count once. Supports whose weighted IMF lies at or below
``tau`` are removable; the pair removing the most support volume from the
top batch of layers wins. Steps that would leave the part hanging by nothing
while it still touches supports are rejected.
"""
from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .accessibility import imf_from_obstacle
from .convolution import SpectrumCache
from .grid import GridDims, ScalarGrid
from .gridio import read_grid, write_grid

log = logging.getLogger(__name__)

_FACE = ndimage.generate_binary_structure(3, 1)


class PlannerError(RuntimeError):
    """Greedy removal stalled; ``stuck`` marks the part-contacting supports left."""

    def __init__(self, message: str, stuck: ScalarGrid | None = None, steps=None):
        super().__init__(message)
        self.stuck = stuck
        self.steps = list(steps or [])


@dataclass
class PlannerConfig:
    tau: float = 0.005
    layer_fraction: float = 0.10
    obstacle_penalty: float = 1000.0
    max_steps: int = 1000

    def validate(self) -> list[str]:
        e = []
        if not 0 < self.tau < 1:
            e.append(f"planner tau must lie in (0, 1), got {self.tau}")
        if not 0 < self.layer_fraction <= 1:
            e.append(f"planner layer_fraction must lie in (0, 1], got {self.layer_fraction}")
        if not self.obstacle_penalty >= 1:
            e.append(f"planner obstacle_penalty must be >= 1, got {self.obstacle_penalty}")
        if not (isinstance(self.max_steps, int) and self.max_steps >= 1):
            e.append(f"planner max_steps must be a positive integer, got {self.max_steps}")
        return e


@dataclass(frozen=True)
class RemovalStep:
    tool: int
    orientation: int
    rotation: np.ndarray
    removed: ScalarGrid
    volume: float
    percent: float
    layers: tuple[int, int]       # 1-based build layers of the scored batch, inclusive


@dataclass
class RemovalPlan:
    steps: list
    residual_supports: ScalarGrid
    machined_fraction: float
    initial_support_volume: float = 0.0
    tool_names: list = field(default_factory=list)

    @property
    def removed_volume(self) -> float:
        return float(sum(s.volume for s in self.steps))

    def summary(self) -> str:
        lines = [f"{len(self.steps)} steps, {self.removed_volume:g} of {self.initial_support_volume:g} "
                 f"support volume machined ({100 * self.machined_fraction:.1f}%)"]
        cum = 0.0
        for n, s in enumerate(self.steps):
            cum += s.percent
            name = self.tool_names[s.tool] if s.tool < len(self.tool_names) else f"tool{s.tool}"
            lines.append(f"  step {n:3d}: {name} orientation {s.orientation} "
                         f"layers {s.layers[0]}-{s.layers[1]}  volume {s.volume:g}  "
                         f"({s.percent:.2f}%, cumulative {cum:.2f}%)")
        return "\n".join(lines)


def _as_bool(g) -> np.ndarray:
    return np.asarray(getattr(g, "values", g)) > 0


def check_connectivity(part, supports, platform) -> bool:
    """True when every part component reaches the platform through face-adjacent material.

    Paths may run through part, supports and platform. An empty part is
    trivially connected; a non-empty part with no platform is not.
    """
    p, s, b = _as_bool(part), _as_bool(supports), _as_bool(platform)
    if not p.any():
        return True
    if not b.any():
        return False
    lab, _ = ndimage.label(p | s | b, structure=_FACE)
    grounded = np.unique(lab[b])
    return bool(np.isin(lab[p], grounded).all())


def touching(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Voxels of ``a`` sharing a face with ``b``."""
    return a & ndimage.binary_dilation(b, structure=_FACE)


def weighted_obstacle(part, supports, setup, penalty: float) -> np.ndarray:
    """Obstacle density with non-support material scaled by ``penalty``."""
    hard = _as_bool(part) | _as_bool(setup.platform) | _as_bool(setup.fixture)
    return penalty * hard + (_as_bool(supports) & ~hard)


def _layer_coords(dims: GridDims, axis: int, sign: int) -> np.ndarray:
    n = dims.shape[axis]
    k = np.arange(1, n + 1) if sign > 0 else np.arange(n, 0, -1)
    shape = [1, 1, 1]
    shape[axis] = n
    return np.broadcast_to(k.reshape(shape), dims.shape)


def _rotvec_deg(m: np.ndarray) -> list:
    from scipy.spatial.transform import Rotation as R
    return [float(v) for v in np.rad2deg(R.from_matrix(m).as_rotvec())]


def plan_removal(near_net, setup, cfg: PlannerConfig | None = None, threads: int = 1) -> RemovalPlan:
    """Greedy top-down removal sequence for the supports of a near-net shape."""
    cfg = cfg or PlannerConfig()
    errs = cfg.validate()
    if errs:
        raise ValueError("; ".join(errs))
    dims = near_net.part.dims
    if setup.dims.shape != dims.shape:
        raise ValueError("machining setup grid does not match the near-net grid")
    part = near_net.part.values > 0.5
    sup = (near_net.supports.values > 0) & ~part
    vv = dims.voxel_volume
    total = float(sup.sum() * vv)
    names = [t.name for t in setup.tools]
    if total == 0:
        return RemovalPlan([], ScalarGrid(dims, sup.astype(float)), 0.0, 0.0, names)
    platform = _as_bool(setup.platform)
    layer = _layer_coords(dims, near_net.layer_axis, near_net.layer_sign)
    n_layers = dims.shape[near_net.layer_axis]
    batch = max(1, math.ceil(cfg.layer_fraction * n_layers))
    pairs = list(setup.pairs())
    for i, j in pairs:
        setup.tools[i].oriented(j)
    steps: list[RemovalStep] = []

    def score(obstacle, cache, pair):
        i, j = pair
        return imf_from_obstacle(obstacle, setup.tools[i].oriented(j), cache, clip=False)

    while touching(sup, part).any():
        if len(steps) >= cfg.max_steps:
            raise PlannerError(f"no complete plan within {cfg.max_steps} steps",
                               ScalarGrid(dims, touching(sup, part).astype(float)), steps)
        obstacle = weighted_obstacle(part, sup, setup, cfg.obstacle_penalty)
        cache = SpectrumCache(obstacle)
        if threads > 1 and len(pairs) > 1:
            with ThreadPoolExecutor(threads) as ex:
                fields = list(ex.map(lambda p: score(obstacle, cache, p), pairs))
        else:
            fields = [score(obstacle, cache, p) for p in pairs]
        ok = [sup & (f <= cfg.tau) for f in fields]
        step = None
        top = int(layer[sup].max())
        while top >= 1 and step is None:
            lo = max(1, top - batch + 1)
            in_batch = (layer >= lo) & (layer <= top)
            cands = []
            for n, (pair, m) in enumerate(zip(pairs, ok)):
                rem = m & in_batch
                c = int(rem.sum())
                if c:
                    cands.append((-c, n, pair, rem))
            cands.sort(key=lambda t: (t[0], t[1]))
            for _, _, (i, j), rem in cands:
                after = sup & ~rem
                if touching(after, part).any() and not check_connectivity(part, after, platform):
                    log.debug("reject tool %d orientation %d: part would detach", i, j)
                    continue
                vol = float(rem.sum() * vv)
                step = RemovalStep(i, j, setup.tools[i].orientations[j].matrix.copy(),
                                   ScalarGrid(dims, rem.astype(float)), vol, 100.0 * vol / total, (lo, top))
                break
            if step is None:
                below = sup & (layer < lo)
                top = int(layer[below].max()) if below.any() else 0
        if step is None:
            stuck = touching(sup, part)
            idx = np.argwhere(stuck)
            raise PlannerError(
                f"removal stalled: {int(stuck.sum())} part-contacting support voxels are not reachable "
                f"by any tool orientation (bounding box {idx.min(0).tolist()}..{idx.max(0).tolist()})",
                ScalarGrid(dims, stuck.astype(float)), steps)
        steps.append(step)
        sup = sup & ~(step.removed.values > 0)
        log.info("step %d: tool %d orientation %d removed %g (%.2f%%)", len(steps) - 1, step.tool,
                 step.orientation, step.volume, step.percent)
    removed = sum(s.volume for s in steps)
    return RemovalPlan(steps, ScalarGrid(dims, sup.astype(float)), removed / total, total, names)


def replay_supports(initial_supports, plan: RemovalPlan):
    """Support indicator before each step, in order."""
    sup = _as_bool(initial_supports).copy()
    for s in plan.steps:
        yield sup.copy()
        sup &= ~(s.removed.values > 0)


def save_plan(plan: RemovalPlan, directory) -> Path:
    """Write ``step_NNN.grid`` files, ``residual_supports.grid`` and ``manifest.json``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    cum = 0.0
    entries = []
    for n, s in enumerate(plan.steps):
        fname = f"step_{n:03d}.grid"
        write_grid(d / fname, s.removed)
        cum += s.percent
        entries.append({
            "step": n,
            "file": fname,
            "tool": s.tool,
            "tool_name": plan.tool_names[s.tool] if s.tool < len(plan.tool_names) else None,
            "orientation": s.orientation,
            "rotation_matrix": s.rotation.tolist(),
            "rotation_vector_deg": _rotvec_deg(s.rotation),
            "layers": list(s.layers),
            "volume": s.volume,
            "percent": s.percent,
            "cumulative_percent": cum,
        })
    write_grid(d / "residual_supports.grid", plan.residual_supports)
    manifest = {
        "steps": entries,
        "initial_support_volume": plan.initial_support_volume,
        "machined_fraction": plan.machined_fraction,
        "residual_file": "residual_supports.grid",
        "tools": plan.tool_names,
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return d


def load_plan(directory) -> RemovalPlan:
    d = Path(directory)
    man = json.loads((d / "manifest.json").read_text())
    steps = [RemovalStep(e["tool"], e["orientation"], np.array(e["rotation_matrix"]),
                         read_grid(d / e["file"]), e["volume"], e["percent"], tuple(e["layers"]))
             for e in man["steps"]]
    return RemovalPlan(steps, read_grid(d / man["residual_file"]), man["machined_fraction"],
                       man["initial_support_volume"], man.get("tools", []))


__all__ = [
    "PlannerConfig",
    "PlannerError",
    "RemovalPlan",
    "RemovalStep",
    "check_connectivity",
    "load_plan",
    "plan_removal",
    "replay_supports",
    "save_plan",
    "weighted_obstacle",
]
