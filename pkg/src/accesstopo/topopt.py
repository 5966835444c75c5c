"""Compliance topology optimization with an accessibility filter on support structures.

Each iteration projects the design densities, regenerates supports, solves
the elasticity problem, evaluates the inaccessibility field of the projected
design and blends the normalized compliance sensitivity with the layer-weighted
accessibility filter before an optimality-criteria update.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

from .accessibility import IMFField, imf_overall_from_obstacle
from .fea import ElasticityModel, sensitivity_filter
from .grid import ScalarGrid
from .supports import NearNetShape, generate_supports, layer_weight_field

log = logging.getLogger(__name__)

SENSITIVITY_CEILING = -1e-12
HOLD_MARGIN = 0.05


class OptimizationError(RuntimeError):
    pass


class ManufacturabilityWarning(UserWarning):
    pass


@dataclass
class OptimizationConfig:
    volume_fraction: float = 0.5
    epsilon: float = 1e-3
    beta: float = 1.0
    q: float = 4.0
    w_acc_max: float = 0.5
    w_acc_step: float = 0.01
    i_acc: int = 20
    i_rho: int = 150
    lam: float = 0.005
    move_limit: float = 0.2
    oc_damping: float = 0.5
    delta_frac: float = 0.01
    max_iter: int = 300
    filter_radius: float = 1.5
    seclusion_penalty: bool = True
    supports_as_obstacle: bool = False
    threads: int = 1

    def validate(self) -> list[str]:
        e = []
        if not 0 < self.volume_fraction < 1:
            e.append(f"volume_fraction must lie in (0, 1) (volume constraint bounds), got {self.volume_fraction}")
        if not self.epsilon > 0:
            e.append(f"epsilon must be positive, got {self.epsilon}")
        if not self.beta >= 0:
            e.append(f"beta must be non-negative, got {self.beta}")
        if not self.q >= 0:
            e.append(f"q must be non-negative, got {self.q}")
        if not 0 <= self.w_acc_max < 1:
            e.append(f"w_acc_max must lie in [0, 1), got {self.w_acc_max}")
        if not self.w_acc_step > 0:
            e.append(f"w_acc_step must be positive, got {self.w_acc_step}")
        if not 0 < self.lam < 1:
            e.append(f"lambda must lie in (0, 1), got {self.lam}")
        if not 0 < self.move_limit <= 1:
            e.append(f"move_limit must lie in (0, 1], got {self.move_limit}")
        if not 0 < self.oc_damping <= 1:
            e.append(f"oc_damping must lie in (0, 1], got {self.oc_damping}")
        if not self.delta_frac >= 0:
            e.append(f"delta_frac must be non-negative, got {self.delta_frac}")
        if not (0 <= self.i_acc < self.i_rho < self.max_iter):
            e.append(f"need i_acc < i_rho < max_iter, got {self.i_acc}, {self.i_rho}, {self.max_iter}")
        if not self.filter_radius >= 1:
            e.append(f"filter_radius must be >= 1, got {self.filter_radius}")
        return e

    @property
    def constrained(self) -> bool:
        return self.w_acc_max > 0


@dataclass(frozen=True)
class IterationRecord:
    iter: int
    compliance: float
    volume: float
    support_volume: float
    secluded_volume: float
    w_acc: float
    delta: float

    @property
    def secluded_ratio(self) -> float:
        return self.secluded_volume / self.support_volume if self.support_volume > 0 else 0.0


HISTORY_COLUMNS = [f.name for f in fields(IterationRecord)]


def format_history_csv(history) -> str:
    lines = [",".join(HISTORY_COLUMNS)]
    for r in history:
        vals = asdict(r)
        lines.append(",".join(str(vals["iter"]) if c == "iter" else f"{vals[c]:.9g}" for c in HISTORY_COLUMNS))
    return "\n".join(lines) + "\n"


@dataclass
class Evaluation:
    """Analysis of one design: projected density, supports, FEA and IMF."""

    rho_tilde: np.ndarray
    near_net: NearNetShape
    compliance: float
    imf: np.ndarray | None
    secluded: np.ndarray
    support_volume: float
    secluded_volume: float
    displacements: np.ndarray | None = None
    fea_iterations: int = 0

    @property
    def secluded_ratio(self) -> float:
        return self.secluded_volume / self.support_volume if self.support_volume > 0 else 0.0


@dataclass
class OptimizationResult:
    density: ScalarGrid
    physical_density: ScalarGrid
    history: list
    final: Evaluation
    epsilon: float
    status: str = "ok"

    @property
    def compliance(self) -> float:
        return self.final.compliance

    @property
    def secluded_ratio(self) -> float:
        return self.final.secluded_ratio

    @property
    def manufacturable(self) -> bool:
        return self.final.secluded_ratio <= self.epsilon

    def imf_field(self) -> IMFField | None:
        if self.final.imf is None:
            return None
        return IMFField(ScalarGrid(self.density.dims, self.final.imf))


# --- pointwise operations ----------------------------------------------------

def heaviside(rho, beta: float):
    """Smooth projection ``1 - exp(-beta*rho) + rho*exp(-beta)``; exact at 0 and 1."""
    rho = np.asarray(rho, float)
    e = math.exp(-beta)
    out = -np.expm1(-beta * rho) + rho * e
    # pin the endpoints against round-off
    out = np.where(rho == 1.0, 1.0, out)
    return np.clip(out, 0.0, 1.0)


def heaviside_derivative(rho, beta: float):
    return beta * np.exp(-beta * np.asarray(rho, float)) + math.exp(-beta)


def heaviside_inverse(value: float, beta: float) -> float:
    """Density whose projection equals ``value`` (the projection is increasing)."""
    from scipy.optimize import brentq
    if value <= 0:
        return 0.0
    if value >= 1:
        return 1.0
    return float(brentq(lambda r: float(heaviside(r, beta)) - value, 0.0, 1.0, xtol=1e-12))


def heaviside_project(rho: ScalarGrid, beta: float) -> ScalarGrid:
    if beta < 0:
        raise ValueError("beta must be non-negative")
    return ScalarGrid(rho.dims, heaviside(rho.values, beta))


def accessibility_filter(imf, near_net, layer_w) -> ScalarGrid:
    """``-L_k**q * IMF`` on the near-net voxels, 0 elsewhere."""
    f = imf.values.values if isinstance(imf, IMFField) else getattr(imf, "values", imf)
    n = near_net.indicator.values if isinstance(near_net, NearNetShape) else getattr(near_net, "values", near_net)
    vals = np.where(np.asarray(n) > 0, -np.asarray(layer_w) * np.asarray(f), 0.0)
    dims = imf.values.dims if isinstance(imf, IMFField) else getattr(imf, "dims", None)
    return ScalarGrid(dims, vals) if dims is not None else vals


def blend_sensitivity(s_phi, s_imf, w_acc: float):
    if not 0 <= w_acc < 1:
        raise ValueError(f"w_acc must lie in [0, 1), got {w_acc}")
    a = getattr(s_phi, "values", s_phi)
    b = getattr(s_imf, "values", s_imf)
    out = (1 - w_acc) * a + w_acc * b
    return ScalarGrid(s_phi.dims, out) if isinstance(s_phi, ScalarGrid) else out


def seclusion_penalty(rho, sensitivity, secluded, layer_w):
    """Raise density by 0.5 (capped at 1) and floor sensitivity at ``-L`` on secluded voxels."""
    r = getattr(rho, "values", rho)
    s = getattr(sensitivity, "values", sensitivity)
    g = np.asarray(getattr(secluded, "values", secluded)) > 0
    lw = np.broadcast_to(np.asarray(layer_w, float), r.shape)
    r_new = np.where(g, np.minimum(r + 0.5, 1.0), r)
    s_new = np.where(g, np.minimum(-lw, s), s)
    if isinstance(rho, ScalarGrid):
        return ScalarGrid(rho.dims, r_new), ScalarGrid(rho.dims, s_new)
    return r_new, s_new


def oc_update(rho, sensitivity, volume_fraction: float, cfg: OptimizationConfig | None = None,
              free=None, floor=None):
    """Optimality-criteria update with a bisected Lagrange multiplier.

    ``free`` marks the design voxels; others keep their value. The free-voxel
    mean density is driven to ``volume_fraction``. ``floor`` is an optional
    per-voxel lower bound applied on top of the move limit.
    """
    cfg = cfg or OptimizationConfig(volume_fraction=volume_fraction)
    r = np.asarray(getattr(rho, "values", rho), float)
    s = np.asarray(getattr(sensitivity, "values", sensitivity), float)
    free = np.ones(r.shape, bool) if free is None else np.asarray(getattr(free, "values", free)) > 0
    rf = r[free]
    sf = np.minimum(s[free], SENSITIVITY_CEILING)
    target = volume_fraction * rf.size
    lo_b = np.maximum(0.0, rf - cfg.move_limit)
    hi_b = np.minimum(1.0, rf + cfg.move_limit)
    if floor is not None:
        fl = np.broadcast_to(np.asarray(getattr(floor, "values", floor), float), r.shape)[free]
        floored = np.minimum(np.maximum(lo_b, fl), hi_b)
        # a floor that leaves no room for the volume target is dropped
        if floored.sum() <= target:
            lo_b = floored
        else:
            log.debug("density floor exceeds the volume target; ignored this iteration")
    base = rf * (-sf) ** cfg.oc_damping

    def update(log_lam):
        return np.clip(base * math.exp(-cfg.oc_damping * log_lam), lo_b, hi_b)

    a, b = -80.0, 80.0
    va, vb = update(a).sum(), update(b).sum()
    if not (va >= target >= vb):
        raise OptimizationError(
            f"OC bisection cannot bracket the volume target {target:.6g}: "
            f"volume range [{vb:.6g}, {va:.6g}] under the move limit")
    new = None
    for _ in range(64):
        m = 0.5 * (a + b)
        new = update(m)
        v = new.sum()
        if abs(v - target) <= 1e-7 * rf.size:
            break
        if v > target:
            a = m
        else:
            b = m
    else:
        if abs(new.sum() - target) > 1e-4 * rf.size:
            raise OptimizationError(
                f"OC bisection failed after 64 halvings: multiplier bracket "
                f"[{math.exp(a):.6g}, {math.exp(b):.6g}], volume {new.sum():.6g} vs target {target:.6g}")
    out = r.copy()
    out[free] = new
    return ScalarGrid(rho.dims, out) if isinstance(rho, ScalarGrid) else out


def w_acc_schedule(iteration: int, cfg: OptimizationConfig) -> float:
    """Weight in effect after ``iteration`` completed iterations."""
    if not cfg.constrained:
        return 0.0
    steps = max(0, iteration - cfg.i_acc)
    return min(cfg.w_acc_max, steps * cfg.w_acc_step)


# --- the loop ----------------------------------------------------------------

class TopologyOptimizer:
    """Runs the accessibility-constrained loop for one problem."""

    def __init__(self, problem, cfg: OptimizationConfig | None = None, solver: str = "auto"):
        self.problem = problem
        self.cfg = cfg or problem.config
        errs = self.cfg.validate()
        if errs:
            raise OptimizationError("; ".join(errs))
        self.dims = problem.dims
        self.two_d = self.dims.nz == 1
        self.free = problem.free_mask()
        self.solid = problem.solid_mask()
        self.model = ElasticityModel(self.dims, problem.bc, problem.material, solver=solver,
                                     tol=problem.fea_tol)
        self.layer_w = layer_weight_field(self.dims, problem.build, self.cfg.q)
        self.obstacle_base = problem.setup.platform.values + problem.setup.fixture.values
        self.vol_domain = float(self.free.sum() * self.dims.voxel_volume)

    def _e(self, a):
        return a[:, :, 0] if self.two_d else a

    def evaluate(self, rho: np.ndarray, with_imf: bool = True) -> tuple[Evaluation, np.ndarray]:
        """Analyse a design; returns the evaluation and the raw compliance gradient w.r.t. rho."""
        cfg = self.cfg
        rt = heaviside(rho, cfg.beta)
        rt_grid = ScalarGrid(self.dims, rt)
        nn = generate_supports(rt_grid, self.problem.build, self.problem.setup.platform)
        res = self.model.solve(self._e(rt))
        dc_t = self.model.compliance_gradient(self._e(rt), res).reshape(self.dims.shape)
        dc = dc_t * heaviside_derivative(rho, cfg.beta)
        sup = nn.supports.values > 0
        imf = None
        gamma = np.zeros(self.dims.shape, bool)
        if with_imf:
            obstacle = rt + self.obstacle_base
            if cfg.supports_as_obstacle:
                obstacle = obstacle + sup
            obstacle = np.minimum(obstacle, 1.0)
            imf, _ = imf_overall_from_obstacle(obstacle, self.problem.setup.tools, threads=cfg.threads)
            gamma = sup & (imf > cfg.lam)
        vv = self.dims.voxel_volume
        ev = Evaluation(rt, nn, res.compliance, imf, gamma, float(sup.sum() * vv), float(gamma.sum() * vv),
                        res.displacements, res.iterations)
        return ev, dc

    def normalized_sensitivity(self, rho, dc) -> np.ndarray:
        filt = sensitivity_filter(self._e(rho), self._e(dc), self.cfg.filter_radius).reshape(self.dims.shape)
        filt = np.where(self.free, filt, 0.0)
        m = np.abs(filt).max(initial=0)
        return filt / m if m > 0 else filt

    def initial_density(self) -> np.ndarray:
        rho = np.zeros(self.dims.shape)
        rho[self.free] = self.cfg.volume_fraction
        rho[self.solid] = 1.0
        return rho

    def run(self, callback: Callable | None = None, rho0: np.ndarray | None = None) -> OptimizationResult:
        cfg = self.cfg
        rho = self.initial_density() if rho0 is None else np.array(rho0, float)
        delta_tol = cfg.delta_frac
        history = []
        w_acc = 0.0
        it = 0
        delta = math.inf
        # voxels found secluded after i_rho may not drop back below the part threshold
        held = np.zeros(self.dims.shape, bool)
        keep = min(1.0, heaviside_inverse(self.problem.build.density_threshold, cfg.beta) + HOLD_MARGIN)
        while True:
            ev, dc = self.evaluate(rho, with_imf=True)
            if it > 0 and self._may_stop(it, ev, delta <= delta_tol):
                break
            if it >= cfg.max_iter:
                break
            s_phi = self.normalized_sensitivity(rho, dc)
            s = s_phi
            penalize = cfg.constrained and cfg.seclusion_penalty and it + 1 > cfg.i_rho
            if cfg.constrained and w_acc > 0:
                s_imf = accessibility_filter(ev.imf, ev.near_net.indicator.values, self.layer_w)
                s = blend_sensitivity(s_phi, s_imf, w_acc)
            if penalize:
                held |= ev.secluded & self.free
                _, s = seclusion_penalty(rho, s, ev.secluded, self.layer_w)
            new = oc_update(rho, s, cfg.volume_fraction, cfg, self.free, floor=np.where(held, keep, 0.0))
            volume = float(new[self.free].sum() * self.dims.voxel_volume)
            if penalize:
                new, _ = seclusion_penalty(new, s, ev.secluded & self.free, self.layer_w)
            # largest per-voxel density change; the stop threshold is a fraction of full density
            delta = float(np.abs(new - rho)[self.free].max(initial=0.0))
            rec = IterationRecord(it, ev.compliance, volume, ev.support_volume, ev.secluded_volume, w_acc, delta)
            history.append(rec)
            log.info("it %3d  c=%.6g  V_S=%.4g  V_G=%.4g  w=%.2f  d=%.4g", it, ev.compliance,
                     ev.support_volume, ev.secluded_volume, w_acc, delta)
            if callback is not None:
                callback(rec, new)
            rho = new
            it += 1
            w_acc = w_acc_schedule(it, cfg)
        final = ev
        status = "ok"
        if final.secluded_ratio > cfg.epsilon:
            status = "non-manufacturable"
            if cfg.constrained:
                warnings.warn(f"secluded support ratio {final.secluded_ratio:.4g} exceeds epsilon {cfg.epsilon:g}",
                              ManufacturabilityWarning, stacklevel=2)
        return OptimizationResult(ScalarGrid(self.dims, rho), ScalarGrid(self.dims, final.rho_tilde),
                                  history, final, cfg.epsilon, status)

    def _may_stop(self, it: int, ev: Evaluation, converged: bool) -> bool:
        """Unconstrained runs stop on convergence; constrained runs also need a clean design.

        Once the seclusion penalty phase has started, the first clean design ends
        the run, since that phase exists only to remove the last secluded supports.
        """
        cfg = self.cfg
        if not cfg.constrained:
            return converged
        if w_acc_schedule(it, cfg) < cfg.w_acc_max or ev.secluded_ratio > cfg.epsilon:
            return False
        return converged or (cfg.seclusion_penalty and it > cfg.i_rho)


def optimize(problem, cfg: OptimizationConfig | None = None, callback=None, solver: str = "auto"):
    """Run the loop and return an :class:`OptimizationResult`."""
    result = TopologyOptimizer(problem, cfg, solver=solver).run(callback)
    return result


__all__ = [
    "Evaluation",
    "HISTORY_COLUMNS",
    "IterationRecord",
    "ManufacturabilityWarning",
    "OptimizationConfig",
    "OptimizationError",
    "OptimizationResult",
    "TopologyOptimizer",
    "accessibility_filter",
    "blend_sensitivity",
    "format_history_csv",
    "heaviside",
    "heaviside_project",
    "oc_update",
    "optimize",
    "seclusion_penalty",
    "w_acc_schedule",
]
