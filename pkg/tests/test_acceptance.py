"""Acceptance suite: one marked group of tests per criterion.

Run ``pytest tests/test_acceptance.py -v``; the terminal summary prints one
PASS/FAIL line per criterion with the measured figures.
"""
import dataclasses
import json
import math
import time
import warnings
from pathlib import Path

import numpy as np
import pytest
from scipy import ndimage

from accesstopo.accessibility import (imf_from_obstacle, imf_overall_from_obstacle, imf_rotated_tool,
                                      orient_tool, placement_sweep)
from accesstopo.config import example_path, load_problem
from accesstopo.convolution import correlate_bruteforce, correlate_fft
from accesstopo.fea import BoundaryConditions, ElasticityModel, MaterialModel
from accesstopo.grid import GridDims, Rotation, ScalarGrid
from accesstopo.planner import check_connectivity, plan_removal, touching, weighted_obstacle
from accesstopo.problem import cantilever_2d
from accesstopo.supports import BuildSpec, generate_supports, supported_violations
from accesstopo.topopt import heaviside, optimize

from helpers import lattice_dims, random_tool

GOLDEN = Path(__file__).parent / "data" / "golden_cantilever_60x30.json"
EXAMPLES = ["cantilever2d.cfg", "cantilever2d_two_sided.cfg", "bracket3d.cfg"]


def criterion(n, title):
    return pytest.mark.criterion(n, title)


# --- 1: IMF core oracle ------------------------------------------------------

def _random_rotation(rng, ndim):
    if ndim == 2:
        return Rotation.planar(rng.uniform(0, 2 * math.pi))
    return Rotation.axis_angle(rng.normal(size=3), rng.uniform(0, 2 * math.pi))


@criterion(1, "IMF core matches brute force on 100 random pairs up to 32^3 in < 60 s")
def test_imf_oracle_equivalence(note):
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    worst_corr = worst_imf = 0.0
    for k in range(100):
        ndim = 2 if k % 5 == 4 else 3
        # every tenth obstacle is a full 32^3 (or 32^2) grid
        n = [32] * 3 if k % 10 == 0 else [int(v) for v in rng.integers(2, 33, 3)]
        m = [int(v) for v in rng.integers(1, 8, 3)]
        if ndim == 2:
            n[2] = m[2] = 1
        h = float(rng.choice([0.5, 1.0]))
        obs = ScalarGrid(GridDims(*n, spacing=h), (rng.random(n) < rng.uniform(0.1, 0.6)).astype(float))
        kern = (rng.random(m) < 0.5).astype(float)
        o = [int(rng.integers(0, s)) for s in m]
        kern[tuple(o)] = 1
        ker = ScalarGrid(lattice_dims(tuple(m), o, h), kern)
        a, b = correlate_fft(obs, ker), correlate_bruteforce(obs, ker)
        err = np.max(np.abs(a.field.values - b.field.values)) / a.tool_volume
        worst_corr = max(worst_corr, err)
        assert err <= 1e-6, k

        tool = random_tool(rng, size=int(rng.integers(3, 8)), ndim=ndim, n_sharp=int(rng.integers(1, 4)))
        r = _random_rotation(rng, ndim)
        obs1 = ScalarGrid(GridDims(*n), obs.values)
        fast = imf_rotated_tool(obs1, r, tool).values
        slow = placement_sweep(obs1.values, orient_tool(tool.indicator, tool.sharp_points, r))
        err = np.max(np.abs(fast - slow))
        worst_imf = max(worst_imf, err)
        assert err <= 1e-6, k
    elapsed = time.perf_counter() - t0
    note(f"max correlation error {worst_corr:.2g} vol[T], max IMF error {worst_imf:.2g}, {elapsed:.1f} s")
    assert elapsed < 60


# --- 2: adjoint gradient -----------------------------------------------------

@criterion(2, "compliance sensitivity matches central differences on a 20x10 cantilever")
def test_gradient_check(note):
    rng = np.random.default_rng(20)
    nx, ny = 20, 10
    d = GridDims(nx, ny)
    fixed = [((0, j), a) for j in range(ny + 1) for a in (0, 1)]
    bc = BoundaryConditions(fixed, [((nx, ny // 2), 1, -1.0)])
    m = ElasticityModel(d, bc, MaterialModel(), solver="direct")
    rho = rng.uniform(0.2, 1.0, (nx, ny))
    grad = m.compliance_gradient(rho, m.solve(rho))
    h = 1e-4
    worst = 0.0
    for e in rng.choice(nx * ny, 24, replace=False):
        i, j = divmod(int(e), ny)
        rp, rm = rho.copy(), rho.copy()
        rp[i, j] += h
        rm[i, j] -= h
        fd = (m.solve(rp).compliance - m.solve(rm).compliance) / (2 * h)
        worst = max(worst, abs(fd - grad[i, j]) / abs(fd))
    note(f"24 elements, max relative error {worst:.2g}")
    assert worst <= 1e-3


# --- 3: support invariant ----------------------------------------------------

def _check_supports(part, spec, platform=None):
    s = generate_supports(part, spec, platform).supports
    assert not supported_violations(part, s, spec, platform).any()
    spec45 = BuildSpec(spec.b, 45.0, spec.density_threshold)
    s45 = generate_supports(part, spec45, platform).supports
    assert not supported_violations(part, s45, spec45, platform).any()
    spec90 = BuildSpec(spec.b, 90.0, spec.density_threshold)
    s90 = generate_supports(part, spec90, platform).supports
    assert np.all(s45.values <= s90.values)
    return s


@criterion(3, "generated supports satisfy the overhang rule on shipped examples and 50 blobs")
@pytest.mark.parametrize("name", EXAMPLES)
def test_support_invariant_examples(name):
    p = load_problem(example_path(name))
    for shape in (p.design, p.part):
        if shape is not None:
            _check_supports(shape, p.build, p.setup.platform)


@criterion(3, "generated supports satisfy the overhang rule on shipped examples and 50 blobs")
def test_support_invariant_blobs(note):
    rng = np.random.default_rng(3)
    total = 0
    for k in range(50):
        shape = (24, 20, 1) if k % 5 == 0 else (14, 12, 10)
        a = ndimage.gaussian_filter(rng.random(shape), (1.5, 1.5, 1.5 if shape[2] > 1 else 0))
        part = ScalarGrid(GridDims(*shape), (a > np.quantile(a, 0.7)).astype(float))
        ndim = 2 if shape[2] == 1 else 3
        b = np.zeros(ndim)
        b[int(rng.integers(ndim))] = rng.choice([-1.0, 1.0])
        total += _check_supports(part, BuildSpec(tuple(b), 90.0)).count()
    note(f"50 blobs, {total} support voxels checked")


# --- 4: Heaviside endpoints --------------------------------------------------

@criterion(4, "Heaviside projection is 0 at 0 and 1 at 1")
@pytest.mark.parametrize("beta", [0.5, 1.0, 4.0])
def test_heaviside_endpoints(beta):
    assert abs(heaviside(0.0, beta)) <= 1e-12
    assert abs(heaviside(1.0, beta) - 1.0) <= 1e-12
    v = heaviside(np.array([0.0, 1.0]), beta)
    assert np.allclose(v, [0.0, 1.0], rtol=0, atol=1e-12)


# --- 5: golden regression ----------------------------------------------------

@criterion(5, "unconstrained loop reproduces the stored SIMP cantilever history")
def test_golden_history(note):
    doc = json.loads(GOLDEN.read_text())
    prob = cantilever_2d(**doc["case"])
    res = optimize(prob, prob.config, solver=doc["solver"])
    ref = doc["history"]
    assert len(res.history) == len(ref)
    worst = 0.0
    for rec, r in zip(res.history, ref):
        assert rec.iter == r["iter"]
        worst = max(worst, abs(rec.compliance - r["compliance"]) / r["compliance"])
        assert rec.volume == pytest.approx(r["volume"], rel=1e-9)
    note(f"{len(ref)} iterations, max relative compliance deviation {worst:.2g}")
    assert worst <= 1e-9


# --- 6 and 7: cantilever reproduction ----------------------------------------

@pytest.fixture(scope="module")
def cantilever_runs():
    out = {}
    p = load_problem(example_path("cantilever2d.cfg"))
    unc = dataclasses.replace(p.config, w_acc_max=0.0, seclusion_penalty=False)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        t0 = time.perf_counter()
        out["unc"] = optimize(p, unc)
        out["con"] = optimize(p, p.config)
        out["time"] = time.perf_counter() - t0
    return out


@criterion(6, "2D cantilever: unconstrained ratio in [0.4, 0.8], constrained ratio <= eps, "
              "compliance ratio in [1.1, 2.2], < 10 min")
def test_cantilever_constrained_vs_unconstrained(cantilever_runs, note):
    unc, con = cantilever_runs["unc"], cantilever_runs["con"]
    ratio = con.compliance / unc.compliance
    note(f"unconstrained V_G/V_S {unc.secluded_ratio:.3f}, constrained {con.secluded_ratio:.2g}, "
         f"compliance ratio {ratio:.2f}, {cantilever_runs['time']:.0f} s")
    assert 0.4 <= unc.secluded_ratio <= 0.8
    assert con.secluded_ratio <= con.epsilon
    assert con.manufacturable
    assert 1.1 <= ratio <= 2.2
    assert cantilever_runs["time"] < 600


@criterion(7, "more orientations never raise the IMF; two-sided compliance within 5% of one-sided")
def test_orientation_monotone_pointwise(note):
    rng = np.random.default_rng(7)
    for k in range(10):
        ndim = 2 if k % 2 else 3
        shape = (20, 18, 1) if ndim == 2 else (14, 12, 10)
        obs = (rng.random(shape) < 0.3).astype(float)
        tool = random_tool(rng, size=5, ndim=ndim, n_sharp=2)
        rots = [_random_rotation(rng, ndim) for _ in range(4)]
        prev = None
        for n in range(1, 5):
            tool.orientations = rots[:n]
            tool._oriented.clear()
            cur, _ = imf_overall_from_obstacle(obs, [tool])
            if prev is not None:
                assert np.all(cur <= prev)
            prev = cur
    one = load_problem(example_path("cantilever2d.cfg"))
    two = load_problem(example_path("cantilever2d_two_sided.cfg"))
    f1, _ = imf_overall_from_obstacle(one.setup.platform.values, one.setup.tools)
    f2, _ = imf_overall_from_obstacle(two.setup.platform.values, two.setup.tools)
    assert np.all(f2 <= f1)


@criterion(7, "more orientations never raise the IMF; two-sided compliance within 5% of one-sided")
def test_two_orientations_not_worse(cantilever_runs, note):
    p = load_problem(example_path("cantilever2d_two_sided.cfg"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        two = optimize(p, p.config)
    one = cantilever_runs["con"]
    note(f"compliance two-sided {two.compliance:.4g} vs one-sided {one.compliance:.4g}")
    assert two.manufacturable
    assert two.compliance <= 1.05 * one.compliance


# --- 8: planner safety -------------------------------------------------------

@criterion(8, "bracket removal plan: steps re-verified by sweep, connectivity, part intact")
def test_planner_safety(note):
    p = load_problem(example_path("bracket3d.cfg"))
    assert max(p.dims.shape) <= 48
    nn = generate_supports(p.part, p.build, p.setup.platform)
    part = nn.part.values > 0.5
    part_before = nn.part.values.copy()
    plan = plan_removal(nn, p.setup, p.planner)
    cfg = p.planner
    sup = (nn.supports.values > 0) & ~part
    platform = p.setup.platform.values > 0
    assert check_connectivity(part, sup, platform)
    worst = 0.0
    for step in plan.steps:
        rem = step.removed.values > 0
        assert np.all(sup[rem]) and not np.any(part & rem)
        obstacle = weighted_obstacle(part, sup, p.setup, cfg.obstacle_penalty)
        ot = p.setup.tools[step.tool].oriented(step.orientation)
        sweep = placement_sweep(obstacle, ot, query=rem)
        worst = max(worst, float(sweep[rem].max()))
        assert np.all(sweep[rem] <= cfg.tau)
        sup = sup & ~rem
        if touching(sup, part).any():
            assert check_connectivity(part, sup, platform)
    assert np.array_equal(nn.part.values, part_before)
    assert not touching(sup, part).any()
    assert 0 < plan.machined_fraction <= 1
    note(f"{len(plan.steps)} steps, machined fraction {plan.machined_fraction:.3f}, "
         f"max swept IMF {worst:.2g} <= tau {cfg.tau:g}")


# --- 9: timing ---------------------------------------------------------------

@pytest.fixture(scope="module")
def big_part():
    d = GridDims(50, 100, 50)
    rng = np.random.default_rng(9)
    a = ndimage.gaussian_filter(rng.random(d.shape), 2.0)
    return ScalarGrid(d, (a > np.quantile(a, 0.6)).astype(float))


@criterion(9, "50x100x50: IMF <= 5 s per orientation, supports <= 0.5 s, PCG solve <= 120 s")
def test_timing_imf_and_supports(big_part, note):
    tool = load_problem(example_path("bracket3d.cfg")).setup.tools[0]
    worst = 0.0
    for j in range(len(tool.orientations)):
        t0 = time.perf_counter()
        imf_from_obstacle(big_part.values, tool.oriented(j))
        worst = max(worst, time.perf_counter() - t0)
    t0 = time.perf_counter()
    generate_supports(big_part, BuildSpec((0, 0, 1), 90.0))
    t_sup = time.perf_counter() - t0
    note(f"IMF {worst:.2f} s per orientation, supports {t_sup:.3f} s")
    assert worst <= 5.0
    assert t_sup <= 0.5


@criterion(9, "50x100x50: IMF <= 5 s per orientation, supports <= 0.5 s, PCG solve <= 120 s")
def test_timing_fea(big_part, note):
    nx, ny, nz = big_part.dims.shape
    fixed = np.zeros((nx + 1, ny + 1, nz + 1, 3), bool)
    fixed[:, 0] = True
    forces = np.zeros(fixed.shape)
    forces[nx // 2, ny, nz // 2, 2] = -1.0
    m = ElasticityModel(big_part.dims, BoundaryConditions.from_arrays(fixed, forces), MaterialModel(),
                        solver="cg", tol=1e-8)
    t0 = time.perf_counter()
    res = m.solve(np.full(big_part.dims.shape, 0.5))
    elapsed = time.perf_counter() - t0
    note(f"PCG solve {elapsed:.0f} s, {m.ndof} dofs")
    assert np.isfinite(res.compliance) and res.compliance > 0
    assert elapsed <= 120
