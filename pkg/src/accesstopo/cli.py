"""Command-line entry point.

Exit codes: 0 success, 2 usage or validation error, 3 numerical or planning
failure, 4 the optimized design still has secluded supports above epsilon.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from .accessibility import SetupError, imf_overall, secluded_supports
from .config import load_problem
from .fea import FEAError
from .grid import ScalarGrid
from .gridio import GridFormatError, read_grid, write_grid, write_pgm, write_vtk
from .planner import PlannerError, plan_removal, save_plan
from .problem import ProblemError
from .supports import SupportError, generate_supports
from .topopt import (ManufacturabilityWarning, OptimizationError, TopologyOptimizer,
                     format_history_csv)

EXIT_OK, EXIT_USAGE, EXIT_NUMERIC, EXIT_SECLUDED = 0, 2, 3, 4

log = logging.getLogger("accesstopo")


class UsageError(Exception):
    pass


def _export(g: ScalarGrid, stem: Path, formats, name: str = "values"):
    written = []
    for fmt in formats:
        if fmt == "grid":
            p = stem.with_suffix(".grid")
            write_grid(p, g)
        elif fmt == "vtk":
            p = stem.with_suffix(".vtk")
            write_vtk(p, g, name)
        elif fmt == "pgm":
            if g.dims.nz != 1:
                continue
            p = stem.with_suffix(".pgm")
            write_pgm(p, g)
        else:
            raise UsageError(f"unknown export format {fmt!r}")
        written.append(p)
    return written


def _out_dir(args, default: str) -> Path:
    d = Path(args.out or default)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _shape_and_problem(inputs):
    """``[SHAPE] CONFIG``: an explicit shape grid or the config's ``[regions] part``."""
    if len(inputs) == 1:
        prob = load_problem(inputs[0])
        if prob.part is None:
            raise UsageError(f"{inputs[0]}: no shape given and the config has no [regions] part")
        return prob.part, prob
    if len(inputs) != 2:
        raise UsageError("expected [SHAPE] CONFIG")
    shape = read_grid(inputs[0])
    prob = load_problem(inputs[1])
    if shape.dims.shape != prob.dims.shape:
        raise UsageError(f"{inputs[0]}: grid {shape.dims.shape} does not match the config grid {prob.dims.shape}")
    if shape.values.min() < 0 or shape.values.max() > 1:
        raise UsageError(f"{inputs[0]}: shape values must lie in [0, 1]")
    return shape, prob


def cmd_optimize(args) -> int:
    prob = load_problem(args.config)
    cfg = prob.config
    cfg.threads = args.threads
    if args.max_iter is not None:
        cfg.max_iter = args.max_iter
    if args.unconstrained:
        cfg.w_acc_max = 0.0
        cfg.seclusion_penalty = False
    errs = cfg.validate()
    if errs:
        raise ProblemError(errs)
    out = _out_dir(args, prob.name)
    every = prob.output.get("snapshot_every", 0)
    formats = prob.output["formats"]

    def snapshot(rec, rho):
        if every and (rec.iter + 1) % every == 0:
            (out / "snapshots").mkdir(exist_ok=True)
            write_grid(out / "snapshots" / f"density_{rec.iter + 1:04d}.grid", ScalarGrid(prob.dims, rho))

    opt = TopologyOptimizer(prob, cfg, solver=prob.output.get("solver", "auto"))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ManufacturabilityWarning)
        res = opt.run(callback=snapshot)
    (out / "history.csv").write_text(format_history_csv(res.history))
    _export(res.density, out / "final_density", formats, "density")
    _export(res.physical_density, out / "final_physical_density", formats, "density")
    _export(res.final.near_net.supports, out / "final_supports", formats, "supports")
    _export(ScalarGrid(prob.dims, res.final.secluded.astype(float)), out / "final_secluded", formats, "secluded")
    summary = {
        "iterations": len(res.history),
        "compliance": res.compliance,
        "support_volume": res.final.support_volume,
        "secluded_volume": res.final.secluded_volume,
        "secluded_ratio": res.secluded_ratio,
        "epsilon": cfg.epsilon,
        "status": res.status,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    print(f"{prob.name}: {len(res.history)} iterations, compliance {res.compliance:.9g}, "
          f"V_S {res.final.support_volume:g}, V_Gamma {res.final.secluded_volume:g}, "
          f"ratio {res.secluded_ratio:.4g} (epsilon {cfg.epsilon:g}) -> {out}")
    if not res.manufacturable:
        print(f"warning: secluded support ratio {res.secluded_ratio:.4g} exceeds epsilon {cfg.epsilon:g}",
              file=sys.stderr)
        return EXIT_SECLUDED
    return EXIT_OK


def cmd_analyze_imf(args) -> int:
    shape, prob = _shape_and_problem(args.inputs)
    nn = generate_supports(shape, prob.build, prob.setup.platform)
    extra = nn.supports if args.supports_as_obstacle else None
    field = imf_overall(shape, prob.setup, provenance=True, extra_obstacle=extra, threads=args.threads)
    sec = secluded_supports(field, nn.supports, prob.config.lam)
    out = _out_dir(args, "imf")
    formats = prob.output["formats"]
    _export(field.values, out / "imf", formats, "imf")
    _export(sec.grid, out / "secluded", formats, "secluded")
    np.save(out / "imf_provenance.npy", field.provenance)
    v = field.values.values
    print(f"IMF: min {v.min():.6g}, max {v.max():.6g}, mean {v.mean():.6g}; "
          f"supports {sec.support_volume:g}, secluded {sec.volume:g} (ratio {sec.ratio:.4g}) -> {out}")
    return EXIT_OK


def cmd_gen_supports(args) -> int:
    shape, prob = _shape_and_problem(args.inputs)
    nn = generate_supports(shape, prob.build, prob.setup.platform)
    out = _out_dir(args, "supports")
    formats = prob.output["formats"]
    _export(nn.supports, out / "supports", formats, "supports")
    _export(nn.indicator, out / "near_net", formats, "near_net")
    vv = prob.dims.voxel_volume
    print(f"supports: {nn.supports.values.sum() * vv:g} volume, near-net {nn.indicator.values.sum() * vv:g} -> {out}")
    return EXIT_OK


def cmd_plan_removal(args) -> int:
    shape, prob = _shape_and_problem(args.inputs)
    nn = generate_supports(shape, prob.build, prob.setup.platform)
    if args.supports:
        from .supports import NearNetShape
        sup = read_grid(args.supports)
        if sup.dims.shape != prob.dims.shape:
            raise UsageError(f"{args.supports}: grid does not match the config grid")
        nn = NearNetShape(shape, sup, prob.setup.platform, nn.layer_axis, nn.layer_sign)
    out = _out_dir(args, "plan")
    try:
        plan = plan_removal(nn, prob.setup, prob.planner, threads=args.threads)
    except PlannerError as exc:
        if exc.stuck is not None:
            write_grid(out / "stuck_supports.grid", exc.stuck)
        raise
    save_plan(plan, out)
    print(plan.summary())
    print(f"plan written to {out}")
    return EXIT_OK


def cmd_export(args) -> int:
    g = read_grid(args.input)
    if args.format == "pgm" and g.dims.nz != 1:
        raise UsageError("pgm export needs a 2D grid")
    out = Path(args.out) if args.out else Path(args.input).with_suffix("")
    out.parent.mkdir(parents=True, exist_ok=True)
    for p in _export(g, out.with_suffix(""), [args.format], args.name):
        print(p)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="accesstopo", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0, help="more logging (-vv for debug)")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out=True):
        if out:
            p.add_argument("--out", help="output directory")
        p.add_argument("--threads", type=int, default=1, help="bound on internal parallelism")

    p = sub.add_parser("optimize", help="run the accessibility-constrained optimization")
    p.add_argument("config")
    p.add_argument("--max-iter", type=int, help="override optimization.max_iter")
    p.add_argument("--unconstrained", action="store_true", help="w_acc_max = 0 and no seclusion penalty")
    common(p)
    p.set_defaults(func=cmd_optimize)

    p = sub.add_parser("analyze-imf", help="inaccessibility field of a shape")
    p.add_argument("inputs", nargs="+", metavar="[SHAPE] CONFIG")
    p.add_argument("--supports-as-obstacle", action="store_true")
    common(p)
    p.set_defaults(func=cmd_analyze_imf)

    p = sub.add_parser("gen-supports", help="generate support structures for a shape")
    p.add_argument("inputs", nargs="+", metavar="[SHAPE] CONFIG")
    common(p)
    p.set_defaults(func=cmd_gen_supports)

    p = sub.add_parser("plan-removal", help="greedy support-removal plan")
    p.add_argument("inputs", nargs="+", metavar="[SHAPE] CONFIG")
    p.add_argument("--supports", help="use this support grid instead of generating one")
    common(p)
    p.set_defaults(func=cmd_plan_removal)

    p = sub.add_parser("export", help="convert a .grid file to VTK, PGM or .grid")
    p.add_argument("input")
    p.add_argument("--format", choices=["vtk", "pgm", "grid"], default="vtk")
    p.add_argument("--name", default="values", help="field name for VTK output")
    p.add_argument("--out", help="output path (suffix set by format)")
    p.set_defaults(func=cmd_export)
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0) and EXIT_USAGE
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "threads", 1) < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except ProblemError as exc:
        for e in exc.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (UsageError, GridFormatError, SetupError, SupportError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FEAError, OptimizationError, PlannerError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"failed: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
