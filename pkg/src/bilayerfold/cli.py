"""Command line entry points: run, sweep-epsilon, verify.

Exit codes: 0 success, 1 configuration error, 2 solver failure (including a
failed verification).
"""
from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .io import ConfigError, parse_config, serialize_config, write_diagnostics, write_snapshot
from .simulation import SCENARIOS, SimulationError, builtin_scenario, run, sweep_epsilon

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 1, 2


def _j_range(text):
    try:
        lo, hi = (int(v) for v in text.split(".."))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected A..B, got {text!r}")
    if hi < lo:
        raise argparse.ArgumentTypeError("empty range")
    return list(range(lo, hi + 1))


def build_parser():
    p = argparse.ArgumentParser(prog="bilayerfold",
                                description="Thermally actuated bilayer plate simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a built-in scenario or a scenario file")
    src = r.add_mutually_exclusive_group(required=True)
    src.add_argument("--scenario", choices=SCENARIOS)
    src.add_argument("--config", type=Path)
    r.add_argument("--refine", type=int)
    r.add_argument("--tau", type=float)
    r.add_argument("--epsilon", type=float)
    r.add_argument("--tmax", type=float)
    r.add_argument("--out", type=Path, default=Path("output"))

    s = sub.add_parser("sweep-epsilon", help="switch cut heights for eps = 4e-j")
    s.add_argument("--scenario", choices=["switch"], default="switch")
    s.add_argument("--j-range", type=_j_range, default=_j_range("4..9"))
    s.add_argument("--refine", type=int)
    s.add_argument("--tau", type=float)
    s.add_argument("--tmax", type=float)
    s.add_argument("--out", type=Path)

    v = sub.add_parser("verify", help="heat convergence and cylinder oracles")
    v.add_argument("--quick", action="store_true", help="coarser heat meshes")
    return p


def _overrides(args):
    out = {}
    if args.tau is not None:
        out["tau"] = args.tau
    if getattr(args, "epsilon", None) is not None:
        out["epsilon"] = args.epsilon
    if args.tmax is not None:
        out["t_max"] = args.tmax
    return out


def cmd_run(args):
    if args.scenario:
        cfg = builtin_scenario(args.scenario, args.refine)
    else:
        cfg = parse_config(args.config)
        if args.refine is not None:
            cfg = replace(cfg, refinements=args.refine)
    cfg = replace(cfg, **_overrides(args))
    try:
        cfg.validate()
    except ValueError as exc:
        raise ConfigError([str(exc)])
    out = args.out
    out.mkdir(parents=True, exist_ok=True)
    (out / "scenario.cfg").write_text(serialize_config(cfg))
    holder = {}

    def on_snapshot(sn):
        write_snapshot(sn.y, sn.s, sn.theta, holder["mesh"], sn.step, out)

    from .simulation import build_mesh
    holder["mesh"] = build_mesh(cfg)
    res = run(cfg, on_snapshot=on_snapshot)
    write_diagnostics(res.diagnostics, out / "diagnostics.csv")
    d = res.diagnostics
    print(f"{cfg.name}: {res.steps} steps to t = {res.time:.6g} s"
          f"{' (stationary)' if res.stationary else ''}")
    print(f"  max isometry defect {d.column('defect').max():.3e}, "
          f"max penetration {d.column('penetration').max():.3e} mm")
    print(f"  {len(res.snapshots)} snapshots and diagnostics.csv written to {out}")
    return EXIT_OK


def cmd_sweep(args):
    over = _overrides(args)

    def show(row):
        print(f"j = {row.j}  eps = {row.epsilon:.1e}  steps = {row.steps:7d}  "
              f"t = {row.time:9.4f} s  tip z = {row.tip_height:.6f}  "
              f"max penetration = {row.max_penetration:.3e}", flush=True)

    rows = sweep_epsilon(args.j_range, args.refine, progress=show, **over)
    tips = [r.tip_height for r in rows]
    monotone = all(a >= b for a, b in zip(tips, tips[1:]))
    print("tip heights " + ("decrease" if monotone else "are NOT monotone")
          + " as eps decreases")
    if args.out:
        args.out.mkdir(parents=True, exist_ok=True)
        for r in rows:
            np.savetxt(args.out / f"cut_j{r.j}.csv", r.cut, delimiter=",",
                       header="y1,y2,y3", comments="", fmt="%.17g")
    return EXIT_OK if monotone else EXIT_SOLVER


def cmd_verify(args):
    from .verification import cylinder_oracle, heat_space_orders
    refs = (2, 3, 4, 5) if args.quick else (3, 4, 5, 6)
    hs, errs, orders = heat_space_orders(refs)
    print("heat: h, L2 error")
    for h, e in zip(hs, errs):
        print(f"  {h:.5f}  {e:.4e}")
    print("heat: observed orders " + " ".join(f"{o:.3f}" for o in orders))
    heat_ok = orders.min() >= 1.9
    cyl = cylinder_oracle()
    print(f"cylinder: fitted curvature {cyl.curvature:.5f} vs {cyl.kappa} "
          f"(error {100 * cyl.relative_error:.2f}%), {cyl.steps} steps, "
          f"isometry defect {cyl.defect:.3e}")
    cyl_ok = cyl.stationary and cyl.relative_error <= 0.05
    print("verify: " + ("PASS" if heat_ok and cyl_ok else "FAIL"))
    return EXIT_OK if heat_ok and cyl_ok else EXIT_SOLVER


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {"run": cmd_run, "sweep-epsilon": cmd_sweep, "verify": cmd_verify}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print("configuration error:", file=sys.stderr)
        for e in exc.errors:
            print(f"  {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (KeyError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SimulationError, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
