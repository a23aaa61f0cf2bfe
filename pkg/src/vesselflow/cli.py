"""Command line: ``vesselflow {run,verify,convergence,timing,profiles}``."""

from __future__ import annotations

import argparse
import logging
import os
import sys

import numpy as np

from . import config as cfgmod
from . import harness, output


def _parser():
    p = argparse.ArgumentParser(prog="vesselflow", description="Non-hydrostatic flow in compliant vessels.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, needs_config=True):
        sp.add_argument("--config", required=needs_config, help="case file")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--mode", choices=cfgmod.MODES, help="override the solver mode")
        sp.add_argument("--threads", type=int, default=1, help="worker threads for numeric kernels")
        sp.add_argument("--seed", type=int, default=0, help="seed for randomized checks")

    common(sub.add_parser("run", help="run a case file"))
    common(sub.add_parser("verify", help="run the built-in oracle suite"), needs_config=False)
    sp = sub.add_parser("convergence", help="mesh refinement study")
    common(sp)
    sp.add_argument("--meshes", required=True,
                    help="semicolon-separated nx,nz,nphi,nt tuples, e.g. '50,25,1,100;100,50,1,100'")
    sp.add_argument("--normalize", action="store_true", help="divide the L2 norm by the total volume")
    sp = sub.add_parser("timing", help="wall time per solver mode")
    common(sp)
    sp.add_argument("--modes", default="full,hydrostatic,direct")
    sp.add_argument("--repeats", type=int, default=3)
    sp = sub.add_parser("profiles", help="section profiles from a checkpoint")
    common(sp)
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--section", type=float, required=True, help="axial arc length of the section")
    return p


def _set_threads(n):
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _load(args):
    cfg = cfgmod.load_config(args.config)
    if args.mode:
        cfg = cfg.with_overrides(numerics__mode=args.mode)
    return cfg


def cmd_run(args):
    cfg = _load(args)
    os.makedirs(args.out, exist_ok=True)
    case = harness.build_case(cfg)
    every = cfg["output"]["checkpoint_every"]

    def on_step(n, grid, state, stats):
        if every and (n + 1) % every == 0:
            output.write_checkpoint(os.path.join(args.out, f"checkpoint_{n + 1:06d}.txt"), grid, state)

    res = harness.run_case(case, on_step=on_step)
    output.write_checkpoint(os.path.join(args.out, "final.txt"), res.grid, res.state)
    output.write_grid(res.grid, os.path.join(args.out, "grid.csv"))
    sec = cfg["output"]["profile_section"]
    if sec is not None:
        output.write_profiles(res.grid, res.state, sec, args.out)
    errs = harness.reference_errors(cfg, res.grid, res.state)
    for k, v in errs.items():
        print(f"error_{k} = {v:.6e}")
    print(f"seconds = {res.seconds:.3f}")
    return 0


def cmd_verify(args):
    from .verify import run_verify

    ok = True
    for r in run_verify(args.seed):
        print(r.line())
        ok &= r.passed
    return 0 if ok else 1


def cmd_convergence(args):
    cfg = _load(args)
    meshes = []
    for item in args.meshes.split(";"):
        vals = [int(v) for v in item.split(",")]
        if len(vals) != 4:
            raise ValueError(f"mesh {item!r}: expected nx,nz,nphi,nt")
        meshes.append(tuple(vals))
    rep = harness.run_convergence(cfg, meshes, normalize=args.normalize)
    print(rep.table())
    return 0


def cmd_timing(args):
    cfg = _load(args)
    rep = harness.run_timing_comparison(cfg, tuple(args.modes.split(",")), args.repeats)
    print(rep.table())
    return 0


def cmd_profiles(args):
    cfg = _load(args)
    case = harness.build_case(cfg)
    state, R = output.read_checkpoint(args.checkpoint)
    grid = case.grid.with_radius(R)
    paths = output.write_profiles(grid, state, args.section, args.out)
    for p in paths:
        print(p)
    return 0


COMMANDS = {"run": cmd_run, "verify": cmd_verify, "convergence": cmd_convergence,
            "timing": cmd_timing, "profiles": cmd_profiles}


def main(argv=None):
    parser = _parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    _set_threads(args.threads)
    np.random.seed(args.seed)
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    try:
        return COMMANDS[args.command](args)
    except (cfgmod.ConfigError, ValueError, OSError) as exc:
        print(f"vesselflow: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
