"""Command line entry point: train, sample, verify, pde-lab.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure,
3 verification failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from . import data_io, pipeline, verification
from .config import ConfigError, RunConfig, load_config


def _build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="morphflow",
                                description="Morphological-PDE diffusion toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    tr = sub.add_parser("train", help="run the training loop from a config file")
    tr.add_argument("--config", help="path to the run config (defaults apply if omitted)")
    tr.add_argument("--seed", type=int, help="override the config seed")
    tr.add_argument("--out", help="override the output directory")
    tr.add_argument("--block", choices=["cde", "resnet"], help="override the middle block type")
    tr.add_argument("--checkpoint", help="resume from this checkpoint")

    sa = sub.add_parser("sample", help="sample from a trained checkpoint")
    sa.add_argument("--checkpoint", required=True)
    sa.add_argument("--count", type=int, default=16)
    sa.add_argument("--steps", type=int, default=0, help="override the reverse chain length")
    sa.add_argument("--seed", type=int, help="sampling seed (defaults to the checkpoint seed)")
    sa.add_argument("--out", default="runs/samples")
    sa.add_argument("--trace", action="store_true",
                    help="also emit intermediate states at decile steps")

    ve = sub.add_parser("verify", help="run the property suites")
    ve.add_argument("suite", choices=["geometry", "morphology", "equivariance",
                                      "gradients", "diffusion", "all"])
    ve.add_argument("--seed", type=int, default=0)
    ve.add_argument("--out", default="runs/verify")

    pd = sub.add_parser("pde-lab", help="run the Hamilton-Jacobi solvers on a test field")
    pd.add_argument("--init", default="bump",
                    help="bump, edge, constant, or a path to a PGM image")
    pd.add_argument("--k", type=float, default=2.0)
    pd.add_argument("--p", choices=["l1", "l2", "linf"], default="l2")
    pd.add_argument("--t", type=float, default=0.25)
    pd.add_argument("--method", choices=["hopflax", "fd", "both"], default="both")
    pd.add_argument("--sign", choices=["erosion", "dilation"], default="erosion")
    pd.add_argument("--side", type=int, default=64)
    pd.add_argument("--out", default="runs/pde")
    return p


def _cmd_train(args) -> int:
    cfg = load_config(args.config) if args.config else RunConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if args.out:
        cfg = replace(cfg, output=replace(cfg.output, dir=args.out))
    if args.block:
        cfg = replace(cfg, model=replace(cfg.model, block=args.block))
    result = pipeline.run_train(cfg, resume=args.checkpoint)
    print(f"trained {len(result.metrics)} step(s); checkpoint at {result.checkpoint}")
    if result.metrics:
        print(f"final loss {result.metrics[-1][1]:.6f}")
    return 0


def _cmd_sample(args) -> int:
    path = pipeline.run_sample(args.checkpoint, args.count, args.out,
                               seed=args.seed,
                               steps_override=args.steps or None,
                               trace=args.trace)
    print(f"samples written to {path}")
    return 0


def _cmd_verify(args) -> int:
    rows = verification.run_suites([args.suite], seed=args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    data_io.emit_csv(
        [(r.name, f"{r.error:.6e}", f"{r.tolerance:.6e}", "pass" if r.passed else "FAIL")
         for r in rows],
        out / "verify_report.csv",
        header=["check", "error", "tolerance", "status"])
    failed = 0
    for r in rows:
        status = "pass" if r.passed else "FAIL"
        print(f"{status:4s}  {r.name:45s} error {r.error:.3e}  tol {r.tolerance:.3e}")
        failed += 0 if r.passed else 1
    print(f"{len(rows) - failed}/{len(rows)} checks passed; report at {out / 'verify_report.csv'}")
    return 0 if failed == 0 else 3


def _cmd_pde_lab(args) -> int:
    if args.t <= 0:
        raise ConfigError("--t must be > 0")
    if args.k <= 1:
        raise ConfigError("--k must be > 1")
    if args.side < 8:
        raise ConfigError("--side must be >= 8")
    if args.init not in ("bump", "edge", "constant") and not Path(args.init).exists():
        raise ConfigError(f"--init: no such image file {args.init!r}")
    report = pipeline.run_pde_lab(args.init, args.k, args.p, args.t, args.method,
                                  args.side, args.out, sign=args.sign)
    print(f"pde-lab init={args.init} k={args.k} p={args.p} t={args.t} -> {args.out}")
    if "linf_gap" in report:
        print(f"hopflax vs fd: Linf {report['linf_gap']:.6f}  L1 {report['l1_gap']:.6f}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 1 if e.code not in (0, None) else 0
    handlers = {"train": _cmd_train, "sample": _cmd_sample,
                "verify": _cmd_verify, "pde-lab": _cmd_pde_lab}
    try:
        return handlers[args.command](args)
    except (ConfigError, FileNotFoundError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # runtime failure
        print(f"runtime failure: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
