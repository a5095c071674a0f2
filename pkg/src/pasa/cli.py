"""Command line entry point: ``pasa run|schedule|verify|bench``."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

from . import budget
from .experiment import (
    ExperimentConfig,
    bench,
    dumps_report,
    load_config_file,
    report_passed,
    run_experiment,
    verify_suite,
)

# flag name -> ExperimentConfig field
RUN_FLAGS = {
    "seq-len": ("seq_len", int),
    "head-dim": ("head_dim", int),
    "block-size": ("block_size", int),
    "group-size": ("group_size", int),
    "rho": ("rho", float),
    "bias-beta": ("bias_beta", float),
    "epsilon": ("epsilon", float),
    "dense-frac": ("dense_frac", float),
    "total-steps": ("total_steps", int),
    "mode": ("modes", str),
    "seed": ("seed", int),
    "trials": ("num_trials", int),
    "correlation-strength": ("correlation_strength", float),
    "drift-rate": ("drift_rate", float),
    "layers": ("num_layers", int),
    "heads": ("num_heads", int),
    "force-k": ("force_k", int),
    "calibration-csv": ("calibration_csv", str),
}


def _write(text: str, out) -> None:
    if out:
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_run(args) -> int:
    values = load_config_file(args.config) if args.config else {}
    for flag, (name, _) in RUN_FLAGS.items():
        v = getattr(args, name)
        if v is not None:
            values[name] = v
    cfg = ExperimentConfig.from_mapping(values)
    report = run_experiment(cfg, workers=args.workers)
    _write(dumps_report(report), args.out)
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["trial", "step", "layer", "head", "k", "mode", "rel_frobenius", "max_row_l2"])
            for t in report["trials"]:
                for s in t["steps"]:
                    for m, f in s["fidelity"].items():
                        w.writerow([t["trial"], s["step"], s["layer"], s["head"], s["k"], m,
                                    repr(f["rel_frobenius"]), repr(f["max_row_l2"])])
    ok = report_passed(report)
    logging.getLogger(__name__).info("run %s", "passed" if ok else "FAILED")
    return 0 if ok else 1


def cmd_schedule(args) -> int:
    if args.calibration:
        curve = budget.read_calibration_csv(args.calibration)
        total = len(curve) + 1
    elif args.trajectory:
        trajs = [budget.read_trajectory_csv(p) for p in args.trajectory]
        curve = budget.calibration_curve(trajs)
        total = trajs[0].timesteps
    else:
        total = args.total_steps
        curve = budget.synthetic_calibration(total, args.seed, args.num_trajectories)
    seg = budget.sparse_segment(curve, total, args.dense_frac)
    schedule = budget.build_schedule(seg, args.rho, total, args.dense_frac)
    _write(budget.schedule_to_json(schedule) + "\n", args.out)
    if args.curve_out:
        budget.write_calibration_csv(args.curve_out, curve)
    return 0


def cmd_verify(args) -> int:
    result = verify_suite(seed=args.seed, draws=args.draws)
    print(json.dumps(result, indent=2, sort_keys=True))
    return 0 if result["passed"] else 1


def cmd_bench(args) -> int:
    rows = bench(seq_lens=args.seq_lens, head_dim=args.head_dim, block_size=args.block_size,
                 group_size=args.group_size, rho=args.rho, repeats=args.repeats, seed=args.seed)
    fh = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.DictWriter(fh, fieldnames=["seq_len", "mode", "k", "num_blocks", "seconds"])
        w.writeheader()
        w.writerows(rows)
    finally:
        if args.out:
            fh.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="pasa", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run the full sparse-attention experiment")
    r.add_argument("--config", help="key=value config file; flags override it")
    for flag, (name, typ) in RUN_FLAGS.items():
        r.add_argument(f"--{flag}", dest=name, type=typ, default=None)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--out", help="JSON report path (default: stdout)")
    r.add_argument("--csv", help="optional per-step fidelity table")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("schedule", help="build a per-timestep density schedule")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--trajectory", nargs="+", help="trajectory CSV file(s), averaged")
    src.add_argument("--calibration", help="step,l1 calibration CSV")
    src.add_argument("--synthetic", action="store_true", help="synthetic three-phase trajectories (default)")
    s.add_argument("--rho", type=float, default=budget.DEFAULT_RHO)
    s.add_argument("--dense-frac", type=float, default=budget.DEFAULT_DENSE_FRAC)
    s.add_argument("--total-steps", type=int, default=budget.DEFAULT_TOTAL_STEPS)
    s.add_argument("--num-trajectories", type=int, default=budget.NUM_CALIBRATION_TRAJECTORIES)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", help="schedule JSON path (default: stdout)")
    s.add_argument("--curve-out", help="also write the averaged curve as step,l1 CSV")
    s.set_defaults(func=cmd_schedule)

    v = sub.add_parser("verify", help="randomized bound and identity checks")
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--draws", type=int, default=100)
    v.set_defaults(func=cmd_verify)

    b = sub.add_parser("bench", help="wall-clock timing per mode, CSV")
    b.add_argument("--seq-lens", type=int, nargs="+", default=[256, 512, 1024, 2048])
    b.add_argument("--head-dim", type=int, default=32)
    b.add_argument("--block-size", type=int, default=64)
    b.add_argument("--group-size", type=int, default=32)
    b.add_argument("--rho", type=float, default=0.15)
    b.add_argument("--repeats", type=int, default=3)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out")
    b.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
