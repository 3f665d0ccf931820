#!/usr/bin/env python
"""End-to-end synthetic benchmark: generate a cohort, run the nested LOSO
harness, run the shuffled-label control, and print pass/fail against the
target thresholds (mean macro-F1 >= 0.90, every per-fold per-class AUC
>= 0.95, control macro AUC in [0.4, 0.6])."""

import argparse
import json
import sys
import time
from pathlib import Path

from ctmdetect.bench import BenchConfig, run_benchmark


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--subjects", type=int, default=10)
    ap.add_argument("--duration", type=float, default=600.0)
    ap.add_argument("--intensity", type=float, default=0.8)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--iters", type=int, default=5,
                    help="hyperparameter candidates per outer fold")
    ap.add_argument("--inner-max-windows", type=int, default=6000)
    ap.add_argument("--no-control", action="store_true")
    ap.add_argument("--out", type=Path, default=None,
                    help="write the full result JSON here")
    args = ap.parse_args()

    cfg = BenchConfig(
        n_subjects=args.subjects,
        duration_s=args.duration,
        intensity=args.intensity,
        seed=args.seed,
        search_iters=args.iters,
        inner_max_windows=args.inner_max_windows,
        run_control=not args.no_control,
    )
    t0 = time.perf_counter()
    result = run_benchmark(cfg)
    elapsed = time.perf_counter() - t0

    print(result.report.format())
    print()
    for k, v in result.timings.items():
        print(f"  {k:<12s} {v:8.1f} s")
    print(f"  wall total   {elapsed:8.1f} s")
    print()

    ok = True
    checks = [
        ("mean macro-F1 >= 0.90", result.macro_f1 >= 0.90,
         f"{result.macro_f1:.4f}"),
        ("min per-fold per-class AUC >= 0.95",
         result.min_fold_class_auc >= 0.95,
         f"{result.min_fold_class_auc:.4f}"),
    ]
    if result.control is not None:
        c = result.control_macro_auc
        checks.append(("control macro AUC in [0.4, 0.6]",
                       0.4 <= c <= 0.6, f"{c:.4f}"))
    for name, passed, value in checks:
        ok = ok and passed
        print(f"[{'PASS' if passed else 'FAIL'}] {name}: {value}")

    if args.out is not None:
        args.out.write_text(json.dumps(result.to_dict(), indent=2) + "\n")
        print(f"result JSON: {args.out}")
    return 0 if ok else 1


if __name__ == "__main__":
    sys.exit(main())
