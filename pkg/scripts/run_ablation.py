"""Run the ablation matrix (every combo, chosen K values) and write a report.

Example::

    python scripts/run_ablation.py --trials 3 --tasks non_toppling_push shape_rope --workers 1

Expect roughly 5-30 s per trial for the full combo on one core; the
Gaussian-sampler combos are slower because they roll out five times as many
samples.
"""

from __future__ import annotations

import argparse
import logging
from datetime import datetime
from pathlib import Path

from simpact.bench import COMBOS, TASKS, BenchConfig, emit_report, run_bench


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--tasks", nargs="+", default=list(TASKS), choices=TASKS)
    ap.add_argument("--combos", nargs="+", default=list(COMBOS), choices=COMBOS)
    ap.add_argument("--K", nargs="+", type=int, default=[10], dest="K_values")
    ap.add_argument("--trials", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0, help="first trial seed; trials use seed, seed+1, ...")
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s: %(message)s")

    cfg = BenchConfig(tasks=args.tasks, trials=args.trials, seeds=[args.seed + i for i in range(args.trials)],
                      backend_matrix=args.combos, K_values=args.K_values)
    report = run_bench(cfg, workers=args.workers)
    out = args.out or Path("reports") / f"ablation-{datetime.now():%Y%m%d-%H%M%S}"
    emit_report(report, out)
    print(report.table())
    print(f"report written to {out}")


if __name__ == "__main__":
    main()
