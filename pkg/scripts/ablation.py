"""Augmentation ablation on the synthetic reach dataset.

Trains BYOL and MYOW under each transform set and prints the linear-eval
accuracy table (median over seeds). Example:

    python scripts/ablation.py --sets jitter jitter+dropout --seeds 0 1 2 --out ablation.csv
"""

import argparse
import csv
import statistics
import sys
from dataclasses import replace

from myow.config import preset
from myow.data import ReachSpec, gen_reach_synthetic
from myow.experiments import ABLATION_SETS, ablation_config, run_reach


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sets", nargs="+", default=list(ABLATION_SETS),
                    help=f"named sets {sorted(ABLATION_SETS)} or transform text")
    ap.add_argument("--modes", nargs="+", default=["byol", "myow"], choices=["byol", "myow"])
    ap.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    ap.add_argument("--data-seed", type=int, default=0)
    ap.add_argument("--preset", default="reach-desk")
    ap.add_argument("--epochs", type=int, help="override the preset's epoch count")
    ap.add_argument("--out", help="per-run CSV")
    args = ap.parse_args(argv)

    ds = gen_reach_synthetic(ReachSpec(), seed=args.data_seed)
    base = preset(args.preset)
    if args.epochs is not None:
        base = replace(base, train=replace(base.train, epochs=args.epochs))
    rows = []
    for mode in args.modes:
        for tset in args.sets:
            for seed in args.seeds:
                o = run_reach(ablation_config(base, tset, mode, seed), ds)
                rows.append({"mode": mode, "transforms": tset, "seed": seed, "acc": o.result.accuracy,
                             "delta_acc": o.result.delta_accuracy, "rep_std_min": o.rep_std_min,
                             "final_loss": o.final_loss})
                print(f"{mode:5s} {tset:24s} seed {seed}: Acc {100 * o.result.accuracy:5.1f}  "
                      f"dAcc {100 * o.result.delta_accuracy:5.1f}", flush=True)
    print("\nmedian Acc over seeds")
    for mode in args.modes:
        cells = []
        for tset in args.sets:
            accs = [r["acc"] for r in rows if r["mode"] == mode and r["transforms"] == tset]
            cells.append(f"{tset}: {100 * statistics.median(accs):.1f}")
        print(f"  {mode:5s} " + "  ".join(cells))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
