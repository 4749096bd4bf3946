"""Mining-benefit experiment on the synthetic latent manifold.

For each downsampling rate, trains BYOL and MYOW on the holed train set and
reports shape accuracy on the held-out latent values. Example:

    python scripts/manifold.py --rates 0.075 0.3 1.0 --seeds 0 1 2 --out manifold.csv
"""

import argparse
import csv
import statistics
import sys
from dataclasses import replace

from myow.config import preset, with_mode
from myow.data import LatentManifoldSpec
from myow.experiments import run_manifold


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rates", nargs="+", type=float, default=[0.075, 0.3, 1.0])
    ap.add_argument("--modes", nargs="+", default=["byol", "myow"], choices=["byol", "myow"])
    ap.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    ap.add_argument("--preset", default="manifold-desk")
    ap.add_argument("--out", help="per-run CSV")
    args = ap.parse_args(argv)

    base = preset(args.preset)
    rows = []
    for rate in args.rates:
        spec = LatentManifoldSpec(rate=rate)
        for mode in args.modes:
            for seed in args.seeds:
                o = run_manifold(with_mode(replace(base, seed=seed), mode), spec, data_seed=seed)
                rows.append({"rate": rate, "mode": mode, "seed": seed, "test_acc": o.test_acc,
                             "val_acc": o.train_acc})
                print(f"r={rate:<6} {mode:5s} seed {seed}: test {100 * o.test_acc:5.1f}  "
                      f"val {100 * o.train_acc:5.1f}", flush=True)
    print("\nmedian test accuracy over seeds")
    for rate in args.rates:
        cells = []
        for mode in args.modes:
            accs = [r["test_acc"] for r in rows if r["rate"] == rate and r["mode"] == mode]
            cells.append(f"{mode} {100 * statistics.median(accs):.1f}")
        print(f"  r={rate:<6} " + "  ".join(cells))
    if args.out:
        with open(args.out, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
