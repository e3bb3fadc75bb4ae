"""Train the desk RMTransformer and the matched CNN baseline over several seeds.

Usage: python3 scripts/compare_baseline.py [--count 512] [--epochs 20] [--seeds 0 1 2] [--out results.json]
"""
import argparse
import json

from rmtransformer.experiments import comparative
from rmtransformer.model import count_params, get_profile


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--count", type=int, default=512)
    ap.add_argument("--data-seed", type=int, default=2024)
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--lr-start", type=float, default=1e-3)
    ap.add_argument("--lr-end", type=float, default=1e-4)
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2])
    ap.add_argument("--out", default=None, help="optional JSON summary path")
    args = ap.parse_args()

    cfg = get_profile("desk")
    print(f"params: rmt {count_params(cfg, 'rmt')}, baseline {count_params(cfg, 'baseline')}")
    res = comparative(args.count, args.data_seed, args.seeds, args.epochs, args.lr_start, args.lr_end)
    summary = {
        "seeds": res.seeds, "rmse": res.rmse,
        "median_rmt": res.median("rmt"), "median_baseline": res.median("baseline"),
        "ratio": res.ratio, "seconds": res.seconds, "args": vars(args),
    }
    print(f"median test rmse: rmt {summary['median_rmt']:.5f}  baseline {summary['median_baseline']:.5f}  "
          f"ratio {res.ratio:.3f}  ({res.seconds:.0f}s)")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(summary, fh, indent=2)


if __name__ == "__main__":
    main()
