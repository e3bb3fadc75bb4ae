"""Overfit a handful of synthetic samples and report the training error.

Usage: python3 scripts/overfit_demo.py [--profile desk-mini] [--samples 1] [--steps 200]
"""
import argparse

from rmtransformer.experiments import overfit


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--profile", default="desk-mini", choices=["desk-mini", "desk"])
    ap.add_argument("--samples", type=int, default=1)
    ap.add_argument("--steps", type=int, default=200)
    ap.add_argument("--lr-start", type=float, default=1e-2)
    ap.add_argument("--lr-end", type=float, default=2e-3)
    ap.add_argument("--data-seed", type=int, default=11)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--every", type=int, default=20, help="print the loss every N steps")
    args = ap.parse_args()

    res = overfit(args.profile, args.samples, args.steps, args.lr_start, args.lr_end,
                  args.data_seed, args.seed)
    for step, _, lr, loss in res.trace[::args.every]:
        print(f"step {step:4d}  lr {lr:.2e}  mse {loss:.6f}")
    print(f"final: mse {res.final_mse:.6f}  rmse {res.final_rmse:.5f}  ({res.seconds:.1f}s)")


if __name__ == "__main__":
    main()
