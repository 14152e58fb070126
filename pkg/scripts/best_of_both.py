"""Two-scale benchmark: transference sampling against plain Monte Carlo.

For each size n the integrand is sin(2 pi x) + k^(-1/2) sin(2 pi k x)
with k = n, the regime where neither the n^(-1) rate on smooth parts nor
the n^(-1/2) rate on rough parts wins alone. Prints the measured RMSEs
alongside the predicted error envelope and the frequency split it picked.
"""

import argparse
import sys

from subgqmc.experiments import ExperimentConfig, run_best_of_both


def parse_args(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[32, 64, 128, 256])
    ap.add_argument("--trials", type=int, default=200)
    ap.add_argument("--seed", type=int, default=0)
    return ap.parse_args(argv)


def main(argv=None) -> int:
    args = parse_args(argv)
    config = ExperimentConfig(
        mode="scaling",
        n_list=tuple(args.sizes),
        trials=args.trials,
        seed=args.seed,
        estimators=("mc", "transference"),
    )
    result = run_best_of_both(config)
    print(f"{'n':>6} {'mc rmse':>12} {'transfer rmse':>14} "
          f"{'ratio':>7} {'envelope':>12}  rough split")
    for n in config.n_list:
        r_mc = result.rmse("mc", n)
        r_tr = result.rmse("transference", n)
        env = result.envelopes[n] ** 0.5
        split = sorted(result.envelope_splits[n]) or ["(none)"]
        print(f"{n:>6} {r_mc:>12.4e} {r_tr:>14.4e} "
              f"{r_tr / r_mc:>7.3f} {env:>12.4e}  {split}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
