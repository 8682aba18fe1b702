"""Fluctuation pairings against the dual-problem variance, one line per (N, phi, t)."""

import argparse
import logging

from rieszmf.experiments.config import RegimeSpec
from rieszmf.experiments.runner import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs")
    ap.add_argument("--R", type=int)
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    spec = RegimeSpec.load(args.config) if args.config else RegimeSpec()
    if args.R:
        spec = spec.replace(clt_R=args.R)
    d, s = run_experiment("clt", spec, args.out)
    print(d)
    for key, r in sorted(s["reports"].items()):
        if "ks_p" not in r:
            print(f"{key:24s} var {r['variance']:.5g} target {r['target_variance']:.5g} (too few samples)")
            continue
        print(f"{key:24s} var {r['variance']:.5g} target {r['target_variance']:.5g} "
              f"[{r['variance_ci_lo']:.4g}, {r['variance_ci_hi']:.4g}]  "
              f"KS p {r['ks_p']:.3f}  CF {r['cf_sup']:.3f}  "
              f"(intermediate-eta target {r['target_variance_intermediate']:.5g})")


if __name__ == "__main__":
    main()
