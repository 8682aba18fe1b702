"""Mean-square rate sweep for both signs of kappa, then a short table.

    python scripts/rate_sweep.py --config configs/default.cfg --out runs
"""

import argparse
import logging

from rieszmf.experiments.config import RegimeSpec
from rieszmf.experiments.runner import run_experiment


def main():
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--config")
    ap.add_argument("--out", default="runs")
    ap.add_argument("--R", type=int, help="override the realization count")
    ap.add_argument("--kappa", type=float, nargs="+", default=[1.0, -1.0])
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    spec = RegimeSpec.load(args.config) if args.config else RegimeSpec()
    if args.R:
        spec = spec.replace(R=args.R)
    for kappa in args.kappa:
        d, s = run_experiment("rate", spec.replace(kappa=kappa), args.out)
        f = s["rate"]
        print(f"kappa={kappa:+.0f}  {d}")
        for N, m, pc, pb in zip(s["N"], f["means"], s["P_coupling_exceed_alpha0.3"],
                                s["P_lln_B_theta0.3"]):
            print(f"  N={N:5d}  mean stat {m:.4e}  P(coupling) {pc:.3f}  P(B) {pb:.3f}")
        print(f"  slope {f['slope']:.3f}  95% CI ({f['ci_lo']:.3f}, {f['ci_hi']:.3f})")


if __name__ == "__main__":
    main()
