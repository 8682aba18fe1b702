"""Print kernel constants, the factorization check and the eta scaling slopes."""

import argparse

import numpy as np

from rieszmf.kernels import (RieszParams, build_kernel_set, psi_constant, psi_square_ratio,
                             riesz_symbol_constant, verify_scaling_bounds)


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--lam", type=float, nargs="+", default=[0.5, 0.9])
    ap.add_argument("--beta", type=float, default=0.05)
    ap.add_argument("--eta", type=float, nargs="+", default=[0.4, 0.2, 0.1])
    args = ap.parse_args()

    r = np.geomspace(0.05, 20.0, 80)
    for lam in args.lam:
        p = RieszParams(3, lam)
        err = np.max(np.abs(psi_square_ratio(p, r) - 1.0))
        print(f"lambda={lam}: C_lambda={riesz_symbol_constant(lam):.10g} c_psi={psi_constant(p):.10g} "
              f"max|Psi*Psi/Phi - 1|={err:.2e}")
        for eta in args.eta:
            ks = build_kernel_set(p, eta)
            print(f"  eta={eta}: V(0)={ks.V(0.0):.8g} Lap V(0)={ks.lapV(0.0):.8g} "
                  f"fourier check {ks.check_max_rel:.1e}")
        N = [2**k for k in range(10, 19)]
        for k in (0, 1, 2, "Z"):
            sr = verify_scaling_bounds(p, args.beta, N, k)
            print(f"  scaling k={k}: slope {sr.slope:.5f} predicted {sr.predicted:.5f}")


if __name__ == "__main__":
    main()
