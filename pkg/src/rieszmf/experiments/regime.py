"""Parameter gates for the convergence theorems and derived quantities."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ..fields import lp_norm, lp_star_threshold
from .config import RegimeSpec

log = logging.getLogger(__name__)


class GateError(ValueError):
    pass


@dataclass
class RegimeReport:
    gates: dict = field(default_factory=dict)     # name -> {"pass": bool, "detail": str}
    derived: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def passed(self, names=None) -> bool:
        names = self.gates if names is None else names
        return all(self.gates[n]["pass"] for n in names)

    def lines(self):
        out = []
        for name, g in self.gates.items():
            out.append(f"{name:12s} {'PASS' if g['pass'] else 'FAIL'}  {g['detail']}")
        d = self.derived
        out.append(f"alpha interval ({d['alpha_lo']:.6g}, {d['alpha_hi']:.6g})")
        out.append(f"p* = {d['p_star']:.6g}; ||u0||_p* = {d['u0_lp_star']:.6g}; "
                   f"diagnostic threshold C(p*) = {d['C_p_star']:.6g}")
        for N, eta in d["eta"].items():
            out.append(f"N = {N:>7d}  eta = {eta:.6g}")
        out.extend(f"warning: {w}" for w in self.warnings)
        return out

    def to_dict(self):
        return {"gates": self.gates, "derived": {k: v for k, v in self.derived.items() if k != "eta"}
                | {"eta": {str(k): v for k, v in self.derived["eta"].items()}},
                "warnings": self.warnings}


# which gates each experiment depends on
GATES_FOR = {
    "couple-run": ("dimension", "sub_coulomb", "thm_prob", "alpha"),
    "init-error": ("dimension", "sub_coulomb"),
    "lln": ("dimension", "sub_coulomb", "thm_prob", "theta"),
    "rate": ("dimension", "sub_coulomb", "thm_prob", "alpha", "theta", "thm_L2"),
    "clt": ("dimension", "sub_coulomb", "thm_L2"),
    "kernel-build": ("dimension", "sub_coulomb"),
    "kernel-verify": ("dimension", "sub_coulomb"),
    "pde-run": ("dimension", "sub_coulomb"),
    "dual-run": ("dimension", "sub_coulomb"),
    "validate-regime": (),
}


def validate_regime(spec: RegimeSpec) -> RegimeReport:
    rep = RegimeReport()
    d, lam, beta = spec.d, spec.lam, spec.beta
    rep.gates["dimension"] = {"pass": d == 3, "detail": f"d = {d} (numerics need d = 3)"}
    rep.gates["sub_coulomb"] = {"pass": 0 < lam < d - 2, "detail": f"0 < lambda = {lam} < d - 2 = {d - 2}"}
    b1 = 1.0 / (4 * lam + 12)
    rep.gates["thm_prob"] = {"pass": 0 < beta < b1, "detail": f"beta = {beta} < 1/(4 lambda + 12) = {b1:.6g}"}
    lo, hi = beta * (lam + 3), 0.5 - beta * (lam + 1)
    bad = [a for a in spec.alpha_list if not lo < a < hi]
    rep.gates["alpha"] = {"pass": not bad and lo < hi,
                          "detail": f"alpha in ({lo:.6g}, {hi:.6g}); given {list(spec.alpha_list)}"}
    badt = [t for t in spec.theta_list if not 0 < t < 0.5]
    rep.gates["theta"] = {"pass": not badt, "detail": f"theta in (0, 1/2); given {list(spec.theta_list)}"}
    b2 = 1.0 / (8 * lam + 12)
    rep.gates["thm_L2"] = {"pass": 0 < beta < b2, "detail": f"beta = {beta} < 1/(8 lambda + 12) = {b2:.6g}"}

    rep.derived["alpha_lo"], rep.derived["alpha_hi"] = lo, hi
    rep.derived["beta_max_prob"], rep.derived["beta_max_L2"] = b1, b2
    rep.derived["p_star"] = d / (d - lam)
    rep.derived["eta"] = {int(N): spec.eta(N) for N in sorted(set(spec.N_list) | set(spec.clt_N_list))}
    if rep.gates["dimension"]["pass"] and rep.gates["sub_coulomb"]["pass"]:
        u0 = spec.init.render(spec.box)
        nrm = lp_norm(u0, rep.derived["p_star"])
        thr = lp_star_threshold(spec.params, spec.sigma)
        rep.derived["u0_lp_star"], rep.derived["C_p_star"] = nrm, thr
        if nrm >= thr:
            rep.warnings.append(f"||u0||_p* = {nrm:.4g} is not below the smallness diagnostic {thr:.4g}")
    else:
        rep.derived["u0_lp_star"] = rep.derived["C_p_star"] = float("nan")
    return rep
