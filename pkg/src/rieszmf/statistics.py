"""Error functionals, fluctuation observables and Monte Carlo aggregation.

The squared L2 distance between the smoothed empirical measure and the
smoothed mean-field density expands as

    ||Z*(mu - u)||^2 = (1/N^2) sum_ij V(X_i - X_j) - (2/N) sum_i (V*u)(X_i) + <u, V*u>

and the H1 version is the same with -Lap V in place of V. Pair sums come
from the particle kernel; the two grid terms use a convolution with the
tabulated kernel sampled at minimum-image distances, so all three terms
see the same periodic kernel.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sstats

from .fields import (Box, GridField, PdeConfig, Trajectory, convolve_radial, inner,
                     solve_backward_dual, sample_field, spectral_gradient, spline_coefficients,
                     _TransportOps)
from .kernels import RadialKernelSet
from .particles import PairTable, pair_table, pairwise_sums

log = logging.getLogger(__name__)

__all__ = [
    "ErrorSample",
    "FluctuationSample",
    "TestFunction",
    "StatFields",
    "l2_error_sq",
    "h1_error_sq",
    "error_sample",
    "lln_exceedance",
    "lln_from_fields",
    "LLNFields",
    "fluctuation_pairing",
    "clt_target_variance",
    "normality_report",
    "rate_fit",
    "default_test_functions",
]

NEG_TOL = 1e-12
SPLINE_ORDER = 5


@dataclass
class ErrorSample:
    realization_id: int
    times: np.ndarray
    l2_err_sq: np.ndarray
    h1_err_sq: np.ndarray
    sup_l2: float
    h1_integral: float        # sum over steps of dt * h1_err_sq (left endpoints)
    negative: bool = False    # some l2 value fell below -NEG_TOL

    def statistic(self, sigma: float) -> float:
        return self.sup_l2 + sigma * self.h1_integral


@dataclass
class FluctuationSample:
    realization_id: int
    t: float
    phi_id: str
    value: float


# ---------------------------------------------------------------------------
# test functions


@dataclass(frozen=True)
class TestFunction:
    """Gaussian bump, optionally times a linear factor a . (x - c)."""

    name: str
    center: tuple = (0.0, 0.0, 0.0)
    width: float = 0.5
    amplitude: float = 1.0
    direction: tuple | None = None

    __test__ = False   # not a pytest class

    def __post_init__(self):
        if self.width <= 0:
            raise ValueError("test function width must be positive")

    def value(self, x):
        y = np.asarray(x, dtype=float) - np.asarray(self.center)
        g = self.amplitude * np.exp(-0.5 * np.sum(y * y, axis=-1) / self.width**2)
        if self.direction is None:
            return g
        return g * (y @ np.asarray(self.direction, dtype=float))

    def gradient(self, x):
        y = np.asarray(x, dtype=float) - np.asarray(self.center)
        w2 = self.width**2
        g = self.amplitude * np.exp(-0.5 * np.sum(y * y, axis=-1) / w2)
        if self.direction is None:
            return -(g / w2)[..., None] * y
        a = np.asarray(self.direction, dtype=float)
        lin = y @ a
        return g[..., None] * (a - (lin / w2)[..., None] * y)

    def render(self, box: Box) -> GridField:
        X, Y, Z = box.mesh()
        v = self.value(np.stack([X, Y, Z], axis=-1))
        r_inf = np.max(np.abs(np.stack([X, Y, Z])), axis=0)
        if np.abs(v[r_inf >= 0.5 * box.L - 0.5 * box.h]).max() > 1e-12:
            raise ValueError(f"test function {self.name} does not decay inside the box")
        band = np.abs(v[r_inf >= 0.25 * box.L]).max()
        if band > 1e-12:
            log.info("test function %s reaches %.1e within L/4 of the boundary", self.name, band)
        return GridField(box, v)

    def to_dict(self):
        return {"name": self.name, "center": list(self.center), "width": self.width,
                "amplitude": self.amplitude,
                "direction": None if self.direction is None else list(self.direction)}


def default_test_functions():
    """Centered, offset and wide Gaussians plus a Gaussian-windowed linear function."""
    return (
        TestFunction("centered", (0.0, 0.0, 0.0), 0.7),
        TestFunction("offset", (1.0, 0.5, 0.0), 0.7),
        TestFunction("wide", (0.0, 0.0, 0.0), 1.0),
        TestFunction("linear", (0.0, 0.0, 0.0), 0.8, 1.0, (1.0, 0.0, 0.0)),
    )


# ---------------------------------------------------------------------------
# grid-side terms


@dataclass(eq=False)
class StatFields:
    """V*u and Lap V*u for every checkpoint of a trajectory, with spline coefficients."""

    traj: Trajectory
    ks: RadialKernelSet
    _cache: dict = field(default_factory=dict, repr=False)

    def _index(self, t):
        i, w = self.traj._locate(t)
        if w != 0.0:
            raise ValueError(f"t={t} is not a checkpoint of the trajectory")
        return i

    def terms(self, t):
        """(coeffs of V*u, coeffs of LapV*u, <u, V*u>, <u, LapV*u>) at checkpoint t."""
        i = self._index(t)
        if i not in self._cache:
            u = GridField(self.traj.box, self.traj.densities[i], float(t))
            Vu = convolve_radial(u, self.ks.V)
            Lu = convolve_radial(u, self.ks.lapV)
            self._cache[i] = (spline_coefficients(Vu, SPLINE_ORDER),
                              spline_coefficients(Lu, SPLINE_ORDER),
                              inner(u, Vu), inner(u, Lu))
        return self._cache[i]

    def sample(self, coeffs, X):
        g = GridField(self.traj.box, coeffs)
        return sample_field(g, X, order=SPLINE_ORDER, coeffs=coeffs)


def _check_eta(ks, eta):
    if eta is not None and abs(ks.eta - eta) > 1e-12 * eta:
        raise ValueError(f"kernel set eta={ks.eta} does not match configured eta={eta}")


def _single_time_fields(ubar: GridField, ks: RadialKernelSet):
    traj = Trajectory(ubar.box, np.array([ubar.time]), ubar.values[None], PdeConfig(),
                      np.zeros(1), "snapshot")
    traj.times = np.array([0.0])
    return StatFields(traj, ks), 0.0


def _error_terms(X, ubar, ks, table, eta, which):
    _check_eta(ks, eta)
    X = np.atleast_2d(X)
    N = X.shape[0]
    table = table or pair_table(ks, ubar.box)
    _, v, lap = pairwise_sums(X, table)
    sf, t = _single_time_fields(ubar, ks)
    cV, cL, sV, sL = sf.terms(t)
    if which == "l2":
        return np.sum(v) / N**2 - 2.0 * np.mean(sf.sample(cV, X)) + sV
    return -(np.sum(lap) / N**2 - 2.0 * np.mean(sf.sample(cL, X)) + sL)


def l2_error_sq(X, ubar: GridField, ks: RadialKernelSet, table: PairTable | None = None,
                eta: float | None = None) -> float:
    """||Z*(mu_N - ubar)||^2 via the pairwise expansion."""
    return float(_error_terms(X, ubar, ks, table, eta, "l2"))


def h1_error_sq(X, ubar: GridField, ks: RadialKernelSet, table: PairTable | None = None,
                eta: float | None = None) -> float:
    """||grad Z*(mu_N - ubar)||^2 = -<mu - u, Lap V * (mu - u)>."""
    return float(_error_terms(X, ubar, ks, table, eta, "h1"))


def error_sample(record, sf: StatFields, realization_id: int = 0) -> ErrorSample:
    """Error time series from a coupling record (positions and pair sums at every saved step)."""
    N = record.positions_X.shape[1]
    steps = np.rint(record.saved_times / (record.times[1] - record.times[0])).astype(int) \
        if record.times.size > 1 else np.zeros(1, dtype=int)
    l2 = np.empty(steps.size)
    h1 = np.empty(steps.size)
    for k, (s, t) in enumerate(zip(steps, record.saved_times)):
        X = record.positions_X[k]
        cV, cL, sV, sL = sf.terms(t)
        l2[k] = record.pair_sum_V[s] - 2.0 * np.mean(sf.sample(cV, X)) + sV
        h1[k] = -(record.pair_sum_lapV[s] - 2.0 * np.mean(sf.sample(cL, X)) + sL)
    dt_save = record.saved_times[1] - record.saved_times[0] if steps.size > 1 else 0.0
    neg = bool(l2.min() < -NEG_TOL)
    if neg:
        log.warning("negative l2 error %.3e (realization %d, N=%d)", l2.min(), realization_id, N)
    return ErrorSample(realization_id, record.saved_times.copy(), l2, h1, float(np.max(l2)),
                       float(dt_save * np.sum(h1[:-1])), neg)


@dataclass(eq=False)
class LLNFields:
    """Spline coefficients of grad V * u per checkpoint, plus the scalar V * u terms."""

    traj: Trajectory
    ks: RadialKernelSet
    stat: StatFields | None = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.stat is None:
            self.stat = StatFields(self.traj, self.ks)
        self._ops = _TransportOps(self.traj.box, self.ks.symbol_V(self.traj.box.kmag()), PdeConfig())

    def grad_coeffs(self, t):
        i = self.stat._index(t)
        if i not in self._cache:
            gu = GridField(self.traj.box, self._ops.G(self.traj.densities[i]))
            self._cache[i] = spline_coefficients(gu, 3)
        return self._cache[i]


def lln_from_fields(Xbar, lf: LLNFields, t: float, theta: float, table: PairTable):
    if not 0 < theta < 0.5:
        raise ValueError("theta must lie in (0, 1/2)")
    Xbar = np.atleast_2d(Xbar)
    N = Xbar.shape[0]
    f, v, _ = pairwise_sums(Xbar, table)
    gc = lf.grad_coeffs(t)
    mf = sample_field(GridField(lf.traj.box, gc), Xbar, order=3, coeffs=gc)
    dev_vec = float(np.max(np.linalg.norm(f / N - mf, axis=1)))
    cV = lf.stat.terms(t)[0]
    dev_sc = float(np.max(np.abs(v / N - lf.stat.sample(cV, Xbar))))
    thr = float(N) ** (-theta)
    return {"dev_B": dev_vec, "B": dev_vec > thr, "dev_A": dev_sc, "A": dev_sc > thr,
            "threshold": thr}


def lln_exceedance(Xbar, ubar: GridField, ks: RadialKernelSet, theta: float,
                   table: PairTable | None = None):
    """Largest deviation of particle averages from their mean-field convolutions.

    The B statistic uses psi = grad V, the A statistic the scalar kernel V.
    Returns a dict with both deviations and their exceedance of N^-theta.
    """
    sf, t = _single_time_fields(ubar, ks)
    lf = LLNFields(sf.traj, ks, sf)
    return lln_from_fields(Xbar, lf, t, theta, table or pair_table(ks, ubar.box))


def fluctuation_pairing(X, ubar: GridField, phi: TestFunction, phi_grid: GridField | None = None) -> float:
    """sqrt(N) ((1/N) sum phi(X_i) - <ubar, phi>)."""
    X = np.atleast_2d(X)
    N = X.shape[0]
    pg = phi_grid if phi_grid is not None else phi.render(ubar.box)
    return float(math.sqrt(N) * (np.mean(phi.value(ubar.box.wrap(X))) - inner(ubar, pg)))


def clt_target_variance(phi, t: float, u_traj: Trajectory, dual_cfg: PdeConfig,
                        return_parts: bool = False):
    """<u0, T(0)^2> - <u0, T(0)>^2 + 2 sigma int_0^t <u(s), |grad T(s)|^2> ds."""
    box = u_traj.box
    pg = phi.render(box) if isinstance(phi, TestFunction) else phi
    u0 = GridField(box, u_traj.density_at(0.0))
    if t == 0:
        T0 = pg
        integral = 0.0
    else:
        dual = solve_backward_dual(pg, t, u_traj, dual_cfg)
        T0 = GridField(box, dual.densities[0])
        vals = []
        for s, w in zip(dual.times, dual.densities):
            g = spectral_gradient(GridField(box, w))
            vals.append(np.sum(u_traj.density_at(s) * np.sum(g * g, axis=0)) * box.cell_volume)
        integral = float(np.trapezoid(vals, dual.times))
    m1 = inner(u0, T0)
    m2 = float(np.sum(u0.values * T0.values**2) * box.cell_volume)
    var = m2 - m1 * m1 + 2.0 * dual_cfg.sigma * integral
    if return_parts:
        return var, {"initial": m2 - m1 * m1, "dynamic": 2.0 * dual_cfg.sigma * integral}
    return var


def normality_report(samples, target_variance: float, n_theta: int = 21, conf=0.99):
    samples = np.asarray(samples, dtype=float)
    R = samples.size
    if R < 100:
        raise ValueError("normality_report needs at least 100 samples")
    if not target_variance > 0:
        raise ValueError("target variance must be positive")
    var = float(np.var(samples, ddof=1))
    lo_q, hi_q = sstats.chi2.ppf([(1 - conf) / 2, (1 + conf) / 2], R - 1)
    # CI for the sample variance if the target were true
    ci = (target_variance * lo_q / (R - 1), target_variance * hi_q / (R - 1))
    ks = sstats.kstest(samples, "norm", args=(0.0, math.sqrt(target_variance)))
    th = np.linspace(-3.0, 3.0, n_theta) / math.sqrt(target_variance)
    emp = np.mean(np.exp(1j * th[:, None] * samples[None, :]), axis=1)
    cf = float(np.max(np.abs(emp - np.exp(-0.5 * th**2 * target_variance))))
    return {"n": R, "mean": float(np.mean(samples)), "mean_se": math.sqrt(var / R),
            "variance": var, "target_variance": float(target_variance),
            "variance_ci_lo": float(ci[0]), "variance_ci_hi": float(ci[1]),
            "variance_in_ci": bool(ci[0] <= var <= ci[1]),
            "ks_stat": float(ks.statistic), "ks_p": float(ks.pvalue), "cf_sup": cf}


def _ols(x, y):
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    return coef


def rate_fit(N_list, means=None, samples=None, n_boot: int = 2000, seed: int = 0,
             min_realizations: int = 30, level: float = 0.95):
    """OLS slope of log(mean) against log(N), bootstrap CI over realizations.

    Pass either per-N ``means`` (no CI) or per-N arrays of ``samples``.
    """
    N = np.asarray(N_list, dtype=float)
    if N.size < 4:
        raise ValueError("rate_fit needs at least 4 N values")
    ratios = N[1:] / N[:-1]
    if np.any(np.abs(ratios / ratios[0] - 1.0) > 1e-9):
        raise ValueError("N values must form a geometric sequence")
    if samples is not None:
        samples = [np.asarray(s, dtype=float) for s in samples]
        if len(samples) != N.size:
            raise ValueError("one sample array per N required")
        if min(s.size for s in samples) < min_realizations:
            raise ValueError(f"need at least {min_realizations} realizations per N")
        means = np.array([s.mean() for s in samples])
    means = np.asarray(means, dtype=float)
    if np.any(means <= 0):
        raise ValueError("non-positive mean: cannot fit a log-log rate")
    slope, icpt = _ols(np.log(N), np.log(means))
    out = {"slope": float(slope), "intercept": float(icpt), "means": means.tolist(),
           "N": N.tolist(), "ci_lo": float("nan"), "ci_hi": float("nan"), "level": level}
    if samples is None:
        return out
    rng = np.random.default_rng(seed)
    x = np.log(N)
    boot = np.empty(n_boot)
    for b in range(n_boot):
        m = np.array([s[rng.integers(0, s.size, s.size)].mean() for s in samples])
        boot[b] = _ols(x, np.log(np.maximum(m, 1e-300)))[0]
    a = 0.5 * (1.0 - level)
    out["ci_lo"], out["ci_hi"] = (float(v) for v in np.quantile(boot, [a, 1.0 - a]))
    return out
