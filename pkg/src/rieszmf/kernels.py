"""Riesz kernel, its convolution square root and the mollified potentials.

Everything radial is handled in d = 3, where the radial convolution of two
radial functions reduces to a one-dimensional integral against the
antiderivative of ``t * g(t)`` and the radial Fourier transform is a sine
transform.

Tables are built at unit mollification length and rescaled:

    V^eta(r) = eta^-lam      V^1(r / eta)
    Z^eta(r) = eta^-(lam+3)/2 Z^1(r / eta)
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline
from scipy.special import gamma, roots_legendre

__all__ = [
    "RieszParams",
    "MollifierProfile",
    "RadialTable",
    "RadialKernelSet",
    "TableConfig",
    "KernelConstructionError",
    "ScalingReport",
    "riesz_phi",
    "riesz_symbol_constant",
    "psi_constant",
    "psi_square_ratio",
    "bump_mollifier",
    "radial_convolution",
    "build_kernel_set",
    "eval_V",
    "eval_dV",
    "eval_gradV",
    "eval_lapV",
    "eval_Z",
    "z_l2_norm",
    "fourier_route_V",
    "fourier_route_lapV",
    "verify_scaling_bounds",
    "save_kernel_set",
    "load_kernel_set",
]


class KernelConstructionError(RuntimeError):
    """The Fourier and real-space routes disagree beyond tolerance."""


@dataclass(frozen=True)
class RieszParams:
    d: int = 3
    lam: float = 0.5

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 3:
            raise ValueError(f"dimension must be an integer >= 3, got {self.d}")
        if not (0.0 < self.lam < self.d - 2):
            raise ValueError(
                f"sub-Coulomb condition 0 < lambda < d - 2 violated: lambda={self.lam}, d={self.d}"
            )

    @property
    def p_star(self) -> float:
        return self.d / (self.d - self.lam)

    def require_d3(self):
        if self.d != 3:
            raise NotImplementedError("numerical kernels are implemented for d = 3 only")


def riesz_phi(r, params: RieszParams):
    """Phi(r) = r^-lam; raises for r <= 0."""
    r = np.asarray(r, dtype=float)
    if np.any(r <= 0):
        raise ValueError("Riesz kernel is singular at the origin (r must be > 0)")
    out = r ** (-params.lam)
    return float(out) if out.ndim == 0 else out


def riesz_symbol_constant(lam: float, d: int = 3) -> float:
    """C such that the Fourier transform of |x|^-lam is C |k|^(lam - d).

    Convention: F[f](k) = int f(x) exp(-i k.x) dx.
    """
    return 2.0 ** (d - lam) * math.pi ** (d / 2) * gamma((d - lam) / 2) / gamma(lam / 2)


def psi_constant(params: RieszParams) -> float:
    """Prefactor c of Psi(x) = c |x|^-(lam+d)/2 with Psi * Psi = Phi.

    F[Psi] = sqrt(C_lam) |k|^((lam-d)/2), and |x|^-mu transforms to
    C_mu |k|^(mu-d); matching exponents gives mu = (lam+d)/2.
    """
    d, lam = params.d, params.lam
    mu = 0.5 * (lam + d)
    return math.sqrt(riesz_symbol_constant(lam, d)) / riesz_symbol_constant(mu, d)


# ---------------------------------------------------------------------------
# radial tables


@dataclass(frozen=True, eq=False)
class RadialTable:
    """Cubic spline in log r on a log-spaced grid, with analytic ends.

    Below ``r_grid[0]`` the table blends to ``value_at_zero`` as
    ``v0 + (v_min - v0) (r/r_min)^small_power``; beyond ``r_grid[-1]`` it
    follows ``tail_coef * r^tail_exponent``.
    """

    r_grid: np.ndarray
    values: np.ndarray
    value_at_zero: float
    small_power: float
    tail_exponent: float
    tail_coef: float
    interpolation: str = "cubic-spline-log-r/not-a-knot"
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        r = np.asarray(self.r_grid, dtype=float)
        if r[0] <= 0 or np.any(np.diff(r) <= 0):
            raise ValueError("r_grid must be positive and strictly increasing")
        object.__setattr__(self, "_spline", CubicSpline(np.log(r), np.asarray(self.values, float)))

    @classmethod
    def with_matched_tail(cls, r_grid, values, value_at_zero, small_power, tail_exponent):
        coef = float(values[-1]) * float(r_grid[-1]) ** (-tail_exponent)
        return cls(np.asarray(r_grid, float), np.asarray(values, float), float(value_at_zero),
                   float(small_power), float(tail_exponent), coef)

    @property
    def r_min(self) -> float:
        return float(self.r_grid[0])

    @property
    def r_max(self) -> float:
        return float(self.r_grid[-1])

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        scalar = r.ndim == 0
        r = np.atleast_1d(r)
        out = np.empty_like(r)
        lo = r < self.r_min
        hi = r > self.r_max
        mid = ~(lo | hi)
        out[mid] = self._spline(np.log(r[mid]))
        v0, vmin = self.value_at_zero, float(self.values[0])
        out[lo] = v0 + (vmin - v0) * (r[lo] / self.r_min) ** self.small_power
        out[hi] = self.tail_coef * r[hi] ** self.tail_exponent
        return float(out[0]) if scalar else out


# ---------------------------------------------------------------------------
# mollifier


@dataclass(frozen=True, eq=False)
class MollifierProfile:
    """Radial probability density supported in the unit ball."""

    name: str
    radial_profile: Callable[[np.ndarray], np.ndarray]
    laplacian: Callable[[np.ndarray], np.ndarray]
    fourier_table: RadialTable
    support_radius: float = 1.0
    mass: float = 1.0

    def fourier(self, q):
        """Radial Fourier transform F[xi](q); zero beyond the tabulated range."""
        q = np.abs(np.asarray(q, dtype=float))
        out = self.fourier_table(q)
        return np.where(q > self.fourier_table.r_max, 0.0, out)


@functools.lru_cache(maxsize=32)
def _gauss_unit(n):
    x, w = roots_legendre(n)
    return 0.5 * (x + 1.0), 0.5 * w


def _bump_raw(r):
    r = np.asarray(r, dtype=float)
    inside = r < 1.0
    out = np.zeros_like(r)
    ri = r[inside]
    out[inside] = np.exp(-1.0 / (1.0 - ri * ri))
    return out


def _bump_lap_raw(r):
    # xi = exp(g), g = -1/(1-r^2); lap xi = xi (g'^2 + g'' + 2 g'/r)
    r = np.asarray(r, dtype=float)
    inside = r < 1.0
    out = np.zeros_like(r)
    ri = r[inside]
    a = 1.0 - ri * ri
    g1 = -2.0 * ri / a**2
    g2 = -2.0 / a**2 - 8.0 * ri * ri / a**3
    out[inside] = np.exp(-1.0 / a) * (g1 * g1 + g2 - 4.0 / a**2)
    return out


@functools.lru_cache(maxsize=None)
def bump_mollifier(n_quad: int = 4000, n_fourier: int = 4096) -> MollifierProfile:
    """Normalized bump exp(-1/(1-r^2)) on the unit ball.

    The Fourier table covers q in [1e-4, 1000]; the transform is below 1e-16
    there, so the tail model is zero.
    """
    s, w = _gauss_unit(n_quad)
    raw = _bump_raw(s)
    norm = 4.0 * math.pi * np.sum(w * s * s * raw)
    mass = 4.0 * math.pi * np.sum(w * s * s * raw / norm)
    if abs(mass - 1.0) > 1e-10:
        raise KernelConstructionError(f"mollifier mass {mass} != 1")

    q = np.geomspace(1e-4, 1e3, n_fourier)
    vals = np.empty_like(q)
    chunk = 256
    for i in range(0, q.size, chunk):
        qq = q[i:i + chunk, None]
        vals[i:i + chunk] = 4.0 * math.pi / qq[:, 0] * np.sum(w * s * raw / norm * np.sin(qq * s), axis=1)
    table = RadialTable(q, vals, 1.0, 2.0, 0.0, 0.0)

    return MollifierProfile(
        name="bump",
        radial_profile=lambda r: _bump_raw(r) / norm,
        laplacian=lambda r: _bump_lap_raw(r) / norm,
        fourier_table=table,
        mass=mass,
    )


# ---------------------------------------------------------------------------
# radial convolution


def _graded(a, c, n, toward):
    """Gauss nodes on [a, c] clustered cubically at the endpoint ``toward``."""
    t, w = _gauss_unit(n)
    t = t[None, :]
    w = w[None, :]
    a = np.asarray(a, float)[:, None]
    c = np.asarray(c, float)[:, None]
    span = c - a
    if toward == "left":
        s = a + span * t**3
    else:
        s = c - span * t**3
    return s, 3.0 * span * t * t * w


def radial_convolution(f, support, G, dG, rho, n=96, derivative=False):
    """(f * g)(|x| = rho) for radial f supported in [0, support].

    ``G(a) = int_0^a t g(t) dt`` and ``dG(a) = a g(a)``. Uses

        (f*g)(rho) = 2 pi / rho int_0^R s f(s) [G(rho+s) - G(|rho-s|)] ds,

    split at s = rho, with nodes graded toward the cusp. rho = 0 is the limit
    4 pi int s f(s) dG(s) ds. Returns values (and radial derivatives).
    """
    rho = np.atleast_1d(np.asarray(rho, dtype=float))
    val = np.zeros_like(rho)
    der = np.zeros_like(rho)
    R = float(support)

    zero = rho == 0.0
    if np.any(zero):
        s, w = _graded(np.zeros(1), np.full(1, R), 2 * n, "left")
        val[zero] = 4.0 * math.pi * np.sum(w * s * f(s) * dG(s))

    inner = (rho > 0) & (rho < R)
    outer = rho >= R
    pieces = []
    if np.any(inner):
        ri = rho[inner]
        s1, w1 = _graded(np.zeros_like(ri), ri, n, "right")
        s2, w2 = _graded(ri, np.full_like(ri, R), n, "left")
        pieces.append((inner, ri, np.hstack([s1, s2]), np.hstack([w1, w2])))
    if np.any(outer):
        ro = rho[outer]
        x, w = _gauss_unit(2 * n)
        s = np.broadcast_to(R * x, (ro.size, x.size))
        ww = np.broadcast_to(R * w, (ro.size, x.size))
        pieces.append((outer, ro, s, ww))

    for mask, r, s, w in pieces:
        rr = r[:, None]
        sf = w * s * f(s)
        diff = rr - s
        J = np.sum(sf * (G(rr + s) - G(np.abs(diff))), axis=1)
        v = 2.0 * math.pi * J / r
        val[mask] = v
        if derivative:
            dJ = np.sum(sf * (dG(rr + s) - np.sign(diff) * dG(np.abs(diff))), axis=1)
            der[mask] = -v / r + 2.0 * math.pi * dJ / r
    return (val, der) if derivative else val


def _power_G(coef, a_exp):
    """Antiderivative pair for g(t) = coef * t^-a_exp (a_exp < 2)."""
    b = 2.0 - a_exp
    return (lambda a: coef * np.power(a, b) / b,
            lambda a: coef * np.power(a, 1.0 - a_exp))


@functools.lru_cache(maxsize=8)
def _chi_tables(mollifier: MollifierProfile, n_s: int = 4097):
    """chi = xi*xi and lap chi = (lap xi)*xi on [0, 2], as splines."""
    xi = mollifier.radial_profile
    # P(a) = int_0^a t xi(t) dt, cumulative Gauss per cell
    edges = np.linspace(0.0, 1.0, 8193)
    t, w = _gauss_unit(10)
    h = np.diff(edges)[:, None]
    nodes = edges[:-1, None] + h * t[None, :]
    cell = np.sum(h * w[None, :] * nodes * xi(nodes), axis=1)
    P_vals = np.concatenate([[0.0], np.cumsum(cell)])
    P_spl = CubicSpline(edges, P_vals, bc_type=((1, 0.0), (1, 0.0)))
    P_end = float(P_vals[-1])

    def G(a):
        a = np.asarray(a, float)
        return np.where(a >= 1.0, P_end, P_spl(np.minimum(a, 1.0)))

    def dG(a):
        return a * xi(a)

    s = np.linspace(0.0, 2.0, n_s)
    chi = radial_convolution(xi, 1.0, G, dG, s, n=96)
    lap = radial_convolution(mollifier.laplacian, 1.0, G, dG, s, n=96)
    chi[-1] = 0.0
    lap[-1] = 0.0
    chi_spl = CubicSpline(s, chi, bc_type=((1, 0.0), (1, 0.0)))
    lap_spl = CubicSpline(s, lap, bc_type=((1, 0.0), (1, 0.0)))

    def chi_f(x):
        x = np.asarray(x, float)
        return np.where(x >= 2.0, 0.0, chi_spl(np.minimum(x, 2.0)))

    def lap_f(x):
        x = np.asarray(x, float)
        return np.where(x >= 2.0, 0.0, lap_spl(np.minimum(x, 2.0)))

    return chi_f, lap_f


# ---------------------------------------------------------------------------
# kernel set


@dataclass(frozen=True)
class TableConfig:
    n_nodes: int = 4096
    r_min_factor: float = 1e-3     # r_min = eta * factor
    r_max_factor: float = 100.0    # r_max = max(factor * eta, r_max_floor)
    r_max_floor: float = 50.0
    n_quad: int = 96
    check_points: int = 12
    check_tol: float = 1e-3


@dataclass(frozen=True, eq=False)
class RadialKernelSet:
    params: RieszParams
    eta: float
    V: RadialTable
    dV: RadialTable
    lapV: RadialTable
    Z: RadialTable
    c_psi: float
    mollifier: MollifierProfile = field(repr=False)
    check_max_rel: float = float("nan")

    @property
    def symbol_constant(self) -> float:
        return riesz_symbol_constant(self.params.lam, self.params.d)

    def symbol_Z(self, k):
        """F[Z^eta](k) = sqrt(C) |k|^((lam-3)/2) F[xi](eta k); 0 at k = 0."""
        k = np.abs(np.asarray(k, dtype=float))
        out = np.zeros_like(k)
        nz = k > 0
        out[nz] = (math.sqrt(self.symbol_constant) * k[nz] ** (0.5 * (self.params.lam - 3))
                   * self.mollifier.fourier(self.eta * k[nz]))
        return out

    def symbol_V(self, k):
        return self.symbol_Z(k) ** 2

    def table_hash(self) -> str:
        h = hashlib.sha256()
        for t in (self.V, self.dV, self.lapV, self.Z):
            h.update(np.ascontiguousarray(t.r_grid).tobytes())
            h.update(np.ascontiguousarray(t.values).tobytes())
            h.update(np.array([t.value_at_zero]).tobytes())
        h.update(json.dumps([self.params.d, self.params.lam, self.eta]).encode())
        return h.hexdigest()


def fourier_route_V(params: RieszParams, eta: float, mollifier: MollifierProfile, r):
    """V^eta(r) by inverse sine transform of C |k|^(lam-3) F[xi](eta k)^2.

    The pure Riesz part is subtracted analytically so the remaining integrand
    q^(lam-2) (chi_hat(q) - 1) is regular at q = 0; the oscillatory tail goes
    to QUADPACK's Fourier-integral rule.
    """
    lam = params.lam
    C = riesz_symbol_constant(lam, 3)
    out = []
    for ri in np.atleast_1d(r):
        rho = ri / eta

        def f(q):
            if q == 0.0:
                return 0.0
            return q ** (lam - 2.0) * (mollifier.fourier(q) ** 2 - 1.0)

        with warnings.catch_warnings():
            # QAWF flags the tabulated symbol's cutoff; accuracy is checked downstream
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, _ = integrate.quad(f, 0.0, np.inf, weight="sin", wvar=rho, epsabs=1e-13, limlst=200)
        out.append(eta ** (-lam) * (rho ** (-lam) + C / (2.0 * math.pi**2 * rho) * val))
    return np.array(out)


def fourier_route_lapV(params: RieszParams, eta: float, mollifier: MollifierProfile, r):
    """Lap V^eta(r) from the symbol -k^2 C |k|^(lam-3) F[xi](eta k)^2."""
    lam = params.lam
    C = riesz_symbol_constant(lam, 3)
    qmax = mollifier.fourier_table.r_max
    out = []
    for ri in np.atleast_1d(r):
        rho = ri / eta

        def f(q):
            return q**lam * mollifier.fourier(q) ** 2

        with warnings.catch_warnings():
            warnings.simplefilter("ignore", integrate.IntegrationWarning)
            val, _ = integrate.quad(f, 0.0, qmax, weight="sin", wvar=rho, epsabs=1e-14, limit=2000)
        out.append(-(eta ** (-lam - 2)) * C / (2.0 * math.pi**2 * rho) * val)
    return np.array(out)


def build_kernel_set(params: RieszParams, eta: float, mollifier: MollifierProfile | None = None,
                     table_cfg: TableConfig | None = None) -> RadialKernelSet:
    """Tabulate V^eta, (V^eta)', Lap V^eta and Z^eta.

    Values come from real-space radial convolution of the mollifier against
    the analytic power laws; the Fourier route is evaluated on
    [eta/2, 10 eta] and any relative mismatch above ``check_tol`` raises
    :class:`KernelConstructionError`.
    """
    params.require_d3()
    if eta <= 0:
        raise ValueError("eta must be positive")
    mollifier = mollifier or bump_mollifier()
    cfg = table_cfg or TableConfig()
    lam = params.lam
    mu = 0.5 * (lam + 3.0)
    c_psi = psi_constant(params)

    r_min = eta * cfg.r_min_factor
    r_max = max(cfg.r_max_factor * eta, cfg.r_max_floor)
    if r_max < 100 * eta:
        raise ValueError("table extent must reach 100 eta")
    r = np.geomspace(r_min, r_max, cfg.n_nodes)
    rho = r / eta
    rho0 = np.concatenate([[0.0], rho])

    chi, lap_chi = _chi_tables(mollifier)
    G, dG = _power_G(1.0, lam)
    v1, dv1 = radial_convolution(chi, 2.0, G, dG, rho0, n=cfg.n_quad, derivative=True)
    l1 = radial_convolution(lap_chi, 2.0, G, dG, rho0, n=cfg.n_quad)
    Gz, dGz = _power_G(c_psi, mu)
    z1 = radial_convolution(mollifier.radial_profile, 1.0, Gz, dGz, rho0, n=cfg.n_quad)

    # Gauss law near the origin: V'(rho) = rho^-2 int_0^rho s^2 lapV(s) ds
    small = rho0 < 1e-2
    small[0] = False
    lap0 = l1[0]
    dv1[small] = rho0[small] * (lap0 / 3.0 + (l1[small] - lap0) / 5.0)

    sV, sD, sL, sZ = eta ** (-lam), eta ** (-lam - 1), eta ** (-lam - 2), eta ** (-mu)
    V = RadialTable.with_matched_tail(r, sV * v1[1:], sV * v1[0], 2.0, -lam)
    dV = RadialTable.with_matched_tail(r, sD * dv1[1:], 0.0, 1.0, -lam - 1.0)
    lapV = RadialTable.with_matched_tail(r, sL * l1[1:], sL * l1[0], 2.0, -lam - 2.0)
    Z = RadialTable.with_matched_tail(r, sZ * z1[1:], sZ * z1[0], 2.0, -mu)

    rc = np.geomspace(0.5 * eta, 10.0 * eta, cfg.check_points)
    fv = fourier_route_V(params, eta, mollifier, rc)
    rel = np.abs(V(rc) / fv - 1.0)
    worst = float(rel.max())
    if not np.all(np.isfinite(rel)) or worst > cfg.check_tol:
        raise KernelConstructionError(
            f"Fourier/real-space mismatch {worst:.2e} > {cfg.check_tol:.0e} on [eta/2, 10 eta]"
        )
    return RadialKernelSet(params, float(eta), V, dV, lapV, Z, c_psi, mollifier, worst)


# ---------------------------------------------------------------------------
# evaluation


def eval_V(ks: RadialKernelSet, r):
    return ks.V(r)


def eval_dV(ks: RadialKernelSet, r):
    return ks.dV(r)


def eval_lapV(ks: RadialKernelSet, r):
    return ks.lapV(r)


def eval_Z(ks: RadialKernelSet, r):
    return ks.Z(r)


def eval_gradV(ks: RadialKernelSet, x):
    """(V^eta)'(|x|) x / |x|, the zero vector at the origin."""
    x = np.asarray(x, dtype=float)
    r = np.sqrt(np.sum(x * x, axis=-1))
    safe = np.where(r > 0, r, 1.0)
    coef = np.where(r > 0, np.asarray(ks.dV(safe)) / safe, 0.0)
    return coef[..., None] * x


def z_l2_norm(ks: RadialKernelSet) -> float:
    """||Z^eta||_L2 by radial quadrature of the table plus the analytic tail."""
    t = ks.Z
    s = np.log(t.r_grid)
    r = t.r_grid
    f = 4.0 * math.pi * r**3 * t.values**2        # integrand in d(log r)
    body = integrate.simpson(f, x=s)
    head = 4.0 * math.pi * t.value_at_zero**2 * t.r_min**3 / 3.0
    p = 2.0 * t.tail_exponent + 3.0                # r^2 Z^2 ~ r^(p-1), p < 0
    tail = -4.0 * math.pi * t.tail_coef**2 * t.r_max**p / p
    return math.sqrt(body + head + tail)


# ---------------------------------------------------------------------------
# factorization oracle


def psi_square_ratio(params: RieszParams, r):
    """(Psi*Psi)(r) / Phi(r) by adaptive quadrature of the 3-D radial identity.

    Independent of the tables: uses the closed-form antiderivative of
    t Psi(t) and splits the integral at r and 2r where the integrand has
    power singularities.
    """
    params.require_d3()
    lam = params.lam
    c = psi_constant(params)
    mu = 0.5 * (lam + 3.0)

    def G(a):
        return c * a ** (2.0 - mu) / (2.0 - mu)

    out = []
    for rr in np.atleast_1d(np.asarray(r, dtype=float)):
        def f(s, rr=rr):
            return s * c * s ** (-mu) * (G(rr + s) - G(abs(rr - s)))

        total = 0.0
        for a, b in ((0.0, rr), (rr, 2.0 * rr), (2.0 * rr, np.inf)):
            total += integrate.quad(f, a, b, limit=200, epsabs=0.0, epsrel=1e-10)[0]
        out.append(2.0 * math.pi / rr * total * rr**lam)
    return np.array(out)


# ---------------------------------------------------------------------------
# scaling


@dataclass
class ScalingReport:
    quantity: str
    Ns: np.ndarray
    etas: np.ndarray
    norms: np.ndarray
    dense_norms: np.ndarray
    slope: float
    predicted: float


def _sup_norm(ks: RadialKernelSet, k: int, r):
    if k == 0:
        return np.max(np.abs(ks.V(r)))
    d1 = ks.dV(r)
    if k == 1:
        return np.max(np.abs(d1))
    if k == 2:
        rp = r[r > 0]
        d1p = ks.dV(rp)
        d2 = ks.lapV(rp) - 2.0 * d1p / rp
        return max(np.max(np.abs(d2)), np.max(np.abs(d1p / rp)), abs(ks.lapV(0.0)) / 3.0)
    raise ValueError("derivative order must be 0, 1 or 2")


def verify_scaling_bounds(params: RieszParams, beta: float, N_list, k, mollifier=None,
                          table_cfg=None) -> ScalingReport:
    """Fit log sup|D^k V^eta| (or log ||Z^eta||_L2 for k == 'Z') against log N.

    Sup norms are taken on the table nodes; ``dense_norms`` repeats the search
    on a dense uniform grid over [0, 20 eta] as a cross-check.
    """
    N_list = np.asarray(N_list, dtype=float)
    if N_list.size < 4:
        raise ValueError("need at least 4 particle counts")
    etas = N_list ** (-beta)
    norms, dense = [], []
    for eta in etas:
        ks = build_kernel_set(params, float(eta), mollifier, table_cfg)
        if k == "Z":
            norms.append(z_l2_norm(ks))
            dense.append(math.sqrt(ks.V(0.0)))
        else:
            nodes = np.concatenate([[0.0], ks.V.r_grid])
            norms.append(_sup_norm(ks, int(k), nodes))
            dense.append(_sup_norm(ks, int(k), np.linspace(0.0, 20.0 * eta, 20001)))
    norms = np.array(norms)
    slope = float(np.polyfit(np.log(N_list), np.log(norms), 1)[0])
    lam = params.lam
    predicted = beta * lam / 2 if k == "Z" else beta * (lam + int(k))
    return ScalingReport(str(k), N_list, etas, norms, np.array(dense), slope, predicted)


# ---------------------------------------------------------------------------
# persistence

_TABLE_NAMES = ("V", "dV", "lapV", "Z")


def save_kernel_set(ks: RadialKernelSet, path) -> Path:
    """Write an .npz table file with a JSON header and sha256 checksum."""
    path = Path(path)
    arrays = {}
    meta = {"format": "rieszmf-kernel-table", "version": 1, "d": ks.params.d,
            "lambda": ks.params.lam, "eta": ks.eta, "c_psi": ks.c_psi,
            "mollifier": ks.mollifier.name, "check_max_rel": ks.check_max_rel, "tables": {}}
    for name in _TABLE_NAMES:
        t = getattr(ks, name)
        arrays[f"{name}_r"] = t.r_grid
        arrays[f"{name}_v"] = t.values
        meta["tables"][name] = {"n": int(t.r_grid.size), "r_min": t.r_min, "r_max": t.r_max,
                                "value_at_zero": t.value_at_zero, "small_power": t.small_power,
                                "tail_exponent": t.tail_exponent, "tail_coef": t.tail_coef,
                                "interpolation": t.interpolation}
    meta["checksum"] = ks.table_hash()
    with open(path, "wb") as fh:
        np.savez(fh, header=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    return path


def load_kernel_set(path) -> RadialKernelSet:
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["header"]))
        if meta.get("format") != "rieszmf-kernel-table":
            raise ValueError(f"{path}: not a kernel table file")
        tables = {}
        for name in _TABLE_NAMES:
            m = meta["tables"][name]
            tables[name] = RadialTable(data[f"{name}_r"].copy(), data[f"{name}_v"].copy(),
                                       m["value_at_zero"], m["small_power"], m["tail_exponent"],
                                       m["tail_coef"])
    if meta["mollifier"] != "bump":
        raise ValueError(f"unknown mollifier {meta['mollifier']!r}")
    ks = RadialKernelSet(RieszParams(meta["d"], meta["lambda"]), meta["eta"], tables["V"],
                         tables["dV"], tables["lapV"], tables["Z"], meta["c_psi"],
                         bump_mollifier(), meta["check_max_rel"])
    if ks.table_hash() != meta["checksum"]:
        raise ValueError(f"{path}: checksum mismatch")
    return ks
