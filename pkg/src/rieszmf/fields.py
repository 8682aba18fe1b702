"""Spectral solvers on a periodic box standing in for R^3.

All operators act on real fields sampled at ``x_j = -L/2 + j h``. The
transport part of every scheme is the composition of three real linear
maps, each of which has an exact transpose under the grid inner product
``h^3 sum f g``:

* ``D_j``  spectral derivative (odd symbol i k_j, Nyquist removed),
* ``G_j``  convolution with the gradient of the interaction kernel
  (odd symbol i k_j S(|k|)),
* pointwise multiplication (symmetric).

The backward dual is built as the literal transpose of the forward
linearized step, so the pairing identity holds to roundoff.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.fft as sfft
from scipy import ndimage
from scipy.special import gamma

from .kernels import RadialKernelSet, RieszParams, riesz_symbol_constant

log = logging.getLogger(__name__)

__all__ = [
    "Box",
    "GridField",
    "PdeConfig",
    "Trajectory",
    "InitialDensity",
    "CFLError",
    "NumericalError",
    "BoxMismatchError",
    "solve_intermediate",
    "solve_limit",
    "solve_linearized",
    "solve_backward_dual",
    "quadrature",
    "inner",
    "lp_norm",
    "grad_norm_sq",
    "drift_at",
    "sample_field",
    "convolve_radial",
    "lp_star_threshold",
]

FFT_WORKERS = 1


class CFLError(ValueError):
    def __init__(self, msg, suggested_dt):
        super().__init__(f"{msg}; suggested dt <= {suggested_dt:.3g}")
        self.suggested_dt = suggested_dt


class NumericalError(RuntimeError):
    def __init__(self, msg, step=None):
        super().__init__(msg if step is None else f"{msg} (step {step})")
        self.step = step


class BoxMismatchError(ValueError):
    pass


@dataclass(frozen=True)
class Box:
    L: float = 16.0
    M: int = 64
    d: int = 3

    def __post_init__(self):
        if self.d != 3:
            raise NotImplementedError("only d = 3 boxes are supported")
        if self.M < 16 or self.M & (self.M - 1):
            raise ValueError(f"M must be a power of two >= 16, got {self.M}")
        if self.L <= 0:
            raise ValueError("box side must be positive")

    @property
    def h(self) -> float:
        return self.L / self.M

    @property
    def cell_volume(self) -> float:
        return self.h**3

    @property
    def axis(self) -> np.ndarray:
        return -0.5 * self.L + self.h * np.arange(self.M)

    def mesh(self):
        a = self.axis
        return np.meshgrid(a, a, a, indexing="ij")

    def radius(self) -> np.ndarray:
        X, Y, Z = self.mesh()
        return np.sqrt(X * X + Y * Y + Z * Z)

    def wavenumbers(self):
        """(kx, ky, kz) broadcastable to the rfftn layout, plus integer indices."""
        n = np.fft.fftfreq(self.M, d=1.0 / self.M)
        nz = np.fft.rfftfreq(self.M, d=1.0 / self.M)
        s = 2.0 * math.pi / self.L
        return (s * n[:, None, None], s * n[None, :, None], s * nz[None, None, :]), \
               (n[:, None, None], n[None, :, None], nz[None, None, :])

    def kmag(self) -> np.ndarray:
        (kx, ky, kz), _ = self.wavenumbers()
        return np.sqrt(kx * kx + ky * ky + kz * kz)

    def dealias_mask(self, on=True) -> np.ndarray:
        """2/3-rule mask; with ``on=False`` only the Nyquist planes are removed."""
        _, (nx, ny, nz) = self.wavenumbers()
        cut = self.M / 3.0 if on else self.M / 2.0
        return (np.abs(nx) < cut) & (np.abs(ny) < cut) & (np.abs(nz) < cut)

    def wrap(self, x):
        """Map positions onto [-L/2, L/2)."""
        return (np.asarray(x) + 0.5 * self.L) % self.L - 0.5 * self.L


@dataclass
class GridField:
    box: Box
    values: np.ndarray
    time: float = 0.0

    def __post_init__(self):
        M = self.box.M
        if self.values.shape not in ((M, M, M), (3, M, M, M)):
            raise ValueError(f"field shape {self.values.shape} does not match box M={M}")

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 4


@dataclass(frozen=True)
class PdeConfig:
    sigma: float = 0.25
    kappa: float = 1.0
    dt: float = 0.01
    T_end: float = 0.5
    dealias: bool = True
    save_every: int = 1
    interaction: bool = True     # test hook: False drops the kappa term
    cfl: float = 0.5

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.dt <= 0 or self.T_end < 0:
            raise ValueError("dt must be positive and T_end nonnegative")
        if self.save_every < 1:
            raise ValueError("save_every must be >= 1")

    @property
    def n_steps(self) -> int:
        n = round(self.T_end / self.dt)
        if abs(n * self.dt - self.T_end) > 1e-9 * max(1.0, self.T_end):
            raise ValueError("T_end must be an integer multiple of dt")
        return int(n)

    @property
    def effective_kappa(self) -> float:
        return self.kappa if self.interaction else 0.0


# ---------------------------------------------------------------------------
# initial data


@dataclass(frozen=True)
class InitialDensity:
    """Isotropic Gaussian mixture: ``components`` = ((weight, (cx, cy, cz), std), ...)."""

    components: tuple = ((1.0, (0.0, 0.0, 0.0), 1.0),)

    def __post_init__(self):
        w = [c[0] for c in self.components]
        if not self.components or min(w) <= 0 or abs(sum(w) - 1.0) > 1e-12:
            raise ValueError("mixture weights must be positive and sum to 1")
        if any(c[2] <= 0 for c in self.components):
            raise ValueError("component std must be positive")

    @classmethod
    def gaussian(cls, std=1.0, center=(0.0, 0.0, 0.0)):
        return cls(((1.0, tuple(float(c) for c in center), float(std)),))

    @classmethod
    def two_bump(cls, sep=2.0, std=0.8, weight=0.5):
        return cls(((weight, (-0.5 * sep, 0.0, 0.0), std), (1.0 - weight, (0.5 * sep, 0.0, 0.0), std)))

    def density(self, x):
        x = np.asarray(x, dtype=float)
        out = 0.0
        for w, c, s in self.components:
            r2 = np.sum((x - np.asarray(c)) ** 2, axis=-1)
            out = out + w * (2 * math.pi * s * s) ** -1.5 * np.exp(-0.5 * r2 / (s * s))
        return out

    def render(self, box: Box) -> GridField:
        """Density on the grid, renormalized to unit grid mass."""
        X, Y, Z = box.mesh()
        vals = self.density(np.stack([X, Y, Z], axis=-1))
        vals = vals / (np.sum(vals) * box.cell_volume)
        return GridField(box, vals, 0.0)

    def mean(self):
        return sum(w * np.asarray(c) for w, c, _ in self.components)

    def sample_from_normals(self, normals, uniforms):
        """Map standard normals (N, 3) and uniforms (N,) to mixture samples."""
        w = np.array([c[0] for c in self.components])
        idx = np.searchsorted(np.cumsum(w)[:-1], uniforms, side="right")
        centers = np.array([c[1] for c in self.components])
        stds = np.array([c[2] for c in self.components])
        return centers[idx] + stds[idx, None] * normals

    def to_dict(self):
        return {"components": [[w, list(c), s] for w, c, s in self.components]}

    @classmethod
    def from_dict(cls, d):
        return cls(tuple((float(w), tuple(float(v) for v in c), float(s)) for w, c, s in d["components"]))


# ---------------------------------------------------------------------------
# grid quadrature


def _same_box(*fields):
    b = fields[0].box
    for f in fields[1:]:
        if f.box != b:
            raise BoxMismatchError(f"box mismatch: {b} vs {f.box}")
    return b


def quadrature(f: GridField) -> float:
    """Trapezoid rule on the torus (plain h^3-weighted sum)."""
    return float(np.sum(f.values) * f.box.cell_volume)


def inner(a: GridField, b: GridField) -> float:
    box = _same_box(a, b)
    return float(np.sum(a.values * b.values) * box.cell_volume)


def lp_norm(f: GridField, p=2) -> float:
    v = np.abs(f.values)
    if p == np.inf or p == "inf":
        return float(v.max())
    p = float(p)
    return float((np.sum(v**p) * f.box.cell_volume) ** (1.0 / p))


def _rfft(a):
    return sfft.rfftn(a, axes=(-3, -2, -1), workers=FFT_WORKERS)


def _irfft(a, M):
    return sfft.irfftn(a, s=(M, M, M), axes=(-3, -2, -1), workers=FFT_WORKERS)


def spectral_gradient(f: GridField) -> np.ndarray:
    box = f.box
    (kx, ky, kz), _ = box.wavenumbers()
    mask = box.dealias_mask(on=False)
    fh = _rfft(f.values)
    return np.stack([_irfft(1j * k * mask * fh, box.M) for k in (kx, ky, kz)])


def grad_norm_sq(f: GridField) -> float:
    """||grad f||^2_L2 with the spectral gradient."""
    g = spectral_gradient(f)
    return float(np.sum(g * g) * f.box.cell_volume)


# ---------------------------------------------------------------------------
# operators


class _TransportOps:
    """Spectral building blocks shared by all solvers on one box/symbol."""

    def __init__(self, box: Box, symbol: np.ndarray, cfg: PdeConfig):
        self.box = box
        self.cfg = cfg
        (kx, ky, kz), _ = box.wavenumbers()
        self.k = (kx, ky, kz)
        mask = box.dealias_mask(cfg.dealias).astype(float)
        self.dmask = [1j * k * mask for k in self.k]               # D_j
        self.gmask = [1j * k * mask * symbol for k in self.k]      # G_j
        k2 = kx * kx + ky * ky + kz * kz
        self.heat = 1.0 / (1.0 + cfg.sigma * cfg.dt * k2)

    def D(self, g):
        gh = _rfft(g)
        return np.stack([_irfft(s * gh, self.box.M) for s in self.dmask])

    def div(self, flux):
        fh = _rfft(flux)
        acc = sum(self.dmask[j] * fh[j] for j in range(3))
        return acc   # spectral

    def G(self, f):
        fh = _rfft(f)
        return np.stack([_irfft(s * fh, self.box.M) for s in self.gmask])

    def G_vec_sum(self, g):
        """sum_j G_j g_j in physical space."""
        gh = _rfft(g)
        return _irfft(sum(self.gmask[j] * gh[j] for j in range(3)), self.box.M)

    def heat_apply(self, f):
        return _irfft(self.heat * _rfft(f), self.box.M)


def riesz_grid_symbol(box: Box, params: RieszParams) -> np.ndarray:
    """C |k|^(lam-3) on the rfft grid, 0 at k = 0."""
    k = box.kmag()
    out = np.zeros_like(k)
    nz = k > 0
    out[nz] = riesz_symbol_constant(params.lam, 3) * k[nz] ** (params.lam - 3.0)
    return out


def mollified_grid_symbol(box: Box, ks: RadialKernelSet) -> np.ndarray:
    return ks.symbol_V(box.kmag())


# ---------------------------------------------------------------------------
# trajectory


@dataclass
class Trajectory:
    box: Box
    times: np.ndarray
    densities: np.ndarray          # (n, M, M, M)
    config: PdeConfig
    symbol: np.ndarray = field(repr=False)     # S(|k|), 0 at k = 0
    kind: str = "intermediate"
    meta: dict = field(default_factory=dict)
    _drifts: np.ndarray | None = field(default=None, repr=False)

    @property
    def fields(self):
        return [GridField(self.box, d, t) for d, t in zip(self.densities, self.times)]

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    @property
    def stride(self) -> float:
        return float(self.times[1] - self.times[0]) if self.times.size > 1 else 0.0

    @property
    def drift_fields(self) -> np.ndarray:
        """kappa grad(S) * u at every checkpoint, (n, 3, M, M, M); cached."""
        if self._drifts is None:
            ops = _TransportOps(self.box, self.symbol, self.config)
            kap = self.config.effective_kappa
            self._drifts = np.stack([kap * ops.G(d) for d in self.densities])
        return self._drifts

    def density_at(self, t) -> np.ndarray:
        """Linear interpolation between checkpoints."""
        i, w = self._locate(t)
        if w == 0.0:
            return self.densities[i]
        return (1.0 - w) * self.densities[i] + w * self.densities[i + 1]

    def _locate(self, t):
        t = float(t)
        tol = 1e-9 * max(1.0, self.t_end)
        if t < -tol or t > self.t_end + tol:
            raise ValueError(f"t={t} outside trajectory span [0, {self.t_end}]")
        if self.times.size == 1:
            return 0, 0.0
        x = t / self.stride
        i = int(round(x))
        if abs(x - i) < 1e-9:
            return min(i, self.times.size - 1), 0.0
        i = int(math.floor(x))
        return i, x - i

    def config_hash(self) -> str:
        blob = json.dumps({"box": asdict(self.box), "cfg": asdict(self.config), "kind": self.kind,
                           "meta": self.meta}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def save(self, run_dir) -> Path:
        """Raw little-endian float64 arrays plus a JSON sidecar."""
        run_dir = Path(run_dir)
        run_dir.mkdir(parents=True, exist_ok=True)
        self.densities.astype("<f8").tofile(run_dir / "densities.f64")
        np.asarray(self.symbol, dtype="<f8").tofile(run_dir / "symbol.f64")
        side = {"box": asdict(self.box), "times": [float(t) for t in self.times],
                "config": asdict(self.config), "kind": self.kind, "meta": self.meta,
                "config_hash": self.config_hash(), "dtype": "<f8",
                "shape": list(self.densities.shape), "symbol_shape": list(self.symbol.shape)}
        (run_dir / "trajectory.json").write_text(json.dumps(side, indent=2, sort_keys=True))
        return run_dir

    @classmethod
    def load(cls, run_dir) -> "Trajectory":
        run_dir = Path(run_dir)
        side = json.loads((run_dir / "trajectory.json").read_text())
        box = Box(**side["box"])
        dens = np.fromfile(run_dir / "densities.f64", dtype="<f8").reshape(side["shape"])
        sym = np.fromfile(run_dir / "symbol.f64", dtype="<f8").reshape(side["symbol_shape"])
        traj = cls(box, np.array(side["times"]), dens, PdeConfig(**side["config"]), sym,
                   side["kind"], side["meta"])
        if traj.config_hash() != side["config_hash"]:
            raise ValueError(f"{run_dir}: config hash mismatch")
        return traj


# ---------------------------------------------------------------------------
# solvers


def _check_initial(u0: GridField):
    v = u0.values
    if np.any(v < 0):
        raise ValueError("initial density must be nonnegative")
    mass = quadrature(u0)
    if abs(mass - 1.0) > 1e-10:
        raise ValueError(f"initial density must have unit mass, got {mass}")
    r_inf = np.max(np.abs(np.stack(u0.box.mesh())), axis=0)
    face = v[r_inf >= 0.5 * u0.box.L - 0.5 * u0.box.h]
    if face.max() > 1e-12:
        raise ValueError("initial density is not decayed below 1e-12 at the box boundary")
    band = v[r_inf >= 0.25 * u0.box.L].max()
    if band > 1e-12:
        log.info("initial density reaches %.2e within L/4 of the boundary", band)


def _check_cfl(drift, box, cfg, step):
    vmax = float(np.max(np.abs(drift))) if drift is not None else 0.0
    if vmax > 0 and cfg.dt * vmax / box.h > cfg.cfl:
        raise CFLError(f"advective CFL violated at step {step}: dt*|b|/h = {cfg.dt * vmax / box.h:.3f}",
                       cfg.cfl * box.h / vmax)


def _check_finite(a, step):
    if not np.all(np.isfinite(a)):
        raise NumericalError("non-finite values in PDE state", step)


def _monitor_positivity(u, step, stats):
    umax = u.max()
    umin = u.min()
    if umin < -1e-8 * umax:
        n = stats.get("positivity_violations", 0)
        if n == 0:
            log.warning("negative density %.3e at step %d (max %.3e); further violations counted only",
                        umin, step, umax)
        stats["positivity_violations"] = n + 1
    stats["min_ratio"] = min(stats.get("min_ratio", 0.0), float(umin / umax))


def _run_nonlinear(u0: GridField, symbol, cfg: PdeConfig, kind, meta) -> Trajectory:
    _check_initial(u0)
    box = u0.box
    ops = _TransportOps(box, symbol, cfg)
    kap = cfg.effective_kappa
    n = cfg.n_steps
    u = u0.values.copy()
    uh = _rfft(u)
    saved, times = [u.copy()], [0.0]
    stats: dict = {}
    for step in range(n):
        if kap != 0.0:
            b = kap * np.stack([_irfft(g * uh, box.M) for g in ops.gmask])
            _check_cfl(b, box, cfg, step)
            trans = ops.div(u[None] * b)
            uh = ops.heat * (uh - cfg.dt * trans)
        else:
            uh = ops.heat * uh
        u = _irfft(uh, box.M)
        _check_finite(u, step)
        _monitor_positivity(u, step, stats)
        if (step + 1) % cfg.save_every == 0:
            saved.append(u.copy())
            times.append((step + 1) * cfg.dt)
    meta = dict(meta, **stats)
    return Trajectory(box, np.array(times), np.array(saved), cfg, symbol, kind, meta)


def solve_intermediate(u0: GridField, ks: RadialKernelSet, cfg: PdeConfig) -> Trajectory:
    """Semi-implicit spectral solve of the mollified aggregation-diffusion equation."""
    sym = mollified_grid_symbol(u0.box, ks)
    return _run_nonlinear(u0, sym, cfg, "intermediate",
                          {"eta": ks.eta, "lambda": ks.params.lam, "kernel": ks.table_hash()[:16]})


def solve_limit(u0: GridField, params: RieszParams, cfg: PdeConfig) -> Trajectory:
    """Same scheme with the pure Riesz symbol."""
    params.require_d3()
    sym = riesz_grid_symbol(u0.box, params)
    return _run_nonlinear(u0, sym, cfg, "limit", {"eta": 0.0, "lambda": params.lam})


def _grid_steps(s0, t, dt):
    n = (t - s0) / dt
    k = int(round(n))
    if k < 0 or abs(n - k) > 1e-9 * max(1.0, abs(n)):
        raise ValueError("t - s0 must be a nonnegative multiple of dt")
    return k


def _linearized_ops(u_traj: Trajectory, cfg: PdeConfig):
    if u_traj.box is None:
        raise ValueError("trajectory has no box")
    return _TransportOps(u_traj.box, u_traj.symbol, cfg)


def _transport(ops, u, b, f, kap):
    """A f = -kappa sum_j D_j (b_j f + u G_j f), spectral output."""
    flux = b * f[None] + u[None] * ops.G(f)
    return -kap * ops.div(flux)


def _transport_T(ops, u, b, w, kap):
    """A^T w = kappa (b . D w - sum_j G_j (u D_j w)), physical output."""
    Dw = ops.D(w)
    return kap * (np.sum(b * Dw, axis=0) - ops.G_vec_sum(u[None] * Dw))


def solve_linearized(f0: GridField, s0: float, t: float, u_traj: Trajectory,
                     cfg: PdeConfig) -> GridField:
    """Forward solve of the equation linearized around the trajectory.

    Step: f <- H (f + dt A(t_n) f), with A the linearized transport at the
    left end of the step and H the implicit heat factor.
    """
    if t > u_traj.t_end + 1e-9 or s0 < -1e-12:
        raise ValueError("trajectory does not cover [s0, t]")
    ops = _linearized_ops(u_traj, cfg)
    kap = cfg.effective_kappa
    n = _grid_steps(s0, t, cfg.dt)
    f = f0.values.copy()
    for step in range(n):
        tn = s0 + step * cfg.dt
        fh = _rfft(f)
        if kap != 0.0:
            u = u_traj.density_at(tn)
            b = ops.G(u)
            fh = fh + cfg.dt * _transport(ops, u, b, f, kap)
        f = _irfft(ops.heat * fh, f0.box.M)
        _check_finite(f, step)
    return GridField(f0.box, f, t)


def solve_backward_dual(phi: GridField, t: float, u_traj: Trajectory, cfg: PdeConfig,
                        s_stop: float = 0.0) -> Trajectory:
    """Backward dual T_phi^t(s) for s in [s_stop, t], stored in increasing s.

    Runs forward in reversed time w(s) = v(t - s). Each step applies the heat
    factor then the explicit transposed transport, which is the exact
    transpose of :func:`solve_linearized`'s step.
    """
    if t > u_traj.t_end + 1e-9:
        raise ValueError("trajectory does not cover [0, t]")
    if phi.box != u_traj.box:
        raise BoxMismatchError("phi and trajectory boxes differ")
    ops = _linearized_ops(u_traj, cfg)
    kap = cfg.effective_kappa
    n = _grid_steps(s_stop, t, cfg.dt)
    w = phi.values.copy()
    out = [w.copy()]
    for m in range(n):
        tn = t - (m + 1) * cfg.dt
        w = ops.heat_apply(w)
        if kap != 0.0:
            u = u_traj.density_at(tn)
            b = ops.G(u)
            w = w + cfg.dt * _transport_T(ops, u, b, w, kap)
        _check_finite(w, m)
        out.append(w.copy())
    vals = np.array(out[::-1])
    times = t - cfg.dt * np.arange(n, -1, -1)
    times[0] = s_stop
    return Trajectory(phi.box, times, vals, cfg, u_traj.symbol, "dual",
                      {"t": float(t), "s_stop": float(s_stop), "source": u_traj.kind})


# ---------------------------------------------------------------------------
# sampling


def drift_at(traj: Trajectory, t: float, mode: str = "nearest") -> GridField:
    """kappa grad S * u at time t, nearest checkpoint or linear blend."""
    i, w = traj._locate(t)
    dr = traj.drift_fields
    if w == 0.0:
        return GridField(traj.box, dr[i], float(t))
    if mode == "nearest":
        j = i if w < 0.5 else i + 1
        return GridField(traj.box, dr[j], float(t))
    if mode == "linear":
        return GridField(traj.box, (1 - w) * dr[i] + w * dr[i + 1], float(t))
    raise ValueError(f"unknown time interpolation mode {mode!r}")


def _grid_coords(box: Box, x):
    x = np.atleast_2d(np.asarray(x, dtype=float))
    return ((box.wrap(x) + 0.5 * box.L) / box.h) % box.M


def _trilinear(values, g, M):
    i0 = np.floor(g).astype(np.int64)
    fr = g - i0
    i0 %= M
    i1 = (i0 + 1) % M
    out = 0.0
    for cx in (0, 1):
        ix = i1[:, 0] if cx else i0[:, 0]
        wx = fr[:, 0] if cx else 1.0 - fr[:, 0]
        for cy in (0, 1):
            iy = i1[:, 1] if cy else i0[:, 1]
            wy = fr[:, 1] if cy else 1.0 - fr[:, 1]
            for cz in (0, 1):
                iz = i1[:, 2] if cz else i0[:, 2]
                wz = fr[:, 2] if cz else 1.0 - fr[:, 2]
                out = out + (wx * wy * wz) * values[..., ix, iy, iz]
    return out


def sample_field(f: GridField, x, order: int = 1, coeffs=None):
    """Periodic interpolation at positions x (N, 3).

    order 1 is trilinear; higher orders use spline interpolation (pass
    ``coeffs`` from :func:`spline_coefficients` to skip the prefilter).
    Vector fields return (N, 3).
    """
    box = f.box
    g = _grid_coords(box, x)
    if order == 1:
        out = _trilinear(f.values, g, box.M)
        return out.T if f.is_vector else out
    if coeffs is None:
        coeffs = spline_coefficients(f, order)
    cf = coeffs if f.is_vector else coeffs[None]
    res = np.stack([ndimage.map_coordinates(c, g.T, order=order, mode="grid-wrap", prefilter=False)
                    for c in cf])
    return res.T if f.is_vector else res[0]


def spline_coefficients(f: GridField, order: int):
    if f.is_vector:
        return np.stack([ndimage.spline_filter(c, order=order, mode="grid-wrap") for c in f.values])
    return ndimage.spline_filter(f.values, order=order, mode="grid-wrap")


def convolve_radial(f: GridField, radial: Callable[[np.ndarray], np.ndarray]) -> GridField:
    """Whole-space convolution with a radial kernel sampled at minimum-image distances.

    Exact (up to quadrature) for points x, y with |x - y| < L/2, which covers
    any field concentrated in the central half of the box.
    """
    box = f.box
    a = box.axis
    rr = np.sqrt(a[:, None, None] ** 2 + a[None, :, None] ** 2 + a[None, None, :] ** 2)
    kern = np.fft.ifftshift(radial(rr))      # centre -> index 0
    out = _irfft(_rfft(kern) * _rfft(f.values), box.M) * box.cell_volume
    return GridField(box, out, f.time)


# ---------------------------------------------------------------------------
# smallness diagnostic


def lp_star_threshold(params: RieszParams, sigma: float) -> float:
    """Diagnostic C(p*) = 4 sigma / (p* C') for the L^{p*} smallness condition.

    C' = lam (d-2-lam) * C_HLS * S_d^2 with the Lieb-Loss upper bound for the
    Hardy-Littlewood-Sobolev constant (exponents d/(d-2), p*, kernel
    |x|^-(lam+2)) and the sharp Sobolev constant. Only an indication: the
    constant behind the smallness condition is not sharp.
    """
    d, lam = params.d, params.lam
    p = d / (d - 2.0)
    q = params.p_star
    mu = lam + 2.0
    area = 2.0 * math.pi ** (d / 2) / gamma(d / 2)
    t = mu / d
    c_hls = d / ((d - mu) * p * q) * (area / d) ** t * (
        (t / (1.0 - 1.0 / p)) ** t + (t / (1.0 - 1.0 / q)) ** t)
    sob = (math.pi * d * (d - 2.0)) ** -0.5 * (gamma(d) / gamma(d / 2)) ** (1.0 / d)
    c_prime = lam * (d - 2.0 - lam) * c_hls * sob**2
    return 4.0 * sigma / (q * c_prime)
