"""Synchronously coupled Euler-Maruyama for the interacting and mean-field systems.

The interacting system needs all pairs at every step. The pair loop is a
numba kernel parallel over the target particle with a serial inner loop,
so every per-particle sum is accumulated in the same order regardless of
the number of threads. Besides the force it returns the per-particle sums
of V and Lap V, which the error functionals need at the same positions.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from . import rng
from .fields import Box, InitialDensity, NumericalError, Trajectory, drift_at, sample_field
from .kernels import RadialKernelSet

log = logging.getLogger(__name__)

# the bundled TBB is too old for numba; pick a layer explicitly to avoid the warning
if numba.config.THREADING_LAYER == "default":
    numba.config.THREADING_LAYER = "omp"

__all__ = [
    "EnsembleConfig",
    "CoupledEnsemble",
    "CouplingRecord",
    "PairTable",
    "pair_table",
    "init_ensemble",
    "pairwise_drift",
    "pairwise_sums",
    "meanfield_drift",
    "em_step",
    "run_coupled",
]


@dataclass(frozen=True)
class EnsembleConfig:
    N: int
    beta: float = 0.05
    sigma: float = 0.25
    kappa: float = 1.0
    dt: float = 0.01
    T_end: float = 0.5
    seed: int = 20240601
    realization_id: int = 0
    init: InitialDensity = field(default_factory=InitialDensity)
    alphas: tuple = (0.3,)
    save_every: int = 1
    interaction: bool = True   # test hook: False removes the force in both systems

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be >= 1")
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def eta(self) -> float:
        return float(self.N) ** (-self.beta)

    @property
    def n_steps(self) -> int:
        n = round(self.T_end / self.dt)
        if abs(n * self.dt - self.T_end) > 1e-9 * max(1.0, self.T_end):
            raise ValueError("T_end must be an integer multiple of dt")
        return int(n)

    @property
    def effective_kappa(self) -> float:
        return self.kappa if self.interaction else 0.0


@dataclass
class CoupledEnsemble:
    X: np.ndarray
    Xbar: np.ndarray
    t: float
    step: int
    cfg: EnsembleConfig
    box: Box

    @property
    def rng_key(self):
        return (self.cfg.seed, self.cfg.realization_id)

    def coupling_distance(self) -> float:
        d = self.box.wrap(self.X - self.Xbar)
        return float(np.sqrt(np.max(np.sum(d * d, axis=1))))


@dataclass
class CouplingRecord:
    times: np.ndarray
    max_dist: np.ndarray
    running_sup: np.ndarray
    alphas: tuple
    exceed: dict                    # alpha -> bool array, running_sup > N^-alpha
    pair_sum_V: np.ndarray          # (1/N^2) sum_ij V(X_i - X_j) at every step
    pair_sum_lapV: np.ndarray
    positions_X: np.ndarray         # (n_saved, N, 3)
    positions_Xbar: np.ndarray
    saved_times: np.ndarray
    escaped: int = 0                # particles found beyond L/4 of the centre

    def exceeded(self, alpha) -> bool:
        return bool(self.exceed[alpha][-1])


# ---------------------------------------------------------------------------
# pair kernel


@dataclass(frozen=True, eq=False)
class PairTable:
    """Cubic lookup of (V'(r)/r, V(r), Lap V(r)) on a uniform grid in u = r^2."""

    data: np.ndarray      # (n + 3, 3), one ghost node on each side and one spare
    du: float
    u_max: float
    L: float
    eta: float


def pair_table(ks: RadialKernelSet, box: Box, n: int = 1 << 17) -> PairTable:
    u_max = 3.0 * (0.5 * box.L) ** 2 * 1.0001
    du = u_max / n
    u = du * np.arange(-1, n + 2, dtype=float)
    r = np.sqrt(np.abs(u))
    rs = np.where(r > 0, r, 1.0)
    g = np.where(r > 0, ks.dV(rs) / rs, ks.lapV(0.0) / 3.0)
    # V'(r)/r, V and Lap V are smooth even functions of r: extend by u -> |u|
    data = np.stack([g, ks.V(r), ks.lapV(r)], axis=1)
    return PairTable(np.ascontiguousarray(data), du, u_max, box.L, ks.eta)


@numba.njit(parallel=True, cache=True, fastmath=True)
def _pair_kernel(X, data, inv_du, L, want_sums, out_f, out_v, out_l):
    n = X.shape[0]
    invL = 1.0 / L
    for i in numba.prange(n):
        xi = X[i, 0]
        yi = X[i, 1]
        zi = X[i, 2]
        fx = 0.0
        fy = 0.0
        fz = 0.0
        sv = 0.0
        sl = 0.0
        for j in range(n):
            dx = xi - X[j, 0]
            dy = yi - X[j, 1]
            dz = zi - X[j, 2]
            dx -= L * np.rint(dx * invL)
            dy -= L * np.rint(dy * invL)
            dz -= L * np.rint(dz * invL)
            x = (dx * dx + dy * dy + dz * dz) * inv_du
            k = int(x)
            f = x - k
            # Lagrange weights on nodes k-1, k, k+1, k+2 (rows k .. k+3)
            w0 = -f * (f - 1.0) * (f - 2.0) * (1.0 / 6.0)
            w1 = (f + 1.0) * (f - 1.0) * (f - 2.0) * 0.5
            w2 = -(f + 1.0) * f * (f - 2.0) * 0.5
            w3 = (f + 1.0) * f * (f - 1.0) * (1.0 / 6.0)
            g = w0 * data[k, 0] + w1 * data[k + 1, 0] + w2 * data[k + 2, 0] + w3 * data[k + 3, 0]
            if j != i:
                fx += g * dx
                fy += g * dy
                fz += g * dz
            if want_sums:
                sv += w0 * data[k, 1] + w1 * data[k + 1, 1] + w2 * data[k + 2, 1] + w3 * data[k + 3, 1]
                sl += w0 * data[k, 2] + w1 * data[k + 1, 2] + w2 * data[k + 2, 2] + w3 * data[k + 3, 2]
        out_f[i, 0] = fx
        out_f[i, 1] = fy
        out_f[i, 2] = fz
        out_v[i] = sv
        out_l[i] = sl


def _check_table(table: PairTable, ks_eta=None):
    if ks_eta is not None and abs(table.eta - ks_eta) > 1e-12 * ks_eta:
        raise ValueError(f"pair table built for eta={table.eta}, ensemble uses eta={ks_eta}")


def pairwise_sums(X, table: PairTable, want_sums=True):
    """(sum_j grad V(X_i - X_j), sum_j V(X_i - X_j), sum_j Lap V(X_i - X_j)) per i."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    n = X.shape[0]
    f = np.empty((n, 3))
    v = np.zeros(n)
    lap = np.zeros(n)
    _pair_kernel(X, table.data, 1.0 / table.du, table.L, want_sums, f, v, lap)
    return f, v, lap


def pairwise_drift(X, table: PairTable, kappa: float):
    """b_i = (kappa / N) sum_j grad V(X_i - X_j), minimum image."""
    f, _, _ = pairwise_sums(X, table, want_sums=False)
    return (kappa / X.shape[0]) * f


def meanfield_drift(Xbar, drift_field):
    """Trilinear interpolation of the grid drift at the particle positions."""
    return sample_field(drift_field, Xbar, order=1)


# ---------------------------------------------------------------------------
# time stepping


def init_ensemble(cfg: EnsembleConfig, box: Box) -> CoupledEnsemble:
    z = rng.normals3(cfg.seed, cfg.realization_id, 0, cfg.N, stream=rng.STREAM_INIT)
    u = rng.uniform1(cfg.seed, cfg.realization_id, 0, cfg.N, stream=rng.STREAM_INIT_MIX)
    zeta = box.wrap(cfg.init.sample_from_normals(z, u))
    return CoupledEnsemble(zeta.copy(), zeta.copy(), 0.0, 0, cfg, box)


def em_step(ens: CoupledEnsemble, b_pair, b_mf, dt: float) -> CoupledEnsemble:
    """One shared-noise Euler-Maruyama step with precomputed drifts; in place."""
    cfg = ens.cfg
    G = rng.normals3(cfg.seed, cfg.realization_id, ens.step, cfg.N)
    s = math.sqrt(2.0 * cfg.sigma * dt)
    X = ens.X + dt * b_pair + s * G
    Xb = ens.Xbar + dt * b_mf + s * G
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(Xb))):
        raise NumericalError(f"non-finite particle position (realization {cfg.realization_id})", ens.step)
    ens.X = ens.box.wrap(X)
    ens.Xbar = ens.box.wrap(Xb)
    ens.step += 1
    ens.t = ens.step * dt
    return ens


def run_coupled(cfg: EnsembleConfig, ks: RadialKernelSet, u_traj: Trajectory,
                table: PairTable | None = None, with_sums: bool = True):
    """Step both systems to T_end and record the coupling statistics.

    Returns (CouplingRecord, final ensemble).
    """
    if abs(ks.eta - cfg.eta) > 1e-12 * cfg.eta:
        raise ValueError(f"kernel set eta={ks.eta} does not match N^-beta={cfg.eta}")
    if u_traj.t_end < cfg.T_end - 1e-9:
        raise ValueError("PDE trajectory does not span [0, T_end]")
    stride = u_traj.stride
    if stride > 0:
        ratio = stride / cfg.dt
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("particle dt must divide the PDE checkpoint stride")
    box = u_traj.box
    table = table or pair_table(ks, box)
    _check_table(table, cfg.eta)
    kap = cfg.effective_kappa
    n = cfg.n_steps
    N = cfg.N
    ens = init_ensemble(cfg, box)

    times = np.arange(n + 1) * cfg.dt
    dist = np.zeros(n + 1)
    sV = np.full(n + 1, np.nan)
    sL = np.full(n + 1, np.nan)
    saved_X, saved_Xb, saved_t = [], [], []
    escaped = 0
    quarter = 0.25 * box.L
    for step in range(n + 1):
        t = step * cfg.dt
        dist[step] = ens.coupling_distance()
        need_force = step < n and kap != 0.0
        if need_force or with_sums:
            f, v, lap = pairwise_sums(ens.X, table, want_sums=with_sums)
            if with_sums:
                sV[step] = np.sum(v) / N**2
                sL[step] = np.sum(lap) / N**2
        if step % cfg.save_every == 0 or step == n:
            saved_X.append(ens.X.copy())
            saved_Xb.append(ens.Xbar.copy())
            saved_t.append(t)
        escaped = max(escaped, int(np.sum(np.max(np.abs(ens.Xbar), axis=1) > quarter)))
        if step == n:
            break
        if kap != 0.0:
            b_pair = (kap / N) * f
            b_mf = meanfield_drift(ens.Xbar, drift_at(u_traj, t, mode="linear"))
        else:
            b_pair = b_mf = 0.0
        em_step(ens, b_pair, b_mf, cfg.dt)
    if escaped:
        log.info("%d particles beyond L/4 of the box centre (realization %d)", escaped,
                    cfg.realization_id)
    sup = np.maximum.accumulate(dist)
    exceed = {a: sup > float(N) ** (-a) for a in cfg.alphas}
    rec = CouplingRecord(times, dist, sup, tuple(cfg.alphas), exceed, sV, sL,
                         np.array(saved_X), np.array(saved_Xb), np.array(saved_t), escaped)
    return rec, ens
