import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rieszmf import fields as F
from rieszmf.fields import (Box, BoxMismatchError, CFLError, GridField, InitialDensity,
                            NumericalError, PdeConfig, Trajectory, drift_at, grad_norm_sq, inner,
                            lp_norm, lp_star_threshold, quadrature, sample_field,
                            solve_backward_dual, solve_intermediate, solve_limit, solve_linearized)
from rieszmf.kernels import RieszParams, build_kernel_set


def heat_exact(box, t, sigma=0.25, std=1.0):
    X, Y, Z = box.mesh()
    s2 = std**2 + 2 * sigma * t
    return (2 * math.pi * s2) ** -1.5 * np.exp(-(X**2 + Y**2 + Z**2) / (2 * s2))


@pytest.fixture(scope="module")
def small_box():
    return Box(16.0, 32)


@pytest.fixture(scope="module")
def small_limit(small_box, params):
    u0 = InitialDensity.gaussian().render(small_box)
    return solve_limit(u0, params, PdeConfig(T_end=0.3))


def test_box_validation():
    with pytest.raises(ValueError):
        Box(16.0, 48)
    with pytest.raises(ValueError):
        Box(16.0, 8)
    b = Box(16.0, 64)
    assert b.h == 0.25
    (kx, _, _), _ = b.wavenumbers()
    assert kx.min() == pytest.approx(-math.pi / b.h)


def test_quadrature_and_inner(u0, box):
    assert quadrature(u0) == pytest.approx(1.0, abs=1e-10)
    assert inner(u0, u0) == pytest.approx(lp_norm(u0, 2) ** 2, rel=1e-13)
    with pytest.raises(BoxMismatchError):
        inner(u0, InitialDensity().render(Box(16.0, 32)))


def test_grad_norm_plane_wave(box):
    X, _, _ = box.mesh()
    f = GridField(box, np.sin(2 * math.pi * X / box.L))
    assert grad_norm_sq(f) == pytest.approx((2 * math.pi / box.L) ** 2 * box.L**3 / 2, rel=1e-12)


@pytest.mark.parametrize("solver", ["limit", "intermediate"])
def test_heat_degeneration(u0, box, params, solver):
    cfg = PdeConfig(interaction=False)
    if solver == "limit":
        tr = solve_limit(u0, params, cfg)
    else:
        tr = solve_intermediate(u0, build_kernel_set(params, 0.5), cfg)
    assert np.max(np.abs(tr.densities[-1] - heat_exact(box, 0.5))) < 1e-4


def test_grid_refinement_heat():
    errs = []
    for M in (16, 32):
        b = Box(16.0, M)
        tr = solve_limit(InitialDensity().render(b), RieszParams(), PdeConfig(interaction=False, dt=1e-3, T_end=0.1))
        errs.append(np.max(np.abs(tr.densities[-1] - heat_exact(b, 0.1))))
    assert errs[0] >= 2 * errs[1]


@pytest.mark.parametrize("kappa", [1.0, -1.0])
def test_mass_conservation(u0, box, ks, kappa):
    tr = solve_intermediate(u0, ks, PdeConfig(kappa=kappa, T_end=0.2))
    for f in tr.fields:
        assert abs(quadrature(f) - 1) < 1e-10
        assert f.values.min() >= -1e-8 * f.values.max()
    assert tr.times[0] == 0 and np.allclose(np.diff(tr.times), 0.01)


def test_repulsive_sup_norm_nonincreasing(u0, params):
    tr = solve_limit(u0, params, PdeConfig(kappa=-1.0, T_end=0.3))
    sup = tr.densities.reshape(len(tr.times), -1).max(axis=1)
    assert np.all(np.diff(sup) <= 0)


def test_lp_star_monotone_under_smallness(u0, params):
    p = params.p_star
    assert lp_norm(u0, p) < lp_star_threshold(params, 0.25)
    tr = solve_limit(u0, params, PdeConfig(kappa=1.0))
    norms = [lp_norm(f, p) for f in tr.fields]
    assert np.all(np.diff(norms) <= 1e-6)


def test_cfl_violation_suggests_dt(u0, ks):
    with pytest.raises(CFLError) as e:
        solve_intermediate(u0, ks, PdeConfig(T_end=0.02, cfl=1e-6))
    assert 0 < e.value.suggested_dt < 0.01


def test_nan_abort(u0, box):
    sym = np.full(box.kmag().shape, np.nan)
    with pytest.raises(NumericalError):
        F._run_nonlinear(u0, sym, PdeConfig(T_end=0.02), "limit", {})


def test_initial_checks(box):
    g = InitialDensity().render(box)
    with pytest.raises(ValueError):
        solve_limit(GridField(box, 2 * g.values), RieszParams(), PdeConfig())
    with pytest.raises(ValueError):
        solve_limit(GridField(box, np.ones_like(g.values) / 16.0**3), RieszParams(), PdeConfig())


def test_dual_of_constant(small_limit, small_box):
    phi = GridField(small_box, np.full((32, 32, 32), 2.5))
    d = solve_backward_dual(phi, 0.3, small_limit, PdeConfig(T_end=0.3))
    assert np.max(np.abs(d.densities - 2.5)) < 1e-12
    assert d.times[0] == 0.0 and d.times[-1] == pytest.approx(0.3)


def _gauss(box, c, w):
    X, Y, Z = box.mesh()
    return np.exp(-((X - c[0]) ** 2 + (Y - c[1]) ** 2 + (Z - c[2]) ** 2) / (2 * w * w))


@settings(max_examples=5)
@given(st.integers(0, 10), st.integers(11, 30), st.integers(0, 2**31))
def test_adjoint_pairing(small_limit, small_box, n0, n1, seed):
    r = np.random.default_rng(seed)
    cfg = PdeConfig(T_end=0.3)
    s0, t = n0 * 0.01, n1 * 0.01
    f0 = GridField(small_box, _gauss(small_box, r.uniform(-1, 1, 3), r.uniform(0.6, 1.2)))
    phi = GridField(small_box, _gauss(small_box, r.uniform(-1, 1, 3), r.uniform(0.6, 1.2)))
    ft = solve_linearized(f0, s0, t, small_limit, cfg)
    dual = solve_backward_dual(phi, t, small_limit, cfg)
    lhs = inner(ft, phi)
    rhs = inner(f0, GridField(small_box, dual.densities[n0]))
    assert abs(lhs - rhs) <= 1e-10 * abs(rhs)


def test_linearized_zero_mass(small_limit, small_box):
    a = _gauss(small_box, (0.5, 0, 0), 0.8)
    b = _gauss(small_box, (-0.5, 0.3, 0), 0.9)
    f0 = GridField(small_box, a / a.sum() - b / b.sum())
    ft = solve_linearized(f0, 0.0, 0.3, small_limit, PdeConfig(T_end=0.3))
    assert abs(quadrature(ft)) < 1e-14


def test_linearized_without_interaction_is_heat(small_limit, small_box):
    f0 = GridField(small_box, InitialDensity().render(small_box).values)
    cfg = PdeConfig(T_end=0.3, interaction=False)
    ft = solve_linearized(f0, 0.0, 0.3, small_limit, cfg)
    ref = solve_limit(f0, RieszParams(), cfg).densities[-1]
    assert np.max(np.abs(ft.values - ref)) < 1e-15


def test_dual_w1inf_bounded(small_limit, small_box):
    phi = GridField(small_box, _gauss(small_box, (0.3, 0, 0), 0.7))
    d = solve_backward_dual(phi, 0.3, small_limit, PdeConfig(T_end=0.3))

    def w1(v):
        g = F.spectral_gradient(GridField(small_box, v))
        return np.abs(v).max() + np.abs(g).max()

    ratio = max(w1(v) for v in d.densities) / w1(phi.values)
    assert np.isfinite(ratio) and ratio < 2.0


def test_sampling(box, rng):
    vals = rng.normal(size=(box.M,) * 3)
    f = GridField(box, vals)
    idx = rng.integers(0, box.M, size=(20, 3))
    x = box.axis[idx]
    assert np.array_equal(sample_field(f, x), vals[idx[:, 0], idx[:, 1], idx[:, 2]])
    const = GridField(box, np.stack([np.full((box.M,) * 3, c) for c in (1.0, -2.0, 0.5)]))
    y = rng.uniform(-8, 8, size=(50, 3))
    assert np.allclose(sample_field(const, y), [1.0, -2.0, 0.5], atol=1e-14)


def test_trilinear_exact_for_linear_fields(box, rng):
    X, Y, Z = box.mesh()
    f = GridField(box, 1.0 + 2 * X - Y + 0.5 * Z)
    x = rng.uniform(-7, 7, size=(100, 3))
    assert np.allclose(sample_field(f, x), 1 + 2 * x[:, 0] - x[:, 1] + 0.5 * x[:, 2], atol=1e-12)


def test_drift_symmetry_and_range(u0, ks):
    tr = solve_intermediate(u0, ks, PdeConfig(T_end=0.05))
    d = drift_at(tr, 0.03)
    assert np.max(np.abs(sample_field(d, np.zeros((1, 3))))) < 1e-14
    with pytest.raises(ValueError):
        drift_at(tr, 0.2)
    lin = drift_at(tr, 0.025, mode="linear").values
    assert np.allclose(lin, 0.5 * (tr.drift_fields[2] + tr.drift_fields[3]))


def test_drift_bounded_as_eta_shrinks(u0, params):
    sups = []
    for eta in (0.4, 0.2, 0.1, 0.05):
        tr = solve_intermediate(u0, build_kernel_set(params, eta), PdeConfig(T_end=0.0))
        sups.append(np.abs(tr.drift_fields[0]).max())
    lim = solve_limit(u0, params, PdeConfig(T_end=0.0))
    assert max(sups) <= 1.01 * np.abs(lim.drift_fields[0]).max()


def test_trajectory_roundtrip(small_limit, tmp_path):
    small_limit.save(tmp_path / "traj")
    t2 = Trajectory.load(tmp_path / "traj")
    assert np.array_equal(t2.densities, small_limit.densities)
    assert np.array_equal(t2.times, small_limit.times)
    assert t2.config == small_limit.config


def test_mixture_initial_density(box):
    d = InitialDensity.two_bump(2.0, 0.8)
    g = d.render(box)
    assert quadrature(g) == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(d.mean(), 0.0)
