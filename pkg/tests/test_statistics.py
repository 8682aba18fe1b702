import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats

from rieszmf.fields import (GridField, InitialDensity, PdeConfig, convolve_radial, grad_norm_sq,
                            inner, solve_intermediate, solve_limit)
from rieszmf.kernels import build_kernel_set
from rieszmf.particles import EnsembleConfig, init_ensemble, pair_table, run_coupled
from rieszmf.statistics import (StatFields, TestFunction, clt_target_variance, error_sample,
                                fluctuation_pairing, h1_error_sq, l2_error_sq, lln_exceedance,
                                normality_report, rate_fit)


class _Const:
    name = "const"

    def __init__(self, c):
        self.c = c

    def value(self, x):
        return np.full(np.atleast_2d(x).shape[0], self.c)


class _Combo:
    def __init__(self, a, f1, b, f2):
        self.terms = ((a, f1), (b, f2))

    def value(self, x):
        return sum(w * f.value(x) for w, f in self.terms)


def _render_f_minus_g(X, u, ks, box):
    P = np.stack(box.mesh(), -1)
    f = np.zeros(u.values.shape)
    for x in X:
        f += ks.Z(np.linalg.norm(box.wrap(P - x), axis=-1))
    f /= len(X)
    return GridField(box, f - convolve_radial(u, ks.Z).values)


def test_grid_rendering_oracle(ks, box, u0):
    X = np.random.default_rng(3).normal(size=(16, 3))
    diff = _render_f_minus_g(X, u0, ks, box)
    assert l2_error_sq(X, u0, ks) == pytest.approx(inner(diff, diff), rel=1e-2)
    assert h1_error_sq(X, u0, ks) == pytest.approx(grad_norm_sq(diff), rel=1e-2)


def test_single_particle_terms(ks, box, u0):
    X = np.array([[4.0, 3.0, -2.0]])
    Vu = convolve_radial(u0, ks.V)
    # direct quadrature of (V * u)(X) on the grid
    P = np.stack(box.mesh(), -1)
    cross = np.sum(ks.V(np.linalg.norm(box.wrap(P - X[0]), axis=-1)) * u0.values) * box.cell_volume
    expect = ks.V(0.0) - 2 * cross + inner(u0, Vu)
    assert l2_error_sq(X, u0, ks) == pytest.approx(expect, rel=1e-9)


def test_eta_mismatch(ks, u0):
    with pytest.raises(ValueError):
        l2_error_sq(np.zeros((2, 3)), u0, ks, eta=0.5)


@settings(max_examples=5)
@given(st.integers(0, 2**32 - 1))
def test_permutation_invariance_and_sign(ks, box, u0, seed):
    r = np.random.default_rng(seed)
    X = r.normal(size=(64, 3))
    tab = pair_table(ks, box)
    a = l2_error_sq(X, u0, ks, tab)
    b = l2_error_sq(X[r.permutation(64)], u0, ks, tab)
    assert a == pytest.approx(b, rel=1e-12)
    assert a > -1e-12 and h1_error_sq(X, u0, ks, tab) > -1e-12


def test_h1_grows_as_eta_shrinks(params, u0):
    X = np.array([[5.0, 5.0, 5.0]])
    vals = [h1_error_sq(X, u0, build_kernel_set(params, e)) for e in (1.0, 0.7, 0.5)]
    assert vals[0] < vals[1] < vals[2]


def test_lln_single_particle(ks, box, u0):
    X = np.array([[0.7, -0.2, 0.4]])
    out = lln_exceedance(X, u0, ks, 0.3)
    tr = solve_intermediate(u0, ks, PdeConfig(T_end=0.0))
    from rieszmf.fields import sample_field
    g = sample_field(GridField(box, tr.drift_fields[0]), X, order=3)
    assert out["dev_B"] == pytest.approx(np.linalg.norm(g), rel=1e-6)


def test_lln_clt_scaling(ks, box, u0):
    devs = []
    for N in (250, 4000):
        X = init_ensemble(EnsembleConfig(N=N, beta=-math.log(ks.eta) / math.log(N)), box).Xbar
        devs.append(lln_exceedance(X, u0, ks, 0.3)["dev_B"])
    assert 0.1 < devs[1] / devs[0] < 0.5


def test_fluctuation_constant_and_linearity(box, u0):
    X = np.random.default_rng(0).normal(size=(500, 3))
    one = GridField(box, np.ones(u0.values.shape))
    assert abs(fluctuation_pairing(X, u0, _Const(1.0), one)) < 1e-9
    p1, p2 = TestFunction("a", (0, 0, 0), 0.7), TestFunction("b", (1, 0, 0), 0.9, 1.0, (0, 1, 0))
    g1, g2 = p1.render(box), p2.render(box)
    combo = _Combo(2.0, p1, -3.0, p2)
    gc = GridField(box, 2.0 * g1.values - 3.0 * g2.values)
    lhs = fluctuation_pairing(X, u0, combo, gc)
    rhs = 2 * fluctuation_pairing(X, u0, p1, g1) - 3 * fluctuation_pairing(X, u0, p2, g2)
    assert lhs == pytest.approx(rhs, abs=1e-12)


def test_test_function_gradient():
    p = TestFunction("l", (0.3, -0.2, 0.1), 0.8, 1.5, (1.0, 2.0, -1.0))
    x = np.random.default_rng(1).normal(size=(20, 3))
    h = 1e-6
    fd = np.stack([(p.value(x + h * e) - p.value(x - h * e)) / (2 * h) for e in np.eye(3)], axis=1)
    assert np.allclose(fd, p.gradient(x), atol=1e-8)


def _gauss_moments(A, c, W, v):
    """<N(0, v I), A exp(-|x-c|^2/(2W))> in 3-D."""
    return A * (W / (W + v)) ** 1.5 * math.exp(-np.dot(c, c) / (2 * (W + v)))


def _heat_variance_oracle(c, w, sigma, t):
    c = np.asarray(c, float)

    def T_params(s):
        W = w * w + 2 * sigma * (t - s)
        return (w * w / W) ** 1.5, W

    A0, W0 = T_params(0.0)
    m1 = _gauss_moments(A0, c, W0, 1.0)
    m2 = _gauss_moments(A0**2, c, W0 / 2, 1.0)

    def grad_term(s):
        A, W = T_params(s)
        v = 1.0 + 2 * sigma * s
        # |grad T|^2 = A^2 |y|^2 / W^2 exp(-|y|^2 / W), y = x - c; separable 1-D integrals
        dens = lambda x: math.exp(-x * x / (2 * v)) / math.sqrt(2 * math.pi * v)
        I0 = [integrate.quad(lambda x: dens(x) * math.exp(-(x - ck) ** 2 / W), -40, 40)[0] for ck in c]
        I2 = [integrate.quad(lambda x: dens(x) * (x - ck) ** 2 * math.exp(-(x - ck) ** 2 / W), -40, 40)[0]
              for ck in c]
        tot = sum(I2[k] * np.prod([I0[j] for j in range(3) if j != k]) for k in range(3))
        return A * A / (W * W) * tot

    dyn = integrate.quad(grad_term, 0, t, epsrel=1e-10)[0]
    return m2 - m1 * m1 + 2 * sigma * dyn


def test_clt_variance_heat_oracle(u0, params):
    # implicit heat steps are first order in dt; extrapolate two step sizes
    phi = TestFunction("g", (0.5, 0.0, -0.3), 0.8)
    ref = _heat_variance_oracle((0.5, 0.0, -0.3), 0.8, 0.25, 0.5)
    v = {}
    for dt in (0.005, 0.0025):
        cfg = PdeConfig(T_end=0.5, dt=dt, interaction=False)
        v[dt] = clt_target_variance(phi, 0.5, solve_limit(u0, params, cfg), cfg)
    assert abs(v[0.0025] - ref) < 0.6 * abs(v[0.005] - ref)
    assert 2 * v[0.0025] - v[0.005] == pytest.approx(ref, rel=1e-4)


def test_clt_variance_at_zero_and_constant(box, u0, params):
    cfg = PdeConfig(T_end=0.2)
    lim = solve_limit(u0, params, cfg)
    phi = TestFunction("g", (0.0, 0.0, 0.0), 0.7)
    v0 = clt_target_variance(phi, 0.0, lim, cfg)
    assert v0 == pytest.approx(_gauss_moments(1, np.zeros(3), 0.49 / 2, 1) - _gauss_moments(1, np.zeros(3), 0.49, 1) ** 2,
                               rel=1e-10)
    const = GridField(box, np.full(u0.values.shape, 3.0))
    assert abs(clt_target_variance(const, 0.2, lim, cfg)) < 1e-12


def test_normality_report_self_tests():
    r = np.random.default_rng(7)
    pv = [normality_report(r.normal(0, 2, 200), 4.0)["ks_p"] for _ in range(200)]
    assert stats.kstest(pv, "uniform").pvalue > 1e-3
    assert normality_report(r.normal(0.5, 1, 400), 1.0)["ks_p"] < 0.01
    assert normality_report(r.normal(0, 1, 1000), 1.0)["cf_sup"] < 0.1
    with pytest.raises(ValueError):
        normality_report(r.normal(size=500), 0.0)
    with pytest.raises(ValueError):
        normality_report(r.normal(size=50), 1.0)


def test_rate_fit_exact():
    N = [500, 1000, 2000, 4000]
    out = rate_fit(N, means=[3.0 * n ** -0.6 for n in N])
    assert out["slope"] == pytest.approx(-0.6, abs=1e-12)


def test_rate_fit_errors():
    with pytest.raises(ValueError):
        rate_fit([1, 2, 4], means=[1, 1, 1])
    with pytest.raises(ValueError):
        rate_fit([1, 2, 4, 8], means=[1, 0, 1, 1])
    with pytest.raises(ValueError):
        rate_fit([1, 2, 5, 8], means=[1, 1, 1, 1])
    with pytest.raises(ValueError):
        rate_fit([1, 2, 4, 8], samples=[np.ones(10)] * 4)


def test_rate_fit_bootstrap_coverage():
    r = np.random.default_rng(11)
    N = np.array([500, 1000, 2000, 4000])
    hits = 0
    trials = 60
    for k in range(trials):
        samples = [n ** -0.7 * r.lognormal(0, 0.5, 40) for n in N]
        out = rate_fit(N, samples=samples, n_boot=400, seed=k)
        # lognormal noise keeps the population mean proportional to N^-0.7
        hits += out["ci_lo"] <= -0.7 <= out["ci_hi"]
    assert hits / trials > 0.8


def test_error_sample_matches_direct(params, box):
    N = 300
    cfg = EnsembleConfig(N=N, T_end=0.05)
    ks = build_kernel_set(params, cfg.eta)
    tr = solve_intermediate(InitialDensity().render(box), ks, PdeConfig(T_end=0.05))
    tab = pair_table(ks, box)
    rec, ens = run_coupled(cfg, ks, tr, tab)
    es = error_sample(rec, StatFields(tr, ks))
    direct = l2_error_sq(ens.X, GridField(box, tr.densities[-1]), ks, tab)
    assert es.l2_err_sq[-1] == pytest.approx(direct, rel=1e-12)
    assert es.sup_l2 == es.l2_err_sq.max()
    es2 = error_sample(rec, StatFields(tr, ks))
    assert np.array_equal(es.l2_err_sq, es2.l2_err_sq)
