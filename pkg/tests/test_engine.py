import json
import math

import numpy as np
import pytest

from parametrix import coefficients as C
from parametrix import modulus as md
from parametrix.engine import ParametrixEngine, SeriesPolicy, heat1d
from parametrix.errors import BackendError, DomainError, NonContractionError
from parametrix.groups import heisenberg1
from parametrix.quadrature import QuadratureSpec

XI = 0.3


def test_constant_coefficients(const_engine):
    x = np.linspace(-3, 3, 25)
    t = np.full_like(x, 0.6)
    g = const_engine.gamma(x, t, 0.0)
    exact = np.exp(-(x**2) / (4 * 0.6)) / math.sqrt(4 * math.pi * 0.6)
    assert np.allclose(g, exact, rtol=1e-14, atol=0)
    assert np.all(const_engine.mu(x, t, 0.0) == 0)
    assert np.all(const_engine.j_term(x, t, 0.0) == 0)
    for which in ("first", "second", "time"):
        assert np.all(const_engine.j_derivatives(x, t, 0.0, 0.0, which) == 0)
    assert np.all(const_engine.z1(x, t, 0.0, 0.0) == 0)
    d = const_engine.tabulation(0.0).diagnostics
    assert d.q == 0 and d.per_term == [0.0] and d.tail_bound == 0
    res, dt = const_engine.h_gamma_residual(x, t, 0.0)
    assert np.max(np.abs(res)) <= 1e-6


def test_causality(sine_engine):
    x = np.array([0.1, 0.3, 0.9])
    for t in (0.0, -0.1):
        tt = np.full(3, t)
        assert np.all(sine_engine.gamma(x, tt, XI) == 0)
        assert np.all(sine_engine.z1(x, tt, XI, 0.0) == 0)
        assert np.all(sine_engine.mu(x, tt, XI) == 0)


def test_z1_closed_form():
    # a = 1 + x^2 near the origin; only a(1) and a(0) enter Z1 at z = (1, 1)
    cf = C.CoefficientField(
        group=C.euclidean(1),
        func=lambda x, t: (1.0 + np.minimum(x[..., 0] ** 2, 2.0))[..., None, None] + 0 * np.asarray(t)[..., None, None],
        lambda_ell=3.0, modulus=md.holder(1.0, scale=4.0),
    )
    eng = ParametrixEngine(cf, 1.0)
    val = float(eng.z1(np.array([1.0]), np.array([1.0]), 0.0, 0.0)[0])
    g = (4 * math.pi) ** -0.5 * math.exp(-0.25)
    assert val == pytest.approx(g * (0.25 - 0.5), rel=1e-13)
    assert val == pytest.approx(-0.0549255, abs=2e-6)


def test_z2_against_dense_riemann_sum(sine_engine):
    eng = sine_engine
    x, t = 0.5, 0.2

    # midpoint in rho on both halves of (0, t) and a trapezoid rule in y
    n, k = 400, 12
    r = math.sqrt(t / 2) * (np.arange(n) + 0.5) / n
    w = math.sqrt(t / 2) / n * 2 * r
    etas, ws = np.concatenate([r**2, t - r**2]), np.concatenate([w, w])
    ref = 0.0
    for eta, we in zip(etas, ws):
        s1, s2 = math.sqrt(2 * eng.a_max * (t - eta)), math.sqrt(2 * eng.a_max * eta)
        h = min(s1, s2) / k
        y = np.arange(min(x - 8 * s1, XI - 8 * s2), max(x + 8 * s1, XI + 8 * s2) + h, h)
        f = eng.z1(x, t, y, eta) * eng.z1(y, eta, XI, 0.0)
        ref += we * h * (f.sum() - 0.5 * (f[0] + f[-1]))
    direct = eng.z_next(lambda y, e: eng.z1(y, e, XI, 0.0), np.array([x]), np.array([t]), XI, 0.0)[0]
    tab = eng.z_j(2, np.array([x]), np.array([t]), XI)[0]
    assert direct == pytest.approx(ref, rel=1e-2)
    assert tab == pytest.approx(ref, rel=1e-2)


def test_lambda_scaling_identity(sine_engine):
    x = np.array([0.1, 0.5, 0.9])
    t = np.array([0.1, 0.2, 0.25])
    lam = 3.0
    for j in (2, 3):
        plain = sine_engine.z_j(j, x, t, XI)
        corr = sine_engine.z_j(j, x, t, XI, lam=lam)
        assert np.allclose(corr * np.exp(lam * t), plain, rtol=1e-3, atol=1e-6 * np.max(np.abs(plain)))


def test_series_diagnostics_sine(sine_engine):
    d = sine_engine.tabulation(XI).diagnostics
    assert d.converged and d.mode == "lambda0"
    assert d.q == pytest.approx(d.q0)
    assert max(d.ratios) <= d.q0
    assert d.J_used >= 2 and np.isfinite(d.tail_bound)
    mu, diag = sine_engine.mu_series(np.array([0.4]), np.array([0.1]), XI)
    assert diag is d and np.isfinite(mu).all()


def test_volterra_residual(sine_engine):
    rng = np.random.default_rng(5)
    x = XI + rng.uniform(-1.0, 1.0, 12)
    t = rng.uniform(0.02, 0.25, 12)
    res = sine_engine.volterra_residual(x, t, XI)
    scale = np.maximum(np.abs(sine_engine.z1(x, t, XI, 0.0)), np.abs(sine_engine.mu(x, t, XI)))
    assert np.all(np.abs(res) <= 1e-2 * scale)


def test_volterra_residual_shrinks_with_truncation():
    cf = C.sine1d()
    x, t = np.array([0.6]), np.array([0.2])
    res = []
    for jm in (2, 4, 8):
        eng = ParametrixEngine(cf, 0.25, policy=SeriesPolicy(J_max=jm))
        res.append(abs(float(eng.volterra_residual(x, t, XI)[0])))
    assert res[0] > res[1] > res[2]


def test_j_vanishes_relative_to_frozen(sine_engine):
    t = np.array([0.2, 0.05, 0.0125, 0.003])
    x = np.full_like(t, XI)
    ratio = np.abs(sine_engine.j_term(x, t, XI) / sine_engine.frozen(x, t, XI, 0.0)[0])
    assert np.all(np.diff(ratio) < 0)


def test_first_derivative_cross_check(sine_engine):
    x = np.array([0.0, 0.55, 0.9, -0.2])
    t = np.array([0.1, 0.2, 0.25, 0.15])
    xj = sine_engine.j_derivatives(x, t, XI, 0.0, "first")
    h = 1e-3 * np.sqrt(t)
    fd = (sine_engine.j_term(x + h, t, XI) - sine_engine.j_term(x - h, t, XI)) / (2 * h)
    assert np.max(np.abs(fd - xj)) <= 5e-3 * np.max(np.abs(xj))


def test_h_gamma_residual(sine_engine):
    x = np.array([0.0, 0.6, 1.0])
    t = np.array([0.15, 0.1, 0.25])
    res, dt = sine_engine.h_gamma_residual(x, t, XI)
    assert np.all(np.abs(res) <= 1e-2 * np.abs(dt))


def test_gamma_positive_and_normalised(sine_engine):
    x = np.linspace(XI - 3, XI + 3, 121)
    g = sine_engine.gamma(x, np.full_like(x, 0.2), XI)
    assert np.all(g >= 0)
    # the adjoint (not Gamma itself) conserves mass, so only check it is near 1
    assert abs(np.trapezoid(g, x) - 1) < 0.05


def test_non_contraction(logdini_engine):
    cf = logdini_engine.cf
    eng = ParametrixEngine(cf, 0.25, policy=SeriesPolicy(lam=0.0))
    with pytest.raises(NonContractionError) as exc:
        eng.tabulation(0.0)
    assert exc.value.q >= 1
    auto = logdini_engine.tabulation(0.0).diagnostics
    assert auto.mode == "policy" and auto.q <= 0.5 + 1e-12 and auto.q0 >= 1


def test_errors():
    with pytest.raises(BackendError):
        ParametrixEngine(C.constant(np.eye(2), group=heisenberg1()), 1.0)
    with pytest.raises(DomainError):
        ParametrixEngine(C.sine1d(), 0.0)
    eng = ParametrixEngine(C.sine1d(), 0.25)
    with pytest.raises(DomainError):
        eng.mu(np.array([0.0]), np.array([0.5]), 0.0)
    with pytest.raises(ValueError):
        SeriesPolicy(J_max=0)


def test_tiny_gap_warns(sine_engine):
    with pytest.warns(RuntimeWarning):
        g = sine_engine.gamma(np.array([XI]), np.array([1e-12]), XI)
    assert g[0] == pytest.approx(sine_engine.frozen(np.array([XI]), np.array([1e-12]), XI, 0.0)[0][0])


def test_export(sine_engine, tmp_path):
    x = np.array([0.0, 0.5])
    t = np.array([0.1, 0.2])
    sine_engine.export_csv(tmp_path / "k.csv", x, t, XI)
    lines = (tmp_path / "k.csv").read_text().splitlines()
    assert lines[0] == "x,t,xi,tau,gamma_frozen,J,gamma,err_est" and len(lines) == 3
    sine_engine.export_diagnostics(tmp_path / "d.json", XI)
    d = json.loads((tmp_path / "d.json").read_text())
    for key in ("phi", "lam", "epsilon", "per_term", "q", "J_used", "tail_bound"):
        assert key in d


def test_heat1d_derivatives():
    a, x, s = 1.3, 0.4, 0.2
    g, d1, d2, dt = heat1d(a, x, s)
    h = 1e-4
    assert d1 == pytest.approx((heat1d(a, x + h, s)[0] - heat1d(a, x - h, s)[0]) / (2 * h), rel=1e-7)
    assert dt == pytest.approx(a * d2, rel=1e-13)
