import math

import numpy as np
import pytest

from parametrix.fitting import IllPosedFitError, fit_constant
from parametrix.quadrature import (
    QuadratureSpec,
    gauss_legendre,
    split_time_rule,
    tensor_rule,
    trapezoid_box,
    window_rule,
)


def test_spec_validation():
    with pytest.raises(ValueError):
        QuadratureSpec(space_nodes=3)
    with pytest.raises(ValueError):
        QuadratureSpec(k_R=2.0)
    q = QuadratureSpec().refined()
    assert q.space_nodes == 96 and q.time_nodes == 40


def test_gauss_legendre_polynomial():
    x, w = gauss_legendre(5, 0.0, 2.0)
    assert np.dot(w, x**9) == pytest.approx(2.0**10 / 10, rel=1e-13)


def test_window_rule_gaussian():
    x, w = window_rule(0.3, 0.5, 8.0, 48)
    g = np.exp(-((x - 0.3) ** 2) / (2 * 0.25)) / math.sqrt(2 * math.pi * 0.25)
    assert np.dot(w, g) == pytest.approx(1.0, abs=1e-12)


def test_split_time_rule_endpoint_singularity():
    # int_0^1 s^-1/2 + (1 - s)^-1/2 ds = 4, singular at both ends
    eta, w = split_time_rule(0.0, 1.0, 12)
    f = eta**-0.5 + (1 - eta) ** -0.5
    assert np.dot(w, f) == pytest.approx(4.0, rel=1e-12)
    assert np.all((eta > 0) & (eta < 1))


def test_tensor_and_trapezoid():
    pts, wts = tensor_rule([np.array([0.0, 1.0])] * 2, [np.array([0.5, 0.5])] * 2)
    assert pts.shape == (4, 2) and wts.sum() == pytest.approx(1.0)
    pts, wts = trapezoid_box([1.0, 2.0], 11)
    assert wts.sum() == pytest.approx(8.0)


def test_fit_constant():
    x = np.linspace(-3, 3, 61)
    t = 0.7
    gam = np.exp(-(x**2) / (4 * t)) / math.sqrt(4 * math.pi * t)

    def env(c):
        return (c * t) ** -0.5 * np.exp(-(x**2) / (c * t))

    fit = fit_constant(gam, env, c_grid=[2.0, 4.0, 8.0])
    assert fit.c == 4.0
    assert fit.C == pytest.approx(math.pi**-0.5, rel=1e-12)
    assert fit_constant(np.zeros(10), lambda c: np.ones(10)).C == 0.0
    with pytest.raises(IllPosedFitError):
        fit_constant(np.ones(10), lambda c: np.zeros(10), c_grid=[1.0])
