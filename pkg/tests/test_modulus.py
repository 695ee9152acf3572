import math

import numpy as np
import pytest

from parametrix import modulus as md
from parametrix.errors import NonDiniError


def test_holder_dini_examples():
    w = md.holder(0.5)
    assert md.dini_integral(w, 1.0) == pytest.approx(2.0, rel=1e-12)
    assert md.dini_integral(w, 1.0, numeric=True) == pytest.approx(2.0, rel=1e-9)
    assert md.double_dini_integral(w, 1.0) == pytest.approx(4.0, rel=1e-12)
    assert md.double_dini_integral(w, 1.0, numeric=True) == pytest.approx(4.0, rel=1e-9)
    assert md.double_dini_integral(w, 1.0, nested=True) == pytest.approx(4.0, rel=1e-8)


def test_log_dini_examples():
    w = md.log_dini(3.0)
    r = math.exp(-2.0)
    assert md.dini_integral(w, r) == pytest.approx(0.125, rel=1e-12)
    assert md.dini_integral(w, r, numeric=True) == pytest.approx(0.125, rel=1e-9)
    for r in (1e-3, 1e-2, 0.1):
        expected = (-math.log(r)) ** (2 - 3.0) / ((3.0 - 2) * (3.0 - 1))
        assert md.double_dini_integral(w, r) == pytest.approx(expected, rel=1e-12)
        assert md.double_dini_integral(w, r, numeric=True) == pytest.approx(expected, rel=1e-8)


def test_zero_modulus():
    z = md.zero()
    assert md.dini_integral(z, 1.0) == 0.0
    assert md.double_dini_integral(z, 1.0) == 0.0
    assert md.check_half_power_dini(z, 0.25, 1.0) == 0.0


def test_non_dini_detected():
    w = md.custom(lambda r: np.where(np.asarray(r) > 0, 1.0 / np.maximum(1.0, -np.log(np.maximum(r, 1e-300))), 0.0),
                  log_func=lambda s: 1.0 / np.maximum(1.0, np.asarray(s, float)))
    with pytest.raises(NonDiniError):
        md.dini_integral(w, 0.5)


@pytest.mark.parametrize("c1", [0.5, 2.0, 10.0])
@pytest.mark.parametrize("c2", [0.5, 2.0, 10.0])
def test_scaling_identities(c1, c2):
    for w in (md.holder(0.5), md.log_dini(3.0)):
        ws = w.scaled(c1, c2)
        for r in (0.01, 0.03):
            assert md.dini_integral(ws, r) == pytest.approx(c1 * md.dini_integral(w, c2 * r), rel=1e-8)
            assert md.double_dini_integral(ws, r) == pytest.approx(
                c1 * md.double_dini_integral(w, c2 * r), rel=1e-8)


def test_sqrt_identity():
    for w in (md.holder(0.5), md.log_dini(3.0), md.holder(1.0, cap=0.5)):
        ws = w.sqrt_composed()
        for r in (1e-4, 0.01, 0.2):
            assert md.dini_integral(ws, r) == pytest.approx(2 * md.dini_integral(w, math.sqrt(r)), rel=1e-8)


def test_omega_leq_dini():
    rep = md.omega_leq_dini(md.holder(0.5))
    assert rep.passed
    # omega = r^b and its Dini integral r^b / b: the ratio is exactly b
    assert rep.C_fit == pytest.approx(0.5, rel=1e-8)
    rep = md.omega_leq_dini(md.log_dini(3.0))
    assert rep.passed
    r = np.array([1e-8, 1e-6, 1e-4])
    w = md.log_dini(3.0)
    assert np.allclose(w(r) / w.dini(r), 2.0 / (-np.log(r)), rtol=1e-10)


def test_half_power_dini():
    assert md.check_half_power_dini(md.holder(1.0), 0.25, 1.0) == pytest.approx(4.0 / 3.0, rel=1e-9)
    v1 = md.check_half_power_dini(md.log_dini(3.0), 0.25, 0.4)
    v2 = md.check_half_power_dini(md.log_dini(3.0), 0.25, 0.4, tol=1e-12)
    assert np.isfinite(v1) and abs(v1 - v2) <= 1e-4 * abs(v2)


def test_omega_exp_inequality():
    one = md.custom(lambda r: np.where(np.asarray(r, float) > 0, 1.0, 0.0), delta=0.5)
    rep = md.check_omega_exp_inequality(one, 1.0, 1.0)
    assert rep.passed and rep.C1 <= 1.0 + 1e-12
    rep = md.check_omega_exp_inequality(md.holder(0.5), 1.0, 1.0)
    assert rep.passed and np.isfinite(rep.C1)


def test_modulus_invariants():
    for w in (md.holder(0.5, cap=2.0), md.log_dini(3.0), md.holder(1.0)):
        r = np.concatenate([[0.0], np.logspace(-10, 2, 400)])
        v = w(r)
        assert v[0] == 0.0
        assert np.all(np.diff(v) >= -1e-15)
        if w.cap is not None:
            assert np.max(v) <= w.cap
        assert np.isfinite(w.quasi_mono_C)


def test_log_dini_not_holder():
    w = md.log_dini(3.0)
    for beta in (0.05, 0.2):
        # sup over r >= exp(-smax) of omega(r) / r^beta on refining grids
        q = [float(np.max(md.holder_quotient(w, beta, np.linspace(1, smax, 400))))
             for smax in (1e2, 1e3, 1e4)]
        assert q[0] < q[1] < q[2] and q[2] > 1e10


def test_table_and_config(tmp_path):
    p = tmp_path / "w.csv"
    r = np.logspace(-6, 0, 50)
    np.savetxt(p, np.c_[r, np.sqrt(r)], delimiter=",", header="r,omega", comments="")
    w = md.read_table_csv(p)
    assert w(0.25) == pytest.approx(0.5, rel=1e-3)
    w2 = md.modulus_from_config({"kind": "holder", "beta": 0.5})
    assert md.dini_integral(w2, 1.0) == pytest.approx(2.0)
    with pytest.raises(ValueError):
        md.table([0.1, 0.2], [0.2, 0.1])
