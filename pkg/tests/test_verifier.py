import json
import math

import numpy as np
import pytest

from parametrix import coefficients as C
from parametrix.engine import ParametrixEngine
from parametrix.fitting import IllPosedFitError
from parametrix.kernels import FrozenKernel, sandwich_constants
from parametrix.groups import euclidean
from parametrix.verifier import (
    ESTIMATES,
    SUITES,
    EstimateReport,
    SampleGrid,
    fit_envelope,
    run_suite,
    write_reports,
)


def test_fit_envelope_zero_lhs():
    rep = fit_envelope(np.zeros(20), lambda c: np.ones(20))
    assert rep.C == 0 and rep.passed


def test_fit_envelope_gaussian_ratio():
    x = np.linspace(-3, 3, 61)
    t = 0.5
    gam = np.exp(-(x**2) / (4 * t)) / math.sqrt(4 * math.pi * t)
    rep = fit_envelope(gam, lambda c: (c * t) ** -0.5 * np.exp(-(x**2) / (c * t)), c_grid=[4.0])
    assert rep.C == pytest.approx(math.pi**-0.5, rel=1e-12) and rep.C <= 0.57


def test_fit_envelope_errors_and_instability():
    with pytest.raises(IllPosedFitError):
        fit_envelope(np.ones(20), lambda c: np.zeros(20), c_grid=[1.0])
    with pytest.raises(ValueError):
        fit_envelope(np.ones(5), lambda c: np.ones(5))
    lhs = np.ones(20)
    lhs[-1] = 2.0
    mask = np.arange(20) < 10
    rep = fit_envelope(lhs, lambda c: np.ones(20), fine_mask=mask)
    assert not rep.passed and rep.growth == pytest.approx(1.0)
    rep = fit_envelope(np.full(20, 5e3), lambda c: np.ones(20))
    assert not rep.passed


def test_sample_grid_nested():
    g = SampleGrid(0.25, 0.25 / 64)
    f = g.refined()
    for coarse, fine in ((g.s_values(), f.s_values()), (g.u_values(), f.u_values())):
        assert np.all(np.any(np.isclose(coarse[:, None], fine[None, :]), axis=1))
    assert f.s_values()[0] == g.s_values()[0] / 2


def test_registry_covers_estimates():
    covered = {i for ids in SUITES.values() for i in ids}
    assert covered == set(ESTIMATES)


def test_constant_suite():
    eng = ParametrixEngine(C.constant(np.eye(1), lambda_ell=2.0), 1.0)
    reps = run_suite(eng, "gamma")
    assert [r.estimate_id for r in reps] == SUITES["gamma"]
    assert all(r.passed for r in reps)
    by = {r.estimate_id: r for r in reps}
    for eid in ("z1_bound", "mu_bound", "J_bound", "XJ_bound", "XXJ_bound", "dtJ_bound"):
        assert by[eid].C_fine == 0
    # Gamma is the frozen kernel: pi^-1/2 at c = 4, smaller C for c > 4
    assert by["gamma_bound"].C_fine <= math.pi**-0.5 + 1e-12


def test_frozen_and_modulus_suites_on_field():
    cf = C.constant(np.eye(2), group=C.group_from_name("heisenberg1"))
    reps = run_suite(cf, "frozen", {"frozen_pole": 0.0})
    assert len(reps) == 3 and all(r.passed for r in reps)
    reps = run_suite(C.sine1d(), "modulus")
    assert len(reps) == 2 and all(r.passed for r in reps)
    with pytest.raises(TypeError):
        run_suite(cf, "gamma")
    with pytest.raises(ValueError):
        run_suite(cf, "everything")


def test_reports_written(tmp_path):
    reps = run_suite(C.sine1d(), "modulus")
    write_reports(reps, tmp_path / "r.json", tmp_path / "r.csv")
    data = json.loads((tmp_path / "r.json").read_text())
    assert {d["estimate_id"] for d in data} == set(SUITES["modulus"])
    assert (tmp_path / "r.csv").read_text().startswith("estimate_id,C,c,C_fine")
