"""
Command line driver
===================

``parametrix <command> --config run.json [--out DIR] [--seed N] [--threads N]``

Commands: ``kernel``, ``verify``, ``cauchy``, ``oracle-compare``,
``modulus-check``.  Exit codes: 0 success, 1 a check failed, 2 invalid
configuration, 3 the series does not contract, 4 any other numerical error.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import jsonschema
import numpy as np

from . import coefficients as coef
from . import modulus as md
from .cauchy import CauchySolver, function_from_config
from .engine import ParametrixEngine, SeriesPolicy
from .errors import ConfigError, NonContractionError, ParametrixError
from .groups import group_from_name
from .kernels import FrozenKernel
from .oracle import FDGrid, fd_green, gauss_hermite_smooth, kde_smoothed_kernel, mc_kernel
from .quadrature import QuadratureSpec
from .verifier import SUITES, run_suite, write_reports

log = logging.getLogger("parametrix")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_NONCONTRACTION, EXIT_NUMERIC = 0, 1, 2, 3, 4

_RANGE = {"type": "array", "items": {"type": "number"}, "minItems": 3, "maxItems": 3}

SCHEMA = {
    "type": "object",
    "required": ["coefficients", "T"],
    "additionalProperties": False,
    "properties": {
        "group": {"type": "string"},
        "coefficients": {
            "type": "object",
            "required": ["preset"],
            "properties": {"preset": {"enum": ["constant", "sine1d", "perturbed2d", "log_dini_field"]}},
        },
        "modulus": {"type": "object", "required": ["kind"]},
        "quadrature": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "space_nodes": {"type": "integer", "minimum": 4},
                "k_R": {"type": "number", "minimum": 3},
                "time_nodes": {"type": "integer", "minimum": 4},
                "grid_u": {"type": "integer", "minimum": 4},
                "grid_rho": {"type": "integer", "minimum": 4},
                "collars": {"type": "integer", "minimum": 3},
                "rel_tol": {"type": "number", "exclusiveMinimum": 0},
            },
        },
        "policy": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "lambda": {"type": ["number", "null"], "minimum": 0},
                "epsilon": {"type": ["number", "null"], "exclusiveMinimum": 0, "exclusiveMaximum": 1},
                "J_max": {"type": "integer", "minimum": 1},
                "tail_tol": {"type": "number", "exclusiveMinimum": 0},
                "c1": {"type": "number", "exclusiveMinimum": 0},
                "strict": {"type": "boolean"},
            },
        },
        "T": {"type": "number", "exclusiveMinimum": 0},
        "grid": {
            "type": "object",
            "properties": {
                "x": _RANGE,
                "t": {"type": "array", "items": {"type": "number", "exclusiveMinimum": 0}, "minItems": 1},
                "poles": {"type": "array", "items": {"type": "array", "items": {"type": "number"},
                                                       "minItems": 2, "maxItems": 2}},
            },
        },
        "verify": {"type": "object"},
        "cauchy": {"type": "object"},
        "oracle": {"type": "object"},
        "modulus_check": {"type": "object"},
        "seed": {"type": "integer", "minimum": 0},
        "out": {"type": "string"},
    },
}


def load_config(path) -> dict:
    """Read and validate a run configuration; raises :class:`ConfigError`."""
    try:
        with open(path) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    validate_config(cfg)
    return cfg


def validate_config(cfg: dict) -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"invalid config at {where}: {exc.message}") from exc


# -- builders -------------------------------------------------------------------


def build_field(cfg: dict):
    spec = dict(cfg["coefficients"])
    if "group" in cfg and spec["preset"] in ("constant", "log_dini_field"):
        spec.setdefault("group", cfg["group"])
    if "modulus" in cfg:
        spec.setdefault("modulus", cfg["modulus"])
    try:
        return coef.field_from_config(spec)
    except (TypeError, KeyError, ValueError) as exc:
        raise ConfigError(f"bad coefficient spec: {exc}") from exc


def build_engine(cfg: dict, cf=None) -> ParametrixEngine:
    cf = cf or build_field(cfg)
    quad = QuadratureSpec(**cfg.get("quadrature", {}))
    p = dict(cfg.get("policy", {}))
    if "lambda" in p:
        p["lam"] = p.pop("lambda")
    policy = SeriesPolicy(**p)
    return ParametrixEngine(cf, cfg["T"], quad=quad, policy=policy)


def _grid(cfg: dict, T: float):
    g = cfg.get("grid", {})
    lo, hi, n = g.get("x", [-2.0, 2.0, 41])
    xs = np.linspace(lo, hi, int(n))
    ts = np.asarray(g.get("t", [T / 4, T / 2, T]), float)
    poles = g.get("poles", [[0.0, 0.0]])
    return xs, ts, poles


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in r])


def _write_json(path: Path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_json_default)


def _json_default(v):
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, np.generic):
        return v.item()
    raise TypeError(f"not serialisable: {type(v)}")


# -- commands ---------------------------------------------------------------------


def cmd_kernel(cfg: dict, out: Path) -> int:
    eng = build_engine(cfg)
    xs, ts, poles = _grid(cfg, eng.T)
    for k, (xi, tau) in enumerate(poles):
        X, Tt = np.meshgrid(xs, tau + ts, indexing="ij")
        eng.export_csv(out / f"kernel_{k}.csv", X.ravel(), Tt.ravel(), xi, tau)
        mu = eng.mu(X.ravel(), Tt.ravel(), xi, tau)
        _write_csv(out / f"mu_{k}.csv", ["x", "t", "xi", "tau", "mu"],
                   [(x, t, float(xi), float(tau), m) for x, t, m in zip(X.ravel(), Tt.ravel(), mu)])
        eng.export_diagnostics(out / f"diagnostics_{k}.json", xi, tau)
        d = eng.tabulation(xi, tau).diagnostics
        log.info("pole %d: q=%.4g J_used=%d mode=%s", k, d.q, d.J_used, d.mode)
    return EXIT_OK


def cmd_verify(cfg: dict, out: Path, suite: str) -> int:
    cf = build_field(cfg)
    vcfg = dict(cfg.get("verify", {}))
    vcfg.setdefault("seed", cfg.get("seed", 0))
    if cf.group.name == "euclidean:1":
        eng = build_engine(cfg, cf)
        reports = run_suite(eng, suite, vcfg)
    else:
        if suite not in ("frozen", "modulus"):
            raise ConfigError("only the frozen and modulus suites run off euclidean:1")
        reports = run_suite(cf, suite, vcfg)
    write_reports(reports, out / f"verify_{suite}.json", out / f"verify_{suite}.csv")
    for r in reports:
        log.info("%-26s %s C=%.4g growth=%.3f", r.estimate_id, "pass" if r.passed else "FAIL",
                 r.C_fine, r.growth)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_cauchy(cfg: dict, out: Path) -> int:
    eng = build_engine(cfg)
    c = dict(cfg.get("cauchy", {}))
    f = function_from_config(c.get("f"))
    g = function_from_config(c.get("g", {"kind": "constant", "value": 1.0}))
    lo, hi, n = c.get("x", [-1.0, 1.0, 21])
    xs = np.linspace(lo, hi, int(n))
    ts = np.asarray(c.get("t", [eng.T / 2]), float)
    solver = CauchySolver(eng, nx=c.get("nx", 6.0), n_rho=c.get("n_rho", 16))
    X, Tt = np.meshgrid(xs, ts, indexing="ij")
    u = solver.solve_full(f, g, X.ravel(), Tt.ravel(), extent=(lo, hi))
    _write_csv(out / "cauchy_u.csv", ["x", "t", "u"], zip(X.ravel(), Tt.ravel(), u))
    tol = float(c.get("residual_tol", 1e-2))
    inner = Tt.ravel() > 2e-3
    res, fz = solver.residual(f, g, X.ravel()[inner], Tt.ravel()[inner])
    scale = max(float(np.max(np.abs(fz))), 1e-300) if not f.is_zero() else 1.0
    rel = float(np.max(np.abs(res))) / scale if res.size else 0.0
    report = {
        "residual_max_abs": float(np.max(np.abs(res))) if res.size else 0.0,
        "residual_rel": rel,
        "residual_tol": tol,
        "horizon_threshold": solver.horizon_threshold(),
        "passed": rel <= tol,
    }
    _write_json(out / "cauchy_report.json", report)
    log.info("cauchy residual %.3g (tol %.3g)", rel, tol)
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_oracle_compare(cfg: dict, out: Path, seed: int) -> int:
    o = dict(cfg.get("oracle", {}))
    rows, passed = [], True
    cf = build_field(cfg)
    if "fd" in o or cf.group.name == "euclidean:1":
        fd = dict(o.get("fd", {}))
        eng = build_engine(cfg, cf)
        grid = FDGrid(**fd.get("grid", {}))
        xi, tau = fd.get("pole", [0.0, 0.0])
        tol = float(fd.get("l1_tol", 0.02))
        for s in fd.get("gaps", [0.05, 0.1, 0.2]):
            res = fd_green(cf, xi, tau, tau + s, grid)
            x = res.axes[0]
            keep = np.abs(x - xi) <= grid.half_width * 0.9
            xe = x[keep]
            gam = gauss_hermite_smooth(
                lambda y: eng.gamma(xe, np.full_like(xe, tau + s), y, tau), xi, res.sigma0,
                n=int(fd.get("hermite_nodes", 8)))
            ref = res.u[keep]
            dx = x[1] - x[0]
            l1 = float(np.sum(np.abs(gam - ref)) * dx / (np.sum(np.abs(ref)) * dx))
            linf = float(np.max(np.abs(gam - ref)) / np.max(np.abs(ref)))
            rows.append(("fd", s, l1, linf, l1 <= tol))
            passed &= l1 <= tol
    if "mc" in o:
        mc = dict(o["mc"])
        group = group_from_name(mc.get("group", cfg.get("group", "heisenberg1")))
        A = np.asarray(mc.get("A", np.eye(group.m).tolist()), float)
        k = FrozenKernel(group, A)
        t = float(mc.get("t", 1.0))
        targets = np.asarray(mc.get("targets", [[0.0] * group.n]), float)
        r = mc_kernel(group, A, t, targets, int(mc.get("paths", 100_000)),
                      mc.get("dt"), seed=seed)
        ref = kde_smoothed_kernel(k, t, targets, r.bandwidth)
        for q, e, se, v in zip(targets, r.estimate, r.stderr, ref):
            z = abs(e - v) / se
            rows.append(("mc", t, float(z), float(abs(e - v)), z <= 2.0))
            passed &= z <= 2.0
    _write_csv(out / "oracle_compare.csv", ["oracle", "t_minus_tau", "l1_or_z", "linf_or_abs", "passed"],
               rows)
    return EXIT_OK if passed else EXIT_FAIL


def cmd_modulus_check(cfg: dict, out: Path) -> int:
    m = dict(cfg.get("modulus_check", {}))
    if "modulus" in cfg:
        w = md.modulus_from_config(cfg["modulus"])
    else:
        w = build_field(cfg).modulus
    T = cfg["T"]
    r = float(m.get("r", T))
    report = {"r": r, "dini": md.dini_integral(w, r), "dini_numeric": md.dini_integral(w, r, numeric=True)}
    try:
        report["double_dini"] = md.double_dini_integral(w, r)
    except ParametrixError as exc:
        report["double_dini"] = None
        report["double_dini_error"] = str(exc)
    rep = md.omega_leq_dini(w)
    report["omega_leq_dini"] = {"C_fit": rep.C_fit, "C_certified": rep.C_certified, "passed": rep.passed}
    try:
        report["stronger_condition"] = md.check_stronger_condition(w, T)
    except ParametrixError as exc:
        report["stronger_condition"] = None
        report["stronger_condition_error"] = str(exc)
    oe = md.check_omega_exp_inequality(w, float(m.get("alpha", 1.0)), float(m.get("c", 1.0)))
    report["omega_exp"] = {"C1": oe.C1, "c_prime": oe.c_prime, "C_sub": oe.C_sub,
                           "c_prime_sub": oe.c_prime_sub, "passed": oe.passed}
    report["passed"] = bool(rep.passed and oe.passed)
    _write_json(out / "modulus_check.json", report)
    return EXIT_OK if report["passed"] else EXIT_FAIL


# -- entry point --------------------------------------------------------------------


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="parametrix", description=__doc__.split("\n\n")[1])
    p.add_argument("command", choices=["kernel", "verify", "cauchy", "oracle-compare", "modulus-check"])
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", default=None, help="output directory (default: config 'out' or ./out)")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--threads", type=int, default=1, help="BLAS threads")
    p.add_argument("--suite", default="all", choices=sorted(SUITES), help="verify suite")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out = Path(args.out or cfg.get("out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    limiter = _thread_limit(args.threads)
    try:
        with limiter:
            if args.command == "kernel":
                return cmd_kernel(cfg, out)
            if args.command == "verify":
                return cmd_verify(cfg, out, args.suite)
            if args.command == "cauchy":
                return cmd_cauchy(cfg, out)
            if args.command == "oracle-compare":
                return cmd_oracle_compare(cfg, out, seed)
            return cmd_modulus_check(cfg, out)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NonContractionError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NONCONTRACTION
    except ParametrixError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


def _thread_limit(n: int):
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover
        import contextlib

        return contextlib.nullcontext()
    return threadpool_limits(limits=max(1, int(n)))


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
