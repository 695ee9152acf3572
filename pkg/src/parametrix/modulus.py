"""
Moduli of continuity
====================

A :class:`Modulus` wraps a continuous non-decreasing ``omega`` with
``omega(0) = 0`` together with its quasi-monotonicity data ``(delta, C)``:
``r2**-delta * omega(r2) <= C * r1**-delta * omega(r1)`` for ``r1 <= r2``.

Integrals with the ``dx/x`` weight are computed after the substitution
``x = r * exp(-s)``, which turns ``int_0^r omega(x)/x dx`` into
``int_0^inf omega(r e^{-s}) ds``; the half line is cut into dyadic panels
``[0, 1], [1, 2], [2, 4], ...`` each integrated with QUADPACK's adaptive
Gauss-Kronrod rule.  Moduli of logarithmic type also carry a log-space
evaluator ``omega(e^{-s})`` so that the panels can run arbitrarily far
without underflow.
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
from scipy import integrate, interpolate

from .errors import NonDiniError

__all__ = [
    "Modulus",
    "holder",
    "log_dini",
    "omega_alpha",
    "table",
    "custom",
    "zero",
    "modulus_from_config",
    "dini_integral",
    "double_dini_integral",
    "log_integral",
    "check_omega_exp_inequality",
    "check_half_power_dini",
    "check_stronger_condition",
    "omega_leq_dini",
    "holder_quotient",
    "OmegaExpReport",
]

_REL_TOL = 1e-9
_SENTINEL = 1e12
_MAX_PANELS = 200
_QUASI_MONO_PAIRS = 64


def omega_alpha(r, alpha: float):
    """``|log r|^-alpha`` on ``(0, 1/2)``, frozen at its value for ``r >= 1/2``."""
    r = np.asarray(r, dtype=float)
    out = np.zeros_like(r)
    small = (r > 0) & (r < 0.5)
    out[small] = (-np.log(r[small])) ** (-alpha)
    out[r >= 0.5] = math.log(2.0) ** (-alpha)
    return out


@dataclass(frozen=True, eq=False)
class Modulus:
    """A modulus of continuity with cached Dini data.

    Parameters
    ----------
    func : callable
        Vectorised ``omega``; the cap (if any) is applied on top.
    kind : str
        ``"holder"``, ``"log_dini"``, ``"table"`` or ``"custom"``.
    params : dict
        Kind parameters (``beta``/``alpha``/``scale``), used by the analytic paths.
    delta : float
        Exponent of the quasi-monotonicity condition, in ``(0, 1)``.
    cap : float, optional
        Upper trim ``omega <- min(omega, cap)``.
    log_func : callable, optional
        ``s -> omega(exp(-s))`` before capping, for logarithmic moduli.
    """

    func: Callable[[np.ndarray], np.ndarray]
    kind: str = "custom"
    params: dict = field(default_factory=dict)
    delta: float = 0.5
    cap: Optional[float] = None
    log_func: Optional[Callable[[np.ndarray], np.ndarray]] = None
    quasi_mono_C: float = field(init=False)

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must lie in (0, 1)")
        if self.cap is not None and self.cap <= 0:
            raise ValueError("cap must be positive")
        object.__setattr__(self, "quasi_mono_C", self._certify_quasi_mono())

    # -- evaluation -----------------------------------------------------

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        w = np.asarray(self.func(np.maximum(r, 0.0)), dtype=float)
        w = np.where(r > 0, w, 0.0)
        if self.cap is not None:
            w = np.minimum(w, self.cap)
        return w

    def eval_log(self, s):
        """``omega(exp(-s))``, exact even when ``exp(-s)`` underflows."""
        s = np.asarray(s, dtype=float)
        if self.log_func is None:
            return self(np.exp(-s))
        w = np.asarray(self.log_func(s), dtype=float)
        if self.cap is not None:
            w = np.minimum(w, self.cap)
        return w

    def _certify_quasi_mono(self) -> float:
        r = np.logspace(-8, 1, _QUASI_MONO_PAIRS)
        q = r ** (-self.delta) * self(r)
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = q[None, :] / q[:, None]  # [i, j] = q(r_j) / q(r_i)
        upper = np.triu(np.ones_like(ratio, dtype=bool), k=1)
        vals = ratio[upper]
        vals = vals[~np.isnan(vals)]
        if vals.size == 0:
            return 1.0
        return float(max(1.0, np.max(vals)))

    # -- derived moduli -------------------------------------------------

    def scaled(self, c1: float, c2: float) -> "Modulus":
        """``r -> c1 * omega(c2 * r)`` as a custom modulus (numeric paths)."""
        lf = None
        if self.log_func is not None or self.cap is not None:
            lf = lambda s: c1 * self.eval_log(s - math.log(c2))  # noqa: E731
        return Modulus(
            func=lambda r: c1 * self(c2 * r), kind="custom", delta=self.delta, log_func=lf
        )

    def sqrt_composed(self) -> "Modulus":
        """``r -> omega(sqrt(r))``."""
        lf = lambda s: self.eval_log(0.5 * np.asarray(s))  # noqa: E731
        delta = min(0.99, max(0.01, 0.5 * self.delta))
        return Modulus(func=lambda r: self(np.sqrt(r)), kind="custom", delta=delta, log_func=lf)

    def power(self, p: float) -> "Modulus":
        """``r -> omega(r)**p``."""
        lf = lambda s: self.eval_log(s) ** p  # noqa: E731
        return Modulus(
            func=lambda r: self(r) ** p,
            kind="custom",
            delta=min(0.99, max(0.01, p * self.delta)),
            log_func=lf,
        )

    # -- Dini data ------------------------------------------------------

    def dini(self, r):
        """Vectorised Dini integral, analytic or from the cached tabulation."""
        r = np.asarray(r, dtype=float)
        analytic = _analytic_dini(self, r)
        if analytic is not None:
            return analytic
        return self._dini_table(r)

    def double_dini(self, r):
        r = np.asarray(r, dtype=float)
        analytic = _analytic_double_dini(self, r)
        if analytic is not None:
            return analytic
        return np.vectorize(lambda v: double_dini_integral(self, float(v)))(r)

    @cached_property
    def _dini_grid(self):
        # omega~ on a log grid by accumulating panel integrals between nodes
        s_nodes = np.linspace(-math.log(1e3), 60.0, 1301)  # r = exp(-s)
        r_nodes = np.exp(-s_nodes)
        base = dini_integral(self, float(r_nodes[-1]))
        # int_{r_{k+1}}^{r_k} omega(x)/x dx = int_{s_k}^{s_{k+1}} omega(e^{-s}) ds
        pieces = np.empty(len(s_nodes) - 1)
        gl_x, gl_w = np.polynomial.legendre.leggauss(12)
        for k in range(len(s_nodes) - 1):
            a, b = s_nodes[k], s_nodes[k + 1]
            s = 0.5 * (b - a) * gl_x + 0.5 * (a + b)
            pieces[k] = 0.5 * (b - a) * np.dot(gl_w, self.eval_log(s))
        vals = base + np.concatenate([np.cumsum(pieces[::-1])[::-1], [0.0]])
        return s_nodes, interpolate.CubicSpline(s_nodes, vals)

    def _dini_table(self, r):
        s_nodes, spline = self._dini_grid
        out = np.zeros_like(r)
        pos = r > 0
        s = -np.log(r[pos])
        inside = (s >= s_nodes[0]) & (s <= s_nodes[-1])
        res = np.empty(s.shape)
        res[inside] = spline(s[inside])
        for idx in np.flatnonzero(~inside):
            res[idx] = dini_integral(self, float(np.exp(-s[idx])))
        out[pos] = res
        return out


# ---------------------------------------------------------------------------
# constructors


def holder(beta: float, scale: float = 1.0, cap=None, delta=None) -> Modulus:
    """``scale * r**beta``."""
    if not 0 < beta <= 1:
        raise ValueError("Holder exponent must lie in (0, 1]")
    if delta is None:
        delta = min(0.99, 0.5 * (beta + 1.0))
    return Modulus(
        func=lambda r: scale * np.asarray(r, float) ** beta,
        kind="holder",
        params={"beta": beta, "scale": scale},
        delta=delta,
        cap=cap,
        log_func=lambda s: scale * np.exp(-beta * np.asarray(s, float)),
    )


def log_dini(alpha: float, scale: float = 1.0, cap=None, delta: float = 0.9) -> Modulus:
    """``scale * omega_alpha`` with the exact branch at ``r = 1/2``."""
    if alpha <= 1:
        raise ValueError("log-Dini exponent must exceed 1 for the Dini condition")

    def lf(s):
        s = np.asarray(s, float)
        return scale * np.where(s > math.log(2.0), np.maximum(s, math.log(2.0)), math.log(2.0)) ** (-alpha)

    return Modulus(
        func=lambda r: scale * omega_alpha(r, alpha),
        kind="log_dini",
        params={"alpha": alpha, "scale": scale},
        delta=delta,
        cap=cap,
        log_func=lf,
    )


def table(r, w, cap=None, delta: float = 0.5) -> Modulus:
    """Piecewise linear modulus through ``(r, w)`` pairs (``(0, 0)`` implied)."""
    r = np.asarray(r, dtype=float)
    w = np.asarray(w, dtype=float)
    if r.ndim != 1 or r.shape != w.shape or r.size < 2:
        raise ValueError("table modulus needs matching 1-D arrays of length >= 2")
    if np.any(np.diff(r) <= 0) or np.any(r < 0):
        raise ValueError("table abscissae must be increasing and non-negative")
    if np.any(np.diff(w) < 0) or np.any(w < 0):
        raise ValueError("table modulus must be non-negative and non-decreasing")
    if r[0] > 0:
        r = np.concatenate([[0.0], r])
        w = np.concatenate([[0.0], w])
    elif w[0] != 0:
        raise ValueError("table modulus must vanish at 0")

    return Modulus(
        func=lambda x: np.interp(x, r, w),
        kind="table",
        params={"r": r, "w": w},
        delta=delta,
        cap=cap,
    )


def read_table_csv(path, cap=None, delta: float = 0.5) -> Modulus:
    """Read ``r, omega`` pairs (header optional) from a CSV file."""
    rows = []
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row:
                continue
            try:
                rows.append((float(row[0]), float(row[1])))
            except ValueError:
                continue  # header line
    arr = np.array(rows)
    return table(arr[:, 0], arr[:, 1], cap=cap, delta=delta)


def custom(func, delta: float = 0.5, cap=None, log_func=None) -> Modulus:
    return Modulus(func=func, kind="custom", delta=delta, cap=cap, log_func=log_func)


def zero() -> Modulus:
    return Modulus(func=lambda r: np.zeros_like(np.asarray(r, float)), kind="custom")


def modulus_from_config(spec: dict) -> Modulus:
    """Build a modulus from ``{"kind": ..., params...}``."""
    spec = dict(spec)
    kind = spec.pop("kind")
    if kind == "holder":
        return holder(**spec)
    if kind == "log_dini":
        return log_dini(**spec)
    if kind == "table":
        path = spec.pop("path", None)
        if path is not None:
            return read_table_csv(path, **spec)
        return table(spec.pop("r"), spec.pop("w"), **spec)
    if kind == "zero":
        return zero()
    raise ValueError(f"unknown modulus kind {kind!r}")


# ---------------------------------------------------------------------------
# analytic fast paths


def _analytic_dini(w: Modulus, r):
    if w.kind == "holder":
        b, sc = w.params["beta"], w.params["scale"]
        out = sc * np.maximum(r, 0.0) ** b / b
        if w.cap is None:
            return out
        r_star = (w.cap / sc) ** (1.0 / b)
        above = r > r_star
        out = np.where(
            above,
            w.cap / b + w.cap * np.log(np.where(above, r, r_star) / r_star),
            out,
        )
        return out
    if w.kind == "log_dini":
        a, sc = w.params["alpha"], w.params["scale"]
        if w.cap is not None and w.cap < sc * math.log(2.0) ** (-a):
            return None
        out = np.zeros_like(r)
        small = (r > 0) & (r < 0.5)
        out[small] = sc * (-np.log(r[small])) ** (1.0 - a) / (a - 1.0)
        big = r >= 0.5
        l2 = math.log(2.0)
        out[big] = sc * (l2 ** (1.0 - a) / (a - 1.0) + l2 ** (-a) * np.log(2.0 * r[big]))
        return out
    return None


def _analytic_double_dini(w: Modulus, r):
    if w.kind == "holder" and w.cap is None:
        b, sc = w.params["beta"], w.params["scale"]
        return sc * np.maximum(r, 0.0) ** b / b**2
    if w.kind == "log_dini" and _analytic_dini(w, np.array([1.0])) is not None:
        a, sc = w.params["alpha"], w.params["scale"]
        if a <= 2:
            raise NonDiniError(f"log-Dini modulus with alpha={a} <= 2 is not double Dini")
        out = np.zeros_like(r)
        small = (r > 0) & (r < 0.5)
        out[small] = sc * (-np.log(r[small])) ** (2.0 - a) / ((a - 1.0) * (a - 2.0))
        big = r >= 0.5
        l2 = math.log(2.0)
        lr = np.log(2.0 * r[big])
        head = l2 ** (2.0 - a) / ((a - 1.0) * (a - 2.0))
        out[big] = sc * (head + l2 ** (1.0 - a) / (a - 1.0) * lr + 0.5 * l2 ** (-a) * lr**2)
        return out
    return None


# ---------------------------------------------------------------------------
# numeric machinery


def log_integral(fun_s: Callable[[float], float], tol: float = _REL_TOL, what: str = "Dini"):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return _log_integral(fun_s, tol, what)


def _log_integral(fun_s, tol, what):
    """``int_0^inf F(s) ds`` for a non-negative integrand decaying at infinity.

    Dyadic panels are integrated until a panel contributes less than ``tol``
    relative to the running total; the remaining tail is extrapolated from the
    geometric ratio of the last two panels.  A non-decreasing tail or a total
    beyond the divergence sentinel raises :class:`NonDiniError`.
    """
    total, _ = integrate.quad(fun_s, 0.0, 1.0, epsabs=0.0, epsrel=tol * 0.1, limit=200)
    prev = None
    a = 1.0
    rising = 0
    for _ in range(_MAX_PANELS):
        b = 2.0 * a
        piece, _ = integrate.quad(fun_s, a, b, epsabs=0.0, epsrel=tol * 0.1, limit=200)
        total += piece
        if not np.isfinite(total) or total > _SENTINEL:
            raise NonDiniError(f"{what} integral exceeds divergence sentinel")
        if piece <= tol * abs(total) or piece == 0.0:
            if prev is not None and prev > 0 and piece > 0:
                ratio = piece / prev
                if ratio < 1.0:
                    total += piece * ratio / (1.0 - ratio)
            return total
        if prev is not None and prev > 0:
            ratio = piece / prev
            rising = rising + 1 if ratio >= 0.999 else 0
            if rising >= 6:
                raise NonDiniError(f"{what} integral tail is not decreasing")
        prev = piece
        a = b
    raise NonDiniError(f"{what} integral did not converge within {_MAX_PANELS} panels")


def dini_integral(w: Modulus, r: float, tol: float = _REL_TOL, numeric: bool = False) -> float:
    """``int_0^r omega(x)/x dx``.

    Parameters
    ----------
    numeric : bool
        Force the quadrature path even when an analytic formula exists.
    """
    if r < 0:
        raise ValueError("r must be non-negative")
    if r == 0:
        return 0.0
    if not numeric:
        val = _analytic_dini(w, np.array([r]))
        if val is not None:
            return float(val[0])
    shift = -math.log(r)
    return log_integral(lambda s: float(w.eval_log(s + shift)), tol=tol)


def double_dini_integral(
    w: Modulus, r: float, tol: float = _REL_TOL, numeric: bool = False, nested: bool = False
) -> float:
    """``int_0^r dy/y int_0^y omega(x)/x dx``.

    The numeric path uses the equivalent single integral
    ``int_0^r omega(x)/x * log(r/x) dx``; ``nested=True`` instead nests two
    Dini quadratures and is kept as an independent check.
    """
    if r < 0:
        raise ValueError("r must be non-negative")
    if r == 0:
        return 0.0
    if not numeric and not nested:
        val = _analytic_double_dini(w, np.array([r]))
        if val is not None:
            return float(val[0])
    shift = -math.log(r)
    if nested:
        return log_integral(
            lambda s: dini_integral(w, r * math.exp(-s), tol=tol, numeric=True)
            if s < 700
            else _dini_far(w, s + shift, tol),
            tol=tol,
            what="double Dini",
        )
    return log_integral(lambda s: s * float(w.eval_log(s + shift)), tol=tol, what="double Dini")


def _dini_far(w, s0, tol):
    return log_integral(lambda s: float(w.eval_log(s + s0)), tol=tol)


# ---------------------------------------------------------------------------
# checks


@dataclass
class OmegaExpReport:
    """Fitted constants for the two envelope-exchange inequalities."""

    alpha: float
    c: float
    C1: float
    c_prime: float
    C_sub: float
    c_prime_sub: float
    c1_sub: float
    violations: list
    samples: int

    @property
    def passed(self) -> bool:
        return not self.violations and np.isfinite(self.C1) and np.isfinite(self.C_sub)


def _env(r, s, c, Q):
    return (c * s) ** (-0.5 * Q) * np.exp(-(r**2) / (c * s))


def check_omega_exp_inequality(
    w: Modulus,
    alpha: float,
    c: float,
    samples=None,
    Q: int = 1,
    c1: float = 2.0,
    c_grid=None,
) -> OmegaExpReport:
    """Fit the constants trading ``omega(d)`` for ``omega(sqrt(t - tau))``.

    ``samples`` is a pair ``(r, s)`` of 1-D grids for ``d(x, xi)`` and
    ``t - tau``.  For every candidate ``c' >= c`` the smallest admissible
    constant is the maximum ratio of the two sides; the candidate minimising it
    is reported.  Points where the left side vanishes hold vacuously.
    """
    if samples is None:
        samples = (np.concatenate([[0.0], np.logspace(-4, 1, 60)]), np.logspace(-6, 1, 50))
    r, s = (np.asarray(v, float) for v in samples)
    R, S = np.meshgrid(r, s, indexing="ij")
    if c_grid is None:
        c_grid = c * np.logspace(0, 2, 41)
    wr = w(R) ** alpha
    ws = w(np.sqrt(S)) ** alpha
    lhs = wr * _env(R, S, c, Q)
    best = (np.inf, c)
    for cp in c_grid:
        rhs = ws * _env(R, S, cp, Q)
        val = _fit_max(lhs, rhs)
        if val < best[0]:
            best = (val, cp)
    lhs2 = w(R + np.sqrt(S)) * _env(R, S, c, Q)
    ws2 = w(c1 * np.sqrt(S))
    best2 = (np.inf, c)
    for cp in c_grid:
        val = _fit_max(lhs2, ws2 * _env(R, S, cp, Q))
        if val < best2[0]:
            best2 = (val, cp)
    violations = []
    if not np.isfinite(best[0]):
        violations.append("omega^alpha exchange: no finite constant on grid")
    if not np.isfinite(best2[0]):
        violations.append("sub-additivity exchange: no finite constant on grid")
    return OmegaExpReport(
        alpha=alpha,
        c=c,
        C1=float(best[0]),
        c_prime=float(best[1]),
        C_sub=float(best2[0]),
        c_prime_sub=float(best2[1]),
        c1_sub=c1,
        violations=violations,
        samples=int(lhs.size),
    )


def _fit_max(lhs, rhs):
    nz = lhs > 0
    if not np.any(nz):
        return 0.0
    if np.any(rhs[nz] <= 0):
        return np.inf
    return float(np.max(lhs[nz] / rhs[nz]))


def check_half_power_dini(w: Modulus, eps: float, T: float, tol: float = _REL_TOL) -> float:
    """``int_0^T omega^(1/2 + eps)(x)/x dx``; raises if the tail diverges."""
    if not 0 < eps < 0.5:
        raise ValueError("eps must lie in (0, 1/2)")
    if T <= 0:
        raise ValueError("T must be positive")
    return dini_integral(w.power(0.5 + eps), T, tol=tol, numeric=True)


def check_stronger_condition(w: Modulus, T: float, tol: float = _REL_TOL) -> float:
    """``int_0^T omega^(1/2)(x)/x dx`` (needed by the nonhomogeneous solver)."""
    return dini_integral(w.power(0.5), T, tol=tol, numeric=True)


@dataclass
class DiniRatioReport:
    C_fit: float
    C_certified: float
    reverse_C_fit: float
    passed: bool


def omega_leq_dini(w: Modulus, r=None) -> DiniRatioReport:
    """Fit ``C'`` in ``omega(r) <= C' omega~(r)`` on samples.

    Quasi-monotonicity gives ``omega(x) >= (x/r)^delta omega(r) / C`` for
    ``x <= r``; integrating against ``dx/x`` certifies ``C' = C * delta``.
    The reverse ratio ``omega~/omega`` is reported but not certified.
    """
    if r is None:
        r = np.logspace(-8, 1, 200)
    r = np.asarray(r, float)
    wr = w(r)
    wt = w.dini(r)
    pos = wt > 0
    c_fit = float(np.max(wr[pos] / wt[pos])) if np.any(pos) else 0.0
    c_cert = w.quasi_mono_C * w.delta
    posw = wr > 0
    rev_fit = float(np.max(wt[posw] / wr[posw])) if np.any(posw) else 0.0
    return DiniRatioReport(c_fit, c_cert, rev_fit, bool(c_fit <= c_cert * (1 + 1e-9)))


def holder_quotient(w: Modulus, beta: float, s) -> np.ndarray:
    """``omega(r) / r**beta`` at ``r = exp(-s)``, evaluated in log space."""
    s = np.asarray(s, float)
    with np.errstate(divide="ignore", over="ignore"):
        return np.exp(np.log(w.eval_log(s)) + beta * s)
