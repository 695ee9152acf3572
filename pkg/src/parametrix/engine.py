"""
Parametrix engine
=================

Builds the fundamental solution ``Gamma = Gamma_zeta + J`` of
``a(x, t) d^2/dx^2 - d/dt`` on the real line from the frozen kernel.

For a fixed pole ``zeta = (xi, tau)`` every series term ``Z_j(., .; zeta)``
with ``j >= 2`` is tabulated on self-similar coordinates::

    u = (x - xi) / sqrt(2 Lambda s),   rho = sqrt(s),   s = t - tau,

storing ``W_j = rho^3 Z_j``, which stays bounded and vanishes at ``rho = 0``.
``Z_1`` is always evaluated in closed form.  Each new term is the space-time
integral of ``Z_1`` against the previous one, computed with the midpoint
split and square-root substitutions of :func:`~parametrix.quadrature.split_time_rule`
in time and Gauss-Legendre windows around the product Gaussian in space.

The derivatives of ``J`` use the integrands with the kernel frozen at the
evaluation point subtracted; the subtracted part integrates to zero over
space and removes the non-integrable part of the singularity.  Dyadic
collars ``(tau, t - eps_k)`` are evaluated alongside and extrapolated as an
independent certificate of the limit.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field, asdict
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .coefficients import CoefficientField
from .errors import (
    BackendError,
    DomainError,
    NonContractionError,
    SingularLimitError,
)
from .fitting import fit_constant
from .quadrature import QuadratureSpec, gauss_legendre, split_time_rule

__all__ = [
    "QuadratureSpec",
    "SeriesPolicy",
    "SeriesDiagnostics",
    "ParametrixTabulation",
    "ParametrixEngine",
    "heat1d",
    "phi",
]

_DEGENERATE_GAP = 1e-10
_CHUNK = 1_500_000  # integrand evaluations per vectorised block


def heat1d(a, x, s):
    """Value, first, second and time derivative of ``(4 pi a s)^-1/2 exp(-x^2 / (4 a s))``."""
    g = np.exp(-(x**2) / (4.0 * a * s)) / np.sqrt(4.0 * math.pi * a * s)
    d1 = -x / (2.0 * a * s) * g
    d2 = (x**2 / (4.0 * a**2 * s**2) - 1.0 / (2.0 * a * s)) * g
    dt = (-0.5 / s + x**2 / (4.0 * a * s**2)) * g
    return g, d1, d2, dt


def phi(modulus, lam: float, eps: float, lambda_ell: float, c1: float) -> float:
    """``4 omega~(c1 eps) + 16 Lambda / (lam eps^2)``."""
    if lam <= 0:
        return math.inf
    return float(4.0 * modulus.dini(np.array([c1 * eps]))[0] + 16.0 * lambda_ell / (lam * eps**2))


@dataclass(frozen=True)
class SeriesPolicy:
    """How the series is truncated and how its contraction is certified.

    Parameters
    ----------
    lam : float or None
        Exponential correction.  ``None`` selects it automatically: no
        correction when the uncorrected bound already contracts, otherwise
        ``(lam, eps)`` chosen so that each of the two terms of ``phi`` is at
        most ``0.25 / C_fit``.
    epsilon : float or None
        Split parameter; chosen to minimise ``phi`` when ``lam`` is given alone.
    J_max : int
        Largest series index kept.
    tail_tol : float
        Stop early once a term's normalised size falls below this fraction of
        the first one.
    c1 : float
        Argument scale of the modulus in the envelope.
    strict : bool
        Raise :class:`NonContractionError` when the certified ratio is >= 1.
    """

    lam: Optional[float] = None
    epsilon: Optional[float] = None
    J_max: int = 8
    tail_tol: float = 1e-8
    c1: float = 2.0
    strict: bool = True

    def __post_init__(self):
        if self.J_max < 1:
            raise ValueError("J_max must be >= 1")
        if self.lam is not None and self.lam < 0:
            raise ValueError("lam must be non-negative")
        if self.epsilon is not None and not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")


@dataclass
class SeriesDiagnostics:
    """Contraction certificate and per-term sizes of one tabulation."""

    lam: float
    epsilon: Optional[float]
    phi: Optional[float]
    C_fit: float
    c_env: float
    c1: float
    q: float
    q0: float
    per_term: list = field(default_factory=list)
    ratios: list = field(default_factory=list)
    J_used: int = 0
    tail_bound: float = 0.0
    mode: str = "lambda0"

    @property
    def converged(self) -> bool:
        return self.q < 1.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d["converged"] = self.converged
        return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


class ParametrixTabulation:
    """Tabulated series terms for one pole.

    Attributes
    ----------
    xi, tau : float
        The pole (``tau`` is the reference time; autonomous fields reuse the
        table for every ``tau`` through time translation).
    u, rho : ndarray
        Grid nodes.
    W : dict
        ``j -> rho^3 Z_j`` on the grid for ``j >= 2`` (weighted by
        ``exp(-lam s)`` when ``lam > 0``).
    diagnostics : SeriesDiagnostics
    """

    def __init__(self, engine, xi, tau, lam, u, rho, W, diagnostics, z1_grid):
        self.engine = engine
        self.xi = float(xi)
        self.tau = float(tau)
        self.lam = float(lam)
        self.u = u
        self.rho = rho
        self.W = W
        self.z1_grid = z1_grid
        self.diagnostics = diagnostics
        self._splines = {
            j: RectBivariateSpline(u, rho, w, kx=3, ky=3, s=0) for j, w in W.items()
        }
        if W:
            self._rest = RectBivariateSpline(u, rho, sum(W.values()), kx=3, ky=3, s=0)
        else:
            self._rest = None

    @property
    def J_used(self) -> int:
        return self.diagnostics.J_used

    def _coords(self, x, t, tau):
        s = np.asarray(t, float) - tau
        x = np.asarray(x, float)
        x, s = np.broadcast_arrays(x, s)
        rho = np.sqrt(np.maximum(s, 0.0))
        with np.errstate(divide="ignore", invalid="ignore"):
            u = (x - self.xi) / np.sqrt(2.0 * self.engine.a_max * s)
        inside = (s > 0) & (np.abs(u) <= self.u[-1]) & (rho <= self.rho[-1] * (1 + 1e-12))
        return u, rho, inside

    def _eval_spline(self, spl, x, t, tau):
        u, rho, inside = self._coords(x, t, tau)
        out = np.zeros(u.shape)
        if spl is not None and np.any(inside):
            r = rho[inside]
            out[inside] = spl.ev(u[inside], np.minimum(r, self.rho[-1])) / r**3
        return out

    def z_j(self, j: int, x, t, tau=None):
        tau = self.tau if tau is None else tau
        if j == 1:
            return self.engine.z1(x, t, self.xi, tau) * self._lam_factor(t, tau)
        if j not in self._splines:
            return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(t)))
        return self._eval_spline(self._splines[j], x, t, tau)

    def rest(self, x, t, tau=None):
        """``sum_{j >= 2} Z_j`` by interpolation."""
        tau = self.tau if tau is None else tau
        return self._eval_spline(self._rest, x, t, tau)

    def mu(self, x, t, tau=None):
        tau = self.tau if tau is None else tau
        return self.engine.z1(x, t, self.xi, tau) * self._lam_factor(t, tau) + self.rest(x, t, tau)

    def _lam_factor(self, t, tau):
        if self.lam == 0:
            return 1.0
        return np.exp(-self.lam * np.maximum(np.asarray(t, float) - tau, 0.0))


class ParametrixEngine:
    """Fundamental solution of ``a(x, t) d^2/dx^2 - d/dt`` by the parametrix series.

    Parameters
    ----------
    cf : CoefficientField
        Scalar field on ``euclidean:1``.
    T : float
        Horizon: every tabulation covers ``0 < t - tau <= T``.
    quad : QuadratureSpec, optional
    policy : SeriesPolicy, optional
    """

    def __init__(self, cf: CoefficientField, T: float, quad=None, policy=None):
        if cf.group.name != "euclidean:1":
            raise BackendError(
                f"the parametrix engine supports euclidean:1 only, got {cf.group.name}"
            )
        if not T > 0:
            raise DomainError("horizon T must be positive")
        self.cf = cf
        self.T = float(T)
        self.quad = quad or QuadratureSpec()
        self.policy = policy or SeriesPolicy()
        self.a_max = float(cf.lambda_ell)
        self.modulus = cf.modulus
        self._cache: dict = {}
        self.last_trace = None

    # -- coefficients and the first term ----------------------------------

    def a(self, x, t):
        x = np.asarray(x, float)
        t = np.asarray(t, float)
        return np.asarray(self.cf.func(x[..., None], t), float)[..., 0, 0]

    def frozen(self, x, t, xi, tau):
        """``Gamma_zeta`` and its derivatives: ``(value, d1, d2, dt)``, zero for ``t <= tau``."""
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        s = t - tau
        pos = s > 0
        out = [np.zeros(x.shape) for _ in range(4)]
        if np.any(pos):
            a0 = self.a(np.asarray(xi, float), np.asarray(tau, float))
            vals = heat1d(a0, x[pos] - xi, s[pos])
            for o, v in zip(out, vals):
                o[pos] = v
        return tuple(out)

    def z1(self, x, t, xi, tau):
        """``(a(z) - a(zeta)) d^2/dx^2 Gamma_zeta(z; zeta)``; exactly 0 for ``t <= tau``."""
        x = np.asarray(x, float)
        t = np.asarray(t, float)
        xi = np.asarray(xi, float)
        tau = np.asarray(tau, float)
        x, t, xi, tau = np.broadcast_arrays(x, t, xi, tau)
        out = np.zeros(x.shape)
        if self.cf.is_constant:
            return out
        pos = t > tau
        if np.any(pos):
            s = t[pos] - tau[pos]
            a_z = self.a(x[pos], t[pos])
            a_0 = self.a(xi[pos], tau[pos])
            out[pos] = (a_z - a_0) * heat1d(a_0, x[pos] - xi[pos], s)[2]
        return out

    # -- generic space-time quadrature -------------------------------------

    def _windows(self, x, t, eta, xi, tau, localized, quad=None):
        """Gauss-Legendre nodes in ``y`` for each ``(point, eta)`` pair."""
        q = quad or self.quad
        k = q.k_R
        v1 = 2.0 * self.a_max * (t[:, None] - eta)
        if localized:
            v2 = 2.0 * self.a_max * (eta - tau)
            m = (x[:, None] * v2 + xi * v1) / (v1 + v2)
            sdp = np.sqrt(v1 * v2 / (v1 + v2))
            lo = m - k * sdp
            hi = m + k * sdp
        else:
            lo = x[:, None] - k * np.sqrt(v1)
            hi = x[:, None] + k * np.sqrt(v1)
        gx, gw = gauss_legendre(q.space_nodes)
        half = 0.5 * (hi - lo)
        y = (0.5 * (hi + lo))[..., None] + half[..., None] * gx
        wy = half[..., None] * gw
        return y, wy

    def _integrate(self, x, t, tau, integrand, xi=None, upper_gap=0.0, time_nodes=None,
                   quad=None, local_term=None):
        """``int_tau^{t - gap} d eta int dy integrand(X, T, Y, ETA)`` for every point.

        ``integrand`` receives ``X, T`` of shape ``(P, 1, 1)`` and ``Y, ETA``
        of shape ``(P, E, S)`` / ``(P, E, 1)``.  When ``xi`` is given the
        integrand is a product of Gaussians around ``x`` and ``xi`` and the
        space window is that of the product; otherwise it is centred at ``x``.
        ``local_term`` (same signature) is integrated on the window centred at
        ``x`` with the same time nodes and added.  ``quad`` overrides the
        engine's node counts.
        """
        quad = quad or self.quad
        x = np.atleast_1d(np.asarray(x, float))
        t = np.atleast_1d(np.asarray(t, float))
        x, t = np.broadcast_arrays(x, t)
        shape = x.shape
        x, t = x.ravel(), t.ravel()
        out = np.zeros(x.size)
        n_t = time_nodes or quad.time_nodes
        gap = np.broadcast_to(np.asarray(upper_gap, float), shape).ravel()
        valid = (t - gap) > tau
        per_point = 2 * n_t * quad.space_nodes
        step = max(1, _CHUNK // per_point)
        idx = np.flatnonzero(valid)
        for lo in range(0, idx.size, step):
            sel = idx[lo : lo + step]
            xs, ts, gs = x[sel], t[sel], gap[sel]
            eta, weta = split_time_rule(tau, ts - gs, n_t)
            y, wy = self._windows(xs, ts, eta, xi if xi is not None else 0.0, tau, xi is not None, quad)
            X, Tt, E = xs[:, None, None], ts[:, None, None], eta[..., None]
            slab = np.einsum("pes,pes->pe", wy, integrand(X, Tt, y, E))
            if local_term is not None:
                y2, wy2 = self._windows(xs, ts, eta, 0.0, tau, False, quad)
                slab = slab + np.einsum("pes,pes->pe", wy2, local_term(X, Tt, y2, E))
            out[sel] = np.einsum("pe,pe->p", weta, slab)
        return out.reshape(shape)

    # -- series ---------------------------------------------------------------

    def z_next(self, prev: Callable, x, t, xi, tau, lam: float = 0.0, time_nodes=None):
        """``int Z_1(z; chi) prev(chi) d chi`` with ``Z_1`` weighted by ``exp(-lam (t - eta))``."""

        def integrand(X, T, Y, ETA):
            a_y = self.a(Y, ETA)
            s = T - ETA
            z1 = (self.a(X, T) - a_y) * heat1d(a_y, X - Y, s)[2]
            if lam:
                z1 = z1 * np.exp(-lam * s)
            return z1 * prev(Y, ETA)

        return self._integrate(x, t, tau, integrand, xi=xi, time_nodes=time_nodes)

    def _key(self, xi, tau, lam):
        t_key = 0.0 if self.cf.autonomous else float(tau)
        return (float(xi), t_key, float(lam))

    def tabulation(self, xi: float, tau: float = 0.0, lam: float = 0.0) -> ParametrixTabulation:
        """Tabulate the series for the pole ``(xi, tau)`` (cached)."""
        key = self._key(xi, tau, lam)
        tab = self._cache.get(key)
        if tab is None:
            tab = self._build(float(xi), key[1], float(lam))
            self._cache[key] = tab
        return tab

    def _grid(self):
        q = self.quad
        U = q.k_R + 0.5
        u = np.linspace(-U, U, q.grid_u)
        rho = np.linspace(0.0, math.sqrt(self.T), q.grid_rho + 1)
        return u, rho

    def _build(self, xi, tau, lam):
        u, rho = self._grid()
        pol = self.policy
        if self.cf.is_constant:
            diag = SeriesDiagnostics(
                lam=0.0, epsilon=None, phi=0.0, C_fit=0.0, c_env=1.0, c1=pol.c1,
                q=0.0, q0=0.0, per_term=[0.0], ratios=[], J_used=1, tail_bound=0.0,
                mode="constant",
            )
            return ParametrixTabulation(self, xi, tau, lam, u, rho, {}, diag, None)
        U, R = np.meshgrid(u, rho[1:], indexing="ij")
        S = R**2
        X = xi + U * np.sqrt(2.0 * self.a_max * S)
        Tt = tau + S
        z1 = self.z1(X, Tt, xi, tau)
        fit = self._fit_z1(z1, X - xi, S)
        env = self._envelope(X - xi, S, fit.c)
        diag = self._certify(fit)
        weight = np.exp(-0.5 * diag.lam * S)
        norms = [float(np.max(np.abs(z1) * weight / env))]
        W = {}
        lam_f = np.exp(-lam * S) if lam else 1.0
        prev = lambda y, eta: self.z1(y, eta, xi, tau) * (  # noqa: E731
            np.exp(-lam * (eta - tau)) if lam else 1.0
        )
        for j in range(2, pol.J_max + 1):
            zj = self.z_next(prev, X, Tt, xi, tau, lam=lam)
            wj = np.zeros((len(u), len(rho)))
            wj[:, 1:] = zj * R**3
            W[j] = wj
            unweighted = zj / lam_f if lam else zj
            norms.append(float(np.max(np.abs(unweighted) * weight / env)))
            spl = RectBivariateSpline(u, rho, wj, kx=3, ky=3, s=0)
            prev = self._spline_eval(spl, xi, tau, u[-1], rho)
            if norms[-1] <= pol.tail_tol * norms[0]:
                break
        diag.per_term = norms
        diag.ratios = [b / a if a > 0 else 0.0 for a, b in zip(norms[:-1], norms[1:])]
        diag.J_used = len(norms)
        q = diag.q
        diag.tail_bound = float(norms[-1] * q / (1.0 - q)) if q < 1 else math.inf
        return ParametrixTabulation(self, xi, tau, lam, u, rho, W, diag, z1)

    def _spline_eval(self, spl, xi, tau, U, rho):
        a_max = self.a_max
        rmax = rho[-1]

        def f(y, eta):
            s = eta - tau
            shape = np.broadcast_shapes(np.shape(y), np.shape(s))
            y = np.broadcast_to(y, shape)
            s = np.broadcast_to(s, shape)
            r = np.sqrt(np.maximum(s, 0.0))
            with np.errstate(divide="ignore", invalid="ignore"):
                uu = (y - xi) / np.sqrt(2.0 * a_max * s)
            inside = (s > 0) & (np.abs(uu) <= U)
            out = np.zeros(shape)
            ri = np.minimum(r[inside], rmax)
            out[inside] = spl.ev(uu[inside], ri) / ri**3
            return out

        return f

    def _envelope(self, dx, s, c):
        w = self.modulus(self.policy.c1 * np.sqrt(s))
        return w / s * (c * s) ** -0.5 * np.exp(-(dx**2) / (c * s))

    def _fit_z1(self, z1, dx, s):
        return fit_constant(z1, lambda c: self._envelope(dx, s, c))

    def _certify(self, fit) -> SeriesDiagnostics:
        pol = self.policy
        C = fit.C
        c1 = pol.c1
        lam_ell = self.cf.lambda_ell
        q0 = float(4.0 * C * self.modulus.dini(np.array([c1 * math.sqrt(self.T)]))[0])
        base = dict(C_fit=C, c_env=fit.c, c1=c1, q0=q0)
        if pol.lam == 0:
            diag = SeriesDiagnostics(lam=0.0, epsilon=None, phi=None, q=q0, mode="lambda0", **base)
        elif pol.lam is None and q0 < 1:
            diag = SeriesDiagnostics(lam=0.0, epsilon=None, phi=None, q=q0, mode="lambda0", **base)
        elif pol.lam is None:
            target = 0.25 / C
            eps = self._solve_eps(target / 4.0, c1)
            lam = 16.0 * lam_ell / (eps**2 * target)
            ph = phi(self.modulus, lam, eps, lam_ell, c1)
            diag = SeriesDiagnostics(lam=lam, epsilon=eps, phi=ph, q=C * ph, mode="policy", **base)
        else:
            lam = float(pol.lam)
            if pol.epsilon is not None:
                eps = pol.epsilon
            else:
                grid = np.logspace(-6, -1e-6, 400)
                vals = [phi(self.modulus, lam, e, lam_ell, c1) for e in grid]
                eps = float(grid[int(np.argmin(vals))])
            ph = phi(self.modulus, lam, eps, lam_ell, c1)
            diag = SeriesDiagnostics(lam=lam, epsilon=eps, phi=ph, q=C * ph, mode="given", **base)
        if pol.strict and not diag.q < 1:
            raise NonContractionError(
                f"certified ratio q={diag.q:.4g} >= 1 at lambda={diag.lam:.4g}; "
                "increase lambda or shrink the horizon",
                q=diag.q,
            )
        return diag

    def _solve_eps(self, level, c1):
        """Largest ``eps`` in (0, 1) with ``omega~(c1 eps) <= level``."""
        f = lambda e: float(self.modulus.dini(np.array([c1 * e]))[0]) - level  # noqa: E731
        if f(1.0 - 1e-9) <= 0:
            return 1.0 - 1e-9
        lo, hi = -40.0, 0.0  # log eps
        if f(math.exp(lo)) > 0:
            raise NonContractionError("no admissible epsilon: Dini integral too large near 0")
        for _ in range(100):
            mid = 0.5 * (lo + hi)
            if f(math.exp(mid)) <= 0:
                lo = mid
            else:
                hi = mid
        return math.exp(lo)

    # -- public evaluation ----------------------------------------------------

    def _check_gap(self, t, tau):
        s = np.asarray(t, float) - tau
        if np.any(s > self.T * (1 + 1e-12)):
            raise DomainError(f"t - tau exceeds the horizon T={self.T}")
        return s

    def z_j(self, j: int, x, t, xi, tau=0.0, lam: float = 0.0):
        self._check_gap(t, tau)
        return self.tabulation(xi, tau, lam).z_j(j, x, t, tau)

    def mu(self, x, t, xi, tau=0.0):
        self._check_gap(t, tau)
        return self.tabulation(xi, tau).mu(x, t, tau)

    def mu_series(self, x, t, xi, tau=0.0):
        """``(mu, diagnostics)``; raises :class:`NonContractionError` per the policy."""
        tab = self.tabulation(xi, tau)
        return self.mu(x, t, xi, tau), tab.diagnostics

    def volterra_residual(self, x, t, xi, tau=0.0):
        """``Z_1 - mu + int Z_1(z; chi) mu(chi; zeta) d chi``."""
        self._check_gap(t, tau)
        tab = self.tabulation(xi, tau)
        conv = self.z_next(lambda y, eta: tab.mu(y, eta, tau), x, t, xi, tau)
        return self.z1(x, t, xi, tau) - tab.mu(x, t, tau) + conv

    def _kernel_mu(self, tab, x, t, xi, tau, order: int, upper_gap=0.0):
        """``int D Gamma_chi(z; chi) mu(chi; zeta) d chi`` (subtracted for orders 2, 3)."""

        def integrand(X, T, Y, ETA):
            return heat1d(self.a(Y, ETA), X - Y, T - ETA)[order] * tab.mu(Y, ETA, tau)

        def frozen_at_x(X, T, Y, ETA):
            # integrates to zero in y for each eta; cancels the singular part
            return -heat1d(self.a(X, ETA), X - Y, T - ETA)[order] * tab.mu(X, ETA, tau)

        return self._integrate(x, t, tau, integrand, xi=xi, upper_gap=upper_gap,
                               local_term=frozen_at_x if order >= 2 else None)

    def j_term(self, x, t, xi, tau=0.0):
        """``J(z; zeta)``."""
        s = self._check_gap(t, tau)
        if self.cf.is_constant:
            return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(s)))
        tab = self.tabulation(xi, tau)
        return self._kernel_mu(tab, x, t, xi, tau, 0)

    def j_derivatives(self, x, t, xi, tau=0.0, which="second", check_collars: bool = True):
        """``X J``, ``X X J`` or ``d/dt J`` (``which`` = first | second | time)."""
        order = {"first": 1, "second": 2, "time": 3}[which]
        s = self._check_gap(t, tau)
        if self.cf.is_constant:
            return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(s)))
        tab = self.tabulation(xi, tau)
        val = self._kernel_mu(tab, x, t, xi, tau, order)
        if order >= 2 and check_collars:
            self._collar_certificate(tab, x, t, xi, tau, order, val)
        if order == 3:
            val = val + tab.mu(x, t, tau)
        return val

    def _collar_certificate(self, tab, x, t, xi, tau, order, direct):
        q = self.quad
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        eps0 = (t - tau) / 8.0
        trace = [
            self._kernel_mu(tab, x, t, xi, tau, order, upper_gap=eps0 * 2.0**-k)
            for k in range(q.collars)
        ]
        I = np.stack(trace)  # (K, ...)
        d1 = I[-2] - I[-3]
        d2 = I[-1] - I[-2]
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(np.abs(d2) > 0, d1 / d2, np.inf)
            extrap = np.where(
                np.isfinite(r) & (r > 1.0), I[-1] + d2 / (r - 1.0), I[-1]
            )
        scale = np.maximum(np.abs(direct), np.max(np.abs(I), axis=0))
        gap = np.abs(extrap - direct)
        self.last_trace = {"collars": I, "extrapolated": extrap, "direct": direct}
        # slow (logarithmic) collar convergence is accepted as long as the
        # last collar is not the furthest from the direct value
        resid = np.abs(I - direct)
        approach = resid[-1] < np.max(resid[:-1], axis=0) + 1e-15
        bad = (gap > 0.1 * scale + 1e-12) & ~approach
        if np.any(bad):
            raise SingularLimitError(
                "collar extrapolation did not settle", trace=self.last_trace
            )
        return extrap

    def gamma(self, x, t, xi, tau=0.0):
        """``Gamma(z; zeta) = Gamma_zeta + J``, zero for ``t <= tau``."""
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        out = np.zeros(x.shape)
        s = t - tau
        pos = s > 0
        if not np.any(pos):
            return out
        self._check_gap(t[pos], tau)
        g0 = self.frozen(x, t, xi, tau)[0]
        out[pos] = g0[pos]
        tiny = pos & (s < _DEGENERATE_GAP)
        if np.any(tiny):
            warnings.warn("t - tau below 1e-10: returning the frozen kernel only", RuntimeWarning)
        live = pos & ~tiny
        if np.any(live) and not self.cf.is_constant:
            out[live] += self.j_term(x[live], t[live], xi, tau)
        return out

    def gamma_derivs(self, x, t, xi, tau=0.0, check_collars: bool = True):
        """``(Gamma, Gamma_x, Gamma_xx, Gamma_t)`` for ``t > tau``."""
        g0, d1, d2, dt = self.frozen(x, t, xi, tau)
        if self.cf.is_constant:
            return g0, d1, d2, dt
        J = self.j_term(x, t, xi, tau)
        J1 = self.j_derivatives(x, t, xi, tau, "first")
        J2 = self.j_derivatives(x, t, xi, tau, "second", check_collars)
        Jt = self.j_derivatives(x, t, xi, tau, "time", check_collars)
        return g0 + J, d1 + J1, d2 + J2, dt + Jt

    def h_gamma_residual(self, x, t, xi, tau=0.0, check_collars: bool = True):
        """``a(z) Gamma_xx - Gamma_t`` and ``Gamma_t`` (for relative scaling)."""
        _, _, d2, dt = self.gamma_derivs(x, t, xi, tau, check_collars)
        return self.a(x, t) * d2 - dt, dt

    # -- export -----------------------------------------------------------------

    def export_csv(self, path, x, t, xi, tau=0.0):
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        g0 = self.frozen(x, t, xi, tau)[0]
        J = self.j_term(x, t, xi, tau) if not self.cf.is_constant else np.zeros(x.shape)
        diag = self.tabulation(xi, tau).diagnostics
        tail = diag.tail_bound if math.isfinite(diag.tail_bound) else 0.0
        ref = diag.per_term[0] if diag.per_term and diag.per_term[0] > 0 else 1.0
        err = np.abs(J) * tail / ref + self.quad.rel_tol * np.abs(g0 + J)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x", "t", "xi", "tau", "gamma_frozen", "J", "gamma", "err_est"])
            for row in zip(x.ravel(), t.ravel(), g0.ravel(), J.ravel(), err.ravel()):
                xx, tt, gg, jj, ee = (float(v) for v in row)
                w.writerow([repr(xx), repr(tt), repr(float(xi)), repr(float(tau)),
                            repr(gg), repr(jj), repr(gg + jj), repr(ee)])

    def export_diagnostics(self, path, xi, tau=0.0):
        diag = self.tabulation(xi, tau).diagnostics
        with open(path, "w") as fh:
            json.dump(diag.to_dict(), fh, indent=2, sort_keys=True)
