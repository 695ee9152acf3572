"""
Cauchy problem
==============

Solutions of ``a(x, t) u_xx - u_t = f`` with ``u(., 0) = g`` on the real line,
written through the fundamental solution ``Gamma = Gamma_zeta + J``.

Rather than integrating ``Gamma`` pole by pole, the ``J`` part is folded into
series densities on a global ``(x, sqrt(t))`` grid:

* homogeneous part: ``int J(z; y, 0) g(y) dy = V[phi](z)`` where
  ``phi = G1 + T phi`` and ``G1(z) = int Z_1(z; y, 0) g(y) dy``;
* source part: ``int J(z; zeta) f(zeta) d zeta = V[f~](z)`` where
  ``f~ = T f + T f~``.

Here ``V[psi](z) = int Gamma_chi(z; chi) psi(chi) d chi`` is the potential with
the kernel frozen at the integration point and ``(T psi)(z) = int Z_1(z; chi)
psi(chi) d chi``.  Both are evaluated with the engine's quadrature rules.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .engine import ParametrixEngine, heat1d
from .errors import HorizonError, NonDiniError, PreconditionError
from .modulus import Modulus, check_stronger_condition
from .quadrature import QuadratureSpec, gauss_legendre

__all__ = [
    "GrowthBoundedFunction",
    "CauchySolver",
    "function_from_config",
    "solve_homogeneous",
    "volterra_potential",
    "f_tilde",
    "solve_full",
]

_TAIL = 1e-8


@dataclass(frozen=True)
class GrowthBoundedFunction:
    """Data ``g(x)`` or source ``f(x, t)`` with ``|value| <= M exp(nu x^2)``.

    Parameters
    ----------
    func : callable
        ``func(x)`` or, when ``time_dependent``, ``func(x, t)``; vectorised.
    M, nu : float
        Growth parameters.
    modulus : Modulus, optional
        Local spatial continuity of a source term.
    """

    func: Callable
    M: float = 1.0
    nu: float = 0.0
    time_dependent: bool = False
    modulus: Optional[Modulus] = None
    name: str = "custom"

    def __call__(self, x, t=None):
        x = np.asarray(x, float)
        if self.time_dependent:
            t = np.zeros_like(x) if t is None else t
            out = self.func(x, np.asarray(t, float))
        else:
            out = self.func(x)
        shape = np.broadcast_shapes(x.shape, np.shape(t) if t is not None else ())
        return np.broadcast_to(np.asarray(out, float), shape).copy()

    def is_zero(self) -> bool:
        return self.name == "zero"

    def check_growth(self, box: float = 5.0, T: float = 1.0, n: int = 401) -> float:
        """Largest ``|value| / (M exp(nu x^2))`` on a grid over ``[-box, box] x [0, T]``."""
        x = np.linspace(-box, box, n)
        ts = np.linspace(0.0, T, 11) if self.time_dependent else [0.0]
        worst = 0.0
        for t in ts:
            v = np.abs(self(x, t))
            worst = max(worst, float(np.max(v / (self.M * np.exp(self.nu * x**2)))))
        return worst

    @staticmethod
    def constant(c: float) -> "GrowthBoundedFunction":
        return GrowthBoundedFunction(lambda x, t=None: np.full(np.shape(x), float(c)), M=abs(c) or 1.0,
                                     name="zero" if c == 0 else "constant")

    @staticmethod
    def zero() -> "GrowthBoundedFunction":
        return GrowthBoundedFunction.constant(0.0)


def function_from_config(spec) -> GrowthBoundedFunction:
    """Build data or a source from a JSON-style dict.

    Kinds: ``constant`` (value), ``cos`` (amp, k, phase, offset),
    ``gaussian`` (amp, center, sigma), ``source`` (offset, amp, k, omega:
    ``offset + amp sin(k x) cos(omega t)``), ``exp_growth`` (amp, nu:
    ``amp exp(nu x^2)``).
    """
    if spec is None:
        return GrowthBoundedFunction.zero()
    if isinstance(spec, (int, float)):
        return GrowthBoundedFunction.constant(float(spec))
    kind = spec.get("kind", "constant")
    if kind == "zero":
        return GrowthBoundedFunction.zero()
    if kind == "constant":
        return GrowthBoundedFunction.constant(float(spec.get("value", 1.0)))
    if kind == "cos":
        amp, k = float(spec.get("amp", 1.0)), float(spec.get("k", 1.0))
        ph, off = float(spec.get("phase", 0.0)), float(spec.get("offset", 0.0))
        return GrowthBoundedFunction(lambda x: off + amp * np.cos(k * x + ph),
                                     M=abs(amp) + abs(off), name="cos")
    if kind == "gaussian":
        amp, c, sg = float(spec.get("amp", 1.0)), float(spec.get("center", 0.0)), float(spec.get("sigma", 1.0))
        if sg <= 0:
            raise ValueError("gaussian sigma must be positive")
        return GrowthBoundedFunction(
            lambda x: amp * np.exp(-((x - c) ** 2) / (2 * sg**2)) / math.sqrt(2 * math.pi * sg**2),
            M=abs(amp) / math.sqrt(2 * math.pi * sg**2), name="gaussian")
    if kind == "source":
        off, amp = float(spec.get("offset", 1.0)), float(spec.get("amp", 0.5))
        k, om = float(spec.get("k", 1.0)), float(spec.get("omega", 1.0))
        return GrowthBoundedFunction(lambda x, t: off + amp * np.sin(k * x) * np.cos(om * t),
                                     M=abs(off) + abs(amp), time_dependent=True, name="source")
    if kind == "exp_growth":
        amp, nu = float(spec.get("amp", 1.0)), float(spec.get("nu", 0.1))
        return GrowthBoundedFunction(lambda x: amp * np.exp(nu * x**2), M=abs(amp), nu=nu,
                                     name="exp_growth")
    raise ValueError(f"unknown function kind {kind!r}")


class CauchySolver:
    """Potentials and Cauchy solutions built on a :class:`ParametrixEngine`.

    Parameters
    ----------
    engine : ParametrixEngine
    nx : int
        Spatial grid nodes of the series densities per unit length.
    n_rho : int
        Nodes in ``sqrt(t)`` on ``(0, sqrt(T)]``.
    iterations : int, optional
        Fixed-point sweeps for the densities (default: the policy's ``J_max``).
    quad : QuadratureSpec, optional
        Rules for the potentials; their integrands are smooth, so they are
        lighter than the engine's by default.
    """

    def __init__(self, engine: ParametrixEngine, nx: float = 6.0, n_rho: int = 16,
                 iterations: Optional[int] = None, quad: Optional[QuadratureSpec] = None):
        self.engine = engine
        self.quad = quad or QuadratureSpec(space_nodes=24, time_nodes=12)
        self.T = engine.T
        self.nx = float(nx)
        self.n_rho = int(n_rho)
        self.iterations = iterations or engine.policy.J_max
        self._densities: dict = {}
        self.last_sweeps: list = []

    # -- growth and horizon -------------------------------------------------

    def horizon_threshold(self) -> float:
        """``delta = 1 / (4 c c2^2)`` with ``c = 4 Lambda`` from the Gaussian bound of
        the frozen kernel and ``c2 = 1`` (the Euclidean norm is a true norm)."""
        c = 4.0 * self.engine.a_max
        return 1.0 / (4.0 * c)

    def check_horizon(self, fn: GrowthBoundedFunction):
        if fn.nu > 0 and not self.T * fn.nu < self.horizon_threshold():
            raise HorizonError(
                f"T * nu = {self.T * fn.nu:.4g} must stay below {self.horizon_threshold():.4g}"
            )

    def truncation_radius(self, x, t, nu: float) -> np.ndarray:
        """Half-width beyond which the Gaussian-weighted tail of ``exp(nu y^2)`` data
        is below ``1e-8`` relative."""
        k = self.quad.k_R
        lam = self.engine.a_max
        base = k * np.sqrt(2.0 * lam * np.asarray(t, float))
        if nu <= 0:
            return base
        # -R^2 / (4 lam t) + nu (2 |x| R + R^2) <= ln(tail)
        A = 1.0 / (4.0 * lam * np.asarray(t, float)) - nu
        B = 2.0 * nu * np.abs(np.asarray(x, float))
        Cc = -math.log(_TAIL)
        R = (B + np.sqrt(B**2 + 4.0 * A * Cc)) / (2.0 * A)
        return np.maximum(base, R)

    # -- elementary operators -------------------------------------------------

    def frozen_initial(self, g: GrowthBoundedFunction, x, t, n: Optional[int] = None):
        """``int Gamma_{(y,0)}(x, t; y, 0) g(y) dy``."""
        eng = self.engine
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        n = n or 2 * self.quad.space_nodes
        R = self.truncation_radius(x, t, g.nu)
        gx, gw = gauss_legendre(n)
        y = x[..., None] + R[..., None] * gx
        w = R[..., None] * gw
        k = heat1d(eng.a(y, 0.0), x[..., None] - y, t[..., None])[0]
        return np.sum(w * k * g(y), axis=-1)

    def initial_z1(self, g: GrowthBoundedFunction, x, t, n: Optional[int] = None):
        """``G1(x, t) = int Z_1(x, t; y, 0) g(y) dy``."""
        eng = self.engine
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        n = n or 2 * self.quad.space_nodes
        R = self.truncation_radius(x, t, g.nu)
        gx, gw = gauss_legendre(n)
        y = x[..., None] + R[..., None] * gx
        w = R[..., None] * gw
        z1 = eng.z1(x[..., None], t[..., None], y, 0.0)
        return np.sum(w * z1 * g(y), axis=-1)

    def potential(self, psi: Callable, x, t):
        """``V[psi](x, t) = int_0^t d eta int Gamma_{(y, eta)}(x, t; y, eta) psi(y, eta) dy``."""
        eng = self.engine

        def integrand(X, T, Y, ETA):
            return heat1d(eng.a(Y, ETA), X - Y, T - ETA)[0] * psi(Y, ETA)

        return self._time_integral(integrand, x, t)

    def apply_T(self, psi: Callable, x, t):
        """``(T psi)(x, t) = int Z_1(x, t; y, eta) psi(y, eta) dy d eta``."""
        eng = self.engine

        def integrand(X, T, Y, ETA):
            a_y = eng.a(Y, ETA)
            return (eng.a(X, T) - a_y) * heat1d(a_y, X - Y, T - ETA)[2] * psi(Y, ETA)

        return self._time_integral(integrand, x, t)

    def _time_integral(self, integrand, x, t):
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        out = np.zeros(x.shape)
        pos = t > 0
        if np.any(pos):
            if np.any(t[pos] > self.T * (1 + 1e-12)):
                raise HorizonError(f"t exceeds the horizon T={self.T}")
            out[pos] = self.engine._integrate(x[pos], t[pos], 0.0, integrand, quad=self.quad)
        return out

    # -- series densities on the global grid -----------------------------------

    def _grid(self, xmin, xmax):
        margin = 2.0 * self.quad.k_R * math.sqrt(2.0 * self.engine.a_max * self.T)
        lo, hi = xmin - margin, xmax + margin
        n = max(16, int(math.ceil((hi - lo) * self.nx)) + 1)
        xs = np.linspace(lo, hi, n)
        rho = (np.arange(self.n_rho) + 0.5) * math.sqrt(self.T) / self.n_rho
        return xs, rho

    def _as_density(self, xs, rho, values):
        spl = RectBivariateSpline(xs, rho, values, kx=3, ky=3, s=0)
        lo, hi = xs[0], xs[-1]
        r0, r1 = rho[0], rho[-1]

        def psi(y, eta):
            y, eta = np.broadcast_arrays(np.asarray(y, float), np.asarray(eta, float))
            r = np.clip(np.sqrt(np.maximum(eta, 0.0)), r0, r1)
            return spl.ev(np.clip(y, lo, hi), r)

        return psi

    def _solve_density(self, rhs: np.ndarray, xs, rho):
        """Fixed point of ``psi = rhs + T psi`` on the grid."""
        X, Rr = np.meshgrid(xs, rho, indexing="ij")
        Tt = Rr**2
        psi_vals = rhs.copy()
        self.last_sweeps = []
        for _ in range(self.iterations - 1):
            new = rhs + self.apply_T(self._as_density(xs, rho, psi_vals), X, Tt)
            change = float(np.max(np.abs(new - psi_vals)))
            self.last_sweeps.append(change)
            psi_vals = new
            if change <= 1e-10 * max(1.0, float(np.max(np.abs(psi_vals)))):
                break
        return psi_vals

    @staticmethod
    def _extent(x, extent=None):
        if extent is not None:
            return float(extent[0]), float(extent[1])
        x = np.asarray(x, float)
        return float(np.min(x)), float(np.max(x))

    def homogeneous_density(self, g: GrowthBoundedFunction, xmin: float, xmax: float):
        key = ("g", id(g), xmin, xmax)
        if key not in self._densities:
            xs, rho = self._grid(xmin, xmax)
            X, Rr = np.meshgrid(xs, rho, indexing="ij")
            rhs = self.initial_z1(g, X, Rr**2)
            self._densities[key] = self._as_density(xs, rho, self._solve_density(rhs, xs, rho))
        return self._densities[key]

    def source_density(self, f: GrowthBoundedFunction, xmin: float, xmax: float):
        """``f~`` as a grid density."""
        key = ("f", id(f), xmin, xmax)
        if key not in self._densities:
            xs, rho = self._grid(xmin, xmax)
            X, Rr = np.meshgrid(xs, rho, indexing="ij")
            rhs = self.apply_T(lambda y, eta: f(y, eta), X, Rr**2)
            self._densities[key] = self._as_density(xs, rho, self._solve_density(rhs, xs, rho))
        return self._densities[key]

    # -- public solutions --------------------------------------------------------

    def solve_homogeneous(self, g: GrowthBoundedFunction, x, t, extent=None):
        """``u(x, t) = int Gamma(x, t; y, 0) g(y) dy``.

        ``extent`` fixes the spatial range covered by the density grid
        (default: the range of ``x``).
        """
        self.check_horizon(g)
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        if np.any(t <= 0):
            raise ValueError("t must be positive")
        u = self.frozen_initial(g, x, t)
        if self.engine.cf.is_constant or g.is_zero():
            return u
        phi = self.homogeneous_density(g, *self._extent(x, extent))
        return u + self.potential(phi, x, t)

    def volterra_potential(self, f: GrowthBoundedFunction, x, t):
        """``V_f(x, t)``, zero at ``t = 0``."""
        self.check_horizon(f)
        return self.potential(lambda y, eta: f(y, eta), x, t)

    def z1_potential(self, f: GrowthBoundedFunction, x, t):
        """``int Z_1(z; zeta) f(zeta) d zeta``."""
        return self.apply_T(lambda y, eta: f(y, eta), x, t)

    def require_stronger_condition(self):
        try:
            return check_stronger_condition(self.engine.modulus, self.T)
        except NonDiniError as exc:
            raise PreconditionError(
                "the source potential needs int_0^T omega^(1/2)(r)/r dr < infinity"
            ) from exc

    def f_tilde(self, f: GrowthBoundedFunction, x, t):
        """``f~(z) = int mu(z; zeta) f(zeta) d zeta``."""
        self.require_stronger_condition()
        self.check_horizon(f)
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        if self.engine.cf.is_constant or f.is_zero():
            return np.zeros(x.shape)
        return self.source_density(f, *self._extent(x))(x, t)

    def f_tilde_growth(self, f: GrowthBoundedFunction, x, t) -> dict:
        """Fitted ``M~`` with ``|f~| <= M~ exp(nu x^2)`` on the given points."""
        v = np.abs(self.f_tilde(f, x, t))
        M = float(np.max(v * np.exp(-f.nu * np.asarray(x, float) ** 2)))
        return {"M_tilde": M, "nu_tilde": f.nu}

    def solve_full(self, f: GrowthBoundedFunction, g: GrowthBoundedFunction, x, t, extent=None):
        """``u = -int Gamma(z; zeta) f(zeta) d zeta + int Gamma(z; y, 0) g(y) dy``."""
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        u = np.zeros(x.shape) if g.is_zero() else self.solve_homogeneous(g, x, t, extent)
        if f.is_zero():
            return u
        self.check_horizon(f)
        src = self.volterra_potential(f, x, t)
        if not self.engine.cf.is_constant:
            self.require_stronger_condition()
            ft = self.source_density(f, *self._extent(x, extent))
            src = src + self.potential(ft, x, t)
        return u - src

    def residual(self, f: GrowthBoundedFunction, g: GrowthBoundedFunction, x, t,
                 h: float = 2e-2, k: float = 1e-3):
        """``H u - f`` by central differences and the value of ``f`` for scaling."""
        x, t = np.broadcast_arrays(np.asarray(x, float), np.asarray(t, float))
        xs = np.stack([x - h, x, x + h, x, x])
        ts = np.stack([t, t, t, t - k, t + k])
        lo, hi = self._extent(x)
        u = self.solve_full(f, g, xs, ts, extent=(lo, hi))
        uxx = (u[0] - 2 * u[1] + u[2]) / h**2
        ut = (u[4] - u[3]) / (2 * k)
        fz = f(x, t)
        return self.engine.a(x, t) * uxx - ut - fz, fz


def _solver(engine, solver):
    return solver if solver is not None else CauchySolver(engine)


def solve_homogeneous(engine, g, x, t, solver: Optional[CauchySolver] = None):
    return _solver(engine, solver).solve_homogeneous(g, x, t)


def volterra_potential(engine, f, x, t, solver: Optional[CauchySolver] = None):
    return _solver(engine, solver).volterra_potential(f, x, t)


def f_tilde(engine, f, x, t, solver: Optional[CauchySolver] = None):
    return _solver(engine, solver).f_tilde(f, x, t)


def solve_full(engine, f, g, x, t, solver: Optional[CauchySolver] = None):
    return _solver(engine, solver).solve_full(f, g, x, t)
