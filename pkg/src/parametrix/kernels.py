"""
Frozen-coefficient kernels
==========================

:class:`FrozenKernel` evaluates the heat kernel ``gamma_A(x, t)`` of
``sum a_ij X_i X_j - d/dt`` for a constant matrix ``A`` together with its
horizontal derivatives up to order two and its time derivative.

Euclidean backend
    ``(4 pi t)^(-n/2) det(A)^(-1/2) exp(-<A^-1 x, x> / (4 t))``.

Heisenberg backend
    For ``A = I`` the kernel is ``t^-2 K(r^2/t, z/t)`` with::

        K(q, w) = 1/(4 pi^2) int_0^inf cos(s w) (s / sinh s) exp(-q s coth(s) / 4) ds

    For general ``A = M M^T`` (Cholesky) the automorphism
    ``phi(v, z) = (M^-1 v, z / det M)`` carries ``sum a_ij X_i X_j`` to the
    sub-Laplacian, and ``gamma_A = det(A)^-1 gamma_I o phi``.  ``K`` and the
    partial derivatives needed for second-order Lie derivatives are tabulated
    once at ``t = 1`` on an ``(r, |w|)`` grid and interpolated with bicubic
    splines; points off the grid fall back to direct quadrature.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.interpolate import RectBivariateSpline

from .errors import BackendError, DomainError
from .groups import GroupDescriptor, euclidean, heisenberg1, gaussian_envelope
from .quadrature import gauss_legendre, trapezoid_box, tensor_rule, window_rule

__all__ = [
    "FrozenKernel",
    "HeisenbergTable",
    "heisenberg_K_direct",
    "frozen_kernel",
    "normalization",
    "chapman_kolmogorov_residual",
    "vanishing_integral_check",
    "coefficient_sensitivity",
    "sandwich_constants",
    "space_rule",
]

TABLE_VERSION = 2
_FUNCS = ("K", "Kq", "Kqq", "Kw", "Kww", "Kqw")
_ODD_IN_W = {"Kw", "Kqw"}


# ---------------------------------------------------------------------------
# Heisenberg base kernel


def _s_rule(q_max: float, panels: int = 60, per_panel: int = 28, w_max: float = 0.0):
    # integrand decays like s^3 exp(-s (1 + q/4)); 50 units of decay suffice
    S = 50.0 / (1.0 + 0.25 * max(q_max, 0.0)) + 2.0
    # keep at most ~2 radians of the cos(w s) phase per panel
    panels = max(panels, int(math.ceil(S * abs(w_max) / 2.0)))
    edges = np.linspace(0.0, S, panels + 1)
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = gauss_legendre(per_panel, a, b)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def _s_factors(s):
    scoth = s / np.tanh(s)
    base = s / np.sinh(s) / (4.0 * math.pi**2)
    return scoth, base


def heisenberg_K_direct(q, w, which: str = "K", weighted: bool = False):
    """Direct quadrature of ``K`` or one of its partial derivatives.

    ``which`` is one of ``K, Kq, Kqq, Kw, Kww, Kqw``.  With ``weighted`` the
    result is multiplied by ``exp(q/4)`` (computed inside the exponent).
    """
    q = np.asarray(q, float)
    w = np.asarray(w, float)
    q, w = np.broadcast_arrays(q, w)
    out = np.empty(q.shape)
    flat_q, flat_w, flat_o = q.ravel(), w.ravel(), out.reshape(-1)
    order = np.argsort(np.abs(flat_w), kind="stable")
    lo = 0
    while lo < flat_q.size:
        # batches grouped by |w| so the phase resolution fits the batch
        idx = order[lo : lo + 256]
        s, sw = _s_rule(float(np.min(flat_q[idx])), w_max=float(np.max(np.abs(flat_w[idx]))))
        size = max(1, min(256, int(4e6 // s.size)))
        idx = order[lo : lo + size]
        lo += size
        qq = flat_q[idx]
        ww = flat_w[idx]
        scoth, base = _s_factors(s)
        expo = -qq[:, None] * scoth[None, :] / 4.0
        if weighted:
            expo = expo + qq[:, None] / 4.0
        f = base[None, :] * np.exp(expo) * sw[None, :]
        phase = ww[:, None] * s[None, :]
        a = -scoth[None, :] / 4.0
        if which == "K":
            g = np.cos(phase) * f
        elif which == "Kq":
            g = np.cos(phase) * f * a
        elif which == "Kqq":
            g = np.cos(phase) * f * a * a
        elif which == "Kw":
            g = -np.sin(phase) * f * s[None, :]
        elif which == "Kww":
            g = -np.cos(phase) * f * s[None, :] ** 2
        elif which == "Kqw":
            g = -np.sin(phase) * f * s[None, :] * a
        else:
            raise ValueError(f"unknown kernel function {which!r}")
        flat_o[idx] = g.sum(axis=1)
    return out


def _default_cache_dir() -> Path:
    env = os.environ.get("PARAMETRIX_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "parametrix"


class HeisenbergTable:
    """Bicubic tables of ``exp(r^2/4) * (K, K_q, K_qq, K_w, K_ww, K_qw)``.

    Parameters
    ----------
    r_max, w_max : float
        Extent of the ``(r, |w|)`` grid at ``t = 1``.
    nr, nw : int
        Grid sizes.
    cache_dir : path-like, optional
        Where the ``.npz`` cache lives; ``False`` disables caching.
    """

    def __init__(self, r_max=16.0, w_max=20.0, nr=321, nw=401, cache_dir=None):
        self.spec = {
            "version": TABLE_VERSION,
            "backend": "heisenberg_integral",
            "r_max": float(r_max),
            "w_max": float(w_max),
            "nr": int(nr),
            "nw": int(nw),
        }
        self.r = np.linspace(0.0, r_max, nr)
        self.w = np.linspace(0.0, w_max, nw)
        data = None
        path = None
        if cache_dir is not False:
            cache_dir = Path(cache_dir) if cache_dir else _default_cache_dir()
            path = cache_dir / f"heis_{self.key}.npz"
            data = self._load(path)
        if data is None:
            data = self._build()
            if path is not None:
                self._save(path, data)
        self.values = data
        self.splines = {
            name: RectBivariateSpline(self.r, self.w, data[name], kx=3, ky=3, s=0)
            for name in _FUNCS
        }

    @property
    def key(self) -> str:
        blob = json.dumps(self.spec, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def _build(self):
        s, sw = _s_rule(0.0, panels=80, per_panel=30)
        scoth, base = _s_factors(s)
        q = self.r**2
        # weighted amplitude exp(-q (s coth s - 1) / 4), shape (ns, nr)
        amp = (base * sw)[:, None] * np.exp(-np.outer(scoth - 1.0, q) / 4.0)
        phase = np.outer(self.w, s)
        C, S = np.cos(phase), np.sin(phase)
        a = (-scoth / 4.0)[:, None]
        sc = s[:, None]
        out = {
            "K": C @ amp,
            "Kq": C @ (amp * a),
            "Kqq": C @ (amp * a * a),
            "Kw": -S @ (amp * sc),
            "Kww": -C @ (amp * sc**2),
            "Kqw": -S @ (amp * sc * a),
        }
        out = {k: np.ascontiguousarray(v.T) for k, v in out.items()}
        if not all(np.all(np.isfinite(v)) for v in out.values()):
            raise BackendError("Heisenberg kernel table contains non-finite values")
        return out

    @staticmethod
    def _checksum(data) -> str:
        h = hashlib.sha256()
        for name in _FUNCS:
            h.update(np.ascontiguousarray(data[name]).tobytes())
        return h.hexdigest()

    def _save(self, path: Path, data):
        try:
            path.parent.mkdir(parents=True, exist_ok=True)
            tmp = path.with_suffix(".tmp.npz")
            np.savez(
                tmp,
                spec=json.dumps(self.spec),
                checksum=self._checksum(data),
                **data,
            )
            os.replace(tmp, path)
        except OSError:
            pass  # cache is an optimisation only

    def _load(self, path: Path):
        if not path.exists():
            return None
        try:
            with np.load(path, allow_pickle=False) as f:
                if json.loads(str(f["spec"])) != self.spec:
                    return None
                data = {name: np.array(f[name]) for name in _FUNCS}
                if self._checksum(data) != str(f["checksum"]):
                    return None
                return data
        except (OSError, KeyError, ValueError):
            return None

    def __call__(self, r, w, names=_FUNCS):
        """Unweighted ``K`` and partials at ``t = 1``: dict of arrays."""
        r = np.abs(np.asarray(r, float))
        w = np.asarray(w, float)
        r, w = np.broadcast_arrays(r, w)
        aw = np.abs(w)
        sign = np.sign(w)
        inside = (r <= self.r[-1]) & (aw <= self.w[-1])
        q = r**2
        damp = np.exp(-q / 4.0)
        out = {}
        for name in names:
            vals = np.empty(r.shape)
            if np.any(inside):
                vals[inside] = self.splines[name].ev(r[inside], aw[inside])
            if np.any(~inside):
                vals[~inside] = heisenberg_K_direct(q[~inside], aw[~inside], name, weighted=True)
            vals *= damp
            if name in _ODD_IN_W:
                vals *= sign
            out[name] = vals
        return out


_TABLE: Optional[HeisenbergTable] = None


def default_table() -> HeisenbergTable:
    global _TABLE
    if _TABLE is None:
        _TABLE = HeisenbergTable()
    return _TABLE


# ---------------------------------------------------------------------------
# kernel object


@dataclass(frozen=True)
class KernelDerivs:
    """Value, horizontal gradient ``(..., m)``, Hessian ``(..., m, m)``, time derivative."""

    value: np.ndarray
    first: np.ndarray
    second: np.ndarray
    dt: np.ndarray


class FrozenKernel:
    """Heat kernel of the constant-coefficient operator ``sum a_ij X_i X_j - d/dt``.

    Parameters
    ----------
    group : GroupDescriptor
        ``euclidean:n`` or ``heisenberg1``.
    A : array_like
        Symmetric positive definite ``m x m`` matrix.
    table : HeisenbergTable, optional
        Shared table for the Heisenberg backend.

    Notes
    -----
    Derivative indices are zero based.  Every method returns 0 for ``t <= 0``
    except the derivative methods, which reject it.
    """

    def __init__(self, group: GroupDescriptor, A, table: Optional[HeisenbergTable] = None):
        A = np.atleast_2d(np.asarray(A, float))
        if A.shape != (group.m, group.m):
            raise ValueError(f"matrix shape {A.shape} does not match m={group.m}")
        if not np.allclose(A, A.T, rtol=0, atol=1e-14):
            raise ValueError("matrix must be symmetric")
        self.group = group
        self.A = A
        self.Ainv = np.linalg.inv(A)
        self.detA = float(np.linalg.det(A))
        if self.detA <= 0:
            raise ValueError("matrix must be positive definite")
        if group.abelian:
            self.backend = "euclidean_exact"
        elif group.name == "heisenberg1":
            self.backend = "heisenberg_integral"
            self.M = np.linalg.cholesky(A)
            self.Minv = np.linalg.inv(self.M)
            self.detM = float(np.linalg.det(self.M))
            self._table = table
        else:
            raise BackendError(f"no kernel backend for group {group.name!r}")

    @property
    def table(self) -> HeisenbergTable:
        if self._table is None:
            self._table = default_table()
        return self._table

    # -- evaluation -----------------------------------------------------

    def __call__(self, x, t):
        return self.eval(x, t)

    def eval(self, x, t):
        x = np.asarray(x, float)
        t = np.asarray(t, float)
        lead = np.broadcast_shapes(x.shape[:-1], t.shape)
        x = np.broadcast_to(x, lead + x.shape[-1:])
        t = np.broadcast_to(t, lead)
        out = np.zeros(lead)
        pos = t > 0
        if np.any(pos):
            out[pos] = self._value(x[pos], t[pos])
        return out

    def _value(self, x, t):
        if self.backend == "euclidean_exact":
            n = self.group.n
            quad = np.einsum("...i,ij,...j->...", x, self.Ainv, x)
            return (4 * math.pi * t) ** (-0.5 * n) / math.sqrt(self.detA) * np.exp(-quad / (4 * t))
        v, z = self._reduce(x)
        r = np.hypot(v[..., 0], v[..., 1]) / np.sqrt(t)
        K = self.table(r, z / t, names=("K",))["K"]
        # far tails are exponentially small; drop round-off of either sign
        return np.maximum(K, 0.0) / t**2 / self.detA

    def _reduce(self, x):
        v = np.einsum("ij,...j->...i", self.Minv, x[..., :2])
        return v, x[..., 2] / self.detM

    def derivs(self, x, t) -> KernelDerivs:
        """All derivatives at once (``t > 0`` required)."""
        x = np.asarray(x, float)
        t = np.asarray(t, float)
        if np.any(t <= 0):
            raise DomainError("kernel derivatives require t > 0")
        lead = np.broadcast_shapes(x.shape[:-1], t.shape)
        x = np.broadcast_to(x, lead + x.shape[-1:])
        t = np.broadcast_to(t, lead)
        if self.backend == "euclidean_exact":
            return self._derivs_euclid(x, t)
        return self._derivs_heis(x, t)

    def _derivs_euclid(self, x, t):
        n = self.group.n
        b = np.einsum("ij,...j->...i", self.Ainv, x)
        quad = np.einsum("...i,...i->...", x, b)
        val = (4 * math.pi * t) ** (-0.5 * n) / math.sqrt(self.detA) * np.exp(-quad / (4 * t))
        tt = t[..., None]
        first = -b / (2 * tt) * val[..., None]
        second = (
            b[..., :, None] * b[..., None, :] / (4 * tt[..., None] ** 2)
            - self.Ainv / (2 * tt[..., None])
        ) * val[..., None, None]
        dt = (-0.5 * n / t + quad / (4 * t**2)) * val
        return KernelDerivs(val, first, second, dt)

    def _derivs_heis(self, x, t):
        v, z = self._reduce(x)
        st = np.sqrt(t)
        # dilate to t = 1
        X, Y, W = v[..., 0] / st, v[..., 1] / st, z / t
        r = np.hypot(X, Y)
        T = self.table(r, W)
        K, Kq, Kqq, Kw, Kww, Kqw = (T[k] for k in _FUNCS)
        q = r**2
        ux, uy = 2 * X * Kq, 2 * Y * Kq
        uxx = 2 * Kq + 4 * X**2 * Kqq
        uyy = 2 * Kq + 4 * Y**2 * Kqq
        uxy = 4 * X * Y * Kqq
        uxz, uyz = 2 * X * Kqw, 2 * Y * Kqw
        uzz = Kww
        d1 = np.stack([ux - 0.5 * Y * Kw, uy + 0.5 * X * Kw], axis=-1)
        x11 = uxx - Y * uxz + 0.25 * Y**2 * uzz
        x22 = uyy + X * uyz + 0.25 * X**2 * uzz
        x12 = uxy + 0.5 * Kw + 0.5 * X * uxz - 0.5 * Y * uyz - 0.25 * X * Y * uzz
        x21 = uxy - 0.5 * Kw - 0.5 * Y * uyz + 0.5 * X * uxz - 0.25 * X * Y * uzz
        d2 = np.stack([np.stack([x11, x12], -1), np.stack([x21, x22], -1)], -2)
        c = 1.0 / self.detA
        # undo the dilation: X_i has degree 1, t has degree 2
        val = c * K / t**2
        first = c * np.einsum("ki,...k->...i", self.Minv, d1) / (t**2.5)[..., None]
        second = (
            c
            * np.einsum("ki,lj,...kl->...ij", self.Minv, self.Minv, d2)
            / (t**3)[..., None, None]
        )
        dt = c * (-2.0 * K - q * Kq - W * Kw) / t**3
        return KernelDerivs(val, first, second, dt)

    def lie_deriv(self, order, x, t):
        """``X_i``, ``X_i X_j`` (tuples of zero-based indices) or ``"t"``."""
        m = self.group.m
        if order == "t":
            return self.derivs(x, t).dt
        order = tuple(order)
        if any(not 0 <= i < m for i in order) or len(order) not in (1, 2):
            raise DomainError(f"bad derivative order {order!r} for m={m}")
        d = self.derivs(x, t)
        if len(order) == 1:
            return d.first[..., order[0]]
        return d.second[..., order[0], order[1]]

    def field(self, t):
        """``x -> gamma(x, t)`` with a gradient hook for :func:`lie_derivative`."""
        k = self

        def u(x):
            return k.eval(x, t)

        return u

    def envelope_scale(self) -> float:
        """Largest eigenvalue of ``A`` (the Gaussian spread per unit time)."""
        return float(np.linalg.eigvalsh(self.A)[-1])


def frozen_kernel(group: GroupDescriptor, A, table=None) -> FrozenKernel:
    return FrozenKernel(group, A, table=table)


# ---------------------------------------------------------------------------
# integral identities


def space_rule(k: FrozenKernel, t: float, n_nodes: int = 64, k_R: float = 7.0, center=None):
    """Tensor rule covering the bulk of ``gamma(. - center, t)``.

    Euclidean: Gauss-Legendre windows of ``k_R`` standard deviations per
    principal axis.  Heisenberg: trapezoid box, horizontal half-width from the
    Gaussian decay and vertical half-width from the ``exp(-pi |z| / t)`` decay.
    """
    g = k.group
    lam = k.envelope_scale()
    if center is None:
        center = np.zeros(g.n)
    center = np.asarray(center, float)
    if g.abelian:
        sd = math.sqrt(2.0 * lam * t)
        x1, w1 = window_rule(0.0, sd, k_R, n_nodes)
        pts, wts = tensor_rule([x1] * g.n, [w1] * g.n)
        return pts + center, wts
    hh = k_R * math.sqrt(2.0 * lam * t)
    hz = (k_R**2 / (2 * math.pi)) * lam * t + 0.5 * hh * float(np.hypot(center[0], center[1]))
    pts, wts = trapezoid_box([hh, hh, hz], n_nodes)
    return g.law(center, pts), wts


def normalization(k: FrozenKernel, t: float, n_nodes: int = 64) -> float:
    """``int gamma(x, t) dx``."""
    pts, wts = space_rule(k, t, n_nodes)
    return float(np.dot(wts, k.eval(pts, t)))


def chapman_kolmogorov_residual(k: FrozenKernel, x, t: float, tau: float, n_nodes: int = 64) -> float:
    """``|gamma(x, t + tau) - int gamma(y^-1 o x, t) gamma(y, tau) dy|``."""
    if t <= 0 or tau <= 0:
        raise DomainError("Chapman-Kolmogorov check requires t, tau > 0")
    g = k.group
    x = np.asarray(x, float)
    pts, wts = space_rule(k, max(t, tau), n_nodes, center=None if not g.abelian else 0.5 * x)
    if not g.abelian:
        pts, wts = _heis_union_rule(k, x, t, tau, n_nodes)
    integrand = k.eval(g.law(g.inverse(pts), x), t) * k.eval(pts, tau)
    return float(abs(k.eval(x, t + tau) - np.dot(wts, integrand)))


def _heis_union_rule(k, x, t, tau, n_nodes):
    # box big enough for both factors: centred at the identity, widened by |x|
    lam = k.envelope_scale()
    s = max(t, tau)
    hh = 7.0 * math.sqrt(2.0 * lam * s) + float(np.linalg.norm(x[:2]))
    hz = (49.0 / (2 * math.pi)) * lam * s + abs(float(x[2])) + 0.5 * hh * float(np.hypot(x[0], x[1]))
    return trapezoid_box([hh, hh, hz], n_nodes)


def vanishing_integral_check(k: FrozenKernel, order, x, t: float, n_nodes: int = 64) -> float:
    """``int D gamma(y^-1 o x, t) dy`` for ``D = X_i X_j`` or ``d/dt``."""
    if t <= 0:
        raise DomainError("requires t > 0")
    g = k.group
    x = np.asarray(x, float)
    pts, wts = space_rule(k, t, n_nodes, center=None)
    # the substitution w = y^-1 o x preserves Lebesgue (Haar) measure
    vals = k.lie_deriv(order, pts, np.full(len(pts), t))
    del x
    return float(np.dot(wts, vals))


@dataclass
class SensitivityReport:
    difference: float
    matrix_gap: float
    envelope: float


def coefficient_sensitivity(k1: FrozenKernel, k2: FrozenKernel, x, t: float, c: float = 4.0):
    """``|gamma_A1 - gamma_A2|`` with the envelope ``||A1 - A2|| E(x, c t)``."""
    if k1.group.name != k2.group.name:
        raise ValueError("kernels live on different groups")
    x = np.asarray(x, float)
    diff = float(abs(k1.eval(x, t) - k2.eval(x, t)))
    gap = float(np.max(np.abs(k1.A - k2.A)))
    env = float(gaussian_envelope(k1.group, x, c * t))
    return SensitivityReport(diff, gap, env)


@dataclass
class SandwichReport:
    c_upper: float
    c_lower: float
    C_upper: float
    C_lower: float


def sandwich_constants(k: FrozenKernel, r_grid=None, t_grid=None, c_grid=None, seed: int = 0):
    """Smallest constants in ``C_l^-1 E(x, t/c_l) <= gamma <= C_u E(x, c_u t)``.

    For each candidate ``c`` the tightest multiplicative constant is the grid
    maximum of the ratio; the ``c`` minimising ``max(C, c)`` is reported, so a
    single constant ``max(C, c)`` serves both roles.
    """
    g = k.group
    # gamma / E depends only on the dilated point, so a moderate range of
    # ||x||^2 / t suffices and keeps gamma above quadrature noise
    if t_grid is None:
        t_grid = np.array([0.25, 1.0, 4.0])
    if r_grid is None:
        r_grid = np.linspace(0.0, 5.0, 41)
    if c_grid is None:
        c_grid = np.logspace(0, 2, 81)
    rng = np.random.default_rng(seed)
    dirs = np.concatenate([np.eye(g.n), rng.normal(size=(8, g.n))])
    pts = []
    for d in dirs:
        u = d * (1.0 / g.norm(d)) ** g.degrees  # dilate onto the unit sphere
        for r in r_grid:
            pts.append(_point_with_norm(g, u, r))
    pts = np.array(pts)
    P, T = pts[:, None, :], np.asarray(t_grid)[None, :]
    P = np.broadcast_to(P, (len(pts), len(t_grid), g.n))
    T = np.broadcast_to(T, P.shape[:-1])
    gam = k.eval(P, T)
    best_u, best_l = (np.inf, None), (np.inf, None)
    for c in c_grid:
        with np.errstate(divide="ignore", over="ignore"):
            Cu = float(np.max(gam / gaussian_envelope(g, P, c * T)))
            El = gaussian_envelope(g, P, T / c)
            ok = El > 1e-300
            Cl = float(np.max(El[ok] / gam[ok])) if np.all(gam[ok] > 0) else np.inf
        if max(Cu, c) < best_u[0]:
            best_u = (max(Cu, c), (c, Cu))
        if max(Cl, c) < best_l[0]:
            best_l = (max(Cl, c), (c, Cl))
    return SandwichReport(
        c_upper=best_u[1][0], C_upper=best_u[1][1], c_lower=best_l[1][0], C_lower=best_l[1][1]
    )


def _point_with_norm(g, u, r):
    # dilation scales the homogeneous norm linearly
    if r == 0:
        return np.zeros(g.n)
    return u * r ** g.degrees
