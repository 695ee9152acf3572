"""
Coefficient fields
==================

A :class:`CoefficientField` maps ``(x, t)`` to a symmetric ``m x m`` matrix in
the ellipticity class ``Lambda^-1 |v|^2 <= <A v, v> <= Lambda |v|^2`` and
carries the modulus bounding its oscillation in the parabolic quasi-distance
``d(x, x') + sqrt|t - t'|``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import modulus as md
from .errors import EllipticityError
from .groups import GroupDescriptor, euclidean, group_from_name, quasi_distance

__all__ = [
    "CoefficientField",
    "ValidationReport",
    "constant",
    "sine1d",
    "perturbed2d",
    "log_dini_field",
    "exact_increment_modulus",
    "field_from_config",
]

_ELL_SLACK = 1e-9


@dataclass(frozen=True, eq=False)
class CoefficientField:
    """Variable coefficient matrix ``A(x, t)``.

    Parameters
    ----------
    group : GroupDescriptor
    func : callable
        ``func(x, t)`` with ``x`` of shape ``(..., n)`` and ``t`` of shape
        ``(...)`` returning ``(..., m, m)``.
    lambda_ell : float
        Ellipticity constant ``Lambda > 1``.
    modulus : Modulus
        Bound on ``|a_ij(x, t) - a_ij(x', t')|``.
    autonomous : bool
        True when ``A`` does not depend on ``t``; the engine caches per ``xi``.
    is_constant : bool
        True when ``A`` does not depend on ``(x, t)`` at all.
    """

    group: GroupDescriptor
    func: Callable[[np.ndarray, np.ndarray], np.ndarray]
    lambda_ell: float
    modulus: md.Modulus
    name: str = "custom"
    autonomous: bool = False
    is_constant: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.lambda_ell > 1:
            raise ValueError("Lambda must exceed 1")

    @property
    def m(self) -> int:
        return self.group.m

    def __call__(self, x, t):
        x = np.asarray(x, float)
        t = np.asarray(t, float)
        return np.asarray(self.func(x, t), dtype=float)

    def freeze(self, x, t=0.0) -> np.ndarray:
        """``A(zeta)`` after checking it lies in the ellipticity class."""
        A = self(np.asarray(x, float).reshape(self.group.n), np.asarray(t, float))
        A = A.reshape(self.m, self.m)
        check_ellipticity(A, self.lambda_ell)
        return A

    def validate(self, sample_count: int = 10_000, box=1.0, T: float = 1.0, seed: int = 0):
        return validate(self, sample_count, box, T, seed)


def check_ellipticity(A, lam: float):
    A = np.asarray(A, float)
    ev = np.linalg.eigvalsh(0.5 * (A + A.T))
    lo, hi = lam**-1 * (1 - _ELL_SLACK), lam * (1 + _ELL_SLACK)
    if ev[0] < lo or ev[-1] > hi:
        raise EllipticityError(
            f"eigenvalues [{ev[0]:.6g}, {ev[-1]:.6g}] leave [{1 / lam:.6g}, {lam:.6g}]"
        )
    return ev


@dataclass
class ValidationReport:
    samples: int
    symmetry_residual: float
    ellipticity_margin: float
    continuity_ratio: float
    entry_max: float
    lambda_ell: float

    @property
    def symmetric(self) -> bool:
        return self.symmetry_residual == 0.0

    @property
    def elliptic(self) -> bool:
        return self.ellipticity_margin >= -_ELL_SLACK

    @property
    def continuous(self) -> bool:
        return self.continuity_ratio <= 1.0 + 1e-12

    @property
    def passed(self) -> bool:
        return (
            self.symmetric
            and self.elliptic
            and self.continuous
            and self.entry_max <= self.lambda_ell * (1 + _ELL_SLACK)
        )


def validate(cf: CoefficientField, sample_count=10_000, box=1.0, T=1.0, seed=0) -> ValidationReport:
    """Statistical check of symmetry, ellipticity and the modulus bound.

    ``box`` is a half-width (scalar or per coordinate) of the spatial sampling
    cube centred at the origin; times are drawn from ``[0, T]``.  The
    ellipticity margin is ``min(Lambda * lambda_min - 1, Lambda - lambda_max)``.
    """
    if sample_count < 1:
        raise ValueError("sample_count must be >= 1")
    rng = np.random.default_rng(seed)
    n = cf.group.n
    half = np.broadcast_to(np.asarray(box, float), (n,))
    x1 = rng.uniform(-half, half, size=(sample_count, n))
    # half the partners are local perturbations so small increments are probed
    x2 = rng.uniform(-half, half, size=(sample_count, n))
    local = rng.random(sample_count) < 0.5
    scale = 10.0 ** rng.uniform(-6, 0, size=(sample_count, 1))
    x2[local] = x1[local] + scale[local] * rng.normal(size=(int(local.sum()), n))
    t1 = rng.uniform(0, T, sample_count)
    t2 = np.where(local, np.clip(t1 - scale[:, 0] ** 2 * rng.random(sample_count), 0, T),
                  rng.uniform(0, T, sample_count))
    t1, t2 = np.maximum(t1, t2), np.minimum(t1, t2)
    A1 = cf(x1, t1)
    A2 = cf(x2, t2)
    sym = float(np.max(np.abs(A1 - np.swapaxes(A1, -1, -2))))
    ev = np.linalg.eigvalsh(A1)
    lam = cf.lambda_ell
    margin = float(min(np.min(lam * ev[:, 0] - 1.0), np.min(lam - ev[:, -1])))
    diff = np.max(np.abs(A1 - A2), axis=(-1, -2))
    rho = quasi_distance(cf.group, x1, x2) + np.sqrt(t1 - t2)
    w = cf.modulus(rho)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(diff > 0, diff / w, 0.0)
    return ValidationReport(
        samples=sample_count,
        symmetry_residual=sym,
        ellipticity_margin=margin,
        continuity_ratio=float(np.max(ratio)),
        entry_max=float(np.max(np.abs(A1))),
        lambda_ell=lam,
    )


# ---------------------------------------------------------------------------
# presets


def constant(A, group: Optional[GroupDescriptor] = None, lambda_ell: Optional[float] = None):
    """Constant matrix; ``Lambda`` defaults to the tightest admissible value."""
    A = np.atleast_2d(np.asarray(A, float))
    if group is None:
        group = euclidean(A.shape[0])
    if A.shape != (group.m, group.m):
        raise ValueError(f"matrix shape {A.shape} does not match m={group.m}")
    ev = np.linalg.eigvalsh(A)
    if lambda_ell is None:
        lambda_ell = max(1.0 + 1e-12, ev[-1], 1.0 / ev[0])
    check_ellipticity(A, lambda_ell)

    def func(x, t):
        lead = np.broadcast_shapes(np.shape(x)[:-1], np.shape(t))
        return np.broadcast_to(A, lead + A.shape).copy()

    return CoefficientField(
        group=group,
        func=func,
        lambda_ell=float(lambda_ell),
        modulus=md.zero(),
        name="constant",
        autonomous=True,
        is_constant=True,
        params={"A": A.tolist()},
    )


def sine1d(amp: float = 0.25, modulus: Optional[md.Modulus] = None):
    """``a(x, t) = 1 + amp sin x`` on the real line.

    The default modulus ``amp * sqrt(2) * sqrt(r)`` dominates
    ``amp * min(r, 2)``, capped at ``2 Lambda``.
    """
    if not 0 <= amp < 1:
        raise ValueError("amp must lie in [0, 1)")
    lam = max(1.0 / (1.0 - amp), 1.0 + amp) if amp > 0 else 1.0 + 1e-12
    if modulus is None:
        modulus = md.holder(0.5, scale=max(amp, 1e-300) * math.sqrt(2.0), cap=2 * lam, delta=0.75)

    def func(x, t):
        x = np.asarray(x, float)
        return (1.0 + amp * np.sin(x[..., 0]))[..., None, None] + 0.0 * np.asarray(t)[..., None, None]

    return CoefficientField(
        group=euclidean(1),
        func=func,
        lambda_ell=lam,
        modulus=modulus,
        name="sine1d",
        autonomous=True,
        params={"amp": amp},
    )


def perturbed2d(eps: float = 0.2, lambda_ell: float = 2.0, modulus: Optional[md.Modulus] = None):
    """``A = I + eps R(x, t)`` on the plane with a smooth bounded ``R``.

    ``R = [[sin x1 cos t, sin(x1 + x2)/2], [sin(x1 + x2)/2, cos x2]]`` has
    spectral radius at most 3/2, so ``eps <= 1/(2 Lambda)`` keeps ``A`` inside
    the class.  Entry increments are bounded by ``eps * min(2, |dx| + |dt|)``,
    which ``eps * 2 * sqrt(r)`` dominates in the parabolic distance.
    """
    if not 0 <= eps <= 1.0 / (2.0 * lambda_ell):
        raise ValueError("eps must lie in [0, 1/(2 Lambda)]")
    if modulus is None:
        modulus = md.holder(0.5, scale=max(eps, 1e-300) * 2.0, cap=2 * lambda_ell, delta=0.75)

    def func(x, t):
        x = np.asarray(x, float)
        t = np.asarray(t, float)
        x1, x2 = x[..., 0], x[..., 1]
        x1, x2, t = np.broadcast_arrays(x1, x2, t)
        out = np.empty(x1.shape + (2, 2))
        off = 0.5 * np.sin(x1 + x2)
        out[..., 0, 0] = 1.0 + eps * np.sin(x1) * np.cos(t)
        out[..., 1, 1] = 1.0 + eps * np.cos(x2)
        out[..., 0, 1] = eps * off
        out[..., 1, 0] = eps * off
        return out

    return CoefficientField(
        group=euclidean(2),
        func=func,
        lambda_ell=lambda_ell,
        modulus=modulus,
        name="perturbed2d",
        params={"eps": eps},
    )


def exact_increment_modulus(alpha: float, scale: float = 1.0, delta: float = 0.9) -> md.Modulus:
    """Smallest modulus of ``scale * omega_alpha``: ``h -> sup_r increment``.

    ``omega_alpha`` is concave only below ``exp(-alpha - 1)`` and flat past 1/2,
    so ``omega_alpha(h)`` alone does not bound its increments; the supremum is
    taken numerically over a log grid in ``r`` and combined with
    ``omega_alpha(h)`` (the ``r = 0`` increment).
    """
    h = np.logspace(-14, 1, 400)
    r = np.concatenate([[0.0], np.logspace(-14, math.log10(0.5), 2000)])
    inc = md.omega_alpha(r[None, :] + h[:, None], alpha) - md.omega_alpha(r[None, :], alpha)
    sup = np.maximum.accumulate(np.max(inc, axis=1))
    log_h = np.log(h)

    def tab(x):
        x = np.asarray(x, float)
        with np.errstate(divide="ignore"):
            lx = np.log(np.maximum(x, 1e-300))
        return np.interp(lx, log_h, sup, left=0.0, right=sup[-1])

    def func(x):
        return scale * np.maximum(md.omega_alpha(x, alpha), tab(x))

    def log_func(s):
        s = np.asarray(s, float)
        lead = np.where(s > math.log(2.0), np.maximum(s, math.log(2.0)), math.log(2.0)) ** (-alpha)
        return scale * np.maximum(lead, tab(np.exp(-s)))

    return md.Modulus(
        func=func,
        kind="custom",
        params={"alpha": alpha, "scale": scale, "source": "exact_increment"},
        delta=delta,
        log_func=log_func,
    )


def log_dini_field(
    kappa: float = 0.1, alpha: float = 3.0, group: Optional[GroupDescriptor] = None
):
    """``A = (1 + kappa * omega_alpha(||x|| + sqrt(t))) I``: Dini but not Holder.

    The homogeneous norm satisfies the triangle inequality on both presets, so
    the argument moves by at most ``d(x, x') + sqrt|t - t'|`` and the exact
    increment modulus of ``kappa * omega_alpha`` bounds the field.
    """
    if group is None:
        group = euclidean(1)
    if kappa < 0:
        raise ValueError("kappa must be non-negative")
    top = 1.0 + kappa * math.log(2.0) ** (-alpha)
    lam = max(top, 1.0 + 1e-12)
    m = group.m
    eye = np.eye(m)

    def func(x, t):
        x = np.asarray(x, float)
        t = np.asarray(t, float)
        arg = group.norm(x) + np.sqrt(np.abs(t))
        a = 1.0 + kappa * md.omega_alpha(arg, alpha)
        return a[..., None, None] * eye

    return CoefficientField(
        group=group,
        func=func,
        lambda_ell=lam,
        modulus=exact_increment_modulus(alpha, scale=max(kappa, 1e-300)),
        name="log_dini_field",
        params={"kappa": kappa, "alpha": alpha},
    )


def field_from_config(spec: dict) -> CoefficientField:
    """``{"preset": name, ...}``; optional ``"modulus"`` overrides the default."""
    spec = dict(spec)
    name = spec.pop("preset")
    mod = spec.pop("modulus", None)
    if mod is not None:
        spec["modulus"] = md.modulus_from_config(mod)
    if name == "constant":
        group = group_from_name(spec.pop("group", "euclidean:1"))
        return constant(spec["A"], group=group, lambda_ell=spec.get("lambda_ell"))
    if name == "sine1d":
        return sine1d(**spec)
    if name == "perturbed2d":
        return perturbed2d(**spec)
    if name == "log_dini_field":
        group = group_from_name(spec.pop("group", "euclidean:1"))
        spec.pop("modulus", None)
        return log_dini_field(group=group, **spec)
    raise ValueError(f"unknown coefficient preset {name!r}")
