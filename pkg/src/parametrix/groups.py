"""
Homogeneous Carnot groups
=========================

Two presets are shipped: the abelian group ``euclidean:n`` and the first
Heisenberg group ``heisenberg1``.  Points are numpy arrays whose last axis
holds the coordinates, so every map below is vectorised over leading axes.

Heisenberg conventions::

    (x1, y1, z1) o (x2, y2, z2) = (x1 + x2, y1 + y2, z1 + z2 + (x1*y2 - y1*x2)/2)
    X1 = d/dx - (y/2) d/dz,   X2 = d/dy + (x/2) d/dz,   [X1, X2] = d/dz
    ||(x, y, z)|| = ((x^2 + y^2)^2 + 16 z^2)^(1/4)
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DomainError

__all__ = [
    "GroupDescriptor",
    "euclidean",
    "heisenberg1",
    "group_from_name",
    "dilate",
    "quasi_distance",
    "gaussian_envelope",
    "lie_derivative",
    "lie_derivative2",
    "certify_quasi_triangle",
]


@dataclass(frozen=True)
class GroupDescriptor:
    """Immutable description of a homogeneous Carnot group on R^n.

    Parameters
    ----------
    name : str
        Registry name, e.g. ``"euclidean:2"``.
    layer_dims : tuple of int
        Dimensions ``n_1, ..., n_r`` of the stratification layers.
    law, inverse : callable
        Group multiplication and inversion acting on ``(..., n)`` arrays.
    vf_coeffs : callable
        ``vf_coeffs(x)`` returns an ``(..., m, n)`` array whose row ``i`` is the
        coefficient vector of the horizontal field ``X_i`` at ``x``.
    norm : callable
        A homogeneous norm, ``norm(x)`` of shape ``(...)``.
    flow : callable
        ``flow(x, i, h)`` is the exact time-``h`` flow of ``X_i`` started at ``x``.
    quasi_triangle_k : float
        Constant in ``d(x, z) <= k (d(x, y) + d(y, z))``.
    """

    name: str
    layer_dims: tuple[int, ...]
    law: Callable[[np.ndarray, np.ndarray], np.ndarray]
    inverse: Callable[[np.ndarray], np.ndarray]
    vf_coeffs: Callable[[np.ndarray], np.ndarray]
    norm: Callable[[np.ndarray], np.ndarray]
    flow: Callable[[np.ndarray, int, float], np.ndarray]
    quasi_triangle_k: float = 1.0
    abelian: bool = False
    _degrees: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if any(d <= 0 for d in self.layer_dims):
            raise ValueError("layer dimensions must be positive")
        degrees = np.concatenate(
            [np.full(d, i + 1, dtype=float) for i, d in enumerate(self.layer_dims)]
        )
        object.__setattr__(self, "_degrees", degrees)

    @property
    def n(self) -> int:
        return int(sum(self.layer_dims))

    @property
    def m(self) -> int:
        return int(self.layer_dims[0])

    @property
    def hom_dimension(self) -> int:
        return int(sum((i + 1) * d for i, d in enumerate(self.layer_dims)))

    @property
    def degrees(self) -> np.ndarray:
        """Homogeneous degree of each coordinate."""
        return self._degrees.copy()

    @property
    def identity(self) -> np.ndarray:
        return np.zeros(self.n)

    def translate_inv(self, xi, x):
        """``xi^{-1} o x``, the argument of every translated kernel."""
        return self.law(self.inverse(np.asarray(xi, float)), np.asarray(x, float))


def _as_points(x, n):
    x = np.asarray(x, dtype=float)
    if x.ndim == 0:
        x = x[None]
    if x.shape[-1] != n:
        raise ValueError(f"expected points with {n} coordinates, got shape {x.shape}")
    return x


def euclidean(n: int = 1) -> GroupDescriptor:
    """Abelian group ``(R^n, +)`` with ``X_i = d/dx_i`` and the Euclidean norm."""
    if n < 1:
        raise ValueError("n must be >= 1")

    def law(x, y):
        return _as_points(x, n) + _as_points(y, n)

    def inverse(x):
        return -_as_points(x, n)

    def vf_coeffs(x):
        x = _as_points(x, n)
        return np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()

    def norm(x):
        return np.linalg.norm(_as_points(x, n), axis=-1)

    def flow(x, i, h):
        x = _as_points(x, n).copy()
        x[..., i] += h
        return x

    return GroupDescriptor(
        name=f"euclidean:{n}",
        layer_dims=(n,),
        law=law,
        inverse=inverse,
        vf_coeffs=vf_coeffs,
        norm=norm,
        flow=flow,
        quasi_triangle_k=1.0,
        abelian=True,
    )


def heisenberg1() -> GroupDescriptor:
    """First Heisenberg group with the Koranyi gauge (a genuine norm, so k = 1)."""

    def law(p, q):
        p = _as_points(p, 3)
        q = _as_points(q, 3)
        p, q = np.broadcast_arrays(p, q)
        out = p + q
        out[..., 2] += 0.5 * (p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0])
        return out

    def inverse(p):
        return -_as_points(p, 3)

    def vf_coeffs(p):
        p = _as_points(p, 3)
        out = np.zeros(p.shape[:-1] + (2, 3))
        out[..., 0, 0] = 1.0
        out[..., 0, 2] = -0.5 * p[..., 1]
        out[..., 1, 1] = 1.0
        out[..., 1, 2] = 0.5 * p[..., 0]
        return out

    def norm(p):
        p = _as_points(p, 3)
        r2 = p[..., 0] ** 2 + p[..., 1] ** 2
        return (r2 * r2 + 16.0 * p[..., 2] ** 2) ** 0.25

    def flow(p, i, h):
        # right translation by exp(h X_i)
        step = np.zeros(3)
        step[i] = h
        return law(p, step)

    return GroupDescriptor(
        name="heisenberg1",
        layer_dims=(2, 1),
        law=law,
        inverse=inverse,
        vf_coeffs=vf_coeffs,
        norm=norm,
        flow=flow,
        quasi_triangle_k=1.0,
        abelian=False,
    )


def group_from_name(name: str) -> GroupDescriptor:
    """Resolve ``"euclidean:n"`` or ``"heisenberg1"``."""
    key = name.strip().lower()
    if key == "heisenberg1":
        return heisenberg1()
    if key.startswith("euclidean"):
        _, _, dim = key.partition(":")
        return euclidean(int(dim) if dim else 1)
    raise ValueError(f"unknown group {name!r}")


def dilate(g: GroupDescriptor, lam: float, x) -> np.ndarray:
    """Apply ``delta_lam``: layer ``i`` is scaled by ``lam**i``."""
    if not lam > 0:
        raise DomainError(f"dilation factor must be positive, got {lam}")
    x = _as_points(x, g.n)
    return x * lam ** g._degrees


def quasi_distance(g: GroupDescriptor, x, y) -> np.ndarray:
    """``d(x, y) = ||y^{-1} o x||``."""
    return g.norm(g.law(g.inverse(_as_points(y, g.n)), _as_points(x, g.n)))


def gaussian_envelope(g: GroupDescriptor, x, t) -> np.ndarray:
    """``E(x, t) = t^{-Q/2} exp(-||x||^2 / t)`` for ``t > 0``."""
    t = np.asarray(t, dtype=float)
    if np.any(t <= 0):
        raise DomainError("gaussian envelope requires t > 0")
    r = g.norm(_as_points(x, g.n))
    return t ** (-0.5 * g.hom_dimension) * np.exp(-(r**2) / t)


def _default_step(g, x):
    return 1e-3 * max(1.0, float(np.max(g.norm(x))))


def lie_derivative(g: GroupDescriptor, u, i: int, x, h: float | None = None) -> float:
    """Derivative of the scalar field ``u`` along ``X_i`` at ``x``.

    Uses ``u.grad`` when the callable exposes one; otherwise a five-point
    central difference along the exact flow of ``X_i``.
    """
    if not 0 <= i < g.m:
        raise DomainError(f"field index {i} out of range for m={g.m}")
    x = _as_points(x, g.n)
    grad = getattr(u, "grad", None)
    if grad is not None:
        return np.einsum("...j,...j->...", g.vf_coeffs(x)[..., i, :], grad(x))
    if h is None:
        h = _default_step(g, x)
    elif h <= 0:
        raise DomainError("step must be positive")
    f = [u(g.flow(x, i, k * h)) for k in (2, 1, -1, -2)]
    return (-f[0] + 8.0 * f[1] - 8.0 * f[2] + f[3]) / (12.0 * h)


def lie_derivative2(g: GroupDescriptor, u, i: int, j: int, x, h: float | None = None):
    """``X_i X_j u`` at ``x`` by nesting :func:`lie_derivative`."""
    if h is None:
        h = 10.0 * _default_step(g, _as_points(x, g.n))

    def inner(p):
        return lie_derivative(g, u, j, p, h)

    return lie_derivative(g, inner, i, x, h)


def certify_quasi_triangle(
    g: GroupDescriptor, samples: int = 20000, scale: float = 2.0, seed: int = 0
) -> float:
    """Largest observed ``d(x, z) / (d(x, y) + d(y, z))`` over random triples."""
    rng = np.random.default_rng(seed)
    pts = rng.normal(scale=scale, size=(3, samples, g.n))
    pts *= rng.lognormal(sigma=1.0, size=(3, samples, 1)) ** g._degrees
    x, y, z = pts
    lhs = quasi_distance(g, x, z)
    rhs = quasi_distance(g, x, y) + quasi_distance(g, y, z)
    ok = rhs > 0
    return float(np.max(lhs[ok] / rhs[ok]))
