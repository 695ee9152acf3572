"""
Fixed-node quadrature rules
===========================

Everything the engine integrates is dominated by a Gaussian in space and by
an endpoint singularity of the form ``omega(c sqrt(s)) / s`` in time, so two
families of rules suffice: Gauss-Legendre on a window around a Gaussian centre
and Gauss-Legendre in ``rho = sqrt(s)`` after splitting the time interval at
its midpoint.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict
from functools import lru_cache

import numpy as np

__all__ = [
    "QuadratureSpec",
    "gauss_legendre",
    "window_rule",
    "tensor_rule",
    "split_time_rule",
    "trapezoid_box",
]


@dataclass(frozen=True)
class QuadratureSpec:
    """Node counts and truncation for the space-time integrals.

    Parameters
    ----------
    space_nodes : int
        Gauss-Legendre nodes per spatial axis on the envelope window.
    k_R : float
        Window half-width in envelope standard deviations.
    time_nodes : int
        Gauss-Legendre nodes in ``rho`` on each half of the time interval.
    grid_u, grid_rho : int
        Sizes of the self-similar tabulation grid of each ``Z_j``.
    collars : int
        Number of dyadic collars used by the singular-limit extrapolation.
    rel_tol : float
        Target for refinement checks.
    """

    space_nodes: int = 48
    k_R: float = 6.0
    time_nodes: int = 20
    grid_u: int = 61
    grid_rho: int = 32
    collars: int = 5
    rel_tol: float = 1e-3

    def __post_init__(self):
        if min(self.space_nodes, self.time_nodes, self.grid_u, self.grid_rho) < 4:
            raise ValueError("node counts must be >= 4")
        if self.k_R < 3:
            raise ValueError("truncation radius factor must be >= 3")

    def refined(self, factor: int = 2) -> "QuadratureSpec":
        """All node counts multiplied by ``factor``."""
        return QuadratureSpec(
            space_nodes=self.space_nodes * factor,
            k_R=self.k_R,
            time_nodes=self.time_nodes * factor,
            grid_u=(self.grid_u - 1) * factor + 1,
            grid_rho=self.grid_rho * factor,
            collars=self.collars,
            rel_tol=self.rel_tol,
        )

    def to_dict(self) -> dict:
        return asdict(self)


@lru_cache(maxsize=64)
def _leggauss(n: int):
    x, w = np.polynomial.legendre.leggauss(n)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(n: int, a: float = -1.0, b: float = 1.0):
    """Nodes and weights of the ``n``-point rule on ``[a, b]``."""
    x, w = _leggauss(n)
    half = 0.5 * (b - a)
    return half * x + 0.5 * (a + b), half * w


def window_rule(center, sd, k_R: float, n: int):
    """Gauss-Legendre on ``center +- k_R * sd`` (broadcast over leading axes).

    Returns arrays of shape ``center.shape + (n,)``.
    """
    x, w = _leggauss(n)
    center = np.asarray(center, float)[..., None]
    h = k_R * np.asarray(sd, float)[..., None]
    return center + h * x, h * w


def tensor_rule(nodes_1d, weights_1d):
    """Tensor product of per-axis rules: ``(N, d)`` nodes and ``(N,)`` weights."""
    grids = np.meshgrid(*nodes_1d, indexing="ij")
    wgrids = np.meshgrid(*weights_1d, indexing="ij")
    pts = np.stack([g.ravel() for g in grids], axis=-1)
    wts = np.prod(np.stack([g.ravel() for g in wgrids], axis=-1), axis=-1)
    return pts, wts


def split_time_rule(tau, t, n: int):
    """Nodes ``eta`` and weights on ``(tau, t)`` with both endpoints tamed.

    The interval is split at the midpoint; the lower half uses
    ``eta = tau + rho^2`` and the upper half ``eta = t - rho^2``, so an
    integrand behaving like ``f(rho^2)/rho^2`` near either end becomes
    ``2 f(rho^2)/rho`` in the new variable.  Returns ``(eta, w)`` of shape
    ``broadcast(tau, t).shape + (2n,)``.
    """
    tau = np.asarray(tau, float)[..., None]
    t = np.asarray(t, float)[..., None]
    x, w = _leggauss(n)
    rmax = np.sqrt(0.5 * (t - tau))
    rho = 0.5 * rmax * (x + 1.0)
    wr = 0.5 * rmax * w * 2.0 * rho  # d eta = 2 rho d rho
    eta = np.concatenate([tau + rho**2, t - rho**2], axis=-1)
    ww = np.concatenate([wr, wr], axis=-1)
    return eta, ww


def trapezoid_box(half_widths, n):
    """Uniform tensor grid on ``prod [-h_i, h_i]`` with trapezoid weights."""
    axes, wts = [], []
    for h in np.atleast_1d(half_widths):
        x = np.linspace(-h, h, n)
        w = np.full(n, x[1] - x[0])
        w[0] *= 0.5
        w[-1] *= 0.5
        axes.append(x)
        wts.append(w)
    return tensor_rule(axes, wts)
