"""Smallest-constant fits of product-form envelopes."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import ParametrixError

__all__ = ["EnvelopeFit", "fit_constant", "default_c_grid"]


class IllPosedFitError(ParametrixError):
    """An envelope factor vanishes where the left-hand side does not."""


def default_c_grid():
    return np.logspace(np.log10(1.0), np.log10(256.0), 49)


@dataclass
class EnvelopeFit:
    C: float
    c: float
    ratios: np.ndarray = field(repr=False)
    C_by_c: np.ndarray = field(repr=False)
    c_grid: np.ndarray = field(repr=False)

    @property
    def finite(self) -> bool:
        return bool(np.isfinite(self.C))


def fit_constant(
    lhs, envelope: Callable[[float], np.ndarray], c_grid: Sequence[float] | None = None
) -> EnvelopeFit:
    """Fit ``|lhs| <= C * envelope(c)`` pointwise.

    For every candidate ``c`` the admissible ``C`` is the maximum ratio; the
    ``c`` giving the smallest ``C`` is kept (the smallest such ``c`` on ties).
    """
    lhs = np.abs(np.asarray(lhs, float))
    if c_grid is None:
        c_grid = default_c_grid()
    c_grid = np.asarray(c_grid, float)
    Cs = np.empty(len(c_grid))
    best = None
    nz = lhs > 0
    for k, c in enumerate(c_grid):
        env = np.asarray(envelope(float(c)), float)
        env = np.broadcast_to(env, lhs.shape)
        if np.any(env[nz] <= 0):
            Cs[k] = np.inf
            continue
        with np.errstate(divide="ignore", invalid="ignore"):
            r = np.where(nz, lhs / np.where(env > 0, env, 1.0), 0.0)
        Cs[k] = float(np.max(r)) if r.size else 0.0
        if best is None or Cs[k] < Cs[best[0]] * (1 - 1e-12):
            best = (k, r)
    if best is None:
        raise IllPosedFitError("envelope vanishes where the left-hand side does not")
    k, r = best
    return EnvelopeFit(C=float(Cs[k]), c=float(c_grid[k]), ratios=r, C_by_c=Cs, c_grid=c_grid)
