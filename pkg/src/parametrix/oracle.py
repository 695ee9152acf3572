"""
Reference oracles
=================

Independent ground truth for the engine:

* :func:`fd_green` evolves a narrow Gaussian stand-in for a point mass under
  ``u_t = sum a_ij d_i d_j u`` with Crank-Nicolson (two implicit Euler start
  steps damp the stiff high modes of the narrow initial profile);
* :func:`mc_kernel` simulates the horizontal diffusion generated by
  ``sum a_ij X_i X_j`` with Euler-Maruyama and estimates its density by a
  Gaussian kernel density estimate.

Comparisons never deconvolve: the engine side is convolved with the same
surrogate or kernel-density Gaussian instead.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .coefficients import CoefficientField
from .errors import DomainError, StabilityError
from .groups import GroupDescriptor
from .kernels import FrozenKernel

__all__ = [
    "FDGrid",
    "FDResult",
    "fd_solve",
    "fd_green",
    "MCResult",
    "mc_kernel",
    "mc_paths",
    "kde_smoothed_kernel",
    "gauss_hermite_smooth",
    "write_field_csv",
]


@dataclass(frozen=True)
class FDGrid:
    """Uniform grid and time stepping for :func:`fd_green`.

    Parameters
    ----------
    half_width : float
        The box is ``[center - half_width, center + half_width]`` per axis.
    nx : int
        Nodes per axis (boundary nodes included).
    dt : float
        Time step.
    theta : float
        0.5 is Crank-Nicolson.
    startup_steps : int
        Implicit Euler steps taken first.
    boundary : str
        ``"dirichlet"`` (zero) or ``"neumann"`` (zero normal difference).
    """

    half_width: float = 6.0
    nx: int = 1201
    dt: float = 1e-3
    theta: float = 0.5
    startup_steps: int = 2
    boundary: str = "dirichlet"

    def __post_init__(self):
        if self.nx < 5 or self.dt <= 0 or self.half_width <= 0:
            raise ValueError("invalid finite-difference grid")
        if self.boundary not in ("dirichlet", "neumann"):
            raise ValueError("boundary must be dirichlet or neumann")

    @property
    def dx(self) -> float:
        return 2.0 * self.half_width / (self.nx - 1)

    def refined(self) -> "FDGrid":
        """Half the spacing and half the time step."""
        return FDGrid(self.half_width, 2 * (self.nx - 1) + 1, self.dt / 2, self.theta,
                      self.startup_steps, self.boundary)


@dataclass
class FDResult:
    axes: list
    u: np.ndarray
    t: float
    sigma0: float
    steps: int
    diffusion_number: float
    boundary_max: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def cell_volume(self) -> float:
        return float(np.prod([a[1] - a[0] for a in self.axes]))

    def mass(self) -> float:
        return float(np.sum(self.u) * self.cell_volume)


def _operator(cf: CoefficientField, axes, t, boundary):
    """Sparse non-divergence operator ``sum a_ij d_i d_j`` on the interior nodes."""
    n = cf.group.n
    if n == 1:
        x = axes[0]
        h = x[1] - x[0]
        N = len(x)
        a = np.asarray(cf.func(x[:, None], t), float)[:, 0, 0]
        lower = a[1:] / h**2
        upper = a[:-1] / h**2
        main = -2.0 * a / h**2
        if boundary == "neumann":
            upper = upper.copy()
            lower = lower.copy()
            upper[0] *= 2.0
            lower[-1] *= 2.0
        return sp.diags([lower, main, upper], [-1, 0, 1], shape=(N, N), format="csc")
    if n == 2:
        x, y = axes
        hx, hy = x[1] - x[0], y[1] - y[0]
        Nx, Ny = len(x), len(y)
        X, Y = np.meshgrid(x, y, indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel()], axis=-1)
        A = np.asarray(cf.func(pts, t), float)
        idx = np.arange(Nx * Ny).reshape(Nx, Ny)
        rows, cols, vals = [], [], []

        def add(mask_i, mask_j, di, dj, coef):
            ii, jj = np.meshgrid(np.arange(Nx), np.arange(Ny), indexing="ij")
            ti, tj = ii + di, jj + dj
            if boundary == "neumann":
                ti = np.clip(ti, 0, Nx - 1)
                tj = np.clip(tj, 0, Ny - 1)
                ok = np.ones_like(ti, bool)
            else:
                ok = (ti >= 0) & (ti < Nx) & (tj >= 0) & (tj < Ny)
            r = idx[ok]
            c = idx[np.clip(ti, 0, Nx - 1), np.clip(tj, 0, Ny - 1)][ok]
            rows.append(r)
            cols.append(c)
            vals.append(coef.reshape(Nx, Ny)[ok])

        a11, a22, a12 = A[:, 0, 0], A[:, 1, 1], A[:, 0, 1]
        add(None, None, 0, 0, -2 * a11 / hx**2 - 2 * a22 / hy**2)
        add(None, None, 1, 0, a11 / hx**2)
        add(None, None, -1, 0, a11 / hx**2)
        add(None, None, 0, 1, a22 / hy**2)
        add(None, None, 0, -1, a22 / hy**2)
        c = 2 * a12 / (4 * hx * hy)
        add(None, None, 1, 1, c)
        add(None, None, -1, -1, c)
        add(None, None, 1, -1, -c)
        add(None, None, -1, 1, -c)
        L = sp.coo_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(Nx * Ny, Nx * Ny),
        )
        return L.tocsc()
    raise DomainError("the finite-difference oracle supports n <= 2")


def fd_solve(cf: CoefficientField, u0, tau: float, t: float, grid: FDGrid,
             center: Optional[Sequence[float]] = None) -> FDResult:
    """Evolve grid data ``u0`` (callable on points ``(..., n)``) from ``tau`` to ``t``."""
    if not cf.group.abelian or cf.group.n > 2:
        raise DomainError("the finite-difference oracle needs a Euclidean field with n <= 2")
    if t <= tau:
        raise DomainError("t must exceed tau")
    n = cf.group.n
    center = np.zeros(n) if center is None else np.asarray(center, float).reshape(n)
    axes = [np.linspace(c - grid.half_width, c + grid.half_width, grid.nx) for c in center]
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    u = np.asarray(u0(pts), float).ravel().copy()
    steps = max(1, int(round((t - tau) / grid.dt)))
    dt = (t - tau) / steps
    size = u.size
    eye = sp.identity(size, format="csc")
    boundary = np.zeros(size, bool)
    if grid.boundary == "dirichlet":
        bmask = np.zeros(mesh[0].shape, bool)
        for ax in range(n):
            sl = [slice(None)] * n
            sl[ax] = 0
            bmask[tuple(sl)] = True
            sl[ax] = -1
            bmask[tuple(sl)] = True
        boundary = bmask.ravel()
    keep = sp.diags((~boundary).astype(float), format="csc")
    u[boundary] = 0.0
    time_dependent = not cf.autonomous
    L_now = keep @ _operator(cf, axes, tau, grid.boundary)
    start_norm = float(np.max(np.abs(u))) or 1.0
    cur = tau
    lu_cache = {}
    bmax = 0.0
    for k in range(steps):
        nxt = tau + (k + 1) * dt
        L_next = keep @ _operator(cf, axes, nxt, grid.boundary) if time_dependent else L_now
        th = 1.0 if k < grid.startup_steps else grid.theta
        key = th
        if time_dependent or key not in lu_cache:
            lu_cache[key] = splu((eye - th * dt * L_next).tocsc())
        rhs = u + (1.0 - th) * dt * (L_now @ u)
        u = lu_cache[key].solve(rhs)
        u[boundary] = 0.0
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > 1e3 * start_norm:
            raise StabilityError(f"finite-difference solution blew up at step {k + 1}")
        L_now = L_next
        cur = nxt
    field_u = u.reshape(mesh[0].shape)
    edge = [np.take(field_u, [0, -1], axis=ax) for ax in range(n)]
    inner = [np.take(field_u, [1, -2], axis=ax) for ax in range(n)]
    if grid.boundary == "dirichlet":
        bmax = max(float(np.max(np.abs(e))) for e in inner)
    else:
        bmax = max(float(np.max(np.abs(e))) for e in edge)
    h = grid.dx
    return FDResult(
        axes=axes,
        u=field_u,
        t=cur,
        sigma0=0.0,
        steps=steps,
        diffusion_number=float(cf.lambda_ell * dt / h**2),
        boundary_max=bmax,
    )


def fd_green(cf: CoefficientField, xi, tau: float, t: float, grid: FDGrid = FDGrid(),
             sigma0: Optional[float] = None) -> FDResult:
    """Green function from ``(xi, tau)`` with a Gaussian point-mass surrogate of width ``2 dx``.

    The box is centred at ``xi``.  The surrogate is normalised on the grid so
    the discrete initial mass is exactly one.
    """
    n = cf.group.n
    xi = np.asarray(xi, float).reshape(n)
    s0 = 2.0 * grid.dx if sigma0 is None else float(sigma0)
    cell = grid.dx**n

    def u0(p):
        r2 = np.sum((p - xi) ** 2, axis=-1)
        v = np.exp(-r2 / (2 * s0**2))
        return v / (np.sum(v) * cell)

    res = fd_solve(cf, u0, tau, t, grid, center=xi)
    res.sigma0 = s0
    return res


def gauss_hermite_smooth(fun, xi, sigma0: float, n: int = 12):
    """``int fun(y) N(y; xi, sigma0^2) dy`` in one dimension by Gauss-Hermite.

    ``fun(y)`` returns an array; the result is the weighted sum over nodes.
    """
    z, w = np.polynomial.hermite_e.hermegauss(n)
    w = w / math.sqrt(2 * math.pi)
    total = 0.0
    for zk, wk in zip(z, w):
        total = total + wk * np.asarray(fun(float(xi) + sigma0 * zk))
    return total


def write_field_csv(path, res: FDResult, xi, tau: float):
    """CSV mirror of the engine export (``gamma`` holds the oracle field)."""
    n = len(res.axes)
    mesh = np.meshgrid(*res.axes, indexing="ij")
    xi = np.atleast_1d(np.asarray(xi, float))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        xs = ["x"] if n == 1 else [f"x{i + 1}" for i in range(n)]
        xis = ["xi"] if n == 1 else [f"xi{i + 1}" for i in range(n)]
        w.writerow(xs + ["t"] + xis + ["tau", "gamma"])
        for idx in np.ndindex(res.u.shape):
            w.writerow([repr(float(m[idx])) for m in mesh] + [repr(float(res.t))]
                       + [repr(float(v)) for v in xi] + [repr(float(tau)), repr(float(res.u[idx]))])


# -- Monte Carlo --------------------------------------------------------------


@dataclass
class MCResult:
    targets: np.ndarray
    estimate: np.ndarray
    stderr: np.ndarray
    bandwidth: np.ndarray
    paths: int
    steps: int


def mc_paths(group: GroupDescriptor, A, t: float, paths: int, dt: float,
             seed: int = 0, batch: int = 50_000) -> np.ndarray:
    """Endpoints at time ``t`` of the diffusion started at the identity.

    Each Euler-Maruyama step right-translates by the horizontal increment
    ``sqrt(2A) dW``, which on the first Heisenberg group is the same as an
    Euler step of ``dX = sum_i (sqrt(2A) dW)_i X_i(X)`` (the Ito correction
    vanishes for symmetric ``A``).
    """
    if paths < 1 or dt <= 0 or t <= 0:
        raise DomainError("paths, dt and t must be positive")
    A = np.atleast_2d(np.asarray(A, float))
    m = group.m
    w_, v_ = np.linalg.eigh(2.0 * A)
    S = v_ @ np.diag(np.sqrt(w_)) @ v_.T
    steps = max(1, int(math.ceil(t / dt)))
    h = t / steps
    ss = np.random.SeedSequence(seed)
    out = np.empty((paths, group.n))
    done = 0
    for child in ss.spawn(int(math.ceil(paths / batch))):
        rng = np.random.default_rng(child)
        nb = min(batch, paths - done)
        p = np.zeros((nb, group.n))
        for _ in range(steps):
            dW = rng.standard_normal((nb, m)) * math.sqrt(h)
            inc = np.zeros((nb, group.n))
            inc[:, :m] = dW @ S.T
            p = group.law(p, inc)
        out[done : done + nb] = p
        done += nb
    return out


def _silverman(samples: np.ndarray) -> np.ndarray:
    n, d = samples.shape
    sd = np.std(samples, axis=0, ddof=1)
    iqr = np.subtract(*np.percentile(samples, [75, 25], axis=0)) / 1.349
    spread = np.where(iqr > 0, np.minimum(sd, iqr), sd)
    return spread * (4.0 / ((d + 2) * n)) ** (1.0 / (d + 4))


def mc_kernel(group: GroupDescriptor, A, t: float, targets, paths: int = 100_000,
              dt: Optional[float] = None, seed: int = 0, bandwidth=None) -> MCResult:
    """Kernel density estimate of the diffusion's density at ``targets``.

    Parameters
    ----------
    bandwidth : array_like, optional
        Per-coordinate Gaussian widths; Silverman's rule in exponential
        coordinates when omitted.
    """
    if paths < 10_000:
        raise DomainError("mc_kernel needs at least 1e4 paths")
    dt = t / 200.0 if dt is None else dt
    X = mc_paths(group, A, t, paths, dt, seed)
    targets = np.atleast_2d(np.asarray(targets, float))
    h = _silverman(X) if bandwidth is None else np.broadcast_to(np.asarray(bandwidth, float), (group.n,))
    norm = float(np.prod(h)) * (2 * math.pi) ** (group.n / 2)
    est, se = [], []
    for q in targets:
        k = np.exp(-0.5 * np.sum(((X - q) / h) ** 2, axis=1)) / norm
        est.append(float(np.mean(k)))
        se.append(float(np.std(k, ddof=1) / math.sqrt(len(k))))
    return MCResult(targets, np.array(est), np.array(se), np.asarray(h, float), paths,
                    int(math.ceil(t / dt)))


def kde_smoothed_kernel(kernel: FrozenKernel, t: float, targets, bandwidth, n: int = 9) -> np.ndarray:
    """``int gamma(y, t) N(q - y; diag(h^2)) dy``: the quantity a KDE estimates."""
    targets = np.atleast_2d(np.asarray(targets, float))
    h = np.asarray(bandwidth, float)
    d = targets.shape[1]
    z, w = np.polynomial.hermite_e.hermegauss(n)
    w = w / math.sqrt(2 * math.pi)
    grids = np.meshgrid(*([z] * d), indexing="ij")
    wg = np.meshgrid(*([w] * d), indexing="ij")
    Z = np.stack([g.ravel() for g in grids], axis=-1)
    W = np.prod(np.stack([g.ravel() for g in wg], axis=-1), axis=-1)
    out = []
    for q in targets:
        y = q + Z * h
        out.append(float(np.sum(W * kernel.eval(y, t))))
    return np.array(out)
