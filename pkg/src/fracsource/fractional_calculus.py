"""Uniform time grids, Riemann-Liouville integral and L1 Caputo derivative.

The product-integration weights built here are shared with the forward
solver: for a kernel ``K`` with known first and second antiderivatives the
convolution ``int_0^t s(r) K(t - r) dr`` of a piecewise-linear ``s`` is
evaluated exactly, up to Gauss-Legendre quadrature on cells away from the
weak singularity at ``t = r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class TimeGrid:
    dt: float
    n_steps: int
    t0: float = 0.0

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise InvalidArgumentError("a time grid needs at least one step")
        if self.t0 != 0.0:
            raise InvalidArgumentError("time grids start at t = 0")

    @classmethod
    def from_horizon(cls, t_max: float, dt: float) -> "TimeGrid":
        n = int(round(t_max / dt))
        if n < 1 or abs(n * dt - t_max) > 1e-9 * max(t_max, 1.0):
            raise InvalidArgumentError(f"t_max={t_max} is not a multiple of dt={dt}")
        return cls(dt=dt, n_steps=n)

    @property
    def t_max(self) -> float:
        return self.dt * self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return self.dt * np.arange(self.n_steps + 1)

    def subsample(self, factor: int) -> "TimeGrid":
        if self.n_steps % factor:
            raise InvalidArgumentError("subsampling factor must divide n_steps")
        return TimeGrid(self.dt * factor, self.n_steps // factor)


@dataclass
class TimeSeries:
    grid: TimeGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.shape[0] != self.grid.n_steps + 1:
            raise InvalidArgumentError(
                f"{self.values.shape[0]} samples for a grid of {self.grid.n_steps + 1} nodes"
            )

    @classmethod
    def sample(cls, grid: TimeGrid, func: Callable[[np.ndarray], np.ndarray]) -> "TimeSeries":
        return cls(grid, np.asarray(func(grid.nodes), dtype=float))

    @property
    def t(self) -> np.ndarray:
        return self.grid.nodes


# {{{ product integration

def _gauss_points(m: np.ndarray) -> np.ndarray:
    # cell [m dt, (m+1) dt] sits m cell-widths from the singularity at 0
    return np.where(m < 8, 12, np.where(m < 64, 6, 3))


def hat_weights(kernel, kernel_int1, kernel_int2, dt: float, n_steps: int):
    """Convolution weights of a kernel against piecewise-linear hat functions.

    ``kernel(tau)`` is the (possibly weakly singular at 0) kernel,
    ``kernel_int1`` and ``kernel_int2`` its first and second antiderivatives
    vanishing at 0. Returns ``(w, w_first)`` such that

        int_0^{t_n} s(r) K(t_n - r) dr = s_0 * w_first[n] + sum_{j=1}^n s_j * w[n - j]

    for ``s`` piecewise linear on the grid.
    """
    up = np.empty(n_steps)
    down = np.empty(n_steps)

    k1, k2 = kernel_int1(np.array([dt])), kernel_int2(np.array([dt]))
    down[0] = k2[0] / dt
    up[0] = k1[0] - k2[0] / dt

    m = np.arange(1, n_steps)
    pts = _gauss_points(m)
    for n_pts in np.unique(pts):
        sel = m[pts == n_pts]
        if sel.size == 0:
            continue
        x, wq = np.polynomial.legendre.leggauss(n_pts)
        frac = 0.5 * (x + 1.0)
        tau = (sel[:, None] + frac[None, :]) * dt
        vals = kernel(tau.ravel()).reshape(tau.shape)
        wq = 0.5 * wq * dt
        up[sel] = (vals * (frac * wq)[None, :]).sum(axis=1)
        down[sel] = (vals * ((1.0 - frac) * wq)[None, :]).sum(axis=1)

    w = np.empty(n_steps)
    w[0] = down[0]
    w[1:] = up[:-1] + down[1:]
    w_first = np.zeros(n_steps + 1)
    w_first[1:] = up
    return w, w_first


def hat_convolve(values: np.ndarray, w: np.ndarray, w_first: np.ndarray) -> np.ndarray:
    """Apply :func:`hat_weights` to samples ``values`` (first axis is time)."""
    values = np.asarray(values, dtype=float)
    n = values.shape[0] - 1
    out = np.zeros(values.shape, dtype=float)
    tail = values[1:]
    flat = tail.reshape(n, -1)
    res = np.zeros((n, flat.shape[1]))
    for col in range(flat.shape[1]):
        s = flat[:, col]
        nz = np.flatnonzero(s)
        if nz.size == 0:
            continue
        lo, hi = nz[0], nz[-1] + 1
        conv = np.convolve(s[lo:hi], w[: n - lo])[: n - lo]
        res[lo:, col] = conv
    out[1:] = res.reshape(tail.shape)
    out += values[0] * w_first.reshape((-1,) + (1,) * (values.ndim - 1))
    return out

# }}}


def rl_integral(beta: float, h: TimeSeries) -> TimeSeries:
    """Riemann-Liouville integral of order ``beta`` in (0, 1).

    Product-trapezoidal rule: the piecewise-linear interpolant of ``h`` is
    integrated exactly against ``(t - r)**(beta - 1) / Gamma(beta)``, which is
    second-order accurate for smooth ``h``.
    """
    if not (0.0 < beta < 1.0):
        raise InvalidArgumentError(f"order must lie in (0, 1), got {beta}")
    g0, g1, g2 = gamma_fn(beta), gamma_fn(beta + 1.0), gamma_fn(beta + 2.0)
    w, w_first = hat_weights(
        lambda t: t ** (beta - 1.0) / g0,
        lambda t: t**beta / g1,
        lambda t: t ** (beta + 1.0) / g2,
        h.grid.dt,
        h.grid.n_steps,
    )
    return TimeSeries(h.grid, hat_convolve(h.values, w, w_first))


def l1_coefficients(alpha: float, n: int) -> np.ndarray:
    j = np.arange(n, dtype=float)
    # 0**0 would be 1 at alpha = 1, where the scheme must reduce to backward Euler
    lower = np.where(j > 0, j ** (1.0 - alpha), 0.0)
    return (j + 1.0) ** (1.0 - alpha) - lower


def caputo_l1(alpha: float, h: TimeSeries) -> TimeSeries:
    """L1 approximation of the Caputo derivative; the value at t=0 is set to 0."""
    if not (0.0 < alpha < 1.0):
        raise InvalidArgumentError(f"order must lie in (0, 1), got {alpha}")
    vals = h.values
    if vals.shape[0] < 2:
        raise InvalidArgumentError("the L1 scheme needs at least two samples")
    n = vals.shape[0] - 1
    b = l1_coefficients(alpha, n)
    incr = np.diff(vals, axis=0)
    scale = h.grid.dt ** (-alpha) / gamma_fn(2.0 - alpha)
    out = np.zeros_like(vals)
    flat = incr.reshape(n, -1)
    acc = np.zeros((n, flat.shape[1]))
    for col in range(flat.shape[1]):
        # D(t_k) = scale * sum_{j<k} b_j * incr[k-1-j]
        acc[:, col] = np.convolve(flat[:, col], b)[:n]
    out[1:] = scale * acc.reshape(incr.shape)
    return TimeSeries(h.grid, out)
