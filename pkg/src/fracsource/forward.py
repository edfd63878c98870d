"""Forward problem: ``rho d_t^alpha v + A v = sigma(t) f(x)``, ``v(., 0) = 0``, Dirichlet.

Two independent solvers are provided. :func:`spectral_solve` evaluates the
modal Duhamel formula with the Mittag-Leffler impulse response and product
integration that is exact for piecewise-linear ``sigma``. :func:`l1_solve`
marches the implicit L1 scheme on the same spatial operator, so the two only
differ by time-discretization error.

``sigma`` is always extended by zero beyond ``T``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.special import gamma as gamma_fn

from . import mittag_leffler as mlf
from .elliptic import BoundarySubset, CoefficientField, DiscreteOperator, EigenSystem, conormal_trace
from .errors import InvalidArgumentError, NumericError, PreconditionError, TruncationError
from .fractional_calculus import TimeGrid, TimeSeries, hat_convolve, hat_weights, l1_coefficients

logger = logging.getLogger(__name__)


# {{{ time profiles

def hat(t0: float, t1: float, peak: float = 1.0) -> Callable:
    """Triangle supported on ``[t0, t1]`` with its apex at the midpoint."""
    mid, half = 0.5 * (t0 + t1), 0.5 * (t1 - t0)
    return lambda t: peak * np.clip(1.0 - np.abs(np.asarray(t, dtype=float) - mid) / half, 0.0, None)


def bump(t0: float, t1: float, peak: float = 1.0) -> Callable:
    """Smooth compactly supported bump ``exp(1 - 1/(1 - s^2))`` on ``[t0, t1]``."""
    mid, half = 0.5 * (t0 + t1), 0.5 * (t1 - t0)

    def fn(t):
        s = (np.asarray(t, dtype=float) - mid) / half
        out = np.zeros_like(s)
        inside = np.abs(s) < 1.0
        out[inside] = peak * np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
        return out

    return fn


def two_level(t0: float, t1: float, t2: float, low: float = 1.0, high: float = 2.0) -> Callable:
    """Piecewise constant: ``low`` on ``[t0, t1)``, ``high`` on ``[t1, t2)``, zero elsewhere."""

    def fn(t):
        t = np.asarray(t, dtype=float)
        return np.where((t >= t0) & (t < t1), low, 0.0) + np.where((t >= t1) & (t < t2), high, 0.0)

    return fn


def shifted(profile: Callable, delay: float) -> Callable:
    return lambda t: profile(np.asarray(t, dtype=float) - delay)


PROFILES = {"hat": hat, "bump": bump, "two-level": two_level}


def named_profile(name: str, *params: float) -> Callable:
    try:
        return PROFILES[name](*params)
    except KeyError:
        raise InvalidArgumentError(f"unknown time profile {name!r}; known: {sorted(PROFILES)}") from None

# }}}


@dataclass
class SourceSpec:
    """Separated source ``sigma(t) f(x)``; ``sigma`` vanishes on ``(T - delta, T)``.

    ``sigma`` is a callable of time or a :class:`TimeSeries` (interpolated
    linearly). ``f`` lives on the full spatial grid.
    """

    f: np.ndarray
    sigma: object
    T: float
    delta: float
    vanish_tol: float = 1e-12

    def __post_init__(self):
        self.f = np.asarray(self.f, dtype=float)
        if not 0.0 < self.delta < self.T:
            raise InvalidArgumentError(f"need 0 < delta < T, got delta={self.delta}, T={self.T}")
        probe = np.linspace(self.T - self.delta, self.T, 257)[1:-1]
        tail = np.abs(self._raw(probe))
        scale = max(1.0, float(np.abs(self._raw(np.linspace(0.0, self.T, 1025))).max()))
        if tail.max() > self.vanish_tol * scale:
            raise PreconditionError(
                f"sigma does not vanish on (T - delta, T): max |sigma| = {tail.max():.3e} there"
            )

    def _raw(self, t: np.ndarray) -> np.ndarray:
        if isinstance(self.sigma, TimeSeries):
            return np.interp(t, self.sigma.t, self.sigma.values, right=0.0)
        return np.asarray(self.sigma(t), dtype=float) * np.ones_like(t)

    def sigma_at(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        return np.where((t >= 0.0) & (t <= self.T), self._raw(t), 0.0)

    def sampled(self, grid: TimeGrid) -> TimeSeries:
        return TimeSeries(grid, self.sigma_at(grid.nodes))

    def scaled(self, factor: float) -> "SourceSpec":
        return SourceSpec(factor * self.f, self.sigma, self.T, self.delta, self.vanish_tol)


@dataclass(eq=False)
class FieldTrajectory:
    """Snapshots ``v(., t_j)`` on the full grid.

    Spectral trajectories keep the modal amplitudes and materialize snapshots
    on first access.
    """

    grid: TimeGrid
    domain: object
    solver: str
    _snapshots: Optional[np.ndarray] = field(default=None, repr=False)
    amplitudes: Optional[np.ndarray] = field(default=None, repr=False)
    eig: Optional[EigenSystem] = field(default=None, repr=False)
    meta: dict = field(default_factory=dict)

    @property
    def snapshots(self) -> np.ndarray:
        if self._snapshots is None:
            self._snapshots = self.amplitudes @ self.eig.functions
        return self._snapshots

    def at_final(self) -> np.ndarray:
        if self._snapshots is None and self.amplitudes is not None:
            return self.amplitudes[-1] @ self.eig.functions
        return self.snapshots[-1]


@dataclass(eq=False)
class FluxTrace:
    """Conormal flux ``w(x, t_j)``; ``values`` has shape (n_times, n_boundary_nodes)."""

    boundary: BoundarySubset
    grid: TimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim == 1:
            self.values = self.values[:, None]
        if self.values.shape != (self.grid.n_steps + 1, len(self.boundary)):
            raise InvalidArgumentError(
                f"flux shape {self.values.shape} does not match grid/boundary "
                f"({self.grid.n_steps + 1}, {len(self.boundary)})"
            )
        if not np.all(np.isfinite(self.values)):
            raise NumericError("flux trace contains non-finite values")

    def at_node(self, position: int = 0) -> TimeSeries:
        return TimeSeries(self.grid, self.values[:, position])

    def window_max(self, t_lo: float, t_hi: float) -> float:
        t = self.grid.nodes
        sel = (t > t_lo) & (t < t_hi + 1e-12 * t_hi)
        return float(np.abs(self.values[sel]).max()) if np.any(sel) else 0.0


# {{{ solvers

def modal_loads(eig: EigenSystem, src: SourceSpec, tail_tol: Optional[float]):
    """Modal coefficients ``<rho^-1 f, phi_i>`` and the relative missed energy."""
    d = eig.source_coefficients(src.f)
    g = src.f / eig.coeffs.rho
    total = float(np.sum(g * g * eig.coeffs.rho * eig.domain.quadrature_weights))
    missed = math.sqrt(max(total - float(np.sum(d**2)), 0.0))
    rel = missed / math.sqrt(total) if total > 0 else 0.0
    if tail_tol is not None and rel > tail_tol:
        raise TruncationError(
            f"{eig.n_modes} modes miss {rel:.2e} of the source energy (tolerance {tail_tol:g})", bound=rel
        )
    return d, rel


def modal_weights(alpha: float, lam: float, grid: TimeGrid):
    """Product-integration weights of the impulse response for one eigenvalue."""
    return hat_weights(
        lambda t: mlf.solution_kernel(alpha, lam, t),
        lambda t: mlf.kernel_integrals(alpha, lam, t)[0],
        lambda t: mlf.kernel_integrals(alpha, lam, t)[1],
        grid.dt,
        grid.n_steps,
    )


def modal_response(alpha: float, lambdas: np.ndarray, sigma: np.ndarray, grid: TimeGrid, workers: int = 1):
    """``int_0^t sigma(s) K_lambda(t - s) ds`` on the grid, one column per eigenvalue."""
    lambdas = np.atleast_1d(lambdas)

    def one(lam):
        w, w_first = modal_weights(alpha, float(lam), grid)
        return hat_convolve(sigma, w, w_first)

    if workers > 1 and lambdas.size > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            cols = list(pool.map(one, lambdas))
    else:
        cols = [one(lam) for lam in lambdas]
    return np.stack(cols, axis=1)


def spectral_solve(
    eig: EigenSystem,
    alpha: float,
    src: SourceSpec,
    grid: TimeGrid,
    tail_tol: Optional[float] = 1e-2,
    workers: int = 1,
    skip_tol: float = 1e-14,
) -> FieldTrajectory:
    """Modal Duhamel solution; modes with ``|d_i| <= skip_tol * max|d|`` are skipped."""
    mlf.MLParams(alpha, alpha)
    d, tail = modal_loads(eig, src, tail_tol)
    sigma = src.sampled(grid).values
    amps = np.zeros((grid.n_steps + 1, eig.n_modes))
    dmax = np.abs(d).max() if d.size else 0.0
    active = np.flatnonzero(np.abs(d) > skip_tol * dmax) if dmax > 0 and np.any(sigma) else np.array([], int)
    if active.size:
        # modes sharing an eigenvalue share the response
        uniq, inv = np.unique(eig.values[active], return_inverse=True)
        resp = modal_response(alpha, uniq, sigma, grid, workers)
        amps[:, active] = resp[:, inv] * d[active]
    meta = {"solver": "spectral", "alpha": alpha, "modes": int(eig.n_modes), "active_modes": int(active.size),
            "spectral_tail": tail}
    return FieldTrajectory(grid, eig.domain, "spectral", amplitudes=amps, eig=eig, meta=meta)


def l1_solve(op: DiscreteOperator, alpha: float, src: SourceSpec, grid: TimeGrid) -> FieldTrajectory:
    """Implicit L1 time stepping; unconditionally stable, reduces to backward Euler at alpha=1."""
    mlf.MLParams(alpha, alpha)
    n = grid.n_steps
    sigma = src.sampled(grid).values
    f_int = op.to_interior(src.f)
    rho = op.rho_interior
    c = grid.dt ** (-alpha) / gamma_fn(2.0 - alpha)
    b = l1_coefficients(alpha, n)
    u = np.zeros((n + 1, op.n_interior))
    if np.any(f_int) and np.any(sigma):
        mat = (op.stiffness + sp.diags(c * b[0] * rho)).tocsc()
        try:
            lu = spla.splu(mat)
        except RuntimeError as exc:
            raise NumericError(f"L1 system factorization failed: {exc}") from exc
        incr = np.zeros((n, op.n_interior))  # incr[k] = u^{k+1} - u^k
        for k in range(1, n + 1):
            # sum_{j=1}^{k-1} b_j (u^{k-j} - u^{k-j-1})
            hist = b[1:k] @ incr[k - 2 :: -1][: k - 1] if k > 1 else 0.0
            rhs = sigma[k] * f_int + c * rho * (b[0] * u[k - 1] - hist)
            u[k] = lu.solve(rhs)
            incr[k - 1] = u[k] - u[k - 1]
        if not np.all(np.isfinite(u)):
            raise NumericError("L1 solve produced non-finite values")
    meta = {"solver": "l1", "alpha": alpha}
    return FieldTrajectory(grid, op.domain, "l1", _snapshots=op.to_full(u), meta=meta)


def flux_trace(traj: FieldTrajectory, coeffs: CoefficientField, boundary: BoundarySubset,
               modal: Optional[bool] = None) -> FluxTrace:
    """Conormal flux at ``boundary`` for every snapshot.

    Spectral trajectories use the precomputed eigenfunction traces unless
    ``modal=False``; both paths evaluate the same linear functional.
    """
    if modal is None:
        modal = traj.amplitudes is not None
    if modal:
        if traj.amplitudes is None:
            raise InvalidArgumentError("modal flux needs a spectral trajectory")
        pos = traj.eig.trace_positions(boundary)
        vals = traj.amplitudes @ traj.eig.traces[:, pos]
    else:
        snaps = traj.snapshots
        edge = np.ones(snaps.shape[1], dtype=bool)
        edge[traj.domain.interior] = False
        if np.any(snaps[:, edge] != 0):
            raise PreconditionError("trajectory violates the Dirichlet condition")
        vals = np.empty((snaps.shape[0], len(boundary)))
        for lo in range(0, snaps.shape[0], 512):
            vals[lo : lo + 512] = conormal_trace(snaps[lo : lo + 512], coeffs, boundary)
    return FluxTrace(boundary, traj.grid, vals)

# }}}


# {{{ serialization

def write_flux(path, trace: FluxTrace, meta: Optional[dict] = None) -> None:
    """CSV with columns ``t, node, x[, y], value`` plus a ``.json`` metadata sidecar."""
    path = Path(path)
    dim = trace.boundary.domain.dimension
    pts = trace.boundary.points
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "node"] + ["x", "y"][:dim] + ["value"])
        for j, t in enumerate(trace.grid.nodes):
            for b, node in enumerate(trace.boundary.nodes):
                w.writerow([repr(float(t)), int(node)] + [repr(float(c)) for c in pts[b]]
                           + [repr(float(trace.values[j, b]))])
    header = {"dt": trace.grid.dt, "n_steps": trace.grid.n_steps, "nodes": [int(n) for n in trace.boundary.nodes]}
    header.update(meta or {})
    path.with_suffix(".json").write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")


def read_flux(path, boundary: BoundarySubset) -> FluxTrace:
    path = Path(path)
    with path.open(newline="") as fh:
        rows = list(csv.DictReader(fh))
    times = sorted({float(r["t"]) for r in rows})
    nodes = [int(n) for n in boundary.nodes]
    col = {n: i for i, n in enumerate(nodes)}
    tindex = {t: i for i, t in enumerate(times)}
    vals = np.full((len(times), len(nodes)), np.nan)
    for r in rows:
        node = int(r["node"])
        if node in col:
            vals[tindex[float(r["t"])], col[node]] = float(r["value"])
    if np.isnan(vals).any():
        raise InvalidArgumentError(f"{path}: flux file does not cover the requested boundary nodes")
    dt = times[1] - times[0]
    return FluxTrace(boundary, TimeGrid(dt, len(times) - 1), vals)

# }}}
