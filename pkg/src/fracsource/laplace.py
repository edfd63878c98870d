"""Laplace-domain analysis of boundary flux data.

The flux of a separated source has transform
``w_hat(p) = sigma_hat(p) * sum_n c_n / (lambda_n + p^alpha)`` with
``c_n = sum_k <rho^-1 f, phi_nk> d_nu phi_nk`` on the boundary. This module
evaluates that model, transforms sampled traces numerically, checks the
jump across the negative real axis, and fits the ``c_n`` back from samples
with the poles ``-lambda_n`` known.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from .elliptic import BoundarySubset, EigenSystem
from .errors import (
    AccuracyError,
    ConditioningError,
    ConsistencyError,
    DataInsufficiencyError,
    InvalidArgumentError,
)
from .fractional_calculus import TimeSeries
from .mittag_leffler import MLParams, principal_power


@dataclass(frozen=True)
class LaplaceSample:
    p: complex
    value: object  # complex scalar or per-node complex array
    tail_bound: float = 0.0


def samples_to_json(samples: Sequence[LaplaceSample]) -> str:
    rows = []
    for s in samples:
        val = np.atleast_1d(np.asarray(s.value, dtype=complex))
        rows.append({
            "re_p": float(np.real(s.p)), "im_p": float(np.imag(s.p)),
            "re_val": val.real.tolist(), "im_val": val.imag.tolist(),
            "tail_bound": float(s.tail_bound),
        })
    return json.dumps(rows, indent=1)


def samples_from_json(text: str) -> list:
    out = []
    for r in json.loads(text):
        val = np.asarray(r["re_val"]) + 1j * np.asarray(r["im_val"])
        out.append(LaplaceSample(complex(r["re_p"], r["im_p"]), val[0] if val.size == 1 else val, r["tail_bound"]))
    return out


# {{{ numerical transforms

def _hat_exp_weights(x: np.ndarray):
    """``int_0^1 e^{-x s} (1-s) ds`` and ``int_0^1 e^{-x s} s ds`` for complex ``x``."""
    x = np.asarray(x, dtype=complex)
    a = np.empty_like(x)
    b = np.empty_like(x)
    small = np.abs(x) < 0.1
    xs = x[small]
    k = np.arange(10)
    fact = np.array([math.factorial(int(i)) for i in k], dtype=float)
    pw = (-xs[:, None]) ** k[None, :] / fact[None, :]
    a[small] = (pw / ((k + 1.0) * (k + 2.0))).sum(axis=1)
    b[small] = (pw / (k + 2.0)).sum(axis=1)
    xl = x[~small]
    em = np.exp(-xl)
    a[~small] = (xl - 1.0 + em) / xl**2
    b[~small] = (1.0 - em - xl * em) / xl**2
    return a, b


def _pl_transform(values: np.ndarray, dt: float, p: complex) -> np.ndarray:
    """Exact transform of the piecewise-linear interpolant over the sample window."""
    n = values.shape[0] - 1
    a, b = _hat_exp_weights(np.array([p * dt]))
    t = dt * np.arange(n + 1)
    ex = np.exp(-p * t)
    w = np.zeros(n + 1, dtype=complex)
    w[:-1] += a[0] * ex[:-1]
    w[1:] += b[0] * ex[:-1]
    return dt * (w @ values.reshape(n + 1, -1))


def _graded_transform(func: Callable, p: complex, t_max: float, grading: float, n_panels: int = 48,
                      order: int = 20):
    """``int_0^t_max e^{-pt} func(t) dt`` with ``t = s^(1/grading)``.

    The substitution absorbs an endpoint factor ``t^(grading-1)``. Panels in
    ``s`` are geometrically refined towards 0. Returns value and a
    two-order error estimate.
    """
    s_max = t_max**grading
    inner = s_max * 2.0 ** -np.arange(30, 0, -1)
    edges = np.concatenate([[0.0], inner, np.linspace(0.5 * s_max, s_max, n_panels + 1)])
    edges = np.unique(edges)

    def rule(npts):
        x, wq = np.polynomial.legendre.leggauss(npts)
        lo, hi = edges[:-1, None], edges[1:, None]
        s = 0.5 * (hi - lo) * (x[None, :] + 1.0) + lo
        ws = 0.5 * (hi - lo) * wq[None, :]
        s = s.ravel()
        t = s ** (1.0 / grading)
        jac = t / (grading * s)  # dt/ds
        vals = np.asarray(func(t), dtype=complex) * np.exp(-p * t) * jac
        return np.sum(vals * ws.ravel())

    hi = rule(order)
    lo = rule(order // 2 + 2)
    return hi, abs(hi - lo)


def laplace_transform(
    trace,
    p: complex,
    tol: Optional[float] = None,
    richardson: bool = False,
    t_max: Optional[float] = None,
    singular_power: float = 1.0,
) -> LaplaceSample:
    """Numerical Laplace transform ``int_0^inf e^{-pt} trace(t) dt``.

    ``trace`` is a :class:`TimeSeries`, a ``FluxTrace`` (one value per node),
    or a callable. Sampled data are integrated exactly as piecewise-linear
    functions (optionally Richardson-extrapolated against the 2h
    subsample). Callables are integrated on ``(0, t_max)`` after the
    substitution ``t = s^(1/singular_power)``, which removes an endpoint
    factor ``t^(singular_power - 1)``.

    Outside the window the trace is bounded by its maximum over the window,
    so the tail is at most ``max|trace| e^{-Re p t_max} / Re p``. Traces whose
    last sample is exactly zero and that are identically zero on the final
    10% of the window count as compactly supported: the tail is 0 and any
    complex ``p`` is allowed.
    """
    p = complex(p)
    if callable(trace) and not isinstance(trace, TimeSeries) and not hasattr(trace, "values"):
        if t_max is None:
            raise InvalidArgumentError("t_max is required for callable traces")
        if p.real <= 0:
            raise InvalidArgumentError("callable traces need Re p > 0")
        val, err = _graded_transform(trace, p, t_max, singular_power)
        edge = abs(complex(np.asarray(trace(np.array([t_max])))[0]))
        tail = edge * math.exp(-p.real * t_max) / p.real + err
        return _checked(LaplaceSample(p, val, tail), tol)

    values = np.asarray(trace.values, dtype=float)
    grid = trace.grid
    n = values.shape[0] - 1
    flat = values.reshape(n + 1, -1)
    quiet = max(1, n // 10)
    compact = bool(np.all(flat[-quiet:] == 0.0))
    if not compact and p.real <= 0:
        raise InvalidArgumentError("Re p must be positive for traces that are not compactly supported")
    val = _pl_transform(flat, grid.dt, p)
    if richardson:
        if n % 2:
            raise InvalidArgumentError("Richardson extrapolation needs an even number of steps")
        coarse = _pl_transform(flat[::2], 2.0 * grid.dt, p)
        val = (4.0 * val - coarse) / 3.0
    if compact:
        tail = 0.0
    else:
        tail = float(np.abs(flat).max()) * math.exp(-p.real * grid.t_max) / p.real
    out = val.reshape(values.shape[1:]) if values.ndim > 1 else complex(val[0])
    return _checked(LaplaceSample(p, out, tail), tol)


def _checked(sample: LaplaceSample, tol: Optional[float]) -> LaplaceSample:
    if tol is not None and sample.tail_bound > tol:
        raise AccuracyError(
            f"Laplace tail bound {sample.tail_bound:.3e} at p={sample.p} exceeds tolerance {tol:.3e}",
            bound=sample.tail_bound,
        )
    return sample

# }}}


# {{{ modal transfer function

@dataclass(frozen=True, eq=False)
class ModalCoefficients:
    """``values[n, x] = c_n(x)`` for the distinct eigenvalues ``lambdas[n]``."""

    lambdas: np.ndarray
    values: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        lam = np.atleast_1d(np.asarray(self.lambdas, dtype=float))
        vals = np.asarray(self.values)
        if vals.ndim == 1:
            vals = vals[:, None]
        object.__setattr__(self, "lambdas", lam)
        object.__setattr__(self, "values", vals)
        if vals.shape[0] != lam.size:
            raise InvalidArgumentError("one coefficient row per eigenvalue required")
        if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(lam))):
            raise InvalidArgumentError("modal coefficients must be finite")

    @property
    def n_nodes(self) -> int:
        return self.values.shape[1]

    def rational(self, z) -> np.ndarray:
        """``sum_n c_n / (lambda_n + z)`` per node."""
        z = np.asarray(z, dtype=complex)
        terms = self.values[None] / (self.lambdas[None, :, None] + z.reshape(-1, 1, 1))
        return terms.sum(axis=1).reshape(z.shape + (self.n_nodes,))


def modal_transfer(eig: EigenSystem, f: np.ndarray, boundary: BoundarySubset) -> ModalCoefficients:
    """Ground-truth ``c_n(x)`` from inner products and eigenfunction traces."""
    f = np.asarray(f, dtype=float)
    if f.shape[-1] != eig.domain.n_nodes:
        raise InvalidArgumentError("source does not match the eigensystem grid")
    d = eig.source_coefficients(f)
    tr = eig.traces[:, eig.trace_positions(boundary)]
    vals = np.stack([d[g] @ tr[g] for g in eig.groups])
    return ModalCoefficients(eig.lambdas.copy(), vals)


def transfer_eval(modal: ModalCoefficients, sigma_hat: complex, p: complex, alpha: float) -> LaplaceSample:
    """``sigma_hat * sum_n c_n / (lambda_n + p^alpha)`` on the principal branch."""
    MLParams(alpha)
    z = principal_power(p, alpha)
    if sigma_hat == 0:
        return LaplaceSample(complex(p), np.zeros(modal.n_nodes, dtype=complex))
    return LaplaceSample(complex(p), sigma_hat * modal.rational(z))


def _richardson_limit(fn: Callable[[float], np.ndarray], eta0: float, levels: int):
    """Extrapolate ``fn(eta)`` to ``eta -> 0`` assuming a power series in ``eta``."""
    table = [np.asarray(fn(eta0 * 2.0**-k)) for k in range(levels)]
    for order in range(1, levels):
        table = [(2.0**order * table[k + 1] - table[k]) / (2.0**order - 1.0) for k in range(len(table) - 1)]
    return table[0]


def branch_jump(
    modal: ModalCoefficients,
    sigma_hat_at: Callable[[complex], complex],
    R: float,
    alpha: float,
    rtol: float = 1e-8,
    eta0: float = 1e-2,
    levels: int = 6,
):
    """Jump ``w_hat(R e^{i pi-}) - w_hat(R e^{-i pi+})`` across the negative axis.

    Computed as a one-sided limit of :func:`transfer_eval` (Richardson in the
    angle gap) and in closed form; disagreement raises ConsistencyError.
    Returns the closed-form value and the limit value.
    """
    if not R > 0:
        raise InvalidArgumentError("R must be positive")
    if not 0.0 < alpha < 1.0:
        raise InvalidArgumentError("the jump needs 0 < alpha < 1")

    def gap(eta):
        up = R * np.exp(1j * (math.pi - eta))
        down = R * np.exp(-1j * (math.pi - eta))
        return (transfer_eval(modal, sigma_hat_at(up), up, alpha).value
                - transfer_eval(modal, sigma_hat_at(down), down, alpha).value)

    limit = _richardson_limit(gap, eta0, levels)
    ra = R**alpha
    lam = modal.lambdas[:, None]
    factor = -2j * ra * math.sin(alpha * math.pi)
    denom = (lam + ra * np.exp(1j * alpha * math.pi)) * (lam + ra * np.exp(-1j * alpha * math.pi))
    closed = sigma_hat_at(complex(-R)) * np.sum(modal.values * factor / denom, axis=0)
    scale = max(float(np.abs(closed).max()), float(np.abs(limit).max()))
    err = float(np.abs(closed - limit).max())
    if err > rtol * scale and err > 1e-300:
        raise ConsistencyError(f"branch jump routes disagree: |diff| = {err:.3e}, scale {scale:.3e}")
    return closed, limit


def residue_extract(
    z: np.ndarray,
    values: np.ndarray,
    lambdas: np.ndarray,
    n_active: int,
    reg: float = 0.0,
    max_cond: float = 1e10,
) -> ModalCoefficients:
    """Fit ``G(z) ~ sum_{n < n_active} c_n / (lambda_n + z)`` with real ``c_n``.

    ``values`` has one row per abscissa (and one column per node). The
    system stacks real and imaginary parts; columns are normalized before
    the condition number check. ``reg`` adds a Tikhonov term relative to
    the largest singular value.
    """
    z = np.asarray(z, dtype=complex).ravel()
    vals = np.asarray(values, dtype=complex).reshape(z.size, -1)
    lambdas = np.asarray(lambdas, dtype=float)[:n_active]
    if lambdas.size < n_active:
        raise InvalidArgumentError(f"only {lambdas.size} eigenvalues for n_active={n_active}")
    if z.size < 2 * n_active:
        raise DataInsufficiencyError(f"{z.size} samples for {n_active} modes; need at least {2 * n_active}")
    if np.min(np.abs(z[:, None] + lambdas[None, :])) < 1e-12 * (1.0 + lambdas.max()):
        raise InvalidArgumentError("sample abscissa coincides with a pole")
    cols = 1.0 / (lambdas[None, :] + z[:, None])
    real_rows = np.any(z.imag != 0)
    mat = np.vstack([cols.real, cols.imag]) if real_rows else cols.real
    rhs = np.vstack([vals.real, vals.imag]) if real_rows else vals.real
    norms = np.linalg.norm(mat, axis=0)
    scaled = mat / norms
    sv = np.linalg.svd(scaled, compute_uv=False)
    cond = float(sv[0] / sv[-1]) if sv[-1] > 0 else math.inf
    if reg > 0:
        mu = reg * sv[0]
        aug = np.vstack([scaled, mu * np.eye(n_active)])
        rhs_aug = np.vstack([rhs, np.zeros((n_active, rhs.shape[1]))])
        coef, *_ = np.linalg.lstsq(aug, rhs_aug, rcond=None)
    else:
        if cond > max_cond:
            raise ConditioningError(
                f"residue fit condition number {cond:.2e} exceeds {max_cond:.0e}; "
                "add samples or spread the abscissae",
                cond,
            )
        coef, *_ = np.linalg.lstsq(scaled, rhs, rcond=None)
    coef = coef / norms[:, None]
    resid = float(np.linalg.norm(mat @ coef - rhs) / max(np.linalg.norm(rhs), 1e-300))
    return ModalCoefficients(lambdas, coef, {"condition": cond, "residual": resid, "reg": reg})


def residue_limit(G: Callable[[complex], np.ndarray], lam: float, direction: complex = 1.0, h0: float = 0.1,
                  levels: int = 8):
    """``lim_{z -> -lam} (z + lam) G(z)`` along a ray, by Richardson extrapolation."""
    return _richardson_limit(lambda h: h * direction * np.asarray(G(-lam + h * direction)), h0, levels)

# }}}


def save_samples(path, samples: Sequence[LaplaceSample]) -> None:
    Path(path).write_text(samples_to_json(samples) + "\n")
