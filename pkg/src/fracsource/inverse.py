"""Source reconstruction from boundary flux.

* :func:`reconstruct_space_source` recovers the spatial factor ``f`` from
  flux on a boundary patch when ``sigma`` is known, via Laplace samples and a
  known-pole residue fit.
* :func:`reconstruct_time_source` recovers ``sigma`` from the flux at one
  boundary point when ``f`` is known (first-kind Volterra deconvolution).
* :func:`joint_factor_test` checks whether two time profiles differ by a
  constant factor.
* :func:`compute_gset` and :func:`hopf_certificate` decide which boundary
  points carry information about ``sigma``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np
import scipy.linalg

from . import elliptic
from .elliptic import BoundarySubset, DiscreteOperator, EigenSystem
from .errors import (
    DataInsufficiencyError,
    InvalidArgumentError,
    PreconditionError,
    RegularizationError,
    UnidentifiableError,
)
from .forward import FluxTrace, modal_weights
from .fractional_calculus import TimeGrid, TimeSeries
from .laplace import ModalCoefficients, laplace_transform, modal_transfer, residue_extract

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Regularization:
    """``param`` is relative: Tikhonov weight = param * scale of the operator.

    With ``noise_level`` set, the weight is chosen by the discrepancy
    principle with safety factor ``tau`` (time problem only).
    """

    param: Optional[float] = None
    noise_level: Optional[float] = None
    tau: float = 1.1

    def __post_init__(self):
        if self.param is not None and not self.param >= 0:
            raise InvalidArgumentError("regularization parameter must be non-negative")
        if self.noise_level is not None and not self.noise_level >= 0:
            raise InvalidArgumentError("noise level must be non-negative")


@dataclass(eq=False)
class ReconstructionResult:
    problem: str
    recovered: object
    reg_param: float = 0.0
    weights: Optional[np.ndarray] = None
    modal: Optional[ModalCoefficients] = None
    diagnostics: dict = field(default_factory=dict)
    errors: Optional[dict] = None

    def to_json(self) -> str:
        rec = self.recovered
        if isinstance(rec, TimeSeries):
            rec = {"dt": rec.grid.dt, "values": rec.values.tolist()}
        elif isinstance(rec, np.ndarray):
            rec = rec.tolist()
        elif isinstance(rec, complex):
            rec = [rec.real, rec.imag]
        out = {"problem": self.problem, "recovered": rec, "reg_param": self.reg_param,
               "diagnostics": _plain(self.diagnostics)}
        if self.weights is not None:
            out["weights"] = np.asarray(self.weights).tolist()
        if self.errors is not None:
            out["truth_comparison"] = _plain(self.errors)
        return json.dumps(out, indent=2, sort_keys=True)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


# {{{ space part

def sample_abscissae(alpha: float, z_lo: float, z_hi: float, n_real: int = 24, n_complex: int = 12,
                     angle: float = math.pi / 4) -> np.ndarray:
    """Real ``p`` with ``p^alpha`` log-spaced in ``[z_lo, z_hi]`` plus a conjugate pair family at ``arg p = +-angle``."""
    if not 0 < z_lo < z_hi:
        raise InvalidArgumentError("need 0 < z_lo < z_hi")
    real = np.logspace(math.log10(z_lo), math.log10(z_hi), n_real) ** (1.0 / alpha)
    mod = np.logspace(math.log10(z_lo), math.log10(z_hi), n_complex) ** (1.0 / alpha)
    cplx = np.concatenate([mod * np.exp(1j * angle), mod * np.exp(-1j * angle)])
    return np.concatenate([real.astype(complex), cplx])


def reconstruct_space_source(
    flux: FluxTrace,
    sigma: TimeSeries,
    eig: EigenSystem,
    alpha: float,
    n_active: int,
    reg: Regularization = Regularization(),
    sigma_floor: float = 1e-8,
    tail_tol: float = 1e-10,
    max_p_dt: float = 0.1,
    truth: Optional[np.ndarray] = None,
) -> ReconstructionResult:
    """Recover ``f`` from flux on ``flux.boundary`` given the time profile.

    Laplace samples of the flux are divided by those of ``sigma`` and fitted
    by ``sum_n c_n / (lambda_n + p^alpha)`` over the first ``n_active``
    distinct eigenvalues; the mode weights then follow from the eigenfunction
    traces on the patch. ``reg.param`` switches on a Tikhonov term in the fit.
    """
    if n_active < 1 or n_active > eig.lambdas.size:
        raise InvalidArgumentError(f"n_active must lie in [1, {eig.lambdas.size}]")
    if not np.any(sigma.values):
        raise PreconditionError("time profile is identically zero")
    lambdas = eig.lambdas
    t_window = flux.grid.t_max
    p_lo = 30.0 / t_window
    z_lo = max(lambdas[0] / 10.0, p_lo**alpha)
    z_hi = max(10.0 * lambdas[n_active - 1], 2.0 * z_lo)
    ps = sample_abscissae(alpha, z_lo, z_hi)
    ps = ps[(np.abs(ps) * flux.grid.dt <= max_p_dt) & (ps.real >= p_lo * (1.0 - 1e-12))]

    sig_hat = np.array([laplace_transform(sigma, p).value for p in ps])
    keep = np.abs(sig_hat) >= sigma_floor * np.abs(sig_hat).max() if ps.size else np.zeros(0, bool)
    ps, sig_hat = ps[keep], sig_hat[keep]
    w_hat = np.empty((ps.size, len(flux.boundary)), dtype=complex)
    keep = np.ones(ps.size, dtype=bool)
    for j, p in enumerate(ps):
        sample = laplace_transform(flux, p, richardson=flux.grid.n_steps % 2 == 0)
        w_hat[j] = sample.value
        keep[j] = sample.tail_bound <= tail_tol * np.abs(sample.value).max()
    ps, sig_hat, w_hat = ps[keep], sig_hat[keep], w_hat[keep]
    if ps.size < 2 * n_active:
        raise DataInsufficiencyError(
            f"only {ps.size} usable abscissae (|sigma_hat| above floor, small transform tail); need {2 * n_active}"
        )
    z = ps**alpha
    fitted = residue_extract(z, w_hat / sig_hat[:, None], lambdas, n_active, reg=reg.param or 0.0)

    pos = eig.trace_positions(flux.boundary)
    traces = eig.traces[:, pos]
    weights = np.zeros(eig.n_modes)
    scale = np.abs(traces).max()
    for n in range(n_active):
        grp = eig.groups[n]
        tr = traces[grp]  # (m_n, |Gamma|)
        if len(flux.boundary) < len(grp) or np.linalg.norm(tr) <= 1e-8 * scale:
            raise UnidentifiableError(f"mode {n + 1} has (numerically) zero conormal trace on the patch")
        sol, *_ = np.linalg.lstsq(tr.T, fitted.values[n], rcond=None)
        weights[grp] = sol
    f_hat = eig.coeffs.rho * eig.synthesize(weights)
    diag = dict(fitted.diagnostics)
    diag.update({"n_samples": int(ps.size), "z_range": [float(z.real.min()), float(np.abs(z).max())]})
    errors = None
    if truth is not None and np.any(truth):
        true_w = eig.source_coefficients(truth)
        sel = np.concatenate([eig.groups[n] for n in range(n_active)])
        true_modal = modal_transfer(eig, truth, flux.boundary)
        errors = {
            "weights_true": true_w[sel],
            "weights_rel_error": float(np.linalg.norm(weights[sel] - true_w[sel]) / np.linalg.norm(true_w[sel])),
            "per_mode_abs_error": np.abs(weights[sel] - true_w[sel]),
            "modal_rel_error": float(np.abs(fitted.values - true_modal.values[:n_active]).max()
                                     / np.abs(true_modal.values[:n_active]).max()),
        }
    return ReconstructionResult("IP1", f_hat, float(reg.param or 0.0), weights, fitted, diag, errors)

# }}}


# {{{ time part

def point_kernel_weights(eig: EigenSystem, f: np.ndarray, alpha: float, x0: BoundarySubset, grid: TimeGrid):
    """Product-integration weights of ``g(t) = d_nu [S(t) rho^-1 f](x0)``."""
    modal = modal_transfer(eig, f, x0)
    c = modal.values[:, 0]
    w = np.zeros(grid.n_steps)
    w_first = np.zeros(grid.n_steps + 1)
    cmax = np.abs(c).max() if c.size else 0.0
    for n in np.flatnonzero(np.abs(c) > 1e-14 * cmax):
        wn, fn = modal_weights(alpha, float(modal.lambdas[n]), grid)
        w += c[n] * wn
        w_first += c[n] * fn
    return w, w_first, c


def convolution_matrix(w: np.ndarray, w_first: np.ndarray) -> np.ndarray:
    """Rows ``n = 0..N`` map samples ``sigma_0..sigma_N`` to ``int_0^{t_n} sigma g``."""
    n = w.size
    mat = np.zeros((n + 1, n + 1))
    mat[1:, 1:] = scipy.linalg.toeplitz(w, np.zeros(n))
    mat[:, 0] = w_first
    return mat


def _tikhonov(G, L, h, mu):
    lhs = G.T @ G + mu * (L.T @ L)
    return scipy.linalg.solve(lhs, G.T @ h, assume_a="sym")


def reconstruct_time_source(
    point_flux: TimeSeries,
    f: np.ndarray,
    eig: EigenSystem,
    alpha: float,
    x0: BoundarySubset,
    reg: Regularization = Regularization(),
    T: Optional[float] = None,
    delta: Optional[float] = None,
    zero_tol: float = 1e-10,
    truth: Optional[TimeSeries] = None,
) -> ReconstructionResult:
    """Tikhonov deconvolution of ``h = sigma * g`` at one boundary point.

    The penalty is the discrete first derivative of ``sigma``. With
    ``reg.noise_level`` (noise std relative to ``max|h|``) the weight follows
    the discrepancy principle ``||G s - h|| = tau * noise_norm``, otherwise it
    is ``reg.param`` (default 1e-6) times ``||G||^2``. When ``T`` and
    ``delta`` are given, ``sigma`` is fixed to zero on ``[T - delta, inf)``.
    """
    if len(x0) != 1:
        raise InvalidArgumentError("the time problem uses a single boundary point")
    grid = point_flux.grid
    h = point_flux.values
    w, w_first, c = point_kernel_weights(eig, f, alpha, x0, grid)
    f_norm = math.sqrt(float(elliptic.weighted_inner(f / eig.coeffs.rho, f / eig.coeffs.rho, eig.coeffs, eig.domain)))
    if f_norm == 0 or np.abs(c).max() <= zero_tol * f_norm:
        raise UnidentifiableError("flux kernel at the measurement point vanishes; pick a point in the G-set")
    G_full = convolution_matrix(w, w_first)
    t = grid.nodes
    free = np.ones(t.size, dtype=bool)
    if T is not None and delta is not None:
        free &= t < T - delta - 1e-12
    G = G_full[1:][:, free]
    rhs = h[1:]
    nf = int(free.sum())
    L = np.diff(np.eye(nf), axis=0)
    sigma_hat = np.zeros(t.size)
    gnorm2 = float(np.linalg.norm(G, 2) ** 2)
    diag = {"kernel_coefficients": c, "G_norm": math.sqrt(gnorm2)}

    if not np.any(rhs):
        mu = float((reg.param or 1e-6) * gnorm2)
    elif reg.noise_level:
        target = reg.tau * reg.noise_level * float(np.abs(h).max()) * math.sqrt(rhs.size)

        def resid(log_mu):
            s = _tikhonov(G, L, rhs, 10.0**log_mu)
            return float(np.linalg.norm(G @ s - rhs)), s

        lo, hi = math.log10(gnorm2) - 16.0, math.log10(gnorm2) + 2.0
        r_lo, _ = resid(lo)
        r_hi, _ = resid(hi)
        diag.update({"discrepancy_target": target, "residual_bracket": [r_lo, r_hi]})
        if not r_lo <= target <= r_hi:
            raise RegularizationError(
                f"discrepancy principle cannot be bracketed: residuals [{r_lo:.3e}, {r_hi:.3e}] vs target {target:.3e}",
                diagnostics=diag,
            )
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            r_mid, _ = resid(mid)
            if r_mid > target:
                hi = mid
            else:
                lo = mid
            if hi - lo < 1e-3:
                break
        mu = 10.0**lo
    else:
        mu = float((reg.param if reg.param is not None else 1e-6) * gnorm2)
    s = _tikhonov(G, L, rhs, mu) if np.any(rhs) else np.zeros(nf)
    sigma_hat[free] = s
    diag["residual"] = float(np.linalg.norm(G @ s - rhs))
    errors = None
    if truth is not None:
        tv = np.interp(t, truth.t, truth.values, right=0.0)
        errors = {"rel_l2_error": float(np.linalg.norm(sigma_hat - tv) / np.linalg.norm(tv))}
    return ReconstructionResult("IP3", TimeSeries(grid, sigma_hat), mu, diagnostics=diag, errors=errors)

# }}}


# {{{ proportionality of two time profiles

def rational_proximity(alpha: float, max_den: int = 12):
    """Closest fraction with denominator <= max_den and its distance to ``alpha``."""
    frac = Fraction(alpha).limit_denominator(max_den)
    return frac, abs(alpha - float(frac))


def joint_factor_test(
    sigma1: TimeSeries,
    sigma2: TimeSeries,
    alpha: float,
    radius: float = 4.0,
    n_samples: int = 64,
    degree: int = 8,
    tol: float = 1e-8,
) -> ReconstructionResult:
    """Sample ``C(p) = sigma2_hat(p) / sigma1_hat(p)`` on ``|p| = radius`` and test constancy.

    Both profiles must be compactly supported in their sample windows so
    their transforms are entire. The defect is the maximal deviation of the
    samples from the fitted value at the centre, relative to that value.
    """
    theta = 2.0 * math.pi * (np.arange(n_samples) + 0.5) / n_samples
    ps = radius * np.exp(1j * theta)
    s1 = np.array([laplace_transform(sigma1, p).value for p in ps])
    s2 = np.array([laplace_transform(sigma2, p).value for p in ps])
    if np.abs(s1).min() <= 1e-12 * np.abs(s1).max() or not np.any(s1):
        raise InvalidArgumentError("first profile's transform vanishes on the sample circle")
    ratio = s2 / s1
    vander = (ps / radius)[:, None] ** np.arange(degree + 1)[None, :]
    coef, *_ = np.linalg.lstsq(vander, ratio, rcond=None)
    c0 = complex(coef[0])
    defect = float(np.abs(ratio - c0).max() / abs(c0)) if c0 != 0 else math.inf
    frac, dist = rational_proximity(alpha)
    diag = {
        "defect": defect,
        "proportional": defect <= tol,
        "poly_coefficients": coef,
        "alpha_nearest_rational": f"{frac.numerator}/{frac.denominator}",
        "alpha_rational_distance": float(dist),
        "radius": radius,
    }
    return ReconstructionResult("IP2", c0, diagnostics=diag)

# }}}


# {{{ admissible measurement points

@dataclass(eq=False)
class GSetReport:
    boundary: BoundarySubset
    traces: np.ndarray  # (K_max + 1, n_nodes): d_nu A^{-k-2} rho^-1 f
    probes: np.ndarray  # (n_radii, n_nodes), complex
    radii: np.ndarray
    in_g: np.ndarray
    witness: np.ndarray  # -1 where not a member
    in_j: np.ndarray
    inconclusive: np.ndarray
    agreement_defect: np.ndarray
    zero_tol: float

    @property
    def agree(self) -> np.ndarray:
        return self.in_g == self.in_j

    @property
    def coverage(self) -> float:
        return float(self.in_g.mean())

    def to_json(self) -> str:
        return json.dumps({
            "problem": "GSET",
            "recovered": {"in_g": self.in_g.tolist(), "in_j": self.in_j.tolist(), "witness": self.witness.tolist()},
            "diagnostics": {"coverage": self.coverage, "agreement": bool(self.agree.all()),
                            "max_agreement_defect": float(self.agreement_defect.max()),
                            "inconclusive": self.inconclusive.tolist(), "zero_tol": self.zero_tol},
        }, indent=2, sort_keys=True)

    def rows(self):
        pts = self.boundary.points
        for b, node in enumerate(self.boundary.nodes):
            yield {
                "node": int(node), **{ax: float(v) for ax, v in zip("xy", pts[b])},
                "in_g": bool(self.in_g[b]), "witness_k": int(self.witness[b]), "in_j": bool(self.in_j[b]),
                "agree": bool(self.agree[b]), "max_trace": float(np.abs(self.traces[:, b]).max()),
            }


def _near_integer(x: float, tol: float = 1e-9) -> bool:
    return abs(x - round(x)) <= tol


def compute_gset(
    f: np.ndarray,
    op: DiscreteOperator,
    alpha: float,
    K_max: int = 4,
    boundary: Optional[BoundarySubset] = None,
    zero_tol: Optional[float] = None,
    n_radii: int = 8,
) -> GSetReport:
    """Membership of boundary nodes in the G-set and, independently, the J-set.

    G: some ``k <= K_max`` with ``|d_nu A^{-k-2} rho^-1 f| > zero_tol`` and
    ``alpha (k+1)`` not an integer. J: the resolvent probe
    ``d_nu (A + r e^{i alpha pi})^-1 (A + r e^{-i alpha pi})^-1 rho^-1 f``
    exceeds ``zero_tol`` for some ``r = 2^-m``.
    """
    if K_max < 1:
        raise InvalidArgumentError("K_max must be at least 1")
    coeffs = op.coeffs
    boundary = boundary or op.domain.boundary
    g = np.asarray(f, dtype=float) / coeffs.rho
    if zero_tol is None:
        zero_tol = 1e-7 * math.sqrt(float(elliptic.weighted_inner(g, g, coeffs, op.domain)))
    if not zero_tol > 0:
        zero_tol = np.finfo(float).tiny

    traces = np.empty((K_max + 1, len(boundary)))
    v = elliptic.apply_inverse_power(op, 1, g)
    for k in range(K_max + 1):
        v = op.solve(v)
        traces[k] = elliptic.conormal_trace(v, coeffs, boundary)

    radii = 2.0 ** -np.arange(1, n_radii + 1)
    probes = np.empty((n_radii, len(boundary)), dtype=complex)
    rot = np.exp(1j * alpha * math.pi)
    for m, r in enumerate(radii):
        u = op.solve_shifted(op.solve_shifted(g.astype(complex), r * np.conj(rot)), r * rot)
        probes[m] = elliptic.conormal_trace(u, coeffs, boundary)

    admissible = np.array([not _near_integer(alpha * (k + 1)) for k in range(K_max + 1)])
    big = np.abs(traces) > zero_tol
    hits = big & admissible[:, None]
    in_g = hits.any(axis=0)
    witness = np.where(in_g, np.argmax(hits, axis=0), -1)
    inconclusive = big.any(axis=0) & ~in_g
    in_j = (np.abs(probes) > zero_tol).any(axis=0)
    size = np.maximum(np.abs(traces).max(axis=0), np.abs(probes).max(axis=0))
    defect = np.where(in_g == in_j, 0.0, size)
    return GSetReport(boundary, traces, probes, radii, in_g, witness, in_j, inconclusive, defect, float(zero_tol))


def hopf_certificate(g: np.ndarray, k1: int, k2: int, op: DiscreteOperator, alpha: float):
    """Conormal derivative of ``A^{-2-k2} rho^-1 f`` with ``f = rho A^{k1} g`` at every boundary node.

    Returns the boundary values and whether they are strictly one-signed.
    """
    g = np.asarray(g, dtype=float)
    if np.any(g > 0) and np.any(g < 0):
        raise PreconditionError("g changes sign")
    if not np.any(g):
        raise PreconditionError("g vanishes identically")
    if k1 < 0 or k2 < k1:
        raise PreconditionError("need 0 <= k1 <= k2")
    if _near_integer(alpha * (k2 + 1)):
        raise PreconditionError(f"alpha * (k2 + 1) = {alpha * (k2 + 1)} is an integer")
    w = elliptic.apply_inverse_power(op, 2 + k2 - k1, g)
    vals = elliptic.conormal_trace(w, op.coeffs, op.domain.boundary)
    ok = bool(np.all(vals > 0) or np.all(vals < 0))
    return vals, ok

# }}}


def a_posteriori_max(flux: FluxTrace, T: float, eps: float) -> float:
    """``max |flux|`` over the measurement window ``(T - eps, T]``."""
    if not 0 < eps < T:
        raise InvalidArgumentError("need 0 < eps < T")
    return flux.window_max(T - eps, T)

