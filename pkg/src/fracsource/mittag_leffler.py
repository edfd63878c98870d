r"""Two-parameter Mittag-Leffler function and the subdiffusion solution kernel.

.. math::

    E_{\alpha,\beta}(z) = \sum_{n=0}^\infty \frac{z^n}{\Gamma(n\alpha + \beta)}

Algorithm selection (internal):

* ``|z| <= 0.5``: truncated Taylor series. Once ``n*alpha + beta`` exceeds the
  minimum of the Gamma function, consecutive terms shrink by at least ``|z|``,
  so the tail after a term ``t`` is bounded by ``|t| |z| / (1 - |z|)``. Summation
  stops when that bound is below ``1e-17`` times the partial sum.
* ``alpha == 1`` with integer ``beta`` (classical endpoint used for cross
  checks): ``E_{1,1} = exp`` and ``E_{1,m+1}(z) = (E_{1,m}(z) - 1/(m-1)!)/z``.
* otherwise: numerical inversion of the Laplace transform
  ``s**(alpha - beta) / (s**alpha - z)`` on an optimal parabolic contour
  (Garrappa, SIAM J. Numer. Anal. 53, 2015), plus the residues of the poles
  lying to the right of the selected contour. For arguments with no pole on the
  principal sheet (``|arg z| > alpha*pi``, which contains the whole negative
  real axis) the contour depends on ``(alpha, beta)`` only, so evaluation is
  batched as a single matrix-vector product.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gamma as gamma_fn

from .errors import AccuracyError, BranchError, InvalidArgumentError

_LOG_MACHINE_EPS = math.log(np.finfo(float).eps)
_LOG_TARGET = math.log(1e-15)
_SERIES_RADIUS = 0.5
_MAX_NODES = 200
# achieved contour tolerance above this is reported as an accuracy failure
_ACCEPTED_TOLERANCE = 1e-10

# test hook: when set, the n=1 Taylor coefficient changes sign
_FAULT_INJECTION = False


@dataclass(frozen=True)
class MLParams:
    alpha: float
    beta: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.alpha <= 1.0) or not math.isfinite(self.alpha):
            raise InvalidArgumentError(f"alpha must lie in (0, 1], got {self.alpha}")
        if not (self.beta > 0.0) or not math.isfinite(self.beta):
            raise InvalidArgumentError(f"beta must be positive, got {self.beta}")


def ml(params: MLParams | float, z, beta: float | None = None):
    """Evaluate :math:`E_{\\alpha,\\beta}(z)` for scalar or array ``z``.

    ``params`` is either an :class:`MLParams` or ``alpha`` (then ``beta``
    defaults to 1). Real input gives real output.
    """
    if not isinstance(params, MLParams):
        params = MLParams(float(params), 1.0 if beta is None else float(beta))
    alpha, beta = params.alpha, params.beta

    z_arr = np.asarray(z)
    is_real = not np.iscomplexobj(z_arr)
    zc = np.atleast_1d(z_arr.astype(complex)).ravel()
    if not np.all(np.isfinite(zc)):
        raise InvalidArgumentError("z must be finite")

    out = np.empty(zc.shape, dtype=complex)
    small = np.abs(zc) <= _SERIES_RADIUS
    if np.any(small):
        out[small] = _series(alpha, beta, zc[small])

    big = ~small
    if alpha == 1.0 and beta == round(beta) and np.any(big):
        out[big] = _exp_recursion(int(round(beta)), zc[big])
        big[:] = False
    if np.any(big):
        theta = np.angle(zc)
        # poles s = |z|^(1/a) exp(i(theta + 2k pi)/a) on the principal sheet
        pole_free = np.abs(theta) > alpha * np.pi
        if alpha == 1.0:
            pole_free[:] = False
        idx = np.flatnonzero(big & pole_free)
        if idx.size:
            out[idx] = _contour_batch(alpha, beta, zc[idx])
        for i in np.flatnonzero(big & ~pole_free):
            out[i] = _contour_scalar(alpha, beta, zc[i])

    bad = ~np.isfinite(out)
    if np.any(bad):
        raise AccuracyError(
            f"E_{{{alpha},{beta}}} overflows at z={zc[bad][0]!r}", bound=float("inf")
        )
    if is_real:
        out = out.real
    if z_arr.ndim == 0:
        return out[0].item()
    return out.reshape(z_arr.shape)


def solution_kernel(alpha: float, lam: float, t):
    r"""Return :math:`t^{\alpha-1} E_{\alpha,\alpha}(-\lambda t^\alpha)` for ``t > 0``."""
    _check_alpha_open(alpha, allow_one=True)
    if not lam > 0:
        raise InvalidArgumentError(f"eigenvalue must be positive, got {lam}")
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr <= 0) or not np.all(np.isfinite(t_arr)):
        raise InvalidArgumentError("solution kernel requires finite t > 0")
    val = t_arr ** (alpha - 1.0) * ml(MLParams(alpha, alpha), -lam * t_arr**alpha)
    return val.item() if np.ndim(val) == 0 else val


def kernel_integrals(alpha: float, lam: float, tau):
    """First and second antiderivatives (from 0) of the solution kernel.

    Returns ``(K1, K2)`` with ``K1 = tau^a E_{a,a+1}(-lam tau^a)`` and
    ``K2 = tau^(a+1) E_{a,a+2}(-lam tau^a)``; both vanish for ``tau <= 0``.
    """
    tau = np.asarray(tau, dtype=float)
    pos = tau > 0
    k1 = np.zeros_like(tau)
    k2 = np.zeros_like(tau)
    if np.any(pos):
        tp = tau[pos]
        arg = -lam * tp**alpha
        k1[pos] = tp**alpha * ml(MLParams(alpha, alpha + 1.0), arg)
        k2[pos] = tp ** (alpha + 1.0) * ml(MLParams(alpha, alpha + 2.0), arg)
    return k1, k2


def principal_power(p, alpha: float):
    """``p**alpha`` on the principal branch; rejects the closed negative axis."""
    p_arr = np.asarray(p, dtype=complex)
    on_cut = (p_arr.imag == 0) & (p_arr.real <= 0)
    if np.any(on_cut):
        raise BranchError("p on the closed negative real axis is outside the principal branch")
    return np.exp(alpha * np.log(p_arr))


def kernel_laplace(alpha: float, lam: float, p):
    r"""Laplace image of the solution kernel, :math:`1/(p^\alpha + \lambda)`."""
    _check_alpha_open(alpha, allow_one=True)
    res = 1.0 / (principal_power(p, alpha) + lam)
    return res.item() if np.ndim(res) == 0 else res


def _check_alpha_open(alpha: float, allow_one: bool = False):
    upper_ok = alpha <= 1.0 if allow_one else alpha < 1.0
    if not (alpha > 0.0 and upper_ok):
        raise InvalidArgumentError(f"alpha out of range: {alpha}")


# {{{ Taylor series

def _series(alpha: float, beta: float, z: np.ndarray) -> np.ndarray:
    absz = np.abs(z)
    total = np.zeros_like(z)
    power = np.ones_like(z)
    n = 0
    gamma_min_x = 1.4616321449683623
    while True:
        coeff = 1.0 / gamma_fn(n * alpha + beta)
        if _FAULT_INJECTION and n == 1:
            coeff = -coeff
        term = power * coeff
        total += term
        if n * alpha + beta > gamma_min_x:
            tail = np.abs(term) * absz / (1.0 - absz)
            if np.all(tail <= 1e-17 * np.maximum(np.abs(total), 1e-300)):
                break
        n += 1
        power = power * z
        if n > 2000:
            break
    return total

# }}}


def _exp_recursion(m: int, z: np.ndarray) -> np.ndarray:
    val = np.exp(z)
    for k in range(1, m):
        val = (val - 1.0 / math.factorial(k - 1)) / z
    return val


# {{{ optimal parabolic contour

def _contour_scalar(alpha: float, beta: float, z: complex) -> complex:
    theta = np.angle(z)
    kmin = math.ceil(-alpha / 2.0 - theta / (2.0 * np.pi))
    kmax = math.floor(alpha / 2.0 - theta / (2.0 * np.pi))
    k = np.arange(kmin, kmax + 1)
    s_star = abs(z) ** (1.0 / alpha) * np.exp(1j * (theta + 2.0 * np.pi * k) / alpha)
    phi = (s_star.real + np.abs(s_star)) / 2.0
    order = np.argsort(phi)
    s_star, phi = s_star[order], phi[order]
    keep = phi > 1e-15
    s_star, phi = s_star[keep], phi[keep]

    mu, h, n_nodes, region, log_eps = _select_contour(alpha, beta, phi)
    integral = _contour_sum(alpha, beta, np.array([z]), mu, h, n_nodes)[0]
    # poles to the right of the selected region contribute their residues
    poles = s_star[region:]
    with np.errstate(over="ignore", invalid="ignore"):
        residues = np.sum(poles ** (1.0 - beta) * np.exp(poles)) / alpha if poles.size else 0.0
    _check_tolerance(log_eps, z)
    return integral + residues


def _contour_batch(alpha: float, beta: float, z: np.ndarray) -> np.ndarray:
    mu, h, n_nodes, _, log_eps = _pole_free_contour(alpha, beta)
    _check_tolerance(log_eps, z[0])
    out = np.empty(z.shape, dtype=complex)
    chunk = 4096
    for start in range(0, z.size, chunk):
        out[start:start + chunk] = _contour_sum(alpha, beta, z[start:start + chunk], mu, h, n_nodes)
    return out


@lru_cache(maxsize=256)
def _pole_free_contour(alpha: float, beta: float):
    return _select_contour(alpha, beta, np.empty(0))


@lru_cache(maxsize=256)
def _contour_nodes(alpha: float, beta: float, mu: float, h: float, n_nodes: int):
    u = h * np.arange(-n_nodes, n_nodes + 1)
    s = mu * (1j * u + 1.0) ** 2
    ds = -2.0 * mu * u + 2.0j * mu
    weights = h / (2j * np.pi) * np.exp(s) * s ** (alpha - beta) * ds
    return s**alpha, weights


def _contour_sum(alpha, beta, z, mu, h, n_nodes):
    s_alpha, weights = _contour_nodes(alpha, beta, mu, h, n_nodes)
    return (weights[None, :] / (s_alpha[None, :] - z[:, None])).sum(axis=1)


def _check_tolerance(log_eps: float, z) -> None:
    achieved = math.exp(log_eps)
    if achieved > _ACCEPTED_TOLERANCE:
        raise AccuracyError(
            f"contour inversion reaches only {achieved:.1e} at z={z!r}", bound=achieved
        )


def _select_contour(alpha: float, beta: float, phi_poles: np.ndarray):
    """Pick the admissible region needing the fewest nodes.

    Returns ``(mu, h, N, region, log_eps)``; ``region`` indexes the first pole
    (in the sorted list without the origin) lying to the right of the contour.
    """
    phi = np.concatenate(([0.0], phi_poles, [np.inf]))
    n_sing = phi_poles.size + 1
    p = np.concatenate(([max(0.0, -2.0 * (alpha - beta + 1.0))], np.ones(phi_poles.size)))
    q = np.concatenate((np.ones(phi_poles.size), [np.inf]))

    log_eps = _LOG_TARGET
    admissible = [
        j for j in range(n_sing)
        if phi[j] < (log_eps - _LOG_MACHINE_EPS) and phi[j] < phi[j + 1]
    ]
    if not admissible:
        raise AccuracyError("no admissible integration region", bound=float("inf"))

    while True:
        best = None
        for j in admissible:
            if j < n_sing - 1:
                mu, h, n = _optimal_param_bounded(phi[j], phi[j + 1], p[j], q[j], log_eps)
            else:
                mu, h, n = _optimal_param_unbounded(phi[j], p[j], log_eps)
            if best is None or n < best[2]:
                best = (mu, h, n, j)
        if best[2] <= _MAX_NODES:
            break
        log_eps += math.log(10.0)
        if log_eps > 0:
            raise AccuracyError("contour parameters do not converge", bound=float("inf"))
    mu, h, n, j = best
    return mu, h, int(n), j, log_eps


def _optimal_param_bounded(phi_j, phi_j1, pj, qj, log_eps):
    fac = 1.01
    f_max = math.exp(log_eps - _LOG_MACHINE_EPS)
    sq_j = math.sqrt(phi_j)
    threshold = 2.0 * math.sqrt(log_eps - _LOG_MACHINE_EPS)
    sq_j1 = min(math.sqrt(phi_j1), threshold - sq_j)

    adm = False
    f_bar = 1.0
    if pj < 1e-14 and qj < 1e-14:
        sqb_j, sqb_j1 = sq_j, sq_j1
        adm = True
    elif pj < 1e-14:
        sqb_j = sq_j
        f_min = fac * (sq_j / (sq_j1 - sq_j)) ** qj if sq_j > 0 else fac
        if f_min < f_max:
            f_bar = f_min + f_min / f_max * (f_max - f_min)
            fq = f_bar ** (-1.0 / qj)
            sqb_j1 = (2.0 * sq_j1 - fq * sq_j) / (2.0 + fq)
            adm = True
    elif qj < 1e-14:
        sqb_j1 = sq_j1
        f_min = fac * (sq_j1 / (sq_j1 - sq_j)) ** pj
        if f_min < f_max:
            f_bar = f_min + f_min / f_max * (f_max - f_min)
            fp = f_bar ** (-1.0 / pj)
            sqb_j = (2.0 * sq_j + fp * sq_j1) / (2.0 - fp)
            adm = True
    else:
        f_min = fac * (sq_j + sq_j1) / (sq_j1 - sq_j) ** max(pj, qj)
        if f_min < f_max:
            f_min = max(f_min, 1.5)
            f_bar = f_min + f_min / f_max * (f_max - f_min)
            fp = f_bar ** (-1.0 / pj)
            fq = f_bar ** (-1.0 / qj)
            w = -phi_j1 / log_eps
            den = 2.0 + w - (1.0 + w) * fp + fq
            sqb_j = ((2.0 + w + fq) * sq_j + fp * sq_j1) / den
            sqb_j1 = (-(1.0 + w) * fq * sq_j + (2.0 + w - (1.0 + w) * fp) * sq_j1) / den
            adm = True

    if not adm:
        return 0.0, 0.0, math.inf
    log_eps = log_eps - math.log(f_bar)
    w = -sqb_j1**2 / log_eps
    mu = (((1.0 + w) * sqb_j + sqb_j1) / (2.0 + w)) ** 2
    h = -2.0 * np.pi / log_eps * (sqb_j1 - sqb_j) / ((1.0 + w) * sqb_j + sqb_j1)
    if mu <= 0 or h <= 0:
        return 0.0, 0.0, math.inf
    n = math.ceil(math.sqrt(1.0 - log_eps / mu) / h)
    return mu, h, n


def _optimal_param_unbounded(phi_j, pj, log_eps):
    sq_phi = math.sqrt(phi_j)
    phibar = phi_j * 1.01 if phi_j > 0 else 0.01
    sqb = math.sqrt(phibar)
    f_min, f_max, f_tar = 1.0, 10.0, 5.0
    for _ in range(200):
        log_eps_phi = log_eps / phibar
        n = math.ceil(phibar / np.pi * (1.0 - 1.5 * log_eps_phi + math.sqrt(1.0 - 2.0 * log_eps_phi)))
        a = np.pi * n / phibar
        sq_mu = sqb * abs(4.0 - a) / abs(7.0 - math.sqrt(1.0 + 12.0 * a))
        fbar = ((sqb - sq_phi) / sq_mu) ** (-pj)
        if pj < 1e-14 or f_min < fbar < f_max:
            break
        sqb = f_tar ** (-1.0 / pj) * sq_mu + sq_phi
        phibar = sqb**2
    mu = sq_mu**2
    h = (-3.0 * a - 2.0 + 2.0 * math.sqrt(1.0 + 12.0 * a)) / (4.0 - a) / n

    threshold = log_eps - _LOG_MACHINE_EPS
    if mu > threshold:
        qq = 0.0 if abs(pj) < 1e-14 else f_tar ** (-1.0 / pj) * math.sqrt(mu)
        phibar = (qq + sq_phi) ** 2
        if phibar < threshold:
            w = math.sqrt(_LOG_MACHINE_EPS / (_LOG_MACHINE_EPS - log_eps))
            u = math.sqrt(-phibar / _LOG_MACHINE_EPS)
            mu = threshold
            n = math.ceil(w * log_eps / 2.0 / np.pi / (u * w - 1.0))
            h = w / n
        else:
            return 0.0, 0.0, math.inf
    return mu, h, n

# }}}
