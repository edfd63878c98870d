"""Invariant suite behind ``fracsource verify``.

Every check is a small, self-contained computation with an independent
reference (closed form, second algorithm, or structural identity). Checks
return ``(passed, detail)``; exceptions count as failures.
"""

from __future__ import annotations

import math
import time

import numpy as np
from scipy.special import erfcx, gamma as gamma_fn

from . import mittag_leffler as mlf
from .elliptic import CoefficientField, DomainSpec, assemble, eigensystem, weighted_inner
from .forward import SourceSpec, flux_trace, hat, l1_solve, spectral_solve
from .fractional_calculus import TimeGrid, TimeSeries, caputo_l1, rl_integral
from .inverse import compute_gset, hopf_certificate, joint_factor_test
from .laplace import ModalCoefficients, branch_jump, laplace_transform, residue_extract

CHECKS = []


def check(name):
    def deco(fn):
        CHECKS.append((name, fn))
        return fn

    return deco


def _interval(nodes=129, **kw):
    dom = DomainSpec.interval(0.0, math.pi, nodes)
    coeffs = CoefficientField.constant(dom, **kw)
    op = assemble(dom, coeffs)
    return dom, coeffs, op


@check("ml.exponential")
def _ml_exp():
    x = np.linspace(-10, 10, 21)
    err = float(np.max(np.abs(mlf.ml(1.0, x) / np.exp(x) - 1.0)))
    return err <= 1e-10, f"max rel err {err:.2e}"


@check("ml.erfc_closed_form")
def _ml_erfc():
    # E_{1/2,1}(-x) = exp(x^2) erfc(x), covers the series and contour paths
    x = np.array([0.05, 0.3, 0.45, 1.0, 2.5, 4.0])
    err = float(np.max(np.abs(mlf.ml(0.5, -x) - erfcx(x)) / erfcx(x)))
    return err <= 1e-10, f"max rel err {err:.2e}"


@check("ml.recurrence")
def _ml_recurrence():
    z = np.array([-3.0, -0.4, 0.3, 2.0 + 1.0j, -1.5 - 2.0j])
    worst = 0.0
    for a in (0.3, 0.5, 0.8):
        for b in (0.5, 1.0, 1.7):
            lhs = mlf.ml(a, z, b)
            rhs = z * mlf.ml(a, z, a + b) + 1.0 / gamma_fn(b)
            worst = max(worst, float(np.max(np.abs(lhs - rhs) / np.maximum(np.abs(lhs), 1e-300))))
    return worst <= 1e-10, f"max rel defect {worst:.2e}"


@check("fractional.power_rule")
def _power_rule():
    g = TimeGrid.from_horizon(1.0, 1e-3)
    h = TimeSeries.sample(g, lambda t: t)
    i = rl_integral(0.5, h).values[-1]
    exact = 1.0 / gamma_fn(2.5)
    d = caputo_l1(0.5, h).values[-1]
    ok = abs(i - exact) < 1e-6 and abs(d - 1.0 / gamma_fn(1.5)) < 1e-10
    return ok, f"I^0.5 t err {abs(i - exact):.2e}, L1 D^0.5 t err {abs(d - 1 / gamma_fn(1.5)):.2e}"


@check("elliptic.eigen_convergence")
def _eig_rate():
    errs = []
    for n in (65, 129, 257):
        _, _, op = _interval(n)
        errs.append(abs(eigensystem(op, 3).values[2] - 9.0))
    ratios = [errs[i] / errs[i + 1] for i in range(2)]
    return all(3.5 <= r <= 4.5 for r in ratios), f"ratios {ratios[0]:.3f}, {ratios[1]:.3f}"


@check("elliptic.self_adjoint")
def _self_adjoint():
    dom = DomainSpec.rectangle((0, 1), (0, 2), 24)
    rng = np.random.default_rng(5)
    coeffs = CoefficientField.from_functions(dom, a=lambda x: 1 + x[:, 0] * x[:, 1], rho=lambda x: 1 + x[:, 0] ** 2)
    op = assemble(dom, coeffs)
    u, v = (op.to_full(rng.standard_normal(op.n_interior)) for _ in range(2))
    lhs = weighted_inner(op.apply(u), v, coeffs, dom)
    rhs = weighted_inner(u, op.apply(v), coeffs, dom)
    nu = math.sqrt(weighted_inner(u, u, coeffs, dom) * weighted_inner(v, v, coeffs, dom))
    defect = abs(lhs - rhs) / nu
    return defect <= 1e-10, f"relative defect {defect:.2e}"


@check("forward.solver_agreement")
def _solvers():
    dom, coeffs, op = _interval(129)
    eig = eigensystem(op, 32)
    f = coeffs.rho * eig.synthesize(np.r_[1.0, -0.5, 0.3, 0.2, -0.1, np.zeros(27)])
    src = SourceSpec(f, hat(0.1, 0.6), 1.0, 0.4)
    g = TimeGrid.from_horizon(1.0, 1 / 512)
    a = spectral_solve(eig, 0.5, src, g).at_final()
    b = l1_solve(op, 0.5, src, g).snapshots[-1]
    err = float(np.linalg.norm(a - b) / np.linalg.norm(a))
    return err <= 1e-3, f"relative L2 gap at T {err:.2e}"


@check("forward.causality_and_zero_source")
def _causality():
    dom, coeffs, op = _interval(65)
    eig = eigensystem(op, 16)
    g = TimeGrid.from_horizon(1.0, 0.01)
    src = SourceSpec(coeffs.rho * eig.functions[0], hat(0.3, 0.5), 1.0, 0.4)
    amps = spectral_solve(eig, 0.5, src, g).amplitudes
    early = float(np.abs(amps[g.nodes <= 0.3]).max())
    zero = SourceSpec(np.zeros(dom.n_nodes), hat(0.3, 0.5), 1.0, 0.4)
    flux = flux_trace(spectral_solve(eig, 0.5, zero, g), coeffs, dom.boundary)
    return early == 0.0 and not np.any(flux.values), f"max before onset {early:.1e}"


@check("laplace.kernel_identity")
def _kernel_identity():
    worst = 0.0
    for a in (0.3, 0.5, 0.8):
        for p in (0.5 + 0j, 2.0 + 0j, 1.0 + 1.0j):
            s = laplace_transform(lambda t: mlf.solution_kernel(a, 1.0, t), p, t_max=60 / p.real, singular_power=a)
            exact = mlf.kernel_laplace(a, 1.0, p)
            worst = max(worst, abs(s.value - exact) / abs(exact))
    return worst <= 1e-6, f"max rel err {worst:.2e}"


@check("laplace.branch_jump")
def _jump():
    closed, limit = branch_jump(ModalCoefficients([1.0], [1.0]), lambda p: 1.0, 1.0, 0.5)
    err = abs(closed[0] + 1j)
    return err <= 1e-8, f"|jump - (-i)| = {err:.2e}"


@check("laplace.residue_fit")
def _residue():
    lam = np.arange(1, 6) ** 2.0
    z = np.logspace(-1, 2, 20)
    G = sum(n / (n**2 + z) for n in range(1, 6))
    fit = residue_extract(z, G, lam, 5)
    err = float(np.abs(fit.values[:, 0] - np.arange(1, 6)).max())
    return err <= 1e-8, f"max coefficient error {err:.2e}"


@check("inverse.gset_equals_jset")
def _gset():
    dom = DomainSpec.rectangle((0, 1), (0, 1), 20)
    coeffs = CoefficientField.constant(dom)
    op = assemble(dom, coeffs)
    rng = np.random.default_rng(11)
    f = op.to_full(rng.standard_normal(op.n_interior))
    rep = compute_gset(f, op, 0.5)
    return bool(rep.agree.all()), f"coverage {rep.coverage:.2f}"


@check("inverse.hopf")
def _hopf():
    dom, coeffs, op = _interval(129)
    vals, ok = hopf_certificate(-np.sin(dom.coordinates[:, 0]), 0, 1, op, 0.4)
    return ok and bool(np.all(vals > 0)), f"min trace {vals.min():.3e}"


@check("inverse.proportionality")
def _proportional():
    g = TimeGrid.from_horizon(2.0, 1e-3)
    s1 = TimeSeries.sample(g, hat(0.1, 0.5))
    res = joint_factor_test(s1, TimeSeries(g, 2.0 * s1.values), 0.5)
    ok = res.diagnostics["defect"] <= 1e-8 and abs(res.recovered - 2.0) <= 1e-8
    return ok, f"defect {res.diagnostics['defect']:.2e}, C = {res.recovered.real:.12f}"


def run_suite(names=None) -> list:
    out = []
    for name, fn in CHECKS:
        if names and name not in names:
            continue
        t0 = time.perf_counter()
        try:
            passed, detail = fn()
        except Exception as exc:  # a crash is a failed invariant
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        out.append({"name": name, "passed": bool(passed), "detail": detail,
                    "seconds": round(time.perf_counter() - t0, 3)})
    return out
