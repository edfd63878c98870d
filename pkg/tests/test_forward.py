from __future__ import annotations

import math

import numpy as np
import pytest
from scipy.integrate import quad

from fracsource.elliptic import CoefficientField, DomainSpec, assemble, eigensystem
from fracsource.errors import InvalidArgumentError, PreconditionError, TruncationError
from fracsource.forward import (
    SourceSpec,
    bump,
    flux_trace,
    hat,
    l1_solve,
    named_profile,
    read_flux,
    shifted,
    spectral_solve,
    two_level,
    write_flux,
)
from fracsource.fractional_calculus import TimeGrid, TimeSeries
from fracsource.mittag_leffler import ml, solution_kernel


def _first_mode_source(system, sigma, T=1.0, delta=0.4):
    _, coeffs, _, eig = system
    return SourceSpec(coeffs.rho * eig.functions[0], sigma, T, delta)


# profiles and sources


def test_profiles():
    t = np.array([0.0, 0.2, 0.4, 0.6, 0.8])
    assert np.allclose(hat(0.2, 0.6)(t), [0, 0, 1, 0, 0])
    assert np.allclose(bump(0.2, 0.6, 2.0)(t), [0, 0, 2, 0, 0])
    assert np.allclose(two_level(0.0, 0.4, 0.6, 1.0, 3.0)(t), [1, 1, 3, 0, 0])
    assert np.allclose(shifted(hat(0.2, 0.6), 0.2)(t), [0, 0, 0, 1, 0])
    with pytest.raises(InvalidArgumentError):
        named_profile("square", 0.1, 0.2)


def test_source_requires_vanishing_tail():
    f = np.ones(10)
    with pytest.raises(PreconditionError):
        SourceSpec(f, hat(0.2, 0.8), 1.0, 0.4)
    with pytest.raises(InvalidArgumentError):
        SourceSpec(f, hat(0.1, 0.2), 1.0, 1.0)
    src = SourceSpec(f, hat(0.1, 0.5), 1.0, 0.4)
    assert np.all(src.sigma_at([-0.1, 1.2]) == 0.0)


def test_source_accepts_sampled_profile():
    g = TimeGrid.from_horizon(1.0, 0.01)
    series = TimeSeries.sample(g, hat(0.1, 0.5))
    src = SourceSpec(np.ones(4), series, 1.0, 0.4)
    assert np.allclose(src.sampled(g).values, series.values)


# spectral solver


def test_zero_source_gives_zero_field(interval129):
    dom, coeffs, op, eig = interval129
    src = SourceSpec(np.zeros(dom.n_nodes), hat(0.1, 0.5), 1.0, 0.4)
    g = TimeGrid.from_horizon(1.0, 0.01)
    assert not np.any(spectral_solve(eig, 0.5, src, g).snapshots)
    assert not np.any(l1_solve(op, 0.5, src, g).snapshots)
    assert not np.any(flux_trace(spectral_solve(eig, 0.5, src, g), coeffs, dom.boundary).values)


def test_narrow_pulse_reproduces_impulse_response(interval129):
    eps = 1e-3
    src = _first_mode_source(interval129, hat(0.0, 2 * eps, 1.0 / eps))
    g = TimeGrid.from_horizon(1.0, 1e-4)
    amps = spectral_solve(interval129[3], 0.5, src, g).amplitudes[:, 0]
    lam = interval129[3].values[0]
    late = g.nodes >= 0.2
    ref = solution_kernel(0.5, lam, g.nodes[late] - eps)
    assert np.max(np.abs(amps[late] / ref - 1.0)) <= 1e-4


def test_classical_heat_limit(interval129):
    src = _first_mode_source(interval129, two_level(0.0, 0.3, 0.6, 1.0, 1.0))
    g = TimeGrid.from_horizon(1.0, 0.01)
    amps = spectral_solve(interval129[3], 1.0, src, g).amplitudes[:, 0]
    lam = interval129[3].values[0]
    on = g.nodes <= 0.59
    assert np.allclose(amps[on], (1 - np.exp(-lam * g.nodes[on])) / lam, rtol=1e-13, atol=1e-15)


def test_modal_integral_against_adaptive_quadrature(interval129):
    alpha, lam = 0.5, 1.0
    sigma = hat(0.2, 0.6)
    src = _first_mode_source(interval129, sigma)
    g = TimeGrid.from_horizon(1.0, 1e-3)
    eig = interval129[3]
    amps = spectral_solve(eig, alpha, src, g).amplitudes[:, 0]
    lam = eig.values[0]
    for t in (0.3, 0.5, 0.7, 1.0):
        ref = _duhamel_quad(sigma, alpha, lam, t, kinks=(0.2, 0.4, 0.6))
        assert amps[round(t / g.dt)] == pytest.approx(ref, rel=1e-11)


def _duhamel_quad(sigma, alpha, lam, t, kinks):
    """int_0^t sigma(t - u) u^(alpha-1) E_{a,a}(-lam u^a) du, split where sigma has kinks."""
    cuts = sorted({0.0, t} | {t - k for k in kinks if 0.0 < t - k < t})
    total = 0.0
    fn = lambda u: float(sigma(t - u)) * u ** (alpha - 1.0) * ml(alpha, -lam * u**alpha, alpha)
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        # the endpoint singularity u^(alpha-1) is integrable and QUADPACK copes with it
        val, _ = quad(fn, lo, hi, limit=500, epsabs=1e-15, epsrel=1e-13)
        total += val
    return total


def test_threads_do_not_change_results(interval129):
    _, coeffs, _, eig = interval129
    f = coeffs.rho * eig.synthesize(np.r_[1.0, 0.5, -0.3, np.zeros(29)])
    src = SourceSpec(f, hat(0.1, 0.5), 1.0, 0.4)
    g = TimeGrid.from_horizon(1.0, 0.005)
    a = spectral_solve(eig, 0.5, src, g, workers=1).amplitudes
    b = spectral_solve(eig, 0.5, src, g, workers=4).amplitudes
    assert np.array_equal(a, b)


def test_truncation_is_reported(interval129):
    dom, coeffs, _, eig = interval129
    f = np.zeros(dom.n_nodes)
    f[40] = 1.0
    with pytest.raises(TruncationError):
        spectral_solve(eig, 0.5, SourceSpec(f, hat(0.1, 0.5), 1.0, 0.4), TimeGrid.from_horizon(1.0, 0.1))


# L1 solver


def test_solver_agreement(interval257):
    dom, coeffs, op, eig = interval257
    f = coeffs.rho * eig.synthesize(np.r_[1.0, -0.5, 0.3, 0.2, -0.1, np.zeros(59)])
    src = SourceSpec(f, hat(0.1, 0.6), 1.0, 0.4)
    g = TimeGrid.from_horizon(1.0, 1 / 2048)
    a = spectral_solve(eig, 0.5, src, g).at_final()
    b = l1_solve(op, 0.5, src, g).snapshots[-1]
    assert np.linalg.norm(a - b) / np.linalg.norm(a) <= 1e-3


def test_l1_backward_euler_limit():
    dom = DomainSpec.interval(0.0, 1.0, 33)
    coeffs = CoefficientField.from_functions(dom, a=lambda x: 1 + x[:, 0], rho=lambda x: 2 - x[:, 0])
    op = assemble(dom, coeffs)
    x = dom.coordinates[:, 0]
    src = SourceSpec(np.sin(math.pi * x) * (1 + x), hat(0.1, 0.5), 1.0, 0.3)
    g = TimeGrid.from_horizon(1.0, 0.01)
    got = l1_solve(op, 1.0, src, g).snapshots[:, dom.interior]

    k = op.stiffness.toarray()
    m = np.diag(op.rho_interior)
    sig = src.sampled(g).values
    f = src.f[dom.interior]
    u = np.zeros_like(got)
    for n in range(1, g.n_steps + 1):
        u[n] = np.linalg.solve(m / g.dt + k, m @ u[n - 1] / g.dt + sig[n] * f)
    assert np.max(np.abs(got - u)) <= 1e-6 * np.max(np.abs(u))


# flux


def test_flux_of_first_mode(interval129):
    dom, coeffs, _, eig = interval129
    src = _first_mode_source(interval129, hat(0.2, 0.6))
    g = TimeGrid.from_horizon(1.0, 0.005)
    traj = spectral_solve(eig, 0.5, src, g)
    left = dom.boundary.subset([0])
    flux = flux_trace(traj, coeffs, left)
    assert np.allclose(flux.values[:, 0], eig.traces[0, 0] * traj.amplitudes[:, 0], rtol=1e-14, atol=0)
    assert eig.traces[0, 0] == pytest.approx(-math.sqrt(2 / math.pi), rel=1e-3)


def test_flux_paths_agree():
    dom = DomainSpec.rectangle((0.0, 1.0), (0.0, 1.0), 25)
    coeffs = CoefficientField.from_functions(dom, a=lambda x: 1 + x[:, 0], rho=lambda x: 1 + x[:, 1])
    eig = eigensystem(assemble(dom, coeffs), 20)
    f = coeffs.rho * eig.synthesize(np.linspace(1.0, 0.1, 20))
    traj = spectral_solve(eig, 0.6, SourceSpec(f, hat(0.1, 0.4), 0.8, 0.3), TimeGrid.from_horizon(0.8, 0.01))
    modal = flux_trace(traj, coeffs, dom.boundary, modal=True).values
    direct = flux_trace(traj, coeffs, dom.boundary, modal=False).values
    assert np.max(np.abs(modal - direct)) <= 1e-6 * np.max(np.abs(modal))


def test_causality_both_solvers(interval129):
    dom, coeffs, op, eig = interval129
    src = _first_mode_source(interval129, hat(0.3, 0.5))
    g = TimeGrid.from_horizon(1.0, 0.01)
    early = g.nodes <= 0.3
    for traj in (spectral_solve(eig, 0.5, src, g), l1_solve(op, 0.5, src, g)):
        assert not np.any(traj.snapshots[early])
        assert np.any(traj.snapshots[~early])


def test_linearity(interval129, rng):
    dom, coeffs, op, eig = interval129
    f1 = coeffs.rho * eig.synthesize(rng.standard_normal(32) * 0.5 ** np.arange(32))
    f2 = coeffs.rho * eig.synthesize(rng.standard_normal(32) * 0.5 ** np.arange(32))
    sigma = bump(0.1, 0.5)
    g = TimeGrid.from_horizon(1.0, 0.01)
    for solve, target in ((spectral_solve, eig), (l1_solve, op)):
        parts = [solve(target, 0.7, SourceSpec(f, sigma, 1.0, 0.4), g).snapshots for f in (f1, f2, f1 + f2)]
        assert np.allclose(parts[0] + parts[1], parts[2], rtol=0, atol=1e-12 * np.abs(parts[2]).max())


def test_memory_effect_after_source_stops(interval129):
    dom, coeffs, _, eig = interval129
    src = _first_mode_source(interval129, bump(0.1, 0.5))
    g = TimeGrid.from_horizon(1.0, 0.005)
    flux = flux_trace(spectral_solve(eig, 0.5, src, g), coeffs, dom.boundary)
    assert flux.window_max(0.6, 1.0) > 1e-8


def test_flux_is_smooth_after_source_stops(interval129):
    dom, coeffs, _, eig = interval129
    f = coeffs.rho * eig.synthesize(np.r_[1.0, 0.0, -0.5, np.zeros(29)])
    src = SourceSpec(f, hat(0.1, 0.5), 1.0, 0.4)
    g = TimeGrid.from_horizon(1.0, 0.002)
    w = flux_trace(spectral_solve(eig, 0.5, src, g), coeffs, dom.boundary.subset([0])).values[:, 0]
    sel = g.nodes > 0.8
    t = g.nodes[sel]
    fit = np.polynomial.Polynomial.fit(t, w[sel], 8)
    assert np.max(np.abs(fit(t) - w[sel])) <= 1e-6 * np.max(np.abs(w[sel]))


# serialization


def test_flux_csv_roundtrip(tmp_path, interval129):
    dom, coeffs, _, eig = interval129
    src = _first_mode_source(interval129, hat(0.2, 0.6))
    g = TimeGrid.from_horizon(1.0, 0.01)
    flux = flux_trace(spectral_solve(eig, 0.5, src, g), coeffs, dom.boundary)
    path = tmp_path / "flux.csv"
    write_flux(path, flux, {"alpha": 0.5})
    back = read_flux(path, dom.boundary)
    assert np.array_equal(back.values, flux.values)
    assert back.grid.n_steps == g.n_steps and back.grid.dt == pytest.approx(g.dt)
    assert '"alpha": 0.5' in path.with_suffix(".json").read_text()
    with pytest.raises(InvalidArgumentError):
        # node ids of a 2D edge are absent from a 1D flux file
        read_flux(path, DomainSpec.rectangle((0.0, 1.0), (0.0, 1.0), 17).boundary.subset([5]))
