from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracsource.elliptic import CoefficientField, DomainSpec, assemble, eigensystem
from fracsource.errors import (
    AccuracyError,
    BranchError,
    ConditioningError,
    DataInsufficiencyError,
    InvalidArgumentError,
)
from fracsource.forward import SourceSpec, flux_trace, hat, spectral_solve
from fracsource.fractional_calculus import TimeGrid, TimeSeries
from fracsource.laplace import (
    LaplaceSample,
    ModalCoefficients,
    branch_jump,
    laplace_transform,
    modal_transfer,
    residue_extract,
    residue_limit,
    samples_from_json,
    samples_to_json,
    transfer_eval,
)
from fracsource.mittag_leffler import kernel_laplace, solution_kernel


def _hat_transform(t0, t1, p):
    """Closed-form transform of the unit triangle on [t0, t1]."""
    h = 0.5 * (t1 - t0)
    return (np.exp(-p * t0) - 2 * np.exp(-p * (t0 + h)) + np.exp(-p * t1)) / (h * p**2)


# numerical transforms


def test_transform_of_decaying_exponential():
    s = laplace_transform(TimeSeries.sample(TimeGrid.from_horizon(40.0, 1e-3), lambda t: np.exp(-t)), 1.0)
    assert abs(s.value - 0.5) <= 1e-6
    assert s.tail_bound <= 1e-16


def test_richardson_sharpens_transform():
    series = TimeSeries.sample(TimeGrid.from_horizon(40.0, 1e-2), lambda t: np.exp(-t))
    plain = abs(laplace_transform(series, 1.0).value - 0.5)
    sharp = abs(laplace_transform(series, 1.0, richardson=True).value - 0.5)
    assert sharp < 1e-3 * plain


def test_transform_of_zero_trace():
    zero = TimeSeries(TimeGrid(0.01, 100), np.zeros(101))
    for p in (1.0, 2 + 3j, -1.0):
        s = laplace_transform(zero, p)
        assert s.value == 0 and s.tail_bound == 0.0


def test_transform_of_kernel():
    s = laplace_transform(lambda t: solution_kernel(0.5, 1.0, t), 2.0, t_max=30.0, singular_power=0.5)
    assert abs(s.value - 1.0 / (math.sqrt(2.0) + 1.0)) <= 1e-10
    q = laplace_transform(lambda t: solution_kernel(0.5, 5.0, t), 2.0, t_max=30.0, singular_power=0.5)
    assert abs(q.value - 1.0 / (math.sqrt(2.0) + 5.0)) + q.tail_bound <= 1e-6


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
@pytest.mark.parametrize("lam", [0.5, 3.0, 20.0])
@pytest.mark.parametrize("p", [0.7, 2.0, 1.5 + 2j])
def test_kernel_transform_consistency(alpha, lam, p):
    s = laplace_transform(lambda t: solution_kernel(alpha, lam, t), p, t_max=60 / p.real if isinstance(p, complex) else 60 / p,
                          singular_power=alpha)
    exact = kernel_laplace(alpha, lam, p)
    assert abs(s.value - exact) <= 1e-6 * abs(exact) + s.tail_bound


def test_tail_bound_enforced():
    series = TimeSeries.sample(TimeGrid.from_horizon(5.0, 1e-2), lambda t: np.exp(-0.1 * t))
    with pytest.raises(AccuracyError) as err:
        laplace_transform(series, 0.5, tol=1e-6)
    assert err.value.bound > 1e-6
    with pytest.raises(InvalidArgumentError):
        laplace_transform(series, -0.5)


def test_compact_trace_allows_left_half_plane():
    g = TimeGrid.from_horizon(2.0, 1e-3)
    series = TimeSeries.sample(g, hat(0.2, 0.6))
    for p in (-1.0, -0.5 + 1j, 3.0):
        s = laplace_transform(series, p)
        assert s.tail_bound == 0.0
        assert abs(s.value - _hat_transform(0.2, 0.6, p)) <= 1e-12 * max(1.0, abs(s.value))


def test_samples_json_roundtrip():
    samples = [LaplaceSample(1 + 2j, np.array([0.5 - 1j, 2.0]), 1e-9), LaplaceSample(3.0, 0.25 + 0j, 0.0)]
    back = samples_from_json(samples_to_json(samples))
    assert back[0].p == samples[0].p and np.array_equal(back[0].value, samples[0].value)
    assert back[1].value == samples[1].value and back[0].tail_bound == 1e-9


# modal transfer


def test_modal_transfer_single_and_combined(interval129):
    dom, coeffs, _, eig = interval129
    bd = dom.boundary
    one = modal_transfer(eig, coeffs.rho * eig.functions[0], bd)
    assert np.allclose(one.values[0], eig.traces[0], rtol=1e-10)
    assert np.max(np.abs(one.values[1:])) <= 1e-10
    two = modal_transfer(eig, coeffs.rho * (2 * eig.functions[0] + 3 * eig.functions[1]), bd)
    assert np.allclose(two.values[:2], [2 * eig.traces[0], 3 * eig.traces[1]], rtol=1e-10)
    with pytest.raises(InvalidArgumentError):
        modal_transfer(eig, np.ones(5), bd)


def test_modal_transfer_degenerate_pair():
    dom = DomainSpec.rectangle((0.0, math.pi), (0.0, math.pi), 33)
    coeffs = CoefficientField.constant(dom, rho=1.5)
    eig = eigensystem(assemble(dom, coeffs), 6)
    pair = eig.groups[1]
    assert len(pair) == 2
    f = coeffs.rho * (eig.functions[pair[0]] + 2 * eig.functions[pair[1]])
    got = modal_transfer(eig, f, dom.boundary).values[1]
    w = [float(np.sum(f / coeffs.rho * eig.functions[k] * coeffs.rho * dom.quadrature_weights)) for k in pair]
    assert np.allclose(w, [1.0, 2.0], atol=1e-10)
    assert np.allclose(got, w[0] * eig.traces[pair[0]] + w[1] * eig.traces[pair[1]], atol=1e-12)


def test_transfer_eval_examples():
    modal = ModalCoefficients([1.0], [1.0])
    assert transfer_eval(modal, 1.0, 1.0, 0.5).value[0] == pytest.approx(0.5, rel=1e-15)
    assert not np.any(transfer_eval(modal, 0.0, 2.0, 0.5).value)
    with pytest.raises(BranchError):
        transfer_eval(modal, 1.0, -2.0, 0.5)


@pytest.fixture(scope="module")
def simulated():
    dom = DomainSpec.interval(0.0, math.pi, 129)
    coeffs = CoefficientField.constant(dom)
    eig = eigensystem(assemble(dom, coeffs), 32)
    f = coeffs.rho * (2 * eig.functions[0] - eig.functions[2])
    src = SourceSpec(f, hat(0.2, 0.6), 1.0, 0.4)
    g = TimeGrid.from_horizon(20.0, 2e-3)
    flux = flux_trace(spectral_solve(eig, 0.5, src, g), coeffs, dom.boundary)
    return flux, modal_transfer(eig, f, dom.boundary)


def test_transform_matches_transfer_function(simulated):
    flux, modal = simulated
    abscissae = [1.0, 2.0, 4.0, 1.5, 3.0, 1 + 1j, 1 - 1j, 2 + 3j, 2.5 - 0.5j, 1.2 + 4j]
    for p in abscissae:
        num = laplace_transform(flux, p, richardson=True)
        model = transfer_eval(modal, _hat_transform(0.2, 0.6, p), p, 0.5).value
        assert np.max(np.abs(num.value - model)) <= 1e-6 * np.max(np.abs(model)) + num.tail_bound


def test_transform_is_holomorphic(simulated):
    flux, _ = simulated
    centre, radius = 2.0 + 1.0j, 0.5
    ring = centre + radius * np.exp(2j * np.pi * np.arange(64) / 64)
    mean = np.mean([laplace_transform(flux, p).value for p in ring], axis=0)
    mid = laplace_transform(flux, centre).value
    assert np.max(np.abs(mean - mid)) <= 1e-6 * np.max(np.abs(mid))


# branch jump


def test_jump_single_mode():
    closed, limit = branch_jump(ModalCoefficients([1.0], [1.0]), lambda p: 1.0, 1.0, 0.5)
    assert abs(closed[0] + 1j) <= 1e-14
    assert abs(limit[0] + 1j) <= 1e-8


def test_jump_vanishes_without_source():
    closed, limit = branch_jump(ModalCoefficients([1.0, 4.0], np.zeros((2, 3))), lambda p: 1.0, 2.0, 0.4)
    assert not np.any(closed) and np.all(np.abs(limit) <= 1e-300)


@pytest.mark.parametrize("R", [0.5, 1.0, 2.0, 4.0])
@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.7])
def test_jump_routes_agree(R, alpha, rng):
    modal = ModalCoefficients(np.array([1.0, 4.0, 9.0]), rng.standard_normal((3, 4)))
    closed, limit = branch_jump(modal, lambda p: np.exp(-0.2 * p), R, alpha)
    assert np.max(np.abs(closed - limit)) <= 1e-8 * np.max(np.abs(closed))
    assert np.all(np.abs(closed) > 0)


def test_jump_argument_checks():
    modal = ModalCoefficients([1.0], [1.0])
    with pytest.raises(InvalidArgumentError):
        branch_jump(modal, lambda p: 1.0, 0.0, 0.5)
    with pytest.raises(InvalidArgumentError):
        branch_jump(modal, lambda p: 1.0, 1.0, 1.0)


# residue fit


def test_single_pole_fit():
    z = np.logspace(-1, 1.5, 8)
    fit = residue_extract(z, 2.5 / (3.0 + z), [3.0], 1)
    assert abs(fit.values[0, 0] - 2.5) <= 1e-10


def test_five_pole_fit():
    lam = np.arange(1, 6) ** 2.0
    z = np.logspace(-1, 2, 20)
    g = sum(n / (n**2 + z) for n in range(1, 6))
    fit = residue_extract(z, g, lam, 5)
    assert np.max(np.abs(fit.values[:, 0] - np.arange(1, 6))) <= 1e-8
    assert fit.diagnostics["residual"] <= 1e-12


@pytest.mark.parametrize("n_terms", [1, 2, 3])
def test_noisy_fit_small_models(n_terms):
    lam = np.arange(1, n_terms + 1) ** 2.0
    z = np.logspace(-1, 2, 20)
    g = sum(n / (n**2 + z) for n in range(1, n_terms + 1))
    rng = np.random.default_rng(17)
    errs = []
    for _ in range(100):
        fit = residue_extract(z, g * (1 + 1e-6 * rng.standard_normal(z.size)), lam, n_terms)
        errs.append(fit.values[:, 0] - np.arange(1, n_terms + 1))
    assert np.sqrt(np.mean(np.square(errs))) <= 1e-4


def test_noisy_fit_five_poles_with_spread_abscissae():
    # samples swinging towards the poles keep the five-term fit well conditioned
    lam = np.arange(1, 6) ** 2.0
    r = np.logspace(-1, math.log10(250.0), 20)
    z = np.concatenate([r, r * np.exp(0.75j * np.pi), r * np.exp(-0.75j * np.pi)])
    g = sum(n / (n**2 + z) for n in range(1, 6))
    rng = np.random.default_rng(17)
    errs = []
    for _ in range(100):
        noise = rng.standard_normal(z.size) + 1j * rng.standard_normal(z.size)
        fit = residue_extract(z, g * (1 + 1e-6 * noise), lam, 5)
        errs.append(fit.values[:3, 0] - np.arange(1, 4))
    assert np.sqrt(np.mean(np.square(errs))) <= 1e-4


@settings(max_examples=30, deadline=None)
@given(c=st.floats(-10, 10).filter(lambda v: abs(v) > 1e-3), lam=st.floats(0.1, 50.0))
def test_residue_matches_limit(c, lam):
    z = np.logspace(-1, 2, 10)
    fit = residue_extract(z, c / (lam + z), [lam], 1)
    lim = residue_limit(lambda w: c / (lam + w), lam, direction=1j, h0=0.1 * lam)
    assert abs(fit.values[0, 0] - lim) <= 1e-8 * abs(c)


def test_fit_errors():
    z = np.logspace(-1, 1, 3)
    with pytest.raises(DataInsufficiencyError):
        residue_extract(z, 1 / (1 + z), [1.0, 4.0], 2)
    z = np.logspace(-1, 1, 12)
    with pytest.raises(ConditioningError) as err:
        residue_extract(z, 1 / (1 + z), [1.0, 1.0 + 1e-9], 2)
    assert err.value.condition_number > 1e10
    # Tikhonov makes the same system solvable
    fit = residue_extract(z, 1 / (1 + z), [1.0, 1.0 + 1e-9], 2, reg=1e-8)
    assert fit.diagnostics["reg"] == 1e-8
    with pytest.raises(InvalidArgumentError):
        residue_extract(np.array([-1.0, 1.0, 2.0, 3.0]), np.ones(4), [1.0], 1)
