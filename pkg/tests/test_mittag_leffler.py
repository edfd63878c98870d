from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import assume, given, settings, strategies as st
from scipy.special import gamma as gamma_fn

from fracsource import mittag_leffler as mlf
from fracsource.errors import AccuracyError, BranchError, InvalidArgumentError
from fracsource.mittag_leffler import MLParams, kernel_laplace, ml, solution_kernel


def _rows(table):
    for row in table:
        yield row["alpha"], row["beta"], complex(*row["z"]), complex(*row["value"])


@pytest.mark.parametrize("table", ["ml_series", "ml_large"])
def test_matches_frozen_series_oracle(ml_oracle, table):
    worst = 0.0
    for alpha, beta, z, ref in _rows(ml_oracle[table]):
        got = ml(MLParams(alpha, beta), z)
        worst = max(worst, abs(got - ref) / abs(ref))
    assert worst <= 1e-10


def test_vectorized_matches_scalar(ml_oracle):
    rows = [r for r in _rows(ml_oracle["ml_series"]) if r[0] == 0.5 and r[1] == 1.0]
    z = np.array([r[2] for r in rows])
    batch = ml(0.5, z)
    assert np.allclose(batch, [ml(0.5, zi) for zi in z], rtol=1e-14, atol=0)


def test_exponential_endpoint():
    assert ml(MLParams(1.0, 1.0), 1.0) == pytest.approx(math.e, rel=1e-14)
    x = np.array([-10.0, -1.0, 0.0, 1.0, 10.0])
    assert np.allclose(ml(1.0, x), np.exp(x), rtol=1e-10, atol=0)


def test_value_at_origin_half_half():
    assert ml(MLParams(0.5, 0.5), 0.0) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-14)


def test_half_order_at_minus_one(ml_oracle):
    ref = ml_oracle["ml_half_minus_one"]
    assert ml(0.5, -1.0) == pytest.approx(ref, rel=1e-12)
    # closed form exp(1) erfc(1) as a second opinion
    assert ref == pytest.approx(math.e * math.erfc(1.0), rel=1e-14)


@pytest.mark.parametrize("alpha", [0.2, 0.5, 0.9, 1.0])
@pytest.mark.parametrize("beta", [0.3, 1.0, 1.5, 3.0])
def test_origin_value_is_reciprocal_gamma(alpha, beta):
    assert abs(ml(alpha, 0.0, beta) - 1.0 / gamma_fn(beta)) <= 1e-12


@pytest.mark.parametrize("alpha", [0.3, 0.5, 0.8])
def test_negative_axis_positive_and_decreasing(alpha):
    x = np.linspace(0.0, 50.0, 401)
    vals = ml(alpha, -x)
    assert np.all(vals > 0)
    assert np.all(np.diff(vals) < 0)


@settings(max_examples=60, deadline=None)
@given(
    alpha=st.floats(0.15, 0.95),
    beta=st.floats(0.2, 2.0),
    r=st.floats(0.01, 30.0),
    theta=st.floats(-math.pi, math.pi),
)
def test_index_shift_recurrence(alpha, beta, r, theta):
    # stay where the dominant exponential exp(z^(1/alpha)) is representable
    assume(r ** (1 / alpha) * math.cos(theta / alpha) < 600)
    z = r * complex(math.cos(theta), math.sin(theta))
    lhs = ml(alpha, z, beta)
    rhs = z * ml(alpha, z, alpha + beta) + 1.0 / gamma_fn(beta)
    scale = max(abs(lhs), abs(z * ml(alpha, z, alpha + beta)), 1e-300)
    assert abs(lhs - rhs) <= 1e-9 * scale


def test_real_input_gives_real_output():
    out = ml(0.5, np.array([-2.0, 0.1, 3.0]))
    assert out.dtype == float


@pytest.mark.parametrize("alpha,beta", [(0.0, 1.0), (1.2, 1.0), (0.5, 0.0), (math.nan, 1.0)])
def test_invalid_parameters(alpha, beta):
    with pytest.raises(InvalidArgumentError):
        MLParams(alpha, beta)


def test_non_finite_argument():
    with pytest.raises(InvalidArgumentError):
        ml(0.5, complex(math.inf, 0))


def test_overflowing_argument_reports_accuracy():
    with pytest.raises(AccuracyError) as err:
        ml(0.5, 1e4)
    assert err.value.bound == math.inf


def test_kernel_exponential_endpoint():
    assert solution_kernel(1.0, 2.0, 1.0) == pytest.approx(math.exp(-2.0), rel=1e-14)


def test_kernel_half_order(ml_oracle):
    assert solution_kernel(0.5, 1.0, 1.0) == pytest.approx(ml_oracle["ml_half_half_minus_one"], rel=1e-12)


def test_kernel_small_time_singularity():
    t = np.array([1e-8, 1e-10, 1e-12])
    lead = t**-0.5 / math.sqrt(math.pi)
    assert np.allclose(solution_kernel(0.5, 1.0, t) / lead, 1.0, rtol=1e-3)


@pytest.mark.parametrize("alpha", [0.3, 0.6, 0.9])
def test_kernel_strictly_positive(alpha):
    t = np.logspace(-6, 3, 200)
    assert np.all(solution_kernel(alpha, 3.0, t) > 0)


@pytest.mark.parametrize("t", [0.0, -1.0, math.nan])
def test_kernel_rejects_nonpositive_time(t):
    with pytest.raises(InvalidArgumentError):
        solution_kernel(0.5, 1.0, t)


def test_kernel_rejects_nonpositive_eigenvalue():
    with pytest.raises(InvalidArgumentError):
        solution_kernel(0.5, 0.0, 1.0)


def test_kernel_integrals_are_antiderivatives():
    tau = np.linspace(0.05, 2.0, 40)
    k1, k2 = mlf.kernel_integrals(0.6, 2.0, tau)
    h = 1e-5
    k1p, k2p = mlf.kernel_integrals(0.6, 2.0, tau + h)
    k1m, k2m = mlf.kernel_integrals(0.6, 2.0, tau - h)
    assert np.allclose((k1p - k1m) / (2 * h), solution_kernel(0.6, 2.0, tau), rtol=1e-6)
    assert np.allclose((k2p - k2m) / (2 * h), k1, rtol=1e-6)
    z1, z2 = mlf.kernel_integrals(0.6, 2.0, np.array([-1.0, 0.0]))
    assert not z1.any() and not z2.any()


def test_laplace_image_examples():
    assert kernel_laplace(0.5, 1.0, 1.0) == pytest.approx(0.5, rel=1e-15)
    expected = 1.0 / (complex(math.cos(math.pi / 4), math.sin(math.pi / 4)) + 1.0)
    assert abs(kernel_laplace(0.5, 1.0, 1j) - expected) <= 1e-15


@pytest.mark.parametrize("p", [-1.0, 0.0, complex(-2.0, 0.0)])
def test_laplace_image_branch_cut(p):
    with pytest.raises(BranchError):
        kernel_laplace(0.5, 1.0, p)


def test_principal_power_matches_polar_form():
    p = np.array([1j, -1 + 1e-3j, 2 - 3j])
    r, th = np.abs(p), np.angle(p)
    assert np.allclose(mlf.principal_power(p, 0.4), r**0.4 * np.exp(0.4j * th), rtol=1e-14)


def test_fault_injection_is_detectable(monkeypatch):
    monkeypatch.setattr(mlf, "_FAULT_INJECTION", True)
    assert abs(ml(0.5, -0.3) - math.exp(0.09) * math.erfc(0.3)) > 1e-3
