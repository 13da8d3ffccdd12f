import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from savic.errors import ConfigurationError
from savic.preconditioners import beta_floor
from savic.theory import (
    RateParams,
    bound_curve_hetero,
    bound_curve_identical,
    fedadagrad_eta_l,
    fedadagrad_eta_l_branches,
    hetero_constant,
    horizon_hetero,
    slack_for_gamma,
    step_size_hetero,
    step_size_identical,
)

# --- step_size_identical -----------------------------------------------------------


def test_identical_step_example():
    p = RateParams(mu=1.0, L=10.0, alpha=0.1, gamma_cap=1.0)
    assert p.kappa_hat == pytest.approx(100.0)
    tune = step_size_identical(p, t_slack=1)
    assert tune.gamma == pytest.approx(1 / 401, rel=1e-14)
    assert tune.gamma <= 0.1 / 40
    assert tune.T_recommended == 9615


def test_identical_step_reduces_to_unscaled_when_gamma_cap_equals_alpha():
    p = RateParams(mu=2.0, L=10.0, alpha=0.5, gamma_cap=0.5)
    assert p.kappa_hat == p.kappa
    a = 4 * p.kappa + 1
    assert step_size_identical(p).gamma == pytest.approx(0.5 / (2.0 * a))


def test_identical_step_slack_too_small():
    p = RateParams(mu=1.0, L=1.0, alpha=1.0, gamma_cap=1.0)
    with pytest.raises(ConfigurationError, match="slack too small"):
        step_size_identical(p, t_slack=-3.5)


def test_slack_for_gamma_inverts():
    p = RateParams(mu=1.0, L=10.0, alpha=1.0, gamma_cap=1.0)
    g = step_size_identical(p).gamma / 2
    assert step_size_identical(p, slack_for_gamma(p, g)).gamma == pytest.approx(g, rel=1e-14)


def test_identical_needs_mu():
    with pytest.raises(ConfigurationError):
        step_size_identical(RateParams(mu=0.0, L=1.0))


@settings(max_examples=200, deadline=None)
@given(
    mu=st.floats(1e-3, 10.0),
    kappa=st.floats(1.0, 1e3),
    alpha=st.floats(1e-3, 1.0),
    ratio=st.floats(1.0, 100.0),
    slack=st.floats(1e-3, 1e3),
)
def test_identical_step_respects_precondition(mu, kappa, alpha, ratio, slack):
    p = RateParams(mu=mu, L=mu * kappa, alpha=alpha, gamma_cap=alpha * ratio)
    tune = step_size_identical(p, slack)
    assert tune.gamma <= alpha / (4 * p.L)
    for rule in ("square", "linear"):
        b = beta_floor(rule, tune.gamma, mu, alpha, p.gamma_cap)
        assert 0.0 < b < 1.0


# --- step_size_hetero --------------------------------------------------------------


def test_hetero_step_cap_branch():
    p = RateParams(mu=1.0, L=1.0, alpha=1.0, H=5, M=4, sigma_dif_sq=0.0)
    assert step_size_hetero(p, 100, 1.0) == pytest.approx(0.025)


def test_hetero_step_log_branch():
    # pick c so that mu^2 r0^2 T^2 / (4 Gamma c) = 2
    p0 = RateParams(mu=1.0, L=1e-6, alpha=1.0, gamma_cap=1.0, H=2, M=2, sigma_dif_sq=1.0)
    c1 = hetero_constant(p0)
    target_c = 4.0 * 100**2 / (4 * 2.0)
    p = RateParams(mu=1.0, L=1e-6, alpha=1.0, gamma_cap=1.0, H=2, M=2, sigma_dif_sq=target_c / c1)
    assert hetero_constant(p) == pytest.approx(target_c)
    assert step_size_hetero(p, 100, 4.0) == pytest.approx(0.02 * math.log(2), rel=1e-12)
    assert step_size_hetero(p, 100, 4.0) == pytest.approx(0.013863, abs=1e-6)


def test_hetero_step_H1_uses_log_branch_alone():
    p = RateParams(mu=1.0, L=1.0, alpha=1.0, gamma_cap=1.0, H=1, M=2, sigma_dif_sq=1.0)
    c = hetero_constant(p)
    expect = 2.0 / 50 * math.log(max(2.0, 50**2 / (4 * c)))
    assert step_size_hetero(p, 50, 1.0) == pytest.approx(expect)


def test_hetero_step_H1_without_noise_errors():
    with pytest.raises(ConfigurationError):
        step_size_hetero(RateParams(mu=1.0, L=1.0, H=1), 10, 1.0)


@settings(max_examples=200, deadline=None)
@given(
    mu=st.floats(1e-3, 10.0), kappa=st.floats(1.0, 1e3), alpha=st.floats(1e-3, 1.0), ratio=st.floats(1.0, 100.0),
    H=st.integers(2, 50), M=st.integers(2, 64), sdif=st.floats(0.0, 100.0), T=st.integers(1, 10**6),
    r0=st.floats(1e-4, 1e4),
)
def test_hetero_step_never_exceeds_cap(mu, kappa, alpha, ratio, H, M, sdif, T, r0):
    p = RateParams(mu=mu, L=mu * kappa, alpha=alpha, gamma_cap=alpha * ratio, H=H, M=M, sigma_dif_sq=sdif)
    assert step_size_hetero(p, T, r0) <= alpha / (10 * (H - 1) * p.L)


# --- bound curves -------------------------------------------------------------------


def test_identical_bound_noise_free_is_geometric():
    p = RateParams(mu=1.0, L=10.0, alpha=0.5, gamma_cap=2.0, sigma_sq=0.0, H=4)
    g = 0.01
    curve = np.array(bound_curve_identical(p, g, 50, r0_sq=3.0))
    q = 1 - g / (2 * 2.0)
    np.testing.assert_allclose(curve, q ** np.arange(51) * 4.0 * 3.0, rtol=1e-13)
    assert np.all(np.diff(curve) <= 0)


def test_identical_bound_third_term_vanishes_at_H1():
    base = dict(mu=1.0, L=10.0, alpha=0.5, gamma_cap=2.0, sigma_sq=1.0, M=3)
    g = 0.01
    c1 = bound_curve_identical(RateParams(**base, H=1), g, 5, r0_sq=0.0)[-1]
    noise = g * 2.0 * 1.0 / (0.25 * 1.0 * 3)
    assert c1 == pytest.approx(noise, rel=1e-14)


def test_identical_bound_doubling_M_halves_noise_term():
    g = 0.01
    kw = dict(mu=1.0, L=10.0, alpha=0.5, gamma_cap=2.0, sigma_sq=2.0, H=1)
    f1 = bound_curve_identical(RateParams(**kw, M=2), g, 0, r0_sq=0.0)[0]
    f2 = bound_curve_identical(RateParams(**kw, M=4), g, 0, r0_sq=0.0)[0]
    assert f2 == pytest.approx(f1 / 2, rel=1e-15)


def test_identical_bound_checks_step():
    with pytest.raises(ConfigurationError):
        bound_curve_identical(RateParams(mu=1.0, L=10.0), 1.0, 5)


def test_hetero_bound_noise_free():
    p = RateParams(mu=1.0, L=1.0, alpha=1.0, gamma_cap=2.0, H=3, M=2)
    g = 0.02
    assert bound_curve_hetero(p, g, 100, 5.0) == pytest.approx((1 - g / 4) ** 100 * 2 * 5 / g)


def test_hetero_bound_tends_to_noise_term():
    p = RateParams(mu=1.0, L=1.0, alpha=1.0, gamma_cap=1.0, H=3, M=2, sigma_dif_sq=0.7)
    g = 0.01
    assert bound_curve_hetero(p, g, 10**7, 1.0) == pytest.approx(g * hetero_constant(p), rel=1e-12)


@pytest.mark.parametrize("H,kappa_hat", [(2, 1.0), (3, 10.0), (8, 100.0), (20, 1e3)])
def test_hetero_cap_matches_exponential_envelope(H, kappa_hat):
    alpha, G, mu = 0.5, 2.0, 1.0
    L = kappa_hat * mu * alpha / G
    p = RateParams(mu=mu, L=L, alpha=alpha, gamma_cap=G, H=H, M=4)
    T = 50_000
    g = step_size_hetero(p, T, 1.0)
    geometric = (1 - g * mu / (2 * G)) ** T
    envelope = math.exp(-mu * T * alpha / (20 * G * (H - 1) * L))
    assert envelope / math.e <= geometric <= envelope


def test_horizon_hetero_is_minimal():
    p = RateParams(mu=1.0, L=3.0, alpha=1.0, gamma_cap=1.0, H=3, M=4, sigma_dif_sq=0.001)
    g = 0.01
    T = horizon_hetero(p, g, 2.0, 1e-3)
    assert bound_curve_hetero(p, g, T, 2.0) <= 1e-3 < bound_curve_hetero(p, g, T - 1, 2.0)


def test_horizon_hetero_unreachable():
    p = RateParams(mu=1.0, L=3.0, alpha=1.0, gamma_cap=1.0, H=3, M=4, sigma_dif_sq=10.0)
    with pytest.raises(ConfigurationError):
        horizon_hetero(p, 0.01, 1.0, 1e-3)


# --- FedAdaGrad ------------------------------------------------------------------------


def test_fedadagrad_eta_l_regression_constant():
    branches = fedadagrad_eta_l_branches(1, 1, 0.1, 10, 100, 1)
    assert min(branches) == branches[3]
    assert fedadagrad_eta_l(1, 1, 0.1, 10, 100, 1) == pytest.approx(0.00015625000000000003, rel=1e-15)


@settings(max_examples=200, deadline=None)
@given(
    L=st.floats(1e-2, 1e2), G=st.floats(1e-2, 1e2), tau=st.floats(1e-4, 1.0), K=st.integers(1, 50),
    T=st.integers(1, 10**6), eta=st.floats(1e-3, 1e2),
)
def test_fedadagrad_eta_l_monotone(L, G, tau, K, T, eta):
    v = fedadagrad_eta_l(L, G, tau, K, T, eta)
    assert fedadagrad_eta_l(L, G, tau / 10, K, T, eta) <= v
    assert fedadagrad_eta_l(L, G, tau, 2 * K, T, eta) == pytest.approx(v / 2, rel=1e-12)


def test_fedadagrad_eta_l_rejects_nonpositive():
    with pytest.raises(ConfigurationError):
        fedadagrad_eta_l(1, 1, 0.0, 1, 1, 1)


def test_rate_params_validation():
    with pytest.raises(ConfigurationError):
        RateParams(mu=1.0, L=1.0, alpha=2.0, gamma_cap=1.0)
    with pytest.raises(ConfigurationError):
        RateParams(mu=1.0, L=1.0, M=0)
