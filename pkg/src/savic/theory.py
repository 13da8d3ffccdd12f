"""Step-size rules, horizons and rate curves for scaled Local SGD and FedAdaGrad.

Bound curves are evaluated with unit O-constants: use them for shape
comparisons, not as certificates.  ``log`` is the natural logarithm.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError


@dataclass(frozen=True)
class RateParams:
    mu: float
    L: float
    alpha: float = 1.0
    gamma_cap: float = 1.0
    sigma_sq: float = 0.0
    sigma_dif_sq: float = 0.0
    M: int = 1
    H: int = 1
    d: int = 1

    def __post_init__(self):
        if self.L <= 0 or self.alpha <= 0 or self.gamma_cap < self.alpha:
            raise ConfigurationError("need L > 0 and 0 < alpha <= gamma_cap")
        if self.mu < 0 or self.sigma_sq < 0 or self.sigma_dif_sq < 0 or self.M < 1 or self.H < 1:
            raise ConfigurationError("mu, variances must be nonnegative; M, H at least 1")

    @property
    def kappa(self) -> float:
        return self.L / self.mu

    @property
    def kappa_hat(self) -> float:
        return self.L * self.gamma_cap / (self.mu * self.alpha)


class IdenticalTuning(NamedTuple):
    gamma: float
    T_recommended: int


def step_size_identical(params: RateParams, t_slack: float = 1.0) -> IdenticalTuning:
    """gamma = Gamma / (mu * a) with a = 4 * kappa_hat + t_slack, T = ceil(4 a ln a)."""
    if params.mu <= 0:
        raise ConfigurationError("identical-data tuning needs mu > 0")
    a = 4.0 * params.kappa_hat + t_slack
    gamma = params.gamma_cap / (params.mu * a)
    if t_slack <= 0 or gamma > params.alpha / (4.0 * params.L):
        raise ConfigurationError(f"slack too small: gamma={gamma} exceeds alpha/(4L)={params.alpha / (4 * params.L)}")
    return IdenticalTuning(gamma, math.ceil(4.0 * a * math.log(a)))


def slack_for_gamma(params: RateParams, gamma: float) -> float:
    """The ``t_slack`` that makes :func:`step_size_identical` return ``gamma``."""
    return params.gamma_cap / (params.mu * gamma) - 4.0 * params.kappa_hat


def hetero_constant(params: RateParams) -> float:
    """c = sigma_dif^2 * (9(H-1)/(2 alpha) + 8/(M alpha))."""
    return params.sigma_dif_sq * (9.0 * (params.H - 1) / (2.0 * params.alpha) + 8.0 / (params.M * params.alpha))


def step_size_hetero(params: RateParams, T: int, r0_sq: float) -> float:
    if T < 1:
        raise ConfigurationError("T must be at least 1")
    cap = params.alpha / (10.0 * (params.H - 1) * params.L) if params.H >= 2 else math.inf
    c = hetero_constant(params)
    if c == 0.0 or params.mu == 0.0:
        if math.isinf(cap):
            raise ConfigurationError("H=1 with c=0: the log branch is unbounded and no cap applies")
        return cap
    arg = max(2.0, params.mu**2 * r0_sq * T**2 / (4.0 * params.gamma_cap * c))
    return min(cap, 2.0 * params.gamma_cap / (params.mu * T) * math.log(arg))


def _contraction(params: RateParams, gamma: float) -> float:
    return 1.0 - gamma * params.mu / (2.0 * params.gamma_cap)


def bound_curve_identical(params: RateParams, gamma: float, T: int, r0_sq: float = 1.0) -> list[float]:
    """Three-term distance bound at t = 0..T (unit constants)."""
    p = params
    if gamma > p.alpha / (4.0 * p.L) * (1 + 1e-12):
        raise ConfigurationError("bound needs gamma <= alpha/(4L)")
    q = _contraction(p, gamma)
    noise = gamma * p.gamma_cap * p.sigma_sq / (p.alpha**2 * p.mu * p.M)
    local = p.L * gamma**2 * p.gamma_cap * (p.H - 1) * p.sigma_sq / (p.mu * p.alpha**3)
    t = np.arange(T + 1)
    return list(q**t * (p.gamma_cap / p.alpha) * r0_sq + noise + local)


def bound_curve_hetero(params: RateParams, gamma: float, T: int, r0_sq: float) -> float:
    """Two-term function-gap bound for the weighted average after T iterations."""
    return _contraction(params, gamma) ** T * params.gamma_cap * r0_sq / gamma + gamma * hetero_constant(params)


def horizon_hetero(params: RateParams, gamma: float, r0_sq: float, eps: float) -> int:
    """Smallest T with ``bound_curve_hetero <= eps``."""
    floor = gamma * hetero_constant(params)
    if floor >= eps:
        raise ConfigurationError(f"noise term {floor} already exceeds eps={eps}")
    q = _contraction(params, gamma)
    head = params.gamma_cap * r0_sq / gamma
    T = max(1, math.ceil(math.log((eps - floor) / head) / math.log(q)))
    while bound_curve_hetero(params, gamma, T, r0_sq) > eps:
        T += 1
    return T


def fedadagrad_eta_l_branches(L: float, G: float, tau: float, K: int, T: int, eta: float) -> list[float]:
    pre = 1.0 / (16.0 * K)
    return [
        pre / L,
        pre * T ** (-1 / 6) * (tau / (120.0 * L**2 * G)) ** (1 / 3),
        pre * tau * eta * L / (2.0 * G**2),
        pre * tau / (4.0 * L * eta),
        pre * T ** (-1 / 4) * math.sqrt(tau**2 / (G * L * eta)),
    ]


def fedadagrad_eta_l(L: float, G: float, tau: float, K: int, T: int, eta: float) -> float:
    """Largest local step admitted by the FedAdaGrad convergence condition."""
    if min(L, G, tau, K, T, eta) <= 0:
        raise ConfigurationError("FedAdaGrad step condition needs positive inputs")
    return min(fedadagrad_eta_l_branches(L, G, tau, K, T, eta))
