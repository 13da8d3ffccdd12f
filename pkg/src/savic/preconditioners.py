"""Diagonal scaling matrices: momentum recurrences, clipping, estimators and checks.

The recurrence runs on the raw diagonal ``D``; the positive clipped view
``D_hat`` is recomputed from ``D`` after every update and is what the
optimiser divides by.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple

import numpy as np

from .errors import ConfigurationError, ContractViolation

SQUARE, LINEAR, IDENTITY = "square", "linear", "identity"
MAX_CLIP, ADD_CLIP = "max_clip", "add_clip"
GRAD_SQUARE, HUTCHINSON = "grad_square", "hutchinson"

TOL = 1e-12


@dataclass(frozen=True)
class BetaSchedule:
    """Momentum schedule for the scaling recurrence.

    ``constant``: beta_t = beta (RMSProp).  ``adam``: beta_t =
    (beta - beta^(t+1)) / (1 - beta^(t+1)).  ``theory_driven``: the smallest
    beta allowed by the growth bound for step size ``gamma`` and strong
    convexity ``mu``.
    """

    kind: str = "constant"
    beta: float = 0.999
    gamma: float | None = None
    mu: float | None = None

    def __post_init__(self):
        if self.kind not in ("constant", "adam", "theory_driven"):
            raise ConfigurationError(f"unknown beta schedule {self.kind!r}")
        if self.kind == "theory_driven":
            if self.gamma is None or self.mu is None or self.gamma <= 0 or self.mu <= 0:
                raise ConfigurationError("theory_driven schedule needs positive gamma and mu")
        elif not 0.0 <= self.beta <= 1.0:
            raise ConfigurationError(f"beta must lie in [0, 1], got {self.beta}")


@dataclass(frozen=True)
class PrecondConfig:
    rule: str = IDENTITY
    clip: str = MAX_CLIP
    alpha: float = 1.0
    gamma_cap: float = 1.0
    beta_schedule: BetaSchedule = field(default_factory=BetaSchedule)
    estimator: str = GRAD_SQUARE
    strict_admissible: bool = False
    d0: float | None = None

    def __post_init__(self):
        if self.rule not in (SQUARE, LINEAR, IDENTITY):
            raise ConfigurationError(f"unknown preconditioner rule {self.rule!r}")
        if self.clip not in (MAX_CLIP, ADD_CLIP):
            raise ConfigurationError(f"unknown clip mode {self.clip!r}")
        if self.estimator not in (GRAD_SQUARE, HUTCHINSON):
            raise ConfigurationError(f"unknown estimator {self.estimator!r}")
        if not 0 < self.alpha <= self.gamma_cap:
            raise ConfigurationError(f"need 0 < alpha <= gamma_cap, got alpha={self.alpha}, gamma_cap={self.gamma_cap}")

    @property
    def upper_bound(self) -> float:
        """Certified ceiling of the clipped diagonal."""
        return self.gamma_cap + self.alpha if self.clip == ADD_CLIP else self.gamma_cap

    def to_dict(self) -> dict:
        return {
            "rule": self.rule, "clip": self.clip, "alpha": self.alpha, "gamma_cap": self.gamma_cap,
            "beta_schedule": vars(self.beta_schedule).copy(), "estimator": self.estimator,
            "strict_admissible": self.strict_admissible, "d0": self.d0,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "PrecondConfig":
        doc = dict(doc)
        doc["beta_schedule"] = BetaSchedule(**doc.get("beta_schedule", {}))
        return cls(**doc)


@dataclass(frozen=True)
class DiagPrecondState:
    step_index: int
    raw: np.ndarray
    clipped: np.ndarray
    config: PrecondConfig

    def to_dict(self) -> dict:
        return {"step_index": self.step_index, "raw": self.raw.tolist(),
                "clipped": self.clipped.tolist(), "config": self.config.to_dict()}

    @classmethod
    def from_dict(cls, doc: dict) -> "DiagPrecondState":
        return cls(doc["step_index"], np.array(doc["raw"], dtype=float),
                   np.array(doc["clipped"], dtype=float), PrecondConfig.from_dict(doc["config"]))


def clip(raw: np.ndarray, config: PrecondConfig) -> np.ndarray:
    if config.rule == IDENTITY:
        return np.ones_like(raw)
    if config.clip == MAX_CLIP:
        return np.maximum(config.alpha, np.abs(raw))
    return np.abs(raw) + config.alpha


def initial_state(config: PrecondConfig, d: int) -> DiagPrecondState:
    d0 = config.alpha if config.d0 is None else config.d0
    raw = np.full(d, float(d0))
    return DiagPrecondState(0, raw, clip(raw, config), config)


def beta_floor(rule: str, gamma: float, mu: float, alpha: float, gamma_cap: float) -> float:
    """Smallest momentum keeping the scaled-norm growth below ``1 + gamma*mu/(2*gamma_cap)``."""
    if rule == SQUARE:
        b = 1.0 - gamma * mu * alpha**2 / gamma_cap**3
    elif rule == LINEAR:
        b = 1.0 - gamma * mu * alpha / (4.0 * gamma_cap**2)
    elif rule == IDENTITY:
        b = 0.0
    else:
        raise ConfigurationError(f"unknown preconditioner rule {rule!r}")
    return min(max(b, 0.0), 1.0)


def beta_at(config: PrecondConfig, t: int) -> float:
    """Momentum used by the ``t``-th update (``t >= 1``)."""
    s = config.beta_schedule
    if s.kind == "constant":
        return s.beta
    if s.kind == "adam":
        if s.beta == 1.0:
            return 1.0
        p = s.beta ** (t + 1)
        return (s.beta - p) / (1.0 - p)
    return beta_floor(config.rule, s.gamma, s.mu, config.alpha, config.gamma_cap)


def growth_factor(config: PrecondConfig, beta: float) -> float:
    a, G = config.alpha, config.gamma_cap
    if config.rule == SQUARE:
        return 1.0 + (1.0 - beta) * G**2 / (2.0 * a**2)
    if config.rule == LINEAR:
        return 1.0 + 2.0 * (1.0 - beta) * G / a
    return 1.0


def update(state: DiagPrecondState, H_diag, t: int | None = None) -> DiagPrecondState:
    """Advance the recurrence by one step with estimate ``H_diag``.

    For the square rule ``H_diag`` holds squared entries.  ``t`` selects the
    momentum (defaults to ``state.step_index + 1``).
    """
    cfg = state.config
    t = state.step_index + 1 if t is None else t
    if cfg.rule == IDENTITY:
        return replace(state, step_index=t)
    H = np.asarray(H_diag, dtype=float)
    if H.shape != state.raw.shape:
        raise ConfigurationError(f"estimate has shape {H.shape}, expected {state.raw.shape}")
    beta = beta_at(cfg, t)
    if not 0.0 <= beta <= 1.0:
        raise ContractViolation(f"beta_t={beta} outside [0, 1]")
    if cfg.rule == SQUARE:
        if np.any(H < 0):
            raise ContractViolation("square rule needs nonnegative squared estimates")
        if cfg.strict_admissible:
            H = np.minimum(H, cfg.gamma_cap**2)
        raw = state.raw if beta == 1.0 else np.sqrt(beta * state.raw**2 + (1.0 - beta) * H)
    else:
        if cfg.strict_admissible:
            H = np.clip(H, -cfg.gamma_cap, cfg.gamma_cap)
        raw = state.raw if beta == 1.0 else beta * state.raw + (1.0 - beta) * H
    return DiagPrecondState(t, raw, clip(raw, cfg), cfg)


def estimate_H(suite, worker: int, x, rng: np.random.Generator, estimator: str, squared: bool,
               batch_size: int | None = 1) -> np.ndarray:
    """One draw of the diagonal curvature estimate for ``f_worker`` at ``x``.

    ``grad_square`` takes a stochastic gradient ``g``; ``hutchinson`` takes
    ``v * (Hess v)`` for a Rademacher ``v`` and a uniformly drawn sample.
    With ``squared`` the elementwise square is returned (square rule);
    otherwise ``|g|`` or the signed Hutchinson diagonal.
    """
    h = _raw_estimate(suite, worker, x, rng, estimator, batch_size)
    if squared:
        return h * h
    return np.abs(h) if estimator == GRAD_SQUARE else h


def _raw_estimate(suite, worker, x, rng, estimator, batch_size):
    if estimator == GRAD_SQUARE:
        return suite.stoch_grad(worker, x, rng, batch_size)
    v = rng.integers(0, 2, size=suite.d) * 2.0 - 1.0
    w = suite.workers[worker]
    if batch_size is None:
        hv = w.hessian(x) @ v
    else:
        j = int(rng.integers(0, w.n))
        hv = suite.hvp(worker, x, v, j)
    return v * hv


def estimate_H_global(suite, x, rng: np.random.Generator, estimator: str, squared: bool,
                      batch_size: int | None = 1) -> np.ndarray:
    """Estimate for the global objective: one draw per worker, averaged in worker order.

    The Rademacher vector is shared across workers so that the Hutchinson
    estimate is that of the averaged Hessian.
    """
    if estimator == GRAD_SQUARE:
        acc = np.zeros(suite.d)
        for m in range(suite.M):
            acc += suite.stoch_grad(m, x, rng, batch_size)
        h = acc / suite.M
    else:
        v = rng.integers(0, 2, size=suite.d) * 2.0 - 1.0
        acc = np.zeros(suite.d)
        for m, w in enumerate(suite.workers):
            if batch_size is None:
                acc += w.hessian(x) @ v
            else:
                acc += suite.hvp(m, x, v, int(rng.integers(0, w.n)))
        h = v * (acc / suite.M)
    if squared:
        return h * h
    return np.abs(h) if estimator == GRAD_SQUARE else h


class SandwichReport(NamedTuple):
    min_entry: float
    max_entry: float
    ok: bool


def check_sandwich(state: DiagPrecondState) -> SandwichReport:
    cfg = state.config
    lo, hi = float(state.clipped.min()), float(state.clipped.max())
    ok = lo >= cfg.alpha - TOL and hi <= cfg.upper_bound + TOL
    return SandwichReport(lo, hi, bool(ok))


def check_growth(prev_clipped, next_clipped, beta_next: float, config: PrecondConfig) -> bool:
    if config.rule == IDENTITY:
        return True
    factor = growth_factor(config, beta_next)
    return bool(np.all(np.asarray(next_clipped) <= factor * np.asarray(prev_clipped) + TOL))
