"""Experiment configuration: JSON schema, validation, suite construction and theory tuning."""

from __future__ import annotations

import dataclasses
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, get_type_hints

import numpy as np

from . import engine, theory
from . import preconditioners as pc
from .errors import ConfigurationError
from .problems import (
    IDENTICAL,
    ProblemSuite,
    exact_optimum,
    generate_heterogeneous,
    quadratic_heterogeneous,
    quadratic_identical,
    sigma_dif_sq,
)


@dataclass
class ProblemSpec:
    type: str = "quadratic"
    regime: str = IDENTICAL
    M: int = 4
    d: int = 10
    mu: float = 1.0
    L: float = 10.0
    noise: float = 0.0
    n_samples: int = 1
    spread: float = 1.0
    shift: float = 0.0
    interpolating: bool = False
    opt_radius: float | None = None
    skew: float | None = None
    rows_per_worker: int = 100
    num_classes: int | None = None
    lam: float = 0.1
    seed: int = 0


@dataclass
class PrecondSpec:
    rule: str = "identity"
    clip: str = "max_clip"
    alpha: float = 1.0
    gamma_cap: float = 1.0
    beta_schedule: str = "constant"
    beta: float = 0.999
    estimator: str = "grad_square"
    strict_admissible: bool = False
    d0: float | None = None


@dataclass
class AlgorithmSpec:
    name: str = "savic"
    gamma: float | None = None
    T: int | None = None
    H: int = 1
    sync_times: list | None = None
    scaling_mode: str = "global"
    momentum: float = 0.0
    batch_size: int | None = 1
    parallel: bool = False
    precond: PrecondSpec = field(default_factory=PrecondSpec)
    x0: list | None = None
    # FedAdaGrad
    eta: float = 1.0
    eta_l: float | None = None
    tau: float = 1e-2
    K: int = 1
    beta1: float = 0.0
    v_init: float | None = None
    participation: float = 1.0
    G: float | None = None


@dataclass
class ExperimentConfig:
    problem: ProblemSpec = field(default_factory=ProblemSpec)
    algorithm: AlgorithmSpec = field(default_factory=AlgorithmSpec)
    tuning: str = "manual"
    t_slack: float = 1.0
    ensemble: int = 1
    seed: int = 0
    epsilon: float | None = None
    out: str = "runs/default"
    bounds: bool = False

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)


ALGORITHMS = ("savic", "fedadagrad", "minibatch_sgd")


def _build(cls, doc: Any, path: str):
    if not isinstance(doc, dict):
        raise ConfigurationError(f"{path or 'config'}: expected an object")
    names = {f.name for f in dataclasses.fields(cls)}
    for key in doc:
        if key not in names:
            raise ConfigurationError(f"unknown key '{path}{key}'")
    hints = get_type_hints(cls)
    kwargs = {}
    for key, value in doc.items():
        hint = hints[key]
        if dataclasses.is_dataclass(hint):
            kwargs[key] = _build(hint, value, f"{path}{key}.")
        else:
            kwargs[key] = _check_scalar(value, hint, f"{path}{key}")
    return cls(**kwargs)


def _check_scalar(value, hint, name):
    text = str(hint)
    if value is None:
        if "None" not in text:
            raise ConfigurationError(f"key '{name}' may not be null")
        return None
    if "bool" in text and not isinstance(value, bool):
        raise ConfigurationError(f"key '{name}' must be a boolean")
    if "list" in text and not isinstance(value, list):
        raise ConfigurationError(f"key '{name}' must be a list")
    if "int" in text and "float" not in text and not (isinstance(value, int) and not isinstance(value, bool)):
        raise ConfigurationError(f"key '{name}' must be an integer")
    if "float" in text and (isinstance(value, bool) or not isinstance(value, (int, float))):
        raise ConfigurationError(f"key '{name}' must be a number")
    if "str" in text and not isinstance(value, str):
        raise ConfigurationError(f"key '{name}' must be a string")
    return value


def parse_config(doc: dict) -> ExperimentConfig:
    cfg = _build(ExperimentConfig, doc, "")
    if cfg.algorithm.name not in ALGORITHMS:
        raise ConfigurationError(f"key 'algorithm.name' must be one of {ALGORITHMS}")
    if cfg.tuning not in ("manual", "by_theory"):
        raise ConfigurationError("key 'tuning' must be 'manual' or 'by_theory'")
    if cfg.ensemble < 1:
        raise ConfigurationError("key 'ensemble' must be at least 1")
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigurationError(f"malformed JSON in {path}: {exc}") from exc
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
    return parse_config(doc)


def build_suite(spec: ProblemSpec) -> ProblemSuite:
    if spec.type == "quadratic":
        if spec.regime == IDENTICAL:
            return quadratic_identical(spec.M, spec.d, spec.mu, spec.L, spec.noise, spec.opt_radius, spec.seed)
        return quadratic_heterogeneous(spec.M, spec.d, spec.n_samples, spec.mu, spec.L, spec.spread,
                                       spec.shift, spec.opt_radius, spec.interpolating, spec.seed)
    if spec.type == "logreg":
        classes = spec.num_classes or spec.M
        if spec.regime == IDENTICAL:
            one = generate_heterogeneous(1, spec.d, 1.0, spec.seed, spec.rows_per_worker, 1, spec.lam)
            return ProblemSuite(list(one.workers) * spec.M, IDENTICAL, spec.noise,
                                {**one.meta, "M": spec.M, "regime": IDENTICAL})
        skew = 1.0 / classes if spec.skew is None else spec.skew
        return generate_heterogeneous(spec.M, spec.d, skew, spec.seed, spec.rows_per_worker, classes, spec.lam)
    raise ConfigurationError(f"key 'problem.type' must be 'quadratic' or 'logreg', got {spec.type!r}")


@dataclass
class Plan:
    """A fully resolved run: suite, engine config and the effective parameters echoed to outputs."""

    suite: ProblemSuite
    algorithm: str
    engine_config: Any
    effective: dict
    optimum: tuple
    params: theory.RateParams | None = None
    r0_sq: float = math.nan


def _rate_params(suite, precond: PrecondSpec, H, optimum):
    sdif = sigma_dif_sq(suite, optimum[0]) if suite.regime != IDENTICAL else 0.0
    return theory.RateParams(mu=suite.mu, L=suite.L, alpha=precond.alpha, gamma_cap=precond.gamma_cap,
                             sigma_sq=suite.noise**2, sigma_dif_sq=sdif, M=suite.M, H=H, d=suite.d)


def make_plan(cfg: ExperimentConfig, seed: int | None = None, suite: ProblemSuite | None = None,
              fixed: frozenset = frozenset()) -> Plan:
    """Resolve ``cfg`` into a runnable plan.

    ``fixed`` names algorithm fields that theory tuning must leave alone
    (used by sweeps that pin an axis).
    """
    suite = build_suite(cfg.problem) if suite is None else suite
    alg = cfg.algorithm
    seed = cfg.seed if seed is None else seed
    optimum = exact_optimum(suite)
    x0 = engine._initial_point(alg.x0, suite.d)
    r0_sq = float((x0 - optimum[0]) @ (x0 - optimum[0]))
    by_theory = cfg.tuning == "by_theory"

    if alg.name == "fedadagrad":
        eta_l, T = alg.eta_l, alg.T
        if T is None:
            raise ConfigurationError("key 'algorithm.T' is required for fedadagrad")
        if by_theory and "eta_l" not in fixed:
            if alg.G is None:
                raise ConfigurationError("key 'algorithm.G' is required for by_theory fedadagrad tuning")
            eta_l = theory.fedadagrad_eta_l(suite.L, alg.G, alg.tau, alg.K, T, alg.eta)
        if eta_l is None:
            raise ConfigurationError("key 'algorithm.eta_l' is required in manual mode")
        ecfg = engine.FedAdaGradConfig(eta=alg.eta, eta_l=eta_l, tau=alg.tau, T=T, K=alg.K, beta1=alg.beta1,
                                       v_init=alg.v_init, participation=alg.participation, master_seed=seed,
                                       batch_size=alg.batch_size, x0=alg.x0)
        eff = {"eta": alg.eta, "eta_l": eta_l, "tau": alg.tau, "T": T, "K": alg.K, "v_init": ecfg.v_init,
               "G": alg.G, "L": suite.L}
        return Plan(suite, alg.name, ecfg, eff, optimum, None, r0_sq)

    H = 1 if alg.name == "minibatch_sgd" else alg.H
    precond = alg.precond if alg.name == "savic" else PrecondSpec()
    params = _rate_params(suite, precond, H, optimum)
    gamma, T = alg.gamma, alg.T
    if by_theory:
        if suite.regime == IDENTICAL:
            if "gamma" in fixed and gamma is not None:
                tuned = theory.step_size_identical(params, theory.slack_for_gamma(params, gamma))
            else:
                tuned = theory.step_size_identical(params, cfg.t_slack)
                gamma = tuned.gamma
            if "T" not in fixed:
                T = tuned.T_recommended
        else:
            if "gamma" not in fixed or gamma is None:
                gamma = theory.step_size_hetero(params, T or 1, r0_sq)
            if T is None:
                # horizon at which the function-gap bound reaches epsilon
                T = theory.horizon_hetero(params, gamma, r0_sq, cfg.epsilon or 1e-8)
    if gamma is None or T is None:
        raise ConfigurationError("keys 'algorithm.gamma' and 'algorithm.T' are required in manual mode")

    schedule_kind = precond.beta_schedule
    sched = pc.BetaSchedule(schedule_kind, precond.beta, gamma if schedule_kind == "theory_driven" else None,
                            suite.mu if schedule_kind == "theory_driven" else None)
    pcfg = pc.PrecondConfig(precond.rule, precond.clip, precond.alpha, precond.gamma_cap, sched,
                            precond.estimator, precond.strict_admissible, precond.d0)
    schedule = engine.SyncSchedule(times=tuple(alg.sync_times)) if alg.sync_times else engine.SyncSchedule(H)
    ecfg = engine.SavicConfig(gamma=gamma, T=int(T), schedule=schedule, precond=pcfg, scaling_mode=alg.scaling_mode,
                              momentum=alg.momentum, master_seed=seed, batch_size=alg.batch_size, x0=alg.x0,
                              parallel=alg.parallel)
    floor = pc.beta_floor(pcfg.rule, gamma, suite.mu, pcfg.alpha, pcfg.gamma_cap) if suite.mu > 0 else 1.0
    eff = {"gamma": gamma, "T": int(T), "H": schedule.max_gap(int(T)), "alpha": pcfg.alpha,
           "gamma_cap": pcfg.gamma_cap, "beta_floor": floor, "mu": suite.mu, "L": suite.L,
           "sigma_sq": params.sigma_sq, "sigma_dif_sq": params.sigma_dif_sq, "r0_sq": r0_sq}
    return Plan(suite, alg.name, ecfg, eff, optimum, params, r0_sq)


def execute(plan: Plan) -> engine.RunRecord:
    if plan.algorithm == "savic":
        return engine.run_savic(plan.suite, plan.engine_config, plan.optimum)
    if plan.algorithm == "minibatch_sgd":
        return engine.run_minibatch_sgd(plan.suite, plan.engine_config, plan.optimum)
    return engine.run_fedadagrad(plan.suite, plan.engine_config, plan.optimum)


def bound_column(plan: Plan, n_rows: int) -> list[float] | None:
    """Theory curve (unit constants) aligned with the run rows, or None when not applicable."""
    if plan.params is None:
        return None
    gamma = plan.engine_config.gamma
    if plan.suite.regime == IDENTICAL:
        if plan.params.mu <= 0 or gamma > plan.params.alpha / (4 * plan.params.L):
            return None
        curve = theory.bound_curve_identical(plan.params, gamma, n_rows - 1, plan.r0_sq)
    else:
        curve = [theory.bound_curve_hetero(plan.params, gamma, t, plan.r0_sq) for t in range(n_rows)]
    return [float(v) for v in np.asarray(curve)[:n_rows]]
