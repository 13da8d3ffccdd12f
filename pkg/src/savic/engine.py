"""Simulators for scaled Local SGD, FedAdaGrad and mini-batch SGD.

All three produce a :class:`RunRecord` with one row per iterate ``t = 0..T``.
Trajectories are pure functions of ``(suite, config)``: every worker owns a
Philox stream keyed by ``(master_seed, worker)``, the server owns its own
stream, and every cross-worker reduction sums in ascending worker order, so
running the local phases on a thread pool changes nothing.

Sync convention: ``t_p`` is a sync time when the iterates *at* ``t_p`` are the
average.  The step from ``t_p - 1`` to ``t_p`` therefore averages the local
steps, and the shared scaling matrix is then re-estimated at the fresh average
and held fixed until the next sync time.  ``t_0 = 0`` counts as a sync time.
"""

from __future__ import annotations

import csv
import io
import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from . import preconditioners as pc
from .errors import ConfigurationError, NoUniqueOptimum
from .problems import ProblemSuite, exact_optimum

CSV_HEADER = ("t", "phase", "dist_sq", "f_gap", "V_t", "d_min", "d_max", "growth_ok")
DIVERGENCE_NORM = 1e12

GLOBAL, LOCAL_EXPERIMENTAL = "global", "local_experimental"


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class SyncSchedule:
    """Either a fixed gap ``H`` (``t_p = p * H``) or explicit increasing times starting at 0."""

    H: int | None = 1
    times: tuple[int, ...] | None = None

    def __post_init__(self):
        if self.times is not None:
            times = tuple(int(t) for t in self.times)
            if not times or times[0] != 0 or any(b <= a for a, b in zip(times, times[1:])):
                raise ConfigurationError("explicit sync times must start at 0 and strictly increase")
            object.__setattr__(self, "times", times)
            object.__setattr__(self, "H", None)
        elif self.H is None or self.H < 1:
            raise ConfigurationError("fixed-gap schedule needs H >= 1")

    def is_sync(self, t: int) -> bool:
        if self.times is None:
            return t % self.H == 0
        return t in self._time_set

    @property
    def _time_set(self):
        return frozenset(self.times)

    def max_gap(self, T: int) -> int:
        """Largest distance between consecutive sync times up to ``T``."""
        if self.times is None:
            return self.H
        ts = [t for t in self.times if t <= T] + [T]
        return max(b - a for a, b in zip(ts, ts[1:])) if len(ts) > 1 else 1

    def to_dict(self):
        return {"H": self.H} if self.times is None else {"times": list(self.times)}


@dataclass(frozen=True)
class SavicConfig:
    gamma: float
    T: int
    schedule: SyncSchedule = field(default_factory=SyncSchedule)
    precond: pc.PrecondConfig = field(default_factory=pc.PrecondConfig)
    scaling_mode: str = GLOBAL
    momentum: float = 0.0
    master_seed: int = 0
    batch_size: int | None = 1
    x0: Sequence[float] | None = None
    parallel: bool = False

    def __post_init__(self):
        if not self.gamma >= 0:
            raise ConfigurationError("step size gamma must be nonnegative")
        if self.T < 1:
            raise ConfigurationError("T must be at least 1")
        if self.scaling_mode not in (GLOBAL, LOCAL_EXPERIMENTAL):
            raise ConfigurationError(f"unknown scaling mode {self.scaling_mode!r}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigurationError("momentum must lie in [0, 1)")
        if self.batch_size is not None and self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive (or None for full batch)")

    def to_dict(self):
        d = {k: getattr(self, k) for k in ("gamma", "T", "scaling_mode", "momentum", "master_seed", "batch_size", "parallel")}
        d["schedule"] = self.schedule.to_dict()
        d["precond"] = self.precond.to_dict()
        d["x0"] = None if self.x0 is None else list(map(float, self.x0))
        return d


@dataclass(frozen=True)
class FedAdaGradConfig:
    eta: float
    eta_l: float
    tau: float
    T: int
    K: int = 1
    beta1: float = 0.0
    v_init: float | None = None
    participation: float = 1.0
    master_seed: int = 0
    batch_size: int | None = 1
    x0: Sequence[float] | None = None

    def __post_init__(self):
        if self.tau <= 0 or self.eta < 0 or self.eta_l < 0:
            raise ConfigurationError("need tau > 0 and nonnegative step sizes")
        if self.v_init is None:
            object.__setattr__(self, "v_init", self.tau**2)
        if self.v_init < self.tau**2 * (1 - 1e-12):
            raise ConfigurationError(f"v_init={self.v_init} must be at least tau^2={self.tau**2}")
        if not 0.0 <= self.beta1 < 1.0:
            raise ConfigurationError("beta1 must lie in [0, 1)")
        if self.K < 1 or self.T < 1:
            raise ConfigurationError("K and T must be at least 1")
        if not 0.0 < self.participation <= 1.0:
            raise ConfigurationError("participation must lie in (0, 1]")

    def to_dict(self):
        d = asdict(self)
        d["x0"] = None if self.x0 is None else list(map(float, self.x0))
        d["client_sampling"] = "uniform_without_replacement"
        return d


# ---------------------------------------------------------------------------
# records


class Row(NamedTuple):
    t: int
    phase: str
    dist_sq: float
    f_gap: float
    V_t: float
    d_min: float
    d_max: float
    growth_ok: bool


@dataclass
class RunRecord:
    rows: list[Row]
    xhat: np.ndarray
    config: dict
    dist_dhat: list[float] = field(default_factory=list)
    consensus: list[float] = field(default_factory=list)
    xbar: np.ndarray | None = None
    xbar_f_gap: float | None = None
    xbar_f_gap_curve: list[float] = field(default_factory=list)
    observed_max_grad: float = 0.0
    diverged_at: int | None = None

    @property
    def status(self) -> str:
        return "ok" if self.diverged_at is None else f"divergence at t={self.diverged_at}"

    @property
    def final(self) -> Row:
        return self.rows[-1]

    def column(self, name: str) -> np.ndarray:
        i = CSV_HEADER.index(name)
        return np.array([r[i] for r in self.rows])

    def sync_rows(self) -> list[Row]:
        return [r for r in self.rows if r.phase == "sync"]

    def to_csv(self, fh=None, extra: dict[str, Sequence[float]] | None = None) -> str:
        """Write rows as CSV; ``extra`` appends named columns (one value per row)."""
        buf = io.StringIO() if fh is None else fh
        w = csv.writer(buf, lineterminator="\n")
        extra = extra or {}
        w.writerow(list(CSV_HEADER) + list(extra))
        for i, r in enumerate(self.rows):
            vals = [r.t, r.phase] + [repr(float(v)) for v in r[2:7]] + ["true" if r.growth_ok else "false"]
            vals += [repr(float(col[i])) for col in extra.values()]
            w.writerow(vals)
        return buf.getvalue() if fh is None else ""

    def summary(self) -> dict:
        f = self.final
        return {
            "status": self.status,
            "iterations": f.t,
            "final_dist_sq": f.dist_sq,
            "final_f_gap": f.f_gap,
            "final_V_t": f.V_t,
            "xbar_f_gap": self.xbar_f_gap,
            "observed_max_grad_entry": self.observed_max_grad,
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2, sort_keys=True)


def iterations_to_epsilon(record: RunRecord, eps: float) -> int | None:
    """First sync row whose function gap is at most ``eps``."""
    for r in record.rows:
        if r.phase == "sync" and r.f_gap <= eps:
            return r.t
    return None


# ---------------------------------------------------------------------------
# shared helpers


def worker_stream(master_seed: int, worker: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(0, worker))))


def server_stream(master_seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(1,))))


def sampling_stream(master_seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(2,))))


def _mean(vectors) -> np.ndarray:
    acc = np.zeros_like(vectors[0])
    for v in vectors:
        acc += v
    return acc / len(vectors)


def _average(points) -> np.ndarray:
    # anchored so that identical inputs average to themselves bit for bit
    anchor = points[0]
    acc = np.zeros_like(anchor)
    for p in points:
        acc += p - anchor
    return anchor + acc / len(points)


def compute_V(workers, x_hat, d_hat_clipped) -> float:
    """Mean squared deviation of worker iterates from ``x_hat`` in the ``D_hat`` norm."""
    acc = 0.0
    for x in workers:
        diff = np.asarray(x) - x_hat
        acc += float(np.sum(d_hat_clipped * diff * diff))
    return acc / len(workers)


class WeightedAverage:
    """Running average with weights ``(1 - gamma*mu/(2*Gamma))^-(t+1)``.

    The weights grow geometrically, so only the ratio ``w_t / W_t =
    rho / (1 - q^(t+1))`` is ever formed.
    """

    def __init__(self, gamma: float, mu: float, gamma_cap: float):
        rho = gamma * mu / (2.0 * gamma_cap)
        if not 0.0 <= rho < 1.0:
            raise ConfigurationError(f"weighted average needs 0 <= gamma*mu/(2*Gamma) < 1, got {rho}")
        self.rho = rho
        self.q = 1.0 - rho
        self.count = 0
        self.value = None

    def add(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.value is None:
            self.value = x.copy()
        else:
            if self.rho == 0.0:
                w = 1.0 / (self.count + 1)
            else:
                w = self.rho / -math.expm1((self.count + 1) * math.log1p(-self.rho))
            self.value = self.value + w * (x - self.value)
        self.count += 1
        return self.value


def weighted_average(xhats, gamma: float, mu: float, gamma_cap: float) -> np.ndarray:
    avg = WeightedAverage(gamma, mu, gamma_cap)
    for x in xhats:
        avg.add(x)
    if avg.value is None:
        raise ConfigurationError("weighted average of an empty sequence")
    return avg.value


def _diverged(x) -> bool:
    # nan compares false, so this also catches non-finite entries
    return not float(x @ x) <= DIVERGENCE_NORM**2


def _initial_point(x0, d):
    if x0 is None:
        return np.zeros(d)
    x0 = np.array(x0, dtype=float)
    if x0.shape != (d,):
        raise ConfigurationError(f"x0 has shape {x0.shape}, expected ({d},)")
    return x0


def _resolve_optimum(suite, optimum):
    if optimum is not None:
        return np.asarray(optimum[0], dtype=float), float(optimum[1])
    try:
        return exact_optimum(suite)
    except NoUniqueOptimum:
        return None, math.nan


class _Metrics:
    def __init__(self, suite, x_star, f_star):
        self.suite, self.x_star, self.f_star = suite, x_star, f_star

    def dist_sq(self, x):
        if self.x_star is None:
            return math.nan
        e = x - self.x_star
        return float(e @ e)

    def dist_dhat(self, x, dhat):
        if self.x_star is None:
            return math.nan
        e = x - self.x_star
        return float(np.sum(dhat * e * e))

    def f_gap(self, x):
        return self.suite.loss(x) - self.f_star


# ---------------------------------------------------------------------------
# scaled local SGD


class _Worker:
    __slots__ = ("id", "x", "rng", "buf", "state")

    def __init__(self, wid, x, rng, state=None):
        self.id, self.x, self.rng, self.buf, self.state = wid, x, rng, None, state


class _PhaseResult(NamedTuple):
    traj: list  # iterates after each non-final local step
    x_old: np.ndarray  # iterate before the final (averaged) step
    last_dir: np.ndarray | None  # unapplied direction of the final step
    gmax: float
    bad: int | None  # index into the phase where the iterate blew up
    dhat_traj: list  # clipped diagonal after each step (local mode only)
    growth: list  # growth check per step (local mode only)


def _run_phase(suite, w: _Worker, steps: int, gamma: float, dhat, cfg: SavicConfig) -> _PhaseResult:
    """Advance one worker through ``steps`` local iterations.

    The last step is not applied; its direction is returned so the server
    can average ``x - gamma * dir`` across workers.
    """
    x, traj, gmax, bad = w.x, [], 0.0, None
    dhat_traj, growth = [], []
    local = cfg.scaling_mode == LOCAL_EXPERIMENTAL
    pcfg = cfg.precond
    if local:
        dhat = w.state.clipped
    last = None
    for s in range(steps):
        g = suite.stoch_grad(w.id, x, w.rng, cfg.batch_size)
        gmax = max(gmax, float(np.max(np.abs(g))))
        if local and pcfg.rule != pc.IDENTITY:
            if pcfg.estimator == pc.GRAD_SQUARE:
                h = g * g if pcfg.rule == pc.SQUARE else np.abs(g)
            else:
                h = pc.estimate_H(suite, w.id, x, w.rng, pcfg.estimator, pcfg.rule == pc.SQUARE, cfg.batch_size)
            prev = w.state
            w.state = pc.update(prev, h)
            growth.append(pc.check_growth(prev.clipped, w.state.clipped, pc.beta_at(pcfg, w.state.step_index), pcfg))
            dhat = w.state.clipped
        elif local:
            growth.append(True)
        direction = g / dhat
        if cfg.momentum > 0.0:
            w.buf = direction if w.buf is None else cfg.momentum * w.buf + direction
            direction = w.buf
        if s == steps - 1:
            last = direction
            break
        x = x - gamma * direction
        if _diverged(x):
            bad = s
            break
        traj.append(x)
        if local:
            dhat_traj.append(dhat)
    return _PhaseResult(traj, x, last, gmax, bad, dhat_traj, growth)


def run_savic(suite: ProblemSuite, config: SavicConfig, optimum=None) -> RunRecord:
    """Scaled Local SGD with a shared (or per-worker) diagonal scaling matrix."""
    d, M = suite.d, suite.M
    pcfg = config.precond
    x0 = _initial_point(config.x0, d)
    x_star, f_star = _resolve_optimum(suite, optimum)
    metrics = _Metrics(suite, x_star, f_star)
    local = config.scaling_mode == LOCAL_EXPERIMENTAL
    server = server_stream(config.master_seed)
    squared = pcfg.rule == pc.SQUARE

    state = pc.initial_state(pcfg, d)
    workers = [_Worker(m, x0.copy(), worker_stream(config.master_seed, m),
                       pc.initial_state(pcfg, d) if local else None) for m in range(M)]

    try:
        avg = WeightedAverage(config.gamma, suite.mu, pcfg.gamma_cap)
    except ConfigurationError:
        avg = None

    rows, xhats, dist_dhat, consensus, xbar_curve = [], [], [], [], []
    gmax = 0.0
    diverged_at = None

    def global_update(x_hat):
        nonlocal state
        if pcfg.rule == pc.IDENTITY:
            state = pc.update(state, None)
            return True
        h = pc.estimate_H_global(suite, x_hat, server, pcfg.estimator, squared, config.batch_size)
        prev = state
        state = pc.update(prev, h)
        return pc.check_growth(prev.clipped, state.clipped, pc.beta_at(pcfg, state.step_index), pcfg)

    def emit(t, phase, points, dhat, growth_ok):
        x_hat = _average(points)
        V = compute_V(points, x_hat, dhat)
        rows.append(Row(t, phase, metrics.dist_sq(x_hat), metrics.f_gap(x_hat), V,
                        float(dhat.min()), float(dhat.max()), bool(growth_ok)))
        xhats.append(x_hat)
        dist_dhat.append(metrics.dist_dhat(x_hat, dhat))
        consensus.append(max(float(np.max(np.abs(p - x_hat))) for p in points))
        if avg is not None and t < config.T:
            xbar_curve.append(metrics.f_gap(avg.add(x_hat)))

    def current_dhat():
        if local:
            return _mean([w.state.clipped for w in workers])
        return state.clipped

    ok = True if local else global_update(x0)
    emit(0, "sync", [w.x for w in workers], current_dhat(), ok)

    pool = ThreadPoolExecutor(max_workers=M) if config.parallel and M > 1 else None
    try:
        t = 0
        while t < config.T and diverged_at is None:
            nxt = t + 1
            while nxt < config.T and not config.schedule.is_sync(nxt):
                nxt += 1
            steps = nxt - t
            dhat = None if local else state.clipped

            def task(w, steps=steps, dhat=dhat):
                return _run_phase(suite, w, steps, config.gamma, dhat, config)

            results = list(pool.map(task, workers)) if pool else [task(w) for w in workers]
            gmax = max([gmax] + [r.gmax for r in results])

            n_ok = min(len(r.traj) for r in results)
            for s in range(n_ok):
                pts = [r.traj[s] for r in results]
                if local:
                    dh = _mean([r.dhat_traj[s] for r in results])
                    g_ok = all(r.growth[s] for r in results)
                else:
                    dh, g_ok = state.clipped, True
                emit(t + s + 1, "local", pts, dh, g_ok)
            if any(r.bad is not None for r in results):
                diverged_at = t + n_ok + 1
                break

            is_sync = config.schedule.is_sync(nxt)
            if is_sync:
                x_hat = _average([r.x_old for r in results]) - _mean([config.gamma * r.last_dir for r in results])
                new_points = [x_hat.copy() for _ in workers]
            else:
                new_points = [r.x_old - config.gamma * r.last_dir for r in results]
            if any(_diverged(p) for p in new_points):
                diverged_at = nxt
                break
            for w, p in zip(workers, new_points):
                w.x = p
            if local:
                g_ok = all(r.growth[-1] for r in results) if results[0].growth else True
            else:
                g_ok = global_update(x_hat) if is_sync else True
            emit(nxt, "sync" if is_sync else "local", [w.x for w in workers], current_dhat(), g_ok)
            t = nxt
    finally:
        if pool:
            pool.shutdown()

    xbar = avg.value if avg is not None and avg.value is not None else None
    return RunRecord(
        rows=rows, xhat=np.array(xhats), config={"algorithm": "savic", **config.to_dict()},
        dist_dhat=dist_dhat, consensus=consensus, xbar=xbar,
        xbar_f_gap=None if xbar is None else metrics.f_gap(xbar),
        xbar_f_gap_curve=xbar_curve, observed_max_grad=gmax, diverged_at=diverged_at,
    )


def run_minibatch_sgd(suite: ProblemSuite, config: SavicConfig, optimum=None) -> RunRecord:
    """Single shared iterate stepped by the average of per-worker stochastic gradients.

    Uses the same per-worker streams as :func:`run_savic`; the preconditioner,
    schedule and momentum fields of ``config`` are ignored.
    """
    d, M = suite.d, suite.M
    x = _initial_point(config.x0, d)
    x_star, f_star = _resolve_optimum(suite, optimum)
    metrics = _Metrics(suite, x_star, f_star)
    streams = [worker_stream(config.master_seed, m) for m in range(M)]
    ones = np.ones(d)
    rows, xhats = [], []
    gmax = 0.0
    diverged_at = None

    def emit(t, x):
        rows.append(Row(t, "sync", metrics.dist_sq(x), metrics.f_gap(x), 0.0, 1.0, 1.0, True))
        xhats.append(x)

    emit(0, x)
    for t in range(config.T):
        grads = [suite.stoch_grad(m, x, streams[m], config.batch_size) for m in range(M)]
        gmax = max([gmax] + [float(np.max(np.abs(g))) for g in grads])
        x = x - _mean([config.gamma * g for g in grads])
        if _diverged(x):
            diverged_at = t + 1
            break
        emit(t + 1, x)
    cfg = config.to_dict()
    cfg.pop("precond"), cfg.pop("schedule"), cfg.pop("scaling_mode"), cfg.pop("momentum")
    return RunRecord(rows=rows, xhat=np.array(xhats), config={"algorithm": "minibatch_sgd", **cfg},
                     dist_dhat=[r.dist_sq for r in rows], consensus=[0.0] * len(rows),
                     observed_max_grad=gmax, diverged_at=diverged_at)


# ---------------------------------------------------------------------------
# FedAdaGrad


def run_fedadagrad(suite: ProblemSuite, config: FedAdaGradConfig, optimum=None) -> RunRecord:
    """Server-side AdaGrad on averaged client displacements after K local SGD steps."""
    d, M = suite.d, suite.M
    x = _initial_point(config.x0, d)
    x_star, f_star = _resolve_optimum(suite, optimum)
    metrics = _Metrics(suite, x_star, f_star)
    streams = [worker_stream(config.master_seed, m) for m in range(M)]
    sampler = sampling_stream(config.master_seed)
    n_sampled = max(1, int(round(config.participation * M)))
    m_t = np.zeros(d)
    v_t = np.full(d, float(config.v_init))
    rows, xhats = [], []
    gmax = 0.0
    diverged_at = None

    def emit(t, x):
        denom = np.sqrt(v_t) + config.tau
        rows.append(Row(t, "sync", metrics.dist_sq(x), metrics.f_gap(x), 0.0,
                        float(denom.min()), float(denom.max()), True))
        xhats.append(x)

    emit(0, x)
    for t in range(config.T):
        if n_sampled == M:
            clients = range(M)
        else:
            clients = sorted(int(i) for i in sampler.choice(M, size=n_sampled, replace=False))
        deltas = []
        for i in clients:
            xi = x
            for _ in range(config.K):
                g = suite.stoch_grad(i, xi, streams[i], config.batch_size)
                gmax = max(gmax, float(np.max(np.abs(g))))
                xi = xi - config.eta_l * g
            deltas.append(xi - x)
        delta = _mean(deltas)
        m_t = config.beta1 * m_t + (1.0 - config.beta1) * delta
        v_t = v_t + delta * delta
        x = x + config.eta * m_t / (np.sqrt(v_t) + config.tau)
        if _diverged(x):
            diverged_at = t + 1
            break
        emit(t + 1, x)
    return RunRecord(rows=rows, xhat=np.array(xhats), config={"algorithm": "fedadagrad", **config.to_dict()},
                     dist_dhat=[r.dist_sq for r in rows], consensus=[0.0] * len(rows),
                     observed_max_grad=gmax, diverged_at=diverged_at)
