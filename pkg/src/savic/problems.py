"""Synthetic finite-sum objectives with exact oracles.

Every worker ``m`` holds a finite set of samples and its objective ``f_m`` is
the uniform average of the per-sample losses.  The global objective is the
uniform average of the worker objectives.  Two families are provided:

* quadratics ``1/2 x^T A_j x - b_j^T x`` with symmetric PSD ``A_j``;
* ridge-regularised logistic regression ``log(1 + exp(-y a^T x)) + lam/2 |x|^2``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence, Union

import numpy as np
from scipy.special import expit

from .errors import ConfigurationError, NoUniqueOptimum

IDENTICAL = "identical"
HETEROGENEOUS = "heterogeneous"


def _as_vector(x, d: int) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape != (d,):
        raise ConfigurationError(f"expected a vector of dimension {d}, got shape {x.shape}")
    return x


class QuadraticWorkerProblem:
    """Worker objective ``mean_j 1/2 x^T A_j x - b_j^T x``."""

    kind = "quadratic"

    def __init__(self, A, b):
        A = np.array(A, dtype=float)
        b = np.array(b, dtype=float)
        if A.ndim == 2:
            A, b = A[None], b[None]
        if A.ndim != 3 or A.shape[1] != A.shape[2] or b.shape != A.shape[:2]:
            raise ConfigurationError(f"bad quadratic shapes A={A.shape} b={b.shape}")
        if not np.allclose(A, A.transpose(0, 2, 1), rtol=0.0, atol=1e-12):
            raise ConfigurationError("quadratic sample matrices must be symmetric")
        # exact symmetry so that hvp and grad agree to the last bit
        A = 0.5 * (A + A.transpose(0, 2, 1))
        self.A = A
        self.b = b
        self.n, self.d = b.shape
        self.A_mean = A.mean(axis=0)
        self.b_mean = b.mean(axis=0)
        eig = np.linalg.eigvalsh(A)
        if eig.min() < -1e-10:
            raise ConfigurationError("quadratic sample matrices must be positive semidefinite")
        # bounds hold for every sample and therefore for the average
        self.mu = float(max(eig.min(), 0.0))
        self.L = float(eig.max())

    def loss(self, x):
        return float(0.5 * x @ self.A_mean @ x - self.b_mean @ x)

    def sample_loss(self, j, x):
        return float(0.5 * x @ self.A[j] @ x - self.b[j] @ x)

    def grad(self, x):
        return self.A_mean @ x - self.b_mean

    def sample_grad(self, j, x):
        return self.A[j] @ x - self.b[j]

    def sample_grads(self, x):
        """All per-sample gradients, shape ``(n, d)``."""
        return self.A @ x - self.b

    def hvp(self, x, v, j):
        return self.A[j] @ v

    def hessian(self, x):
        return self.A_mean

    def to_dict(self):
        return {"kind": self.kind, "A": self.A.tolist(), "b": self.b.tolist()}


class LogRegWorkerProblem:
    """Worker objective ``mean_j log(1 + exp(-y_j a_j^T x)) + lam/2 |x|^2``."""

    kind = "logreg"

    def __init__(self, features, labels, lam: float = 0.0):
        X = np.array(features, dtype=float)
        y = np.array(labels, dtype=float)
        if X.ndim != 2 or y.shape != (X.shape[0],):
            raise ConfigurationError(f"bad logreg shapes X={X.shape} y={y.shape}")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise ConfigurationError("logreg labels must be -1 or +1")
        if lam < 0:
            raise ConfigurationError("ridge coefficient must be nonnegative")
        norms = np.einsum("ij,ij->i", X, X)
        if not np.all(np.isfinite(norms)) or np.any(norms == 0):
            raise ConfigurationError("feature norms must be finite and nonzero")
        self.X = X
        self.y = y
        self.lam = float(lam)
        self.n, self.d = X.shape
        self.L = float(norms.max() / 4.0 + self.lam)
        self.mu = self.lam

    def _margins(self, x):
        return self.y * (self.X @ x)

    def loss(self, x):
        return float(np.mean(np.logaddexp(0.0, -self._margins(x))) + 0.5 * self.lam * x @ x)

    def sample_loss(self, j, x):
        m = self.y[j] * (self.X[j] @ x)
        return float(np.logaddexp(0.0, -m) + 0.5 * self.lam * x @ x)

    def grad(self, x):
        s = -self.y * expit(-self._margins(x))
        return self.X.T @ s / self.n + self.lam * x

    def sample_grad(self, j, x):
        m = self.y[j] * (self.X[j] @ x)
        return -self.y[j] * expit(-m) * self.X[j] + self.lam * x

    def sample_grads(self, x):
        s = -self.y * expit(-self._margins(x))
        return s[:, None] * self.X + self.lam * x

    def hvp(self, x, v, j):
        p = expit(self.X[j] @ x)
        return p * (1.0 - p) * (self.X[j] @ v) * self.X[j] + self.lam * v

    def hessian(self, x):
        p = expit(self.X @ x)
        w = p * (1.0 - p)
        return (self.X.T * w) @ self.X / self.n + self.lam * np.eye(self.d)

    def to_dict(self):
        return {"kind": self.kind, "X": self.X.tolist(), "y": self.y.tolist(), "lam": self.lam}


WorkerProblem = Union[QuadraticWorkerProblem, LogRegWorkerProblem]


def _worker_from_dict(doc) -> WorkerProblem:
    if doc["kind"] == "quadratic":
        return QuadraticWorkerProblem(doc["A"], doc["b"])
    if doc["kind"] == "logreg":
        return LogRegWorkerProblem(doc["X"], doc["y"], doc["lam"])
    raise ConfigurationError(f"unknown worker problem kind {doc['kind']!r}")


@dataclass(frozen=True)
class ProblemSuite:
    """M worker objectives plus the regime and oracle-noise level."""

    workers: Sequence[WorkerProblem]
    regime: str = HETEROGENEOUS
    noise: float = 0.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if len(self.workers) < 1:
            raise ConfigurationError("a suite needs at least one worker")
        if self.regime not in (IDENTICAL, HETEROGENEOUS):
            raise ConfigurationError(f"unknown regime {self.regime!r}")
        if self.noise < 0:
            raise ConfigurationError("noise level must be nonnegative")
        if self.noise > 0 and self.regime != IDENTICAL:
            raise ConfigurationError("Gaussian oracle noise is only available in the identical regime")
        dims = {w.d for w in self.workers}
        if len(dims) != 1:
            raise ConfigurationError(f"workers disagree on dimension: {sorted(dims)}")
        if self.regime == IDENTICAL:
            ref = json.dumps(self.workers[0].to_dict())
            if any(json.dumps(w.to_dict()) != ref for w in self.workers[1:]):
                raise ConfigurationError("identical regime requires identical worker sample sets")

    @property
    def M(self) -> int:
        return len(self.workers)

    @property
    def d(self) -> int:
        return self.workers[0].d

    @property
    def L(self) -> float:
        return max(w.L for w in self.workers)

    @property
    def mu(self) -> float:
        return min(w.mu for w in self.workers)

    @property
    def kind(self) -> str:
        return self.workers[0].kind

    @cached_property
    def _global_quadratic(self):
        A = sum(w.A_mean for w in self.workers) / self.M
        b = sum(w.b_mean for w in self.workers) / self.M
        return A, b

    def loss(self, x) -> float:
        x = _as_vector(x, self.d)
        if self.kind == "quadratic":
            A, b = self._global_quadratic
            return float(0.5 * x @ A @ x - b @ x)
        return float(np.mean([w.loss(x) for w in self.workers]))

    def full_grad(self, x) -> np.ndarray:
        x = _as_vector(x, self.d)
        acc = np.zeros(self.d)
        for w in self.workers:
            acc += w.grad(x)
        return acc / self.M

    def grad(self, worker: int, x) -> np.ndarray:
        """Exact gradient of ``f_worker`` at ``x``."""
        return self.workers[worker].grad(_as_vector(x, self.d))

    def stoch_grad(self, worker: int, x, rng: np.random.Generator, batch_size: int | None = 1) -> np.ndarray:
        """Gradient of uniformly drawn components, averaged over ``batch_size`` draws.

        ``batch_size=None`` uses the full finite sum.  In the identical regime an
        isotropic Gaussian with per-coordinate variance ``noise**2 / d`` is added
        per draw, so a single draw carries total noise variance ``noise**2``.
        """
        w = self.workers[worker]
        if batch_size is None:
            g = w.grad(x)
            draws = 1
        else:
            idx = rng.integers(0, w.n, size=batch_size)
            if batch_size == 1:
                g = w.sample_grad(int(idx[0]), x)
            else:
                g = np.mean([w.sample_grad(int(j), x) for j in idx], axis=0)
            draws = batch_size
        if self.noise > 0:
            z = rng.standard_normal((draws, self.d))
            g = g + (self.noise / np.sqrt(self.d)) * z.mean(axis=0)
        return g

    def hvp(self, worker: int, x, v, sample: int) -> np.ndarray:
        w = self.workers[worker]
        if not 0 <= sample < w.n:
            raise ConfigurationError(f"sample index {sample} out of range for worker {worker}")
        return w.hvp(x, v, sample)

    def to_dict(self) -> dict:
        return {
            "regime": self.regime,
            "noise": self.noise,
            "meta": self.meta,
            "workers": [w.to_dict() for w in self.workers],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, doc) -> "ProblemSuite":
        return cls([_worker_from_dict(w) for w in doc["workers"]], doc["regime"], doc["noise"], doc.get("meta", {}))

    @classmethod
    def from_json(cls, text: str) -> "ProblemSuite":
        return cls.from_dict(json.loads(text))


def exact_optimum(suite: ProblemSuite, tol: float = 1e-12, max_iter: int = 100):
    """Return ``(x_star, f_star)`` for the global objective.

    Quadratics are solved in closed form.  Logistic suites use damped Newton
    with backtracking until the gradient norm drops below ``tol``.
    """
    d = suite.d
    if suite.kind == "quadratic":
        A, b = suite._global_quadratic
        eig = np.linalg.eigvalsh(A)
        if eig[0] <= 1e-12 * max(abs(eig[-1]), 1.0):
            raise NoUniqueOptimum("no unique optimum: averaged quadratic is singular")
        x = np.linalg.solve(A, b)
        # one refinement step to push the residual to rounding level
        x = x + np.linalg.solve(A, b - A @ x)
        return x, suite.loss(x)

    if suite.mu <= 0:
        raise NoUniqueOptimum("no unique optimum: logistic suite needs a positive ridge coefficient")
    x = np.zeros(d)
    f = suite.loss(x)
    for _ in range(max_iter):
        g = suite.full_grad(x)
        if np.linalg.norm(g) < tol:
            break
        Hm = sum(w.hessian(x) for w in suite.workers) / suite.M
        step = np.linalg.solve(Hm, g)
        t = 1.0
        while t > 1e-10:
            x_new = x - t * step
            f_new = suite.loss(x_new)
            if f_new <= f - 0.25 * t * g @ step or t * np.linalg.norm(step) < 1e-15:
                break
            t *= 0.5
        x, f = x_new, f_new
    return x, suite.loss(x)


def sigma_dif_sq(suite: ProblemSuite, x_star) -> float:
    """Average expected squared norm of per-worker stochastic gradients at ``x_star``.

    The Gaussian oracle noise of the identical regime contributes ``noise**2``.
    """
    total = 0.0
    for w in suite.workers:
        G = w.sample_grads(np.asarray(x_star, dtype=float))
        total += float(np.mean(np.einsum("ij,ij->i", G, G)))
    return total / suite.M + suite.noise**2


# ---------------------------------------------------------------------------
# generators


def random_spd(rng: np.random.Generator, d: int, mu: float, L: float, pin_ends: bool = True) -> np.ndarray:
    """Symmetric matrix with log-uniform spectrum on ``[mu, L]`` in a random orthogonal basis."""
    if not 0 < mu <= L:
        raise ConfigurationError("need 0 < mu <= L")
    eig = np.exp(rng.uniform(np.log(mu), np.log(L), size=d))
    if pin_ends and d >= 2:
        eig[0], eig[-1] = mu, L
    Q, R = np.linalg.qr(rng.standard_normal((d, d)))
    Q = Q * np.sign(np.diag(R))
    A = (Q * eig) @ Q.T
    return 0.5 * (A + A.T)


def quadratic_identical(M: int, d: int, mu: float = 1.0, L: float = 10.0, noise: float = 0.0,
                        opt_radius: float | None = None, seed: int = 0) -> ProblemSuite:
    """Identical-regime quadratic: every worker holds the same single sample.

    The minimiser is placed at a random point of norm ``opt_radius``
    (default ``sqrt(d)``); runs start from the origin.
    """
    rng = np.random.default_rng(seed)
    A = random_spd(rng, d, mu, L)
    u = rng.standard_normal(d)
    radius = np.sqrt(d) if opt_radius is None else opt_radius
    x_star = radius * u / np.linalg.norm(u)
    worker = QuadraticWorkerProblem(A, A @ x_star)
    meta = {"generator": "quadratic_identical", "M": M, "d": d, "mu": mu, "L": L, "seed": seed}
    return ProblemSuite([worker] * M, IDENTICAL, noise, meta)


def quadratic_heterogeneous(M: int, d: int, n_samples: int = 8, mu: float = 1.0, L: float = 4.0,
                            spread: float = 1.0, shift: float = 0.0, opt_radius: float | None = None,
                            interpolating: bool = False, seed: int = 0) -> ProblemSuite:
    """Heterogeneous finite-sum quadratic.

    Worker ``m`` draws its own curvature for each sample and a per-worker
    target ``c + shift * e_m``; each sample's minimiser is that target plus
    ``spread``-scaled Gaussian jitter.  ``interpolating=True`` puts every
    sample minimiser at the same point so that all stochastic gradients
    vanish there.
    """
    if M < 1 or n_samples < 1:
        raise ConfigurationError("need M >= 1 and n_samples >= 1")
    rng = np.random.default_rng(seed)
    radius = np.sqrt(d) if opt_radius is None else opt_radius
    u = rng.standard_normal(d)
    center = radius * u / np.linalg.norm(u)
    workers = []
    for _ in range(M):
        dirn = rng.standard_normal(d)
        target = center + shift * dirn / np.linalg.norm(dirn)
        A = np.stack([random_spd(rng, d, mu, L, pin_ends=False) for _ in range(n_samples)])
        if interpolating:
            minimisers = np.broadcast_to(center, (n_samples, d))
        else:
            minimisers = target + spread * rng.standard_normal((n_samples, d))
        b = np.einsum("jik,jk->ji", A, minimisers)
        workers.append(QuadraticWorkerProblem(A, b))
    meta = {"generator": "quadratic_heterogeneous", "M": M, "d": d, "n_samples": n_samples,
            "mu": mu, "L": L, "spread": spread, "shift": shift, "interpolating": interpolating, "seed": seed}
    return ProblemSuite(workers, HETEROGENEOUS, 0.0, meta)


def class_counts(n: int, skew: float, num_classes: int, main: int) -> np.ndarray:
    """Rows per class for one worker: ``floor(skew * n)`` from ``main``, rest spread evenly."""
    counts = np.zeros(num_classes, dtype=int)
    n_main = int(np.floor(skew * n + 1e-9))
    counts[main] = n_main
    others = [c for c in range(num_classes) if c != main]
    rest = n - n_main
    if others:
        q, r = divmod(rest, len(others))
        for k, c in enumerate(others):
            counts[c] = q + (1 if k < r else 0)
    else:
        counts[main] += rest
    return counts


def generate_heterogeneous(M: int, d: int, skew: float, seed: int = 0, rows_per_worker: int = 100,
                           num_classes: int | None = None, lam: float = 0.1,
                           class_sep: float = 2.0) -> ProblemSuite:
    """Logistic suite with main-class skew.

    Class ``c`` generates features ``N(center_c, I)`` and labels from a shared
    logistic teacher.  Worker ``m`` takes ``floor(skew * n)`` rows from class
    ``m mod num_classes`` and spreads the rest evenly over the other classes.
    """
    num_classes = M if num_classes is None else num_classes
    if num_classes < 1:
        raise ConfigurationError("need at least one class")
    if not (1.0 / num_classes - 1e-12 <= skew <= 1.0):
        raise ConfigurationError(f"skew must lie in [1/{num_classes}, 1], got {skew}")
    rng = np.random.default_rng(seed)
    centers = class_sep * rng.standard_normal((num_classes, d)) / np.sqrt(d)
    teacher = rng.standard_normal(d)
    workers = []
    for m in range(M):
        counts = class_counts(rows_per_worker, skew, num_classes, m % num_classes)
        feats = [centers[c] + rng.standard_normal((k, d)) for c, k in enumerate(counts) if k > 0]
        X = np.concatenate(feats, axis=0)
        p = expit(X @ teacher)
        y = np.where(rng.uniform(size=len(X)) < p, 1.0, -1.0)
        workers.append(LogRegWorkerProblem(X, y, lam))
    meta = {"generator": "logreg_skew", "M": M, "d": d, "skew": skew, "seed": seed,
            "rows_per_worker": rows_per_worker, "num_classes": num_classes, "lam": lam}
    return ProblemSuite(workers, HETEROGENEOUS, 0.0, meta)
