"""Exact-probability version of cooperative learning on a finite state space.

Conditional distributions are tables of shape (n_conditions, n_states).
The solver is a tabular energy ``theta[c, s]`` with p(s | c) proportional to
exp(theta[c, s]); the initializer is a softmax over logits ``alpha[c, s]``.
One iteration replaces sampling with exact propagation:

    refined = M_theta q
    theta  += lr_theta * w_c * (data - refined)      (objective shift)
    alpha  += lr_alpha * w_c * (refined - q)         (mapping shift)

where ``w_c`` is the condition weight.  Both updates use the same ``refined``,
as in one pass of the sampling algorithm.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np


class InvalidSystemError(ValueError):
    pass


def softmax_rows(z):
    z = np.asarray(z, dtype=np.float64)
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def metropolis_ring_kernel(energy_row, steps=1):
    """Metropolis kernel on a ring: propose a neighbour (1/2 each), accept by exp(delta f).

    Returns the ``steps``-fold product as a row-stochastic matrix.
    """
    f = np.asarray(energy_row, dtype=np.float64)
    n = len(f)
    K = np.zeros((n, n))
    if n == 1:
        K[0, 0] = 1.0
    else:
        for s in range(n):
            for t in ((s - 1) % n, (s + 1) % n):
                K[s, t] += 0.5 * min(1.0, float(np.exp(f[t] - f[s])))
            K[s, s] = 1.0 - K[s].sum()
    return np.linalg.matrix_power(K, steps)


def exact_kernel(energy_row):
    """The kernel that jumps straight to the stationary distribution."""
    p = softmax_rows(energy_row)
    return np.tile(p, (len(p), 1))


def stationary(K):
    """Left eigenvector of a row-stochastic matrix with eigenvalue 1."""
    n = len(K)
    A = np.vstack([K.T - np.eye(n), np.ones((1, n))])
    b = np.zeros(n + 1)
    b[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, b, rcond=None)
    pi = np.clip(pi, 0, None)
    return pi / pi.sum()


def kl(p, q, weights):
    """Condition-weighted KL between row tables: sum_c w_c sum_s p log(p / q)."""
    p = np.asarray(p)
    q = np.asarray(q)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(p > 0, p * (np.log(p) - np.log(q)), 0.0)
    return float(np.dot(weights, terms.sum(axis=1)))


def tv(p, q, weights):
    return float(np.dot(weights, 0.5 * np.abs(np.asarray(p) - np.asarray(q)).sum(axis=1)))


@dataclass
class DiscreteCoopSystem:
    data: np.ndarray            # f_data[c, s]
    theta: np.ndarray           # energy table
    alpha: np.ndarray           # initializer logits
    condition_weights: np.ndarray | None = None
    kernel: str = "metropolis"  # or "exact"
    mcmc_steps: int = 1
    lr_theta: float = 4.0
    lr_alpha: float = 10.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        self.theta = np.asarray(self.theta, dtype=np.float64)
        self.alpha = np.asarray(self.alpha, dtype=np.float64)
        if self.condition_weights is None:
            self.condition_weights = np.full(len(self.data), 1.0 / len(self.data))
        self.condition_weights = np.asarray(self.condition_weights, dtype=np.float64)
        if not (self.data.shape == self.theta.shape == self.alpha.shape) or self.data.ndim != 2:
            raise InvalidSystemError("data, theta and alpha must share one (conditions, states) shape")
        if np.any(self.data < 0) or not np.allclose(self.data.sum(axis=1), 1, atol=1e-12, rtol=0):
            raise InvalidSystemError("data rows must be probability distributions")
        if not np.isclose(self.condition_weights.sum(), 1, atol=1e-12):
            raise InvalidSystemError("condition weights must sum to 1")
        if self.kernel not in ("metropolis", "exact"):
            raise InvalidSystemError(f"unknown kernel {self.kernel!r}")

    @property
    def p(self):
        return softmax_rows(self.theta)

    @property
    def q(self):
        return softmax_rows(self.alpha)

    def kernels(self):
        if self.kernel == "exact":
            Ks = [exact_kernel(row) for row in self.theta]
        else:
            Ks = [metropolis_ring_kernel(row, self.mcmc_steps) for row in self.theta]
        for K in Ks:
            if np.any(K < -1e-15) or not np.allclose(K.sum(axis=1), 1, atol=1e-12):
                raise InvalidSystemError("transition kernel is not row-stochastic")
        return Ks

    def refined(self, Ks=None):
        Ks = self.kernels() if Ks is None else Ks
        q = self.q
        return np.stack([q[c] @ Ks[c] for c in range(len(q))])


@dataclass
class FixedPointTrace:
    kl_data_p: list = field(default_factory=list)
    kl_refined_p: list = field(default_factory=list)
    kl_refined_q: list = field(default_factory=list)
    tv_q_stationary: list = field(default_factory=list)
    kl_q_p: list = field(default_factory=list)

    COLUMNS = ("kl_data_p", "kl_refined_p", "kl_refined_q", "tv_q_stationary")

    def rows(self):
        return [(i,) + tuple(getattr(self, c)[i] for c in self.COLUMNS)
                for i in range(len(self.kl_data_p))]

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("iteration",) + self.COLUMNS)
            for row in self.rows():
                w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])


def diagnostics(sys: DiscreteCoopSystem):
    Ks = sys.kernels()
    w = sys.condition_weights
    p, q = sys.p, sys.q
    mq = sys.refined(Ks)
    stat = np.stack([stationary(K) for K in Ks])
    return {
        "kl_data_p": kl(sys.data, p, w),
        "kl_refined_p": kl(mq, p, w),
        "kl_refined_q": kl(mq, q, w),
        "tv_q_stationary": tv(q, stat, w),
        "kl_q_p": kl(q, p, w),
    }, mq


def step(sys: DiscreteCoopSystem, refined=None) -> DiscreteCoopSystem:
    mq = sys.refined() if refined is None else refined
    w = sys.condition_weights[:, None]
    theta = sys.theta + sys.lr_theta * w * (sys.data - mq)
    alpha = sys.alpha + sys.lr_alpha * w * (mq - sys.q)
    return replace(sys, theta=theta, alpha=alpha)


def fixed_point_sim(sys: DiscreteCoopSystem, iterations: int):
    """Record diagnostics at iterations 0..iterations; returns (trace, final system)."""
    trace = FixedPointTrace()
    for it in range(iterations + 1):
        d, mq = diagnostics(sys)
        for k, v in d.items():
            getattr(trace, k).append(v)
        if it < iterations:
            sys = step(sys, mq)
    return trace, sys


def random_system(n_states=16, n_conditions=2, seed=0, **kw) -> DiscreteCoopSystem:
    """Random smooth target tables, random energies and random initializer logits."""
    rng = np.random.default_rng(seed)
    s = np.arange(n_states)
    data = []
    for _ in range(n_conditions):
        centre = rng.uniform(0, n_states)
        d = np.minimum(np.abs(s - centre), n_states - np.abs(s - centre))
        logits = -0.5 * (d / rng.uniform(1.5, 3.0)) ** 2 + 0.3 * rng.standard_normal(n_states)
        data.append(softmax_rows(logits))
    theta = 0.5 * rng.standard_normal((n_conditions, n_states))
    alpha = 0.5 * rng.standard_normal((n_conditions, n_states))
    return DiscreteCoopSystem(np.array(data), theta, alpha, **kw)


def load_system(d: dict) -> DiscreteCoopSystem:
    """Build a system from a config mapping (explicit tables or a random spec)."""
    d = dict(d)
    if "data" in d:
        return DiscreteCoopSystem(**d)
    return random_system(**d)
