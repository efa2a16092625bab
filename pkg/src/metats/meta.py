"""Meta-posterior over instance-prior means and the meta-TS stage loop.

The instance prior is ``N(mu, sigma0^2 I)`` and the meta-prior over ``mu`` is
``N(0, sigmaq^2 I)``. After each track the meta-posterior is updated with the
marginal likelihood of that track's losses, in which the task parameter has
been integrated out: ``L_s | mu ~ N(X_s mu, sigma^2 I + X_s Sigma X_s^T)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Optional, Protocol

import numpy as np

from .bandit import AgentState, init_agent
from .gaussian import (
    DimensionMismatch,
    Gaussian,
    cholesky,
    kl_gaussian,
    sample_gaussian,
    symmetrize,
)


class NonPositiveVariance(ValueError):
    pass


@dataclass(frozen=True)
class MetaPosterior:
    mean: np.ndarray
    precision: np.ndarray
    instance_variance: float  # sigma0^2; Sigma = sigma0^2 I
    noise_variance: float  # sigma^2

    @property
    def dim(self):
        return self.mean.size

    @property
    def instance_covariance(self):
        return self.instance_variance * np.eye(self.dim)

    def as_gaussian(self) -> Gaussian:
        return Gaussian(self.mean, self.precision)

    def plug_in_prior(self) -> Gaussian:
        """Instance prior N(mean, sigma0^2 I) at the meta-posterior mean."""
        return Gaussian.isotropic(self.mean, self.instance_variance)


@dataclass(frozen=True)
class StageData:
    design: np.ndarray  # n x d, chosen features in order
    losses: np.ndarray  # n

    def __post_init__(self):
        X = np.asarray(self.design, dtype=float)
        L = np.asarray(self.losses, dtype=float).reshape(-1)
        if X.size == 0:
            X = X.reshape(0, X.shape[1] if X.ndim == 2 else 0)
        if X.ndim != 2 or X.shape[0] != L.size:
            raise DimensionMismatch(f"design {X.shape} does not match {L.size} losses")
        object.__setattr__(self, "design", X)
        object.__setattr__(self, "losses", L)

    @property
    def rounds(self):
        return self.losses.size


def init_meta(d, sigma_q2, sigma02, sigma2) -> MetaPosterior:
    for name, v in (("sigma_q2", sigma_q2), ("sigma02", sigma02), ("sigma2", sigma2)):
        if not v > 0:
            raise NonPositiveVariance(f"{name} must be positive, got {v}")
    return MetaPosterior(np.zeros(d), np.eye(d) / sigma_q2, float(sigma02), float(sigma2))


def sample_prior(q: MetaPosterior, rng: np.random.Generator) -> Gaussian:
    mu = sample_gaussian(q.as_gaussian(), rng)
    return Gaussian.isotropic(mu, q.instance_variance)


def meta_update(q: MetaPosterior, stage: StageData) -> MetaPosterior:
    if stage.rounds == 0:
        return q
    X, L = stage.design, stage.losses
    if X.shape[1] != q.dim:
        raise DimensionMismatch(f"stage has d={X.shape[1]}, meta-posterior has d={q.dim}")
    n = X.shape[0]
    M = q.noise_variance * np.eye(n) + q.instance_variance * (X @ X.T)
    C = cholesky(symmetrize(M))
    # W = C^-1 X, r = C^-1 L  =>  X^T M^-1 X = W^T W, X^T M^-1 L = W^T r
    W = np.linalg.solve(C, X)
    r = np.linalg.solve(C, L)
    precision = symmetrize(q.precision + W.T @ W)
    mean = np.linalg.solve(precision, q.precision @ q.mean + W.T @ r)
    return MetaPosterior(mean, precision, q.instance_variance, q.noise_variance)


class TaskEnvironment(Protocol):
    """What the meta-TS loop needs from a task sampler."""

    p_star: Optional[Gaussian]

    def run_track(self, stage: int, agent: AgentState, n: int, rng: np.random.Generator) -> Any:
        """Play ``n`` rounds on the stage's task; result must expose ``design`` and ``losses``."""


@dataclass
class StageOutcome:
    stage: int
    meta: MetaPosterior  # Q_s, the meta-posterior used during this stage
    prior: Gaussian  # P_s sampled from Q_s
    kl: Optional[float]
    track: Any = field(repr=False)


def run_meta_ts(env: TaskEnvironment, m, n, q0: MetaPosterior, rng: np.random.Generator):
    """Contextual meta-TS over ``m`` tracks of ``n`` rounds each.

    Per stage: sample an instance prior from Q_s, run TS with it, then fold
    the track into Q_{s+1}. Returns one :class:`StageOutcome` per stage.
    """
    if m < 1 or n < 1:
        raise ValueError("m and n must be at least 1")
    p_star = getattr(env, "p_star", None)
    q = q0
    out = []
    for s in range(m):
        prior = sample_prior(q, rng)
        kl = kl_gaussian(q.plug_in_prior(), p_star) if p_star is not None else None
        track = env.run_track(s, init_agent(prior, q.noise_variance), n, rng)
        out.append(StageOutcome(s, q, prior, kl, track))
        q = meta_update(q, StageData(track.design, track.losses))
    return out
