"""Linear contextual Thompson Sampling agents and regret accounting."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gaussian import (
    DimensionMismatch,
    Gaussian,
    LinearPosterior,
    conjugate_update,
    sample_posterior,
)

UNINFORMATIVE_SCALE = 100.0


@dataclass(frozen=True)
class AgentState:
    posterior: LinearPosterior
    prior_used: Gaussian


@dataclass(frozen=True)
class RoundRecord:
    observation: int
    chosen_waveform: int
    features: np.ndarray
    loss: float
    instant_regret: float


def as_context(ctx, d=None):
    """Validate a K x d context matrix (one feature row per waveform)."""
    ctx = np.asarray(ctx, dtype=float)
    if ctx.ndim != 2 or ctx.shape[0] < 1:
        raise DimensionMismatch(f"context must be a K x d matrix, got shape {ctx.shape}")
    if d is not None and ctx.shape[1] != d:
        raise DimensionMismatch(f"context has d={ctx.shape[1]}, expected {d}")
    if not np.all(np.isfinite(ctx)):
        raise ValueError("context features must be finite")
    return ctx


def init_agent(prior: Gaussian, noise_variance) -> AgentState:
    return AgentState(LinearPosterior.from_gaussian(prior, noise_variance), prior)


def uninformative_prior(d, sigma_q2, scale=UNINFORMATIVE_SCALE):
    """Flat proper prior N(0, scale * sigma_q2 * I)."""
    return Gaussian.isotropic(np.zeros(d), scale * sigma_q2)


def select_waveform(agent: AgentState, ctx, rng: np.random.Generator) -> int:
    """Thompson step: draw theta from the posterior and take the loss-minimizing waveform.

    ``np.argmin`` returns the first minimizer, so ties go to the lowest index.
    """
    ctx = as_context(ctx, agent.posterior.dim)
    theta = sample_posterior(agent.posterior, rng)
    return int(np.argmin(ctx @ theta))


def update_agent(agent: AgentState, phi, loss) -> AgentState:
    return AgentState(conjugate_update(agent.posterior, phi, loss), agent.prior_used)


def instant_regret(true_theta, ctx, chosen) -> float:
    """Noise-free regret of ``chosen`` against the best waveform in ``ctx``."""
    true_theta = np.asarray(true_theta, dtype=float)
    ctx = as_context(ctx, true_theta.size)
    if not 0 <= chosen < ctx.shape[0]:
        raise IndexError(f"waveform index {chosen} out of range for K={ctx.shape[0]}")
    means = ctx @ true_theta
    return float(max(means[chosen] - means.min(), 0.0))
