"""Multivariate Gaussian primitives in natural (precision) parameterization.

Everything here is a pure function of its inputs plus an explicit
``numpy.random.Generator``; values are frozen dataclasses and every update
returns a new object.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SYMMETRY_TOL = 1e-9
PIVOT_TOL = 1e-12
JITTER = 1e-10
KL_CLAMP = 1e-10


class NotPositiveDefinite(np.linalg.LinAlgError):
    pass


class DimensionMismatch(ValueError):
    pass


def symmetrize(a):
    return 0.5 * (a + a.T)


def cholesky(m):
    """Lower Cholesky factor of a symmetric positive-definite matrix.

    A single ``1e-10 * I`` jitter retry is attempted before giving up.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got shape {m.shape}")
    if np.max(np.abs(m - m.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(m), initial=0.0)):
        raise NotPositiveDefinite("matrix is not symmetric")
    for jitter in (0.0, JITTER):
        try:
            L = np.linalg.cholesky(m + jitter * np.eye(m.shape[0]) if jitter else m)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.diag(L) ** 2 > PIVOT_TOL) and np.all(np.isfinite(L)):
            return L
    raise NotPositiveDefinite("matrix is not positive definite")


@dataclass(frozen=True)
class Gaussian:
    """N(mean, precision^-1)."""

    mean: np.ndarray
    precision: np.ndarray

    def __post_init__(self):
        mean = np.atleast_1d(np.asarray(self.mean, dtype=float))
        prec = np.atleast_2d(np.asarray(self.precision, dtype=float))
        if mean.ndim != 1 or mean.size < 1:
            raise DimensionMismatch("mean must be a non-empty vector")
        if prec.shape != (mean.size, mean.size):
            raise DimensionMismatch(f"precision shape {prec.shape} does not match d={mean.size}")
        prec = symmetrize(prec)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "precision", prec)
        object.__setattr__(self, "_chol", cholesky(prec))

    @classmethod
    def isotropic(cls, mean, variance):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        return cls(mean, np.eye(mean.size) / variance)

    @property
    def dim(self):
        return self.mean.size

    @property
    def covariance(self):
        L_inv = np.linalg.inv(self._chol)
        return L_inv.T @ L_inv


@dataclass(frozen=True)
class LinearPosterior:
    """Bayesian linear-regression posterior stored as (precision, shift = precision @ mean)."""

    precision: np.ndarray
    shift: np.ndarray
    noise_variance: float

    @classmethod
    def from_gaussian(cls, prior: Gaussian, noise_variance):
        if not noise_variance > 0:
            raise ValueError("noise variance must be positive")
        return cls(prior.precision.copy(), prior.precision @ prior.mean, float(noise_variance))

    @property
    def dim(self):
        return self.shift.size

    @property
    def mean(self):
        return np.linalg.solve(self.precision, self.shift)

    def to_gaussian(self):
        return Gaussian(self.mean, self.precision)


def sample_gaussian(g: Gaussian, rng: np.random.Generator):
    """Draw ``mean + L^-T z`` with ``L L^T = precision``."""
    z = rng.standard_normal(g.dim)
    return g.mean + np.linalg.solve(g._chol.T, z)


def sample_posterior(p: LinearPosterior, rng: np.random.Generator):
    # theta = L^-T (L^-1 b + z): one factorization, no explicit mean solve
    L = cholesky(p.precision)
    z = rng.standard_normal(p.dim)
    return np.linalg.solve(L.T, np.linalg.solve(L, p.shift) + z)


def conjugate_update(p: LinearPosterior, phi, loss):
    phi = np.asarray(phi, dtype=float)
    if phi.shape != (p.dim,):
        raise DimensionMismatch(f"feature has shape {phi.shape}, posterior has d={p.dim}")
    if not np.isfinite(loss):
        raise ValueError("loss must be finite")
    s2 = p.noise_variance
    precision = symmetrize(p.precision + np.outer(phi, phi) / s2)
    return LinearPosterior(precision, p.shift + phi * (loss / s2), s2)


def batch_update(p: LinearPosterior, X, losses):
    """Conjugate update with all rows of ``X`` at once."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    losses = np.asarray(losses, dtype=float).reshape(-1)
    if X.shape[1] != p.dim or X.shape[0] != losses.size:
        raise DimensionMismatch("design matrix and losses do not match the posterior")
    s2 = p.noise_variance
    return LinearPosterior(symmetrize(p.precision + X.T @ X / s2), p.shift + X.T @ losses / s2, s2)


def kl_gaussian(p: Gaussian, q: Gaussian):
    """KL(p || q) for two multivariate normals, via Cholesky factors."""
    if p.dim != q.dim:
        raise DimensionMismatch(f"dimensions differ: {p.dim} vs {q.dim}")
    d = p.dim
    Lp, Lq = p._chol, q._chol  # factors of the precisions
    # tr(Sigma_q^-1 Sigma_p) = ||Lq^T Lp^-T||_F^2
    A = np.linalg.solve(Lp, Lq).T
    trace = np.sum(A * A)
    diff = q.mean - p.mean
    maha = np.sum((Lq.T @ diff) ** 2)
    # ln det Sigma_q - ln det Sigma_p = ln det Lambda_p - ln det Lambda_q
    logdet = 2.0 * (np.sum(np.log(np.diag(Lp))) - np.sum(np.log(np.diag(Lq))))
    kl = 0.5 * (trace + maha - d + logdet)
    if -KL_CLAMP < kl < 0.0:
        return 0.0
    return float(kl)
