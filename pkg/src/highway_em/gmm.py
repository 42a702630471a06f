"""Gaussian-mixture kernels: E-step, M-step, N-step, R-step, ELBO, likelihood.

The mixture has isotropic covariance sigma2 * I per component and uniform
(dropped) mixing coefficients, so the component means ("bases") and the
shared temperature sigma2 are the only parameters.

With those conventions the exact posterior over components is a row softmax
of -||x_n - mu_k||^2 / (2 sigma2): the RBF E-step computes exactly that, so
the evidence lower bound is tight after every E-step. The DOT kernel drops
the basis-norm term from the same logits (softmax of x mu^T / sigma2), which
is cheaper but no longer the exact posterior; monotonicity guarantees are
only claimed for RBF.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .config import Kernel
from .errors import ConfigError, DegenerateComponentError, ShapeError
from .numerics import (
    ensure_matrix,
    logsumexp_rows,
    matmul,
    softmax_rows,
    squared_distances,
)

#: Responsibility column sums below this raise DegenerateComponentError.
DEGENERATE_COLUMN_SUM = 1e-8

#: Entropy terms with gamma below this are treated as exactly 0 (0 ln 0 := 0).
ENTROPY_FLOOR = 1e-300


@dataclass(frozen=True)
class GmmParams:
    """Component means (K x C) plus the shared isotropic variance."""

    bases: np.ndarray
    temperature: float

    def __post_init__(self):
        object.__setattr__(self, "bases", ensure_matrix(self.bases, "bases"))
        if not (self.temperature > 0.0 and math.isfinite(self.temperature)):
            raise ShapeError(f"temperature must be positive, got {self.temperature}")


@dataclass(frozen=True)
class ElboValue:
    """Evidence lower bound split into Q (expected complete ll) and entropy."""

    expected_complete_ll: float
    entropy: float
    total: float

    @classmethod
    def from_parts(cls, expected_complete_ll: float, entropy: float) -> "ElboValue":
        return cls(expected_complete_ll, entropy, expected_complete_ll + entropy)


def check_row_stochastic(gamma, tol: float = 1e-9) -> np.ndarray:
    gamma = ensure_matrix(gamma, "gamma")
    if gamma.min() < -tol or gamma.max() > 1.0 + tol:
        raise ShapeError("responsibilities outside [0, 1]")
    if np.abs(gamma.sum(axis=1) - 1.0).max() > tol:
        raise ShapeError("responsibility rows do not sum to 1")
    return gamma


def log_gauss(x, params: GmmParams) -> np.ndarray:
    """N x K matrix of ln N(x_n | mu_k, sigma2 I)."""
    x = ensure_matrix(x, "x")
    d2 = squared_distances(x, params.bases)
    c = x.shape[1]
    log_norm = -0.5 * c * math.log(2.0 * math.pi * params.temperature)
    return log_norm - d2 / (2.0 * params.temperature)


def kernel_logits(x, params: GmmParams, kernel: Kernel) -> np.ndarray:
    """Softmax logits of the E-step under the chosen kernel."""
    x = ensure_matrix(x, "x")
    if x.shape[1] != params.bases.shape[1]:
        raise ShapeError(f"x has {x.shape[1]} channels, bases have {params.bases.shape[1]}")
    if kernel == Kernel.RBF:
        return -squared_distances(x, params.bases) / (2.0 * params.temperature)
    return matmul(x, params.bases.T) / params.temperature


def e_step(x, params: GmmParams, kernel: Kernel = Kernel.RBF) -> np.ndarray:
    """Responsibilities gamma (N x K, row-stochastic) for the current bases."""
    return softmax_rows(kernel_logits(x, params, kernel))


def m_step(gamma, x) -> np.ndarray:
    """Responsibility-weighted means: mu_k = sum_n gamma_nk x_n / N_k.

    Raises DegenerateComponentError when any column mass N_k falls below
    DEGENERATE_COLUMN_SUM; the caller decides whether to reinitialize.
    """
    gamma = ensure_matrix(gamma, "gamma")
    x = ensure_matrix(x, "x")
    if gamma.shape[0] != x.shape[0]:
        raise ShapeError(f"gamma has {gamma.shape[0]} rows, x has {x.shape[0]}")
    col_sums = gamma.sum(axis=0)
    dead = np.flatnonzero(col_sums < DEGENERATE_COLUMN_SUM)
    if dead.size:
        raise DegenerateComponentError(dead.tolist(), col_sums)
    return matmul((gamma / col_sums).T, x)


def n_step(mu_old, mu_em, eta: float) -> np.ndarray:
    """Newton blend (1 - eta) mu_old + eta mu_em; eta = 1 recovers the M-step.

    eta = 0 is allowed as an explicit identity (testing only); the ascent
    guarantee holds on (0, 1].
    """
    mu_old = ensure_matrix(mu_old, "mu_old")
    mu_em = ensure_matrix(mu_em, "mu_em")
    if mu_old.shape != mu_em.shape:
        raise ShapeError(f"basis shapes differ: {mu_old.shape} vs {mu_em.shape}")
    if not (0.0 <= eta <= 1.0):
        raise ConfigError(f"eta must be in [0, 1], got {eta}")
    if eta == 1.0:
        return mu_em.copy()  # bitwise M-step recovery
    return (1.0 - eta) * mu_old + eta * mu_em


def r_step(gamma, mu) -> np.ndarray:
    """Reconstruction: each input row becomes its responsibility-weighted
    convex combination of basis rows."""
    return matmul(gamma, mu)


def elbo(x, params: GmmParams, gamma) -> ElboValue:
    """Evidence lower bound L(mu, gamma) = Q + H for the given pairing."""
    gamma = ensure_matrix(gamma, "gamma")
    log_n = log_gauss(x, params)
    if gamma.shape != log_n.shape:
        raise ShapeError(f"gamma shape {gamma.shape} does not match N x K {log_n.shape}")
    q = float((gamma * log_n).sum())
    mask = gamma > ENTROPY_FLOOR
    h = float(-(gamma[mask] * np.log(gamma[mask])).sum())
    return ElboValue.from_parts(q, h)


def log_likelihood(x, params: GmmParams) -> float:
    """Mixture data log-likelihood with uniform implicit weights."""
    return float(logsumexp_rows(log_gauss(x, params)).sum())
