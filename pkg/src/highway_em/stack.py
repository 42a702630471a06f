"""The unrolled network: T alternating E/N layers plus one final R-step.

A forward pass records everything the analytic backward pass and the
diagnostics need: bases before and after every layer, responsibilities,
per-layer M-step outputs, and per-layer ELBO values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import gmm
from .config import BasisNorm, HemConfig, Kernel
from .errors import ConfigError, DegenerateComponentError, ShapeError
from .gmm import ElboValue, GmmParams
from .numerics import ensure_matrix, l2_normalize_rows

#: Mixed into the seed of the deterministic dead-basis reinitialization draw.
_REINIT_SEED = 0x5EED
#: Scale of the noise added to the data row that replaces a dead basis.
_REINIT_NOISE = 1e-4
#: Give up after this many reinitialization rounds within one layer.
_MAX_REINIT_ROUNDS = 5


@dataclass(frozen=True)
class BasisState:
    """Initial bases shared across batches (updated by the moving average)."""

    running_mu: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "running_mu", ensure_matrix(self.running_mu, "running_mu")
        )


@dataclass
class HemTrace:
    """Full record of one forward pass.

    mu_per_layer has length T+1 (initial bases first); gamma_per_layer,
    fem_per_layer and elbo_per_layer have length T. reinit_events lists
    (layer, component) pairs where a dead basis was redrawn from the data.
    """

    mu_per_layer: list[np.ndarray]
    gamma_per_layer: list[np.ndarray]
    fem_per_layer: list[np.ndarray]
    elbo_per_layer: list[ElboValue]
    reconstruction: np.ndarray
    eta: float
    temperature: float
    kernel: Kernel
    reinit_events: list[tuple[int, int]] = field(default_factory=list)

    @property
    def num_layers(self) -> int:
        return len(self.gamma_per_layer)


def init_bases(
    k: int, c: int, seed: int, normalize: BasisNorm = BasisNorm.L2_ROWS
) -> BasisState:
    """Seeded uniform init on [-sqrt(6/(k+c)), +sqrt(6/(k+c))] per entry."""
    if k < 1 or c < 1:
        raise ConfigError(f"need k >= 1 and c >= 1, got k={k}, c={c}")
    rng = np.random.default_rng(seed)
    bound = math.sqrt(6.0 / (k + c))
    mu = rng.uniform(-bound, bound, size=(k, c))
    if normalize == BasisNorm.L2_ROWS:
        mu = l2_normalize_rows(mu)
    return BasisState(running_mu=mu)


def _reinit_dead_bases(mu, x, layer: int, components) -> np.ndarray:
    """Replace dead basis rows with a random data row plus small noise."""
    mu = mu.copy()
    n = x.shape[0]
    for k in components:
        rng = np.random.default_rng(_REINIT_SEED + 1000003 * layer + k)
        row = int(rng.integers(0, n))
        mu[k] = x[row] + _REINIT_NOISE * rng.standard_normal(x.shape[1])
    return mu


def hem_forward(
    x,
    state: BasisState,
    cfg: HemConfig,
    t_override: int | None = None,
) -> HemTrace:
    """Run T alternating E/N layers and a final R-step, recording the trace.

    T defaults to cfg.num_layers_train; pass t_override for evaluation-depth
    extrapolation. Pure: neither ``state`` nor ``x`` is mutated.
    """
    x = ensure_matrix(x, "x")
    mu = state.running_mu
    if x.shape[1] != mu.shape[1]:
        raise ShapeError(f"x has {x.shape[1]} channels, bases have {mu.shape[1]}")
    t_total = cfg.num_layers_train if t_override is None else int(t_override)
    if t_total < 1:
        raise ConfigError(f"layer count must be >= 1, got {t_total}")
    sigma2 = cfg.resolve_temperature(x.shape[1])

    mu_per_layer = [mu.copy()]
    gamma_per_layer: list[np.ndarray] = []
    fem_per_layer: list[np.ndarray] = []
    elbo_per_layer: list[ElboValue] = []
    reinit_events: list[tuple[int, int]] = []

    for t in range(1, t_total + 1):
        mu_prev = mu_per_layer[-1]
        for _ in range(_MAX_REINIT_ROUNDS + 1):
            gamma = gmm.e_step(x, GmmParams(mu_prev, sigma2), cfg.kernel)
            try:
                fem = gmm.m_step(gamma, x)
                break
            except DegenerateComponentError as err:
                reinit_events.extend((t, k) for k in err.components)
                mu_prev = _reinit_dead_bases(mu_prev, x, t, err.components)
                mu_per_layer[-1] = mu_prev
        else:
            raise DegenerateComponentError(
                [k for tt, k in reinit_events if tt == t]
            )
        mu_new = gmm.n_step(mu_prev, fem, cfg.step_size)
        gamma_per_layer.append(gamma)
        fem_per_layer.append(fem)
        mu_per_layer.append(mu_new)
        elbo_per_layer.append(gmm.elbo(x, GmmParams(mu_new, sigma2), gamma))

    reconstruction = gmm.r_step(gamma_per_layer[-1], mu_per_layer[-1])
    return HemTrace(
        mu_per_layer=mu_per_layer,
        gamma_per_layer=gamma_per_layer,
        fem_per_layer=fem_per_layer,
        elbo_per_layer=elbo_per_layer,
        reconstruction=reconstruction,
        eta=cfg.step_size,
        temperature=sigma2,
        kernel=cfg.kernel,
        reinit_events=reinit_events,
    )


def moving_average_update(
    state: BasisState,
    mu_final_batch,
    momentum: float,
    normalize: BasisNorm = BasisNorm.L2_ROWS,
) -> BasisState:
    """Blend the batch's final bases into the running initial bases.

    Training-time only; evaluation never mutates the state. Single-writer:
    callers must serialize updates to one state.
    """
    mu_final_batch = ensure_matrix(mu_final_batch, "mu_final_batch")
    if mu_final_batch.shape != state.running_mu.shape:
        raise ShapeError(
            f"basis shapes differ: {state.running_mu.shape} vs {mu_final_batch.shape}"
        )
    if not (0.0 <= momentum <= 1.0):
        raise ConfigError(f"momentum must be in [0, 1], got {momentum}")
    blended = momentum * state.running_mu + (1.0 - momentum) * mu_final_batch
    if normalize == BasisNorm.L2_ROWS:
        blended = l2_normalize_rows(blended)
    return BasisState(running_mu=blended)


def eval_extrapolate(
    x, state: BasisState, cfg: HemConfig, t_values
) -> list[HemTrace]:
    """One forward trace per requested evaluation depth, shared initial bases."""
    t_values = list(t_values)
    if not t_values:
        raise ConfigError("t_values must be non-empty")
    if any(int(t) < 1 for t in t_values):
        raise ConfigError(f"all evaluation depths must be >= 1, got {t_values}")
    return [hem_forward(x, state, cfg, t_override=int(t)) for t in t_values]
