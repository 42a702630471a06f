"""Exact analytic reverse-mode gradients through the unrolled stack.

Two modes:

* EXACT backpropagates through every edge of the forward graph (softmax
  E-step included).
* SKIP_ONLY severs the gradient path through the responsibilities, keeping
  only the skip-connection and M-step-input edges. Upstream basis gradients
  then decay geometrically: dE/dmu^(t) = (1-eta)^(T-t) dE/dmu^(T), and the
  layer-t input gradient reduces to the responsibility-weighted rescaling of
  the final-layer basis gradient.

A central finite-difference oracle is provided for checking both.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import GradMode, HemConfig, Kernel
from .errors import ConsistencyError, OracleError, ShapeError
from .numerics import ensure_matrix
from .stack import HemTrace


@dataclass
class HemGradients:
    """Reverse-sweep outputs.

    per_layer_grad_mu[t-1] is the total gradient into the bases after layer t;
    per_layer_grad_x_contrib[t-1] is layer t's summand of the input gradient,
    so grad_x equals the elementwise sum of the contributions.
    """

    grad_x: np.ndarray
    grad_mu0: np.ndarray
    per_layer_grad_mu: list[np.ndarray]
    per_layer_grad_x_contrib: list[np.ndarray]
    mode: GradMode


def vjp_softmax_rows(gamma, upstream) -> np.ndarray:
    """VJP of a row softmax at output ``gamma``: g_L = (u - <u, gamma>) * gamma."""
    inner = (upstream * gamma).sum(axis=1, keepdims=True)
    return gamma * (upstream - inner)


def vjp_e_step(x, mu, sigma2, kernel: Kernel, gamma, upstream_gamma):
    """Gradients of the E-step into the inputs and the bases.

    ``gamma`` must be the forward-pass output for (x, mu, sigma2, kernel);
    it is not recomputed here.
    """
    x = ensure_matrix(x, "x")
    mu = ensure_matrix(mu, "mu")
    gamma = ensure_matrix(gamma, "gamma")
    upstream_gamma = ensure_matrix(upstream_gamma, "upstream_gamma")
    if gamma.shape != (x.shape[0], mu.shape[0]) or upstream_gamma.shape != gamma.shape:
        raise ShapeError(
            f"vjp_e_step: inconsistent shapes x={x.shape} mu={mu.shape} "
            f"gamma={gamma.shape} upstream={upstream_gamma.shape}"
        )
    g_logits = vjp_softmax_rows(gamma, upstream_gamma)
    if kernel == Kernel.DOT:
        # logits = x mu^T / sigma2
        grad_x = g_logits @ mu / sigma2
        grad_mu = g_logits.T @ x / sigma2
    else:
        # logits = -||x_n - mu_k||^2 / (2 sigma2)
        row_sums = g_logits.sum(axis=1, keepdims=True)
        grad_x = (g_logits @ mu - row_sums * x) / sigma2
        col_sums = g_logits.sum(axis=0)[:, None]
        grad_mu = (g_logits.T @ x - col_sums * mu) / sigma2
    return grad_x, grad_mu


def vjp_m_step(gamma, x, upstream_mu_em):
    """Gradients of mu_em_k = sum_n gamma_nk x_n / N_k.

    The responsibility gradient includes the quotient-rule term from N_k's
    dependence on gamma.
    """
    gamma = ensure_matrix(gamma, "gamma")
    x = ensure_matrix(x, "x")
    upstream_mu_em = ensure_matrix(upstream_mu_em, "upstream_mu_em")
    if gamma.shape[0] != x.shape[0]:
        raise ShapeError(f"gamma has {gamma.shape[0]} rows, x has {x.shape[0]}")
    if upstream_mu_em.shape != (gamma.shape[1], x.shape[1]):
        raise ShapeError(
            f"upstream shape {upstream_mu_em.shape} != (K, C) "
            f"({gamma.shape[1]}, {x.shape[1]})"
        )
    col_sums = gamma.sum(axis=0)
    gamma_norm = gamma / col_sums
    mu_em = gamma_norm.T @ x
    grad_x = gamma_norm @ upstream_mu_em
    # d mu_em_k / d gamma_nk = (x_n - mu_em_k) / N_k
    grad_gamma = (x @ upstream_mu_em.T - (mu_em * upstream_mu_em).sum(axis=1)) / col_sums
    return grad_gamma, grad_x


def vjp_n_step(upstream_mu_new, eta: float):
    """The blend is linear: (1-eta) flows to the old bases, eta to the M-step."""
    upstream_mu_new = ensure_matrix(upstream_mu_new, "upstream_mu_new")
    return (1.0 - eta) * upstream_mu_new, eta * upstream_mu_new


def vjp_r_step(gamma, mu, upstream_xtilde):
    """Bilinear reconstruction xtilde = gamma mu."""
    gamma = ensure_matrix(gamma, "gamma")
    mu = ensure_matrix(mu, "mu")
    upstream_xtilde = ensure_matrix(upstream_xtilde, "upstream_xtilde")
    if upstream_xtilde.shape != (gamma.shape[0], mu.shape[1]):
        raise ShapeError(
            f"upstream shape {upstream_xtilde.shape} != (N, C) "
            f"({gamma.shape[0]}, {mu.shape[1]})"
        )
    return upstream_xtilde @ mu.T, gamma.T @ upstream_xtilde


def hem_backward(
    trace: HemTrace,
    x,
    cfg: HemConfig,
    upstream_xtilde,
    mode: GradMode = GradMode.EXACT,
) -> HemGradients:
    """Reverse sweep over a forward trace, layer T down to 1.

    Reinitialized bases act as gradient barriers: nothing flows into a
    basis row that was redrawn from the data at that layer.
    """
    x = ensure_matrix(x, "x")
    upstream_xtilde = ensure_matrix(upstream_xtilde, "upstream_xtilde")
    mode = GradMode(mode)
    t_total = trace.num_layers
    sigma2 = cfg.resolve_temperature(x.shape[1])
    if trace.kernel != cfg.kernel or trace.eta != cfg.step_size:
        raise ConsistencyError("trace kernel/step size do not match config")
    if trace.temperature != sigma2:
        raise ConsistencyError("trace temperature does not match config")
    if trace.gamma_per_layer[0].shape[0] != x.shape[0]:
        raise ConsistencyError("trace row count does not match x")
    if upstream_xtilde.shape != trace.reconstruction.shape:
        raise ConsistencyError("upstream shape does not match reconstruction")

    eta = trace.eta
    n, c = x.shape
    per_layer_grad_mu: list[np.ndarray | None] = [None] * t_total
    contribs = [np.zeros((n, c)) for _ in range(t_total)]

    # R-step feeds both the final responsibilities and the final bases.
    g_gamma_final, g_mu = vjp_r_step(
        trace.gamma_per_layer[-1], trace.mu_per_layer[-1], upstream_xtilde
    )

    for t in range(t_total, 0, -1):
        gamma_t = trace.gamma_per_layer[t - 1]
        mu_prev = trace.mu_per_layer[t - 1]
        per_layer_grad_mu[t - 1] = g_mu
        g_mu_prev, g_mu_em = vjp_n_step(g_mu, eta)
        g_gamma, g_x_m = vjp_m_step(gamma_t, x, g_mu_em)
        contribs[t - 1] += g_x_m
        if mode == GradMode.EXACT:
            if t == t_total:
                g_gamma = g_gamma + g_gamma_final
            g_x_e, g_mu_e = vjp_e_step(x, mu_prev, sigma2, trace.kernel, gamma_t, g_gamma)
            contribs[t - 1] += g_x_e
            g_mu_prev = g_mu_prev + g_mu_e
        for layer, k in trace.reinit_events:
            if layer == t:
                g_mu_prev[k, :] = 0.0
        g_mu = g_mu_prev

    grad_x = np.zeros((n, c))
    for contrib in contribs:
        grad_x += contrib
    return HemGradients(
        grad_x=grad_x,
        grad_mu0=g_mu,
        per_layer_grad_mu=per_layer_grad_mu,
        per_layer_grad_x_contrib=contribs,
        mode=mode,
    )


def finite_diff(loss_fn, point, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function, one coordinate at a time."""
    point = np.array(point, dtype=np.float64)  # private copy; caller's array untouched
    if eps <= 0.0:
        raise OracleError(f"eps must be positive, got {eps}")
    grad = np.zeros_like(point)
    flat = point.reshape(-1)
    grad_flat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        f_plus = float(loss_fn(point))
        flat[i] = orig - eps
        f_minus = float(loss_fn(point))
        flat[i] = orig
        if not (np.isfinite(f_plus) and np.isfinite(f_minus)):
            raise OracleError(f"non-finite loss at coordinate {i}")
        grad_flat[i] = (f_plus - f_minus) / (2.0 * eps)
    return grad


def finite_diff_richardson(loss_fn, point, eps: float = 1e-3) -> np.ndarray:
    """Richardson-extrapolated central differences: (4 D(eps/2) - D(eps)) / 3.

    Two evaluations of the plain central-difference stencil with the O(eps^2)
    truncation term cancelled; roughly two digits more accurate than a single
    stencil on deep compositions, where small-magnitude gradient coordinates
    are otherwise dominated by roundoff.
    """
    coarse = finite_diff(loss_fn, point, eps)
    fine = finite_diff(loss_fn, point, eps / 2.0)
    return (4.0 * fine - coarse) / 3.0


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """Max elementwise |a - n| / max(|a|, |n|, floor)."""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    if analytic.size == 0:
        return 0.0
    return float((np.abs(analytic - numeric) / denom).max())
