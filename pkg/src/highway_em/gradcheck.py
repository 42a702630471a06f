"""Randomized verification suites: finite-difference oracles for the analytic
backward pass, the skip-gradient laws, and forward-pass ELBO monotonicity.

Used by the ``gradcheck`` CLI command and reused by the test suite so both
run the identical checks.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field, replace

import numpy as np

from . import backprop
from .backprop import (
    GradMode,
    finite_diff_richardson,
    hem_backward,
    relative_error,
)
from .config import HemConfig, Kernel, ModelConfig
from .errors import ConfigError
from .model import cross_entropy, init_params, model_backward, model_forward
from .stack import BasisState, hem_forward

FD_TOLERANCE = 1e-6
SKIP_DECAY_TOLERANCE = 1e-12
SKIP_STRUCTURE_TOLERANCE = 1e-10
ELBO_SLACK = 1e-9
#: Basis movement below this makes the strict-increase requirement moot.
STATIONARY_INF_NORM = 1e-8


@dataclass
class CheckResult:
    name: str
    max_error: float
    tolerance: float
    passed: bool
    detail: str = ""


@dataclass
class GradcheckReport:
    results: list[CheckResult] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def failing(self) -> list[str]:
        return [r.name for r in self.results if not r.passed]

    def lines(self) -> list[str]:
        return [
            f"{'PASS' if r.passed else 'FAIL'} {r.name}: "
            f"max_err={r.max_error:.3e} tol={r.tolerance:.0e}"
            + (f" ({r.detail})" if r.detail else "")
            for r in self.results
        ]


def _random_instance(rng, *, t_max=4, n_max=16, k_max=4, c_max=5):
    n = int(rng.integers(4, n_max + 1))
    k = int(rng.integers(2, k_max + 1))
    c = int(rng.integers(2, c_max + 1))
    t = int(rng.integers(1, t_max + 1))
    x = rng.standard_normal((n, c)) * 1.5
    mu0 = rng.standard_normal((k, c))
    sigma2 = float(rng.uniform(0.5, 2.0))
    return x, mu0, sigma2, t


def _stack_loss(x, mu0, cfg, weight, t):
    trace = hem_forward(x, BasisState(mu0), cfg, t_override=t)
    return float((weight * trace.reconstruction).sum()), trace


@contextmanager
def _sabotaged(sabotage: str | None):
    """Test hook: deliberately corrupt one VJP to prove the checks can fail."""
    if sabotage is None:
        yield
        return
    if sabotage != "n_step_sign_flip":
        raise ConfigError(f"unknown sabotage {sabotage!r}")
    original = backprop.vjp_n_step

    def flipped(upstream_mu_new, eta):
        old, em = original(upstream_mu_new, eta)
        return -old, em

    backprop.vjp_n_step = flipped
    try:
        yield
    finally:
        backprop.vjp_n_step = original


def check_stack_fd(rng, instances: int, etas=(0.3, 1.0)) -> CheckResult:
    """EXACT hem_backward vs central finite differences on grad_x and grad_mu0."""
    worst = 0.0
    kernels = [Kernel.RBF, Kernel.DOT]
    for i in range(instances):
        x, mu0, sigma2, t = _random_instance(rng)
        eta = etas[i % len(etas)]
        kernel = kernels[i % 2]
        cfg = HemConfig(
            num_layers_train=t, step_size=eta, temperature=sigma2, kernel=kernel
        )
        weight = rng.standard_normal(x.shape)
        _, trace = _stack_loss(x, mu0, cfg, weight, t)
        if trace.reinit_events:
            continue  # reinit is a gradient barrier; not differentiable
        grads = hem_backward(trace, x, cfg, weight, GradMode.EXACT)
        fd_x = finite_diff_richardson(lambda v: _stack_loss(v, mu0, cfg, weight, t)[0], x)
        fd_mu = finite_diff_richardson(lambda v: _stack_loss(x, v, cfg, weight, t)[0], mu0)
        worst = max(
            worst,
            relative_error(grads.grad_x, fd_x),
            relative_error(grads.grad_mu0, fd_mu),
        )
    return CheckResult("stack_fd_oracle", worst, FD_TOLERANCE, worst <= FD_TOLERANCE)


def check_model_fd(rng, instances: int, etas=(0.3, 1.0)) -> CheckResult:
    """Full toy-model parameter gradients vs finite differences."""
    worst = 0.0
    kernels = [Kernel.RBF, Kernel.DOT]
    for i in range(instances):
        n = int(rng.integers(4, 9))
        d = int(rng.integers(2, 5))
        c = int(rng.integers(2, 5))
        k = int(rng.integers(2, 4))
        ell = int(rng.integers(2, 4))
        t = int(rng.integers(1, 4))
        hidden = int(rng.integers(0, 2)) * 3
        cfg = HemConfig(
            num_layers_train=t,
            step_size=etas[i % len(etas)],
            temperature=float(rng.uniform(0.5, 2.0)),
            kernel=kernels[i % 2],
        )
        model_cfg = ModelConfig(
            input_dim=d, feature_dim=c, num_bases=k, num_classes=ell, hidden_dim=hidden
        )
        params = init_params(model_cfg, int(rng.integers(0, 2**31)))
        state = BasisState(rng.standard_normal((k, c)))
        raw = rng.standard_normal((n, d))
        labels = rng.integers(0, ell, size=n).astype(np.uint32)

        fwd = model_forward(raw, params, state, cfg)
        if fwd.trace.reinit_events:
            continue
        _, grad_logits = cross_entropy(fwd.logits, labels)
        grads = model_backward(raw, params, fwd, cfg, grad_logits)

        def loss_with(name, value):
            trial = replace(params, **{name: value.reshape(getattr(params, name).shape)})
            out = model_forward(raw, trial, state, cfg)
            return cross_entropy(out.logits, labels)[0]

        for name, grad in grads.by_name.items():
            fd = finite_diff_richardson(lambda v, _n=name: loss_with(_n, v), getattr(params, name))
            worst = max(worst, relative_error(grad, fd))
    return CheckResult("model_fd_oracle", worst, FD_TOLERANCE, worst <= FD_TOLERANCE)


def check_skip_decay(rng, instances: int) -> CheckResult:
    """SKIP_ONLY basis gradients decay exactly geometrically: the upstream at
    layer t is (1-eta)^(T-t) times the final layer's; at eta=1 every
    pre-final layer gradient is exactly zero.
    """
    worst = 0.0
    for i in range(instances):
        x, mu0, sigma2, _ = _random_instance(rng)
        t = int(rng.integers(2, 5))
        eta = [0.25, 0.5, 0.75, 1.0][i % 4]
        cfg = HemConfig(
            num_layers_train=t, step_size=eta, temperature=sigma2, kernel=Kernel.RBF
        )
        weight = rng.standard_normal(x.shape)
        _, trace = _stack_loss(x, mu0, cfg, weight, t)
        grads = hem_backward(trace, x, cfg, weight, GradMode.SKIP_ONLY)
        final = grads.per_layer_grad_mu[-1]
        for layer in range(1, t + 1):
            expected = (1.0 - eta) ** (t - layer) * final
            got = grads.per_layer_grad_mu[layer - 1]
            if eta == 1.0 and layer < t:
                worst = max(worst, float(np.abs(got).max()))
            else:
                worst = max(worst, relative_error(got, expected))
    return CheckResult(
        "skip_decay_law", worst, SKIP_DECAY_TOLERANCE, worst <= SKIP_DECAY_TOLERANCE
    )


def check_skip_structure(rng, instances: int) -> CheckResult:
    """SKIP_ONLY layer-t input contributions equal the responsibility-weighted
    rescaling of the final basis gradient, computed independently from the trace.
    """
    worst = 0.0
    for i in range(instances):
        x, mu0, sigma2, _ = _random_instance(rng)
        t = int(rng.integers(1, 5))
        eta = [0.3, 0.5, 0.8, 1.0][i % 4]
        cfg = HemConfig(
            num_layers_train=t, step_size=eta, temperature=sigma2, kernel=Kernel.RBF
        )
        weight = rng.standard_normal(x.shape)
        _, trace = _stack_loss(x, mu0, cfg, weight, t)
        grads = hem_backward(trace, x, cfg, weight, GradMode.SKIP_ONLY)
        grad_mu_final = trace.gamma_per_layer[-1].T @ weight
        for layer in range(1, t + 1):
            gamma = trace.gamma_per_layer[layer - 1]
            col_sums = gamma.sum(axis=0)
            independent = (gamma / col_sums) @ (
                eta * (1.0 - eta) ** (t - layer) * grad_mu_final
            )
            worst = max(
                worst,
                relative_error(grads.per_layer_grad_x_contrib[layer - 1], independent),
            )
    return CheckResult(
        "skip_contribution_structure",
        worst,
        SKIP_STRUCTURE_TOLERANCE,
        worst <= SKIP_STRUCTURE_TOLERANCE,
    )


def check_elbo_monotonicity(
    rng, instances: int, *, n_max=64, k_max=8, c_max=8, t_max=8
) -> CheckResult:
    """Per-layer ELBO is non-decreasing (RBF), strictly when the bases moved."""
    worst = 0.0
    violations = 0
    for i in range(instances):
        n = int(rng.integers(8, n_max + 1))
        k = int(rng.integers(2, k_max + 1))
        c = int(rng.integers(2, c_max + 1))
        t = int(rng.integers(2, t_max + 1))
        eta = [0.1, 0.25, 0.5, 0.75, 1.0][i % 5]
        x = rng.standard_normal((n, c)) * float(rng.uniform(0.5, 3.0))
        mu0 = rng.standard_normal((k, c))
        cfg = HemConfig(
            num_layers_train=t,
            step_size=eta,
            temperature=float(rng.uniform(0.5, 3.0)),
            kernel=Kernel.RBF,
        )
        trace = hem_forward(x, BasisState(mu0), cfg)
        totals = [e.total for e in trace.elbo_per_layer]
        for j in range(1, len(totals)):
            drop = totals[j - 1] - totals[j]
            worst = max(worst, drop)
            moved = float(
                np.abs(trace.mu_per_layer[j + 1] - trace.mu_per_layer[j]).max()
            )
            if drop > ELBO_SLACK or (moved >= STATIONARY_INF_NORM and totals[j] <= totals[j - 1]):
                violations += 1
    return CheckResult(
        "elbo_monotonicity",
        worst,
        ELBO_SLACK,
        violations == 0,
        detail=f"{violations} violations",
    )


def run_gradcheck(
    seed: int, instances: int = 50, sabotage: str | None = None
) -> GradcheckReport:
    report = GradcheckReport()
    with _sabotaged(sabotage):
        report.results.append(check_stack_fd(np.random.default_rng(seed), instances))
        report.results.append(
            check_model_fd(np.random.default_rng(seed + 1), max(instances // 2, 5))
        )
        report.results.append(check_skip_decay(np.random.default_rng(seed + 2), instances))
        report.results.append(
            check_skip_structure(np.random.default_rng(seed + 3), instances)
        )
        report.results.append(
            check_elbo_monotonicity(np.random.default_rng(seed + 4), instances)
        )
    return report
