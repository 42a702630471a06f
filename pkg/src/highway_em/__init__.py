"""Unrolled EM and highway-EM attention stacks for Gaussian mixtures.

The stack alternates a softmax E-step with a Newton-blend N-step; with step
size 1 it is classic unrolled EM, with fractional step sizes the blend acts
as a weighted skip connection that carries gradients past the saturating
softmax. Gradients are exact and hand-derived; a finite-difference oracle and
forward-pass ELBO monotonicity checks keep them honest.
"""

from .backprop import (
    HemGradients,
    finite_diff,
    hem_backward,
    relative_error,
    vjp_e_step,
    vjp_m_step,
    vjp_n_step,
    vjp_r_step,
)
from .config import (
    AUTO_SQRT_C,
    BasisNorm,
    GradMode,
    HemConfig,
    Kernel,
    ModelConfig,
    TrainConfig,
)
from .gmm import (
    ElboValue,
    GmmParams,
    e_step,
    elbo,
    log_likelihood,
    m_step,
    n_step,
    r_step,
)
from .stack import (
    BasisState,
    HemTrace,
    eval_extrapolate,
    hem_forward,
    init_bases,
    moving_average_update,
)

__version__ = "0.1.0"

__all__ = [
    "AUTO_SQRT_C",
    "BasisNorm",
    "BasisState",
    "ElboValue",
    "GmmParams",
    "GradMode",
    "HemConfig",
    "HemGradients",
    "HemTrace",
    "Kernel",
    "ModelConfig",
    "TrainConfig",
    "e_step",
    "elbo",
    "eval_extrapolate",
    "finite_diff",
    "hem_backward",
    "hem_forward",
    "init_bases",
    "log_likelihood",
    "m_step",
    "moving_average_update",
    "n_step",
    "r_step",
    "relative_error",
    "vjp_e_step",
    "vjp_m_step",
    "vjp_n_step",
    "vjp_r_step",
    "__version__",
]
