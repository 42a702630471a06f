"""Dense float64 matrix kernels and numerically stable reductions.

Everything here is a pure function of immutable inputs and returns freshly
allocated arrays. All public operations validate shapes, run in double
precision, and guarantee finite outputs.
"""

from __future__ import annotations

import numpy as np

from .errors import ShapeError


def ensure_matrix(a, name: str = "matrix") -> np.ndarray:
    """Coerce to a 2-D float64 array and reject non-finite entries."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ShapeError(f"{name} contains non-finite entries")
    return arr


def matmul(a, b) -> np.ndarray:
    """Matrix product. Deterministic: identical inputs give identical bits."""
    a = ensure_matrix(a, "a")
    b = ensure_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape}")
    out = a @ b
    if not np.isfinite(out).all():
        raise ShapeError("matmul overflowed to non-finite values")
    return out


def softmax_rows(logits) -> np.ndarray:
    """Row-wise softmax with max-subtraction; rows sum to 1 within 1e-12."""
    logits = ensure_matrix(logits, "logits")
    shifted = logits - logits.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    return expd / expd.sum(axis=1, keepdims=True)


def logsumexp_rows(logits) -> np.ndarray:
    """Per-row max-shifted log-sum-exp; exact for single-column input."""
    logits = ensure_matrix(logits, "logits")
    row_max = logits.max(axis=1)
    shifted = logits - row_max[:, None]
    return row_max + np.log(np.exp(shifted).sum(axis=1))


def squared_distances(x, mu) -> np.ndarray:
    """Pairwise squared Euclidean distances, entry (n, k) = ||x_n - mu_k||^2.

    Computed from explicit differences (not the norm expansion) so every
    entry is exactly non-negative.
    """
    x = ensure_matrix(x, "x")
    mu = ensure_matrix(mu, "mu")
    if x.shape[1] != mu.shape[1]:
        raise ShapeError(
            f"squared_distances: channel dims differ, {x.shape} vs {mu.shape}"
        )
    diff = x[:, None, :] - mu[None, :, :]
    out = np.einsum("nkc,nkc->nk", diff, diff)
    if not np.isfinite(out).all():
        raise ShapeError("squared_distances overflowed to non-finite values")
    return out


def l2_normalize_rows(a, eps: float = 1e-12) -> np.ndarray:
    """Scale each row to unit L2 norm; rows below ``eps`` are left unscaled."""
    a = ensure_matrix(a, "a")
    norms = np.sqrt((a * a).sum(axis=1, keepdims=True))
    return a / np.where(norms < eps, 1.0, norms)
