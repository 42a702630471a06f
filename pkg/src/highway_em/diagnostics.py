"""Gradient-flow and ELBO measurements, plus deterministic CSV/JSON emission.

Records are flat dicts with a fixed column set so every emitted file shares
one schema: step, layer, metric, value, eta, T, kernel, seed. Values are
formatted to round-trip float64 exactly.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .backprop import HemGradients
from .config import GradMode, Kernel
from .errors import ConsistencyError
from .stack import HemTrace

CSV_HEADER = ["step", "layer", "metric", "value", "eta", "T", "kernel", "seed"]


@dataclass
class LayerGradStats:
    """Per-layer gradient summary from paired EXACT / SKIP_ONLY backward runs.

    per_layer_mean_abs_grad_x: mean |entry| of each layer's input-gradient
    contribution (exact mode). estep_component_norm: mean |exact - skip|
    per layer, i.e. what severing the responsibility path removes.
    """

    step: int
    per_layer_mean_abs_grad_x: list[float]
    estep_component_norm: list[float]
    total_mean_abs_grad_x: float
    per_layer_grad_mu_norm: list[float]


@dataclass
class ElboCurve:
    eta: float
    kernel: Kernel
    totals: list[float]

    @classmethod
    def from_trace(cls, trace: HemTrace) -> "ElboCurve":
        return cls(
            eta=trace.eta,
            kernel=trace.kernel,
            totals=[e.total for e in trace.elbo_per_layer],
        )


def contribution_profile(grads: HemGradients) -> list[float]:
    """Mean absolute value of each layer's input-gradient contribution."""
    return [float(np.abs(c).mean()) for c in grads.per_layer_grad_x_contrib]


def grad_profile(
    trace: HemTrace, exact: HemGradients, skip_only: HemGradients, step: int = 0
) -> LayerGradStats:
    """Summarize one trace's gradient flow from a paired backward run."""
    if exact.mode != GradMode.EXACT or skip_only.mode != GradMode.SKIP_ONLY:
        raise ConsistencyError("grad_profile needs one EXACT and one SKIP_ONLY run")
    t = trace.num_layers
    if len(exact.per_layer_grad_x_contrib) != t or len(skip_only.per_layer_grad_x_contrib) != t:
        raise ConsistencyError("gradient layer count does not match trace")
    if exact.grad_x.shape != skip_only.grad_x.shape:
        raise ConsistencyError("paired runs disagree on input shape")
    residuals = [
        float(np.abs(e - s).mean())
        for e, s in zip(exact.per_layer_grad_x_contrib, skip_only.per_layer_grad_x_contrib)
    ]
    return LayerGradStats(
        step=step,
        per_layer_mean_abs_grad_x=contribution_profile(exact),
        estep_component_norm=residuals,
        total_mean_abs_grad_x=float(np.abs(exact.grad_x).mean()),
        per_layer_grad_mu_norm=[
            float(np.linalg.norm(g)) for g in exact.per_layer_grad_mu
        ],
    )


def probe_grad_stats(
    runs: Sequence[tuple[HemTrace, HemGradients, HemGradients]], step: int = 0
) -> tuple[LayerGradStats, list[float]]:
    """Aggregate grad_profile over a probe set (mean over all probe entries).

    Also returns the aggregated SKIP_ONLY contribution profile, the input to
    the layer-entropy summary.
    """
    if not runs:
        raise ConsistencyError("probe_grad_stats needs at least one run")
    t = runs[0][0].num_layers
    abs_exact = np.zeros(t)
    abs_skip = np.zeros(t)
    abs_resid = np.zeros(t)
    mu_norms = np.zeros(t)
    total_abs = 0.0
    entries = 0
    for trace, exact, skip in runs:
        if trace.num_layers != t:
            raise ConsistencyError("probe runs disagree on layer count")
        grad_profile(trace, exact, skip, step)  # shape/mode validation
        count = exact.grad_x.size
        entries += count
        total_abs += float(np.abs(exact.grad_x).sum())
        for i in range(t):
            abs_exact[i] += float(np.abs(exact.per_layer_grad_x_contrib[i]).sum())
            abs_skip[i] += float(np.abs(skip.per_layer_grad_x_contrib[i]).sum())
            abs_resid[i] += float(
                np.abs(
                    exact.per_layer_grad_x_contrib[i] - skip.per_layer_grad_x_contrib[i]
                ).sum()
            )
            mu_norms[i] += float(np.linalg.norm(exact.per_layer_grad_mu[i]))
    stats = LayerGradStats(
        step=step,
        per_layer_mean_abs_grad_x=(abs_exact / entries).tolist(),
        estep_component_norm=(abs_resid / entries).tolist(),
        total_mean_abs_grad_x=total_abs / entries,
        per_layer_grad_mu_norm=(mu_norms / len(runs)).tolist(),
    )
    return stats, (abs_skip / entries).tolist()


def layer_entropy(profile) -> float:
    """Shannon entropy of a normalized per-layer contribution profile.

    0 when one layer carries all the mass, ln(T) when the profile is uniform.
    """
    if isinstance(profile, LayerGradStats):
        profile = profile.per_layer_mean_abs_grad_x
    values = np.asarray(list(profile), dtype=np.float64)
    if values.size == 0 or values.min() < 0.0:
        raise ValueError("profile must be non-empty and non-negative")
    total = values.sum()
    if total <= 0.0:
        raise ValueError("layer entropy undefined for an all-zero profile")
    p = values / total
    p = p[p > 0.0]
    return float(-(p * np.log(p)).sum())


def make_record(step, layer, metric, value, *, eta, T, kernel, seed) -> dict:
    return {
        "step": step,
        "layer": layer,
        "metric": metric,
        "value": float(value),
        "eta": eta,
        "T": T,
        "kernel": kernel if isinstance(kernel, str) else kernel.value,
        "seed": seed,
    }


def stats_records(stats: LayerGradStats, skip_profile=None, **tags) -> list[dict]:
    """Flatten a LayerGradStats (and optional skip profile) into CSV records."""
    records = []
    for t, v in enumerate(stats.per_layer_mean_abs_grad_x, start=1):
        records.append(make_record(stats.step, t, "mean_abs_grad_x", v, **tags))
    for t, v in enumerate(stats.estep_component_norm, start=1):
        records.append(make_record(stats.step, t, "estep_component", v, **tags))
    for t, v in enumerate(stats.per_layer_grad_mu_norm, start=1):
        records.append(make_record(stats.step, t, "grad_mu_norm", v, **tags))
    records.append(
        make_record(stats.step, "", "total_mean_abs_grad_x", stats.total_mean_abs_grad_x, **tags)
    )
    if skip_profile is not None:
        for t, v in enumerate(skip_profile, start=1):
            records.append(make_record(stats.step, t, "skip_mean_abs_grad_x", v, **tags))
        records.append(
            make_record(stats.step, "", "layer_entropy_skip", layer_entropy(skip_profile), **tags)
        )
    return records


def curve_records(curve: ElboCurve, step: int = 0, seed: int = 0) -> list[dict]:
    return [
        make_record(
            step, t, "elbo_total", v,
            eta=curve.eta, T=len(curve.totals), kernel=curve.kernel, seed=seed,
        )
        for t, v in enumerate(curve.totals, start=1)
    ]


def _format_value(v) -> str:
    if isinstance(v, float):
        if not math.isfinite(v):
            raise ValueError(f"refusing to emit non-finite value {v}")
        return f"{v:.17g}"
    return str(v)


def emit_csv(records, path) -> None:
    """UTF-8, '.' decimal separator, trailing newline, stable header."""
    path = Path(path)
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for record in records:
            writer.writerow([_format_value(record[c]) for c in CSV_HEADER])


def emit_summary_json(records, path) -> None:
    """Per-metric aggregates (count/first/last/min/max/mean) of the records."""
    by_metric: dict[str, list[float]] = {}
    for record in records:
        by_metric.setdefault(record["metric"], []).append(float(record["value"]))
    summary = {
        "num_records": sum(len(v) for v in by_metric.values()),
        "metrics": {
            name: {
                "count": len(vals),
                "first": vals[0],
                "last": vals[-1],
                "min": min(vals),
                "max": max(vals),
                "mean": sum(vals) / len(vals),
            }
            for name, vals in sorted(by_metric.items())
        },
    }
    Path(path).write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", "utf-8")
