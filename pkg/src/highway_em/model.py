"""Minimal trainable model: affine backbone -> E/N stack -> linear head.

Small enough that every gradient is written out by hand, which keeps the
backward pass checkable term by term against finite differences. Plain SGD,
no momentum or weight decay, so gradient-flow measurements are not
confounded by the optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import diagnostics
from .backprop import HemGradients, hem_backward
from .config import GradMode, HemConfig, ModelConfig, TrainConfig
from .container import read_container, write_container
from .datagen import SegDataset, SegSample
from .errors import ConfigError, DataError, ShapeError, TrainingDivergedError
from .stack import BasisState, HemTrace, hem_forward, init_bases, moving_average_update


@dataclass(frozen=True)
class ToyModelParams:
    backbone_weight: np.ndarray
    backbone_bias: np.ndarray
    head_weight: np.ndarray
    head_bias: np.ndarray
    hidden_weight: np.ndarray | None = None
    hidden_bias: np.ndarray | None = None

    def weights(self) -> dict[str, np.ndarray]:
        out = {
            "backbone_weight": self.backbone_weight,
            "backbone_bias": self.backbone_bias,
            "head_weight": self.head_weight,
            "head_bias": self.head_bias,
        }
        if self.hidden_weight is not None:
            out["hidden_weight"] = self.hidden_weight
            out["hidden_bias"] = self.hidden_bias
        return out

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.weights().values())


@dataclass
class ModelGradients:
    by_name: dict[str, np.ndarray]
    grad_x: np.ndarray
    hem: HemGradients | None


@dataclass
class ModelForward:
    logits: np.ndarray
    trace: HemTrace | None
    x_features: np.ndarray
    head_input: np.ndarray
    hidden_act: np.ndarray | None


def _glorot(rng, rows: int, cols: int) -> np.ndarray:
    bound = math.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))


def init_params(cfg: ModelConfig, seed: int) -> ToyModelParams:
    rng = np.random.default_rng(seed)
    if cfg.hidden_dim > 0:
        backbone_weight = _glorot(rng, cfg.input_dim, cfg.hidden_dim)
        backbone_bias = np.zeros(cfg.hidden_dim)
        hidden_weight = _glorot(rng, cfg.hidden_dim, cfg.feature_dim)
        hidden_bias = np.zeros(cfg.feature_dim)
    else:
        backbone_weight = _glorot(rng, cfg.input_dim, cfg.feature_dim)
        backbone_bias = np.zeros(cfg.feature_dim)
        hidden_weight = None
        hidden_bias = None
    return ToyModelParams(
        backbone_weight=backbone_weight,
        backbone_bias=backbone_bias,
        head_weight=_glorot(rng, cfg.feature_dim, cfg.num_classes),
        head_bias=np.zeros(cfg.num_classes),
        hidden_weight=hidden_weight,
        hidden_bias=hidden_bias,
    )


def model_forward(
    raw,
    params: ToyModelParams,
    state: BasisState,
    hem_cfg: HemConfig,
    *,
    bypass_stack: bool = False,
    t_override: int | None = None,
) -> ModelForward:
    """Backbone features -> (optionally) the unrolled stack -> class logits."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[1] != params.backbone_weight.shape[0]:
        raise ShapeError(
            f"raw shape {raw.shape} does not match backbone input "
            f"{params.backbone_weight.shape[0]}"
        )
    if params.hidden_weight is None:
        x = raw @ params.backbone_weight + params.backbone_bias
        hidden = None
    else:
        hidden = np.tanh(raw @ params.backbone_weight + params.backbone_bias)
        x = hidden @ params.hidden_weight + params.hidden_bias
    if bypass_stack:
        trace = None
        head_input = x
    else:
        trace = hem_forward(x, state, hem_cfg, t_override=t_override)
        head_input = trace.reconstruction
    logits = head_input @ params.head_weight + params.head_bias
    return ModelForward(
        logits=logits, trace=trace, x_features=x, head_input=head_input, hidden_act=hidden
    )


def cross_entropy(logits, labels) -> tuple[float, np.ndarray]:
    """Mean negative log-softmax of the true class, plus the logit gradient."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if labels.ndim != 1 or labels.shape[0] != logits.shape[0]:
        raise ShapeError(f"labels shape {labels.shape} does not match logits")
    labels = labels.astype(np.int64)
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise DataError(
            f"labels must be in [0, {logits.shape[1]}), got "
            f"[{labels.min()}, {labels.max()}]"
        )
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_probs = shifted - log_z
    loss = float(-log_probs[np.arange(n), labels].mean())
    grad = np.exp(log_probs)
    grad[np.arange(n), labels] -= 1.0
    return loss, grad / n


def model_backward(
    raw,
    params: ToyModelParams,
    fwd: ModelForward,
    hem_cfg: HemConfig,
    grad_logits,
    mode: GradMode = GradMode.EXACT,
) -> ModelGradients:
    """Exact gradients for every parameter, chaining through the stack."""
    raw = np.asarray(raw, dtype=np.float64)
    grad_logits = np.asarray(grad_logits, dtype=np.float64)
    if grad_logits.shape != fwd.logits.shape:
        raise ShapeError("grad_logits shape does not match forward logits")
    grads: dict[str, np.ndarray] = {
        "head_weight": fwd.head_input.T @ grad_logits,
        "head_bias": grad_logits.sum(axis=0),
    }
    g_head_input = grad_logits @ params.head_weight.T
    if fwd.trace is None:
        hem_grads = None
        g_x = g_head_input
    else:
        hem_grads = hem_backward(fwd.trace, fwd.x_features, hem_cfg, g_head_input, mode)
        g_x = hem_grads.grad_x
    if params.hidden_weight is None:
        grads["backbone_weight"] = raw.T @ g_x
        grads["backbone_bias"] = g_x.sum(axis=0)
    else:
        grads["hidden_weight"] = fwd.hidden_act.T @ g_x
        grads["hidden_bias"] = g_x.sum(axis=0)
        g_hidden_pre = (g_x @ params.hidden_weight.T) * (1.0 - fwd.hidden_act**2)
        grads["backbone_weight"] = raw.T @ g_hidden_pre
        grads["backbone_bias"] = g_hidden_pre.sum(axis=0)
    return ModelGradients(by_name=grads, grad_x=g_x, hem=hem_grads)


def sgd_step(params: ToyModelParams, grads: dict[str, np.ndarray], lr: float) -> ToyModelParams:
    if lr <= 0.0:
        raise ConfigError(f"learning rate must be positive, got {lr}")
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingDivergedError(
                f"non-finite gradient for {name}", dump={"parameter": name}
            )
    updates = {name: getattr(params, name) - lr * g for name, g in grads.items()}
    return replace(params, **updates)


def _mean_grads(grad_list: list[dict[str, np.ndarray]]) -> dict[str, np.ndarray]:
    keys = grad_list[0].keys()
    return {k: sum(g[k] for g in grad_list) / len(grad_list) for k in keys}


@dataclass
class TrainResult:
    params: ToyModelParams
    state: BasisState
    metrics_records: list[dict]
    grads_records: list[dict]
    final_loss: float
    final_accuracy: float


def evaluate_accuracy(
    dataset: SegDataset,
    params: ToyModelParams,
    state: BasisState,
    hem_cfg: HemConfig,
    *,
    bypass_stack: bool = False,
    t_override: int | None = None,
) -> float:
    correct = 0
    total = 0
    for sample in dataset.samples:
        fwd = model_forward(
            sample.raw_features, params, state, hem_cfg,
            bypass_stack=bypass_stack, t_override=t_override,
        )
        pred = fwd.logits.argmax(axis=1)
        correct += int((pred == sample.labels.astype(np.int64)).sum())
        total += sample.labels.shape[0]
    return correct / total


def train(dataset: SegDataset, cfg: TrainConfig) -> TrainResult:
    """Epochs of forward/backward/SGD with a per-batch moving-average basis
    update, logging loss/accuracy every step and probe-set gradient profiles
    every cfg.grad_log_interval steps.
    """
    if not dataset.samples:
        raise ConfigError("dataset is empty")
    if cfg.model is None:
        raise ConfigError("TrainConfig.model is required for training")
    model_cfg = cfg.model
    hem_cfg = cfg.hem
    params = init_params(model_cfg, cfg.seed)
    state = init_bases(
        model_cfg.num_bases, model_cfg.feature_dim, cfg.seed + 1, hem_cfg.normalize_bases
    )
    shuffle_rng = np.random.default_rng(cfg.seed + 2)
    probe = dataset.samples[: min(cfg.probe_size, len(dataset.samples))]

    tags = {
        "eta": hem_cfg.step_size,
        "T": hem_cfg.num_layers_train,
        "kernel": hem_cfg.kernel.value,
        "seed": cfg.seed,
    }
    metrics_records: list[dict] = []
    grads_records: list[dict] = []
    step = 0
    last_loss = math.nan
    last_acc = math.nan
    total_steps = cfg.epochs * math.ceil(len(dataset.samples) / cfg.batch_size)

    for _ in range(cfg.epochs):
        order = shuffle_rng.permutation(len(dataset.samples))
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset.samples[i] for i in order[start : start + cfg.batch_size]]
            step += 1
            losses = []
            grad_list = []
            correct = 0
            total = 0
            final_mus = []
            for sample in batch:
                fwd = model_forward(
                    sample.raw_features, params, state, hem_cfg,
                    bypass_stack=model_cfg.bypass_stack,
                )
                loss, grad_logits = cross_entropy(fwd.logits, sample.labels)
                grads = model_backward(
                    sample.raw_features, params, fwd, hem_cfg, grad_logits
                )
                losses.append(loss)
                grad_list.append(grads.by_name)
                pred = fwd.logits.argmax(axis=1)
                correct += int((pred == sample.labels.astype(np.int64)).sum())
                total += sample.labels.shape[0]
                if fwd.trace is not None:
                    final_mus.append(fwd.trace.mu_per_layer[-1])
            params = sgd_step(params, _mean_grads(grad_list), cfg.learning_rate)
            last_loss = float(np.mean(losses))
            last_acc = correct / total
            if not (math.isfinite(last_loss) and params.all_finite()):
                raise TrainingDivergedError(
                    f"non-finite loss or parameters at step {step}",
                    dump={"step": step, "loss": last_loss},
                )
            if final_mus:
                state = moving_average_update(
                    state,
                    sum(final_mus) / len(final_mus),
                    hem_cfg.momentum,
                    hem_cfg.normalize_bases,
                )
            metrics_records.append(
                diagnostics.make_record(step, "", "loss", last_loss, **tags)
            )
            metrics_records.append(
                diagnostics.make_record(step, "", "accuracy", last_acc, **tags)
            )
            if not model_cfg.bypass_stack and (
                step % cfg.grad_log_interval == 0 or step == total_steps
            ):
                probe_metrics, probe_grads = _probe_records(
                    probe, params, state, hem_cfg, step, tags
                )
                metrics_records.extend(probe_metrics)
                grads_records.extend(probe_grads)
    return TrainResult(
        params=params,
        state=state,
        metrics_records=metrics_records,
        grads_records=grads_records,
        final_loss=last_loss,
        final_accuracy=last_acc,
    )


def probe_runs(
    samples: list[SegSample],
    params: ToyModelParams,
    state: BasisState,
    hem_cfg: HemConfig,
    *,
    t_override: int | None = None,
) -> list[tuple[HemTrace, HemGradients, HemGradients]]:
    """Paired EXACT / SKIP_ONLY backward passes on a fixed probe set."""
    runs = []
    for sample in samples:
        fwd = model_forward(
            sample.raw_features, params, state, hem_cfg, t_override=t_override
        )
        _, grad_logits = cross_entropy(fwd.logits, sample.labels)
        g_head_input = grad_logits @ params.head_weight.T
        exact = hem_backward(
            fwd.trace, fwd.x_features, hem_cfg, g_head_input, GradMode.EXACT
        )
        skip = hem_backward(
            fwd.trace, fwd.x_features, hem_cfg, g_head_input, GradMode.SKIP_ONLY
        )
        runs.append((fwd.trace, exact, skip))
    return runs


def _probe_records(probe, params, state, hem_cfg, step, tags):
    runs = probe_runs(probe, params, state, hem_cfg)
    stats, skip_profile = diagnostics.probe_grad_stats(runs, step)
    elbo_means = np.mean(
        [[e.total for e in trace.elbo_per_layer] for trace, _, _ in runs], axis=0
    )
    metrics = [
        diagnostics.make_record(step, t + 1, "probe_elbo_total", v, **tags)
        for t, v in enumerate(elbo_means)
    ]
    grads = diagnostics.stats_records(stats, skip_profile, **tags)
    return metrics, grads


def save_checkpoint(
    path, params: ToyModelParams, state: BasisState, model_cfg: ModelConfig
) -> None:
    entries: dict[str, np.ndarray] = {
        "meta": np.array(
            [
                model_cfg.input_dim,
                model_cfg.feature_dim,
                model_cfg.num_bases,
                model_cfg.num_classes,
                model_cfg.hidden_dim,
                int(model_cfg.bypass_stack),
            ],
            dtype=np.uint32,
        ),
        "running_mu": state.running_mu,
    }
    for name, value in params.weights().items():
        entries[name] = value.reshape(1, -1) if value.ndim == 1 else value
    write_container(path, entries)


def load_checkpoint(path) -> tuple[ToyModelParams, BasisState, ModelConfig]:
    entries = read_container(path)
    meta = entries["meta"]
    model_cfg = ModelConfig(
        input_dim=int(meta[0]),
        feature_dim=int(meta[1]),
        num_bases=int(meta[2]),
        num_classes=int(meta[3]),
        hidden_dim=int(meta[4]),
        bypass_stack=bool(meta[5]),
    )
    params = ToyModelParams(
        backbone_weight=entries["backbone_weight"],
        backbone_bias=entries["backbone_bias"].reshape(-1),
        head_weight=entries["head_weight"],
        head_bias=entries["head_bias"].reshape(-1),
        hidden_weight=entries.get("hidden_weight"),
        hidden_bias=(
            entries["hidden_bias"].reshape(-1) if "hidden_bias" in entries else None
        ),
    )
    return params, BasisState(running_mu=entries["running_mu"]), model_cfg
