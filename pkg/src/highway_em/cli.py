"""Command-line orchestration: gen / train / gradcheck / sweep / fig3.

Every command reads a JSON config (unknown keys rejected), applies --out and
--seed overrides, fully validates before touching the filesystem, and echoes
the resolved config into the output directory. stdout carries machine-readable
``name=path`` lines; stderr carries human diagnostics.

Exit codes: 0 ok, 2 config error, 3 I/O or file-format error, 4 training
diverged (diagnostic dump written), 5 gradient/monotonicity check failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import diagnostics
from .config import HemConfig, ModelConfig, TrainConfig
from .container import write_container
from .datagen import (
    PointCloudSpec,
    SegDataset,
    ToySegSpec,
    gen_point_cloud,
    gen_seg_dataset,
    load_dataset,
    save_dataset,
)
from .errors import ConfigError, DataFormatError, TrainingDivergedError
from .gradcheck import run_gradcheck
from .model import (
    evaluate_accuracy,
    init_params,
    load_checkpoint,
    model_forward,
    probe_runs,
    save_checkpoint,
    train,
)
from .stack import init_bases

_HEM_SCHEMA = {
    "num_layers_train": ("int", False),
    "num_layers_eval": ("int", False),
    "step_size": ("float", False),
    "temperature": ("float_or_auto", False),
    "kernel": ("str", False),
    "momentum": ("float", False),
    "normalize_bases": ("str", False),
}
_MODEL_SCHEMA = {
    "feature_dim": ("int", True),
    "num_bases": ("int", True),
    "hidden_dim": ("int", False),
    "bypass_stack": ("bool", False),
}
_TRAIN_SECTION_SCHEMA = {
    "learning_rate": ("float", True),
    "epochs": ("int", True),
    "batch_size": ("int", True),
    "grad_log_interval": ("int", False),
    "probe_size": ("int", False),
}
_TOY_SEG_SCHEMA = {
    "height": ("int", True),
    "width": ("int", True),
    "num_shapes": ("int", True),
    "num_classes": ("int", True),
    "pixel_noise_std": ("float", True),
    "num_images": ("int", True),
}
_POINT_CLOUD_SCHEMA = {
    "n_points": ("int", True),
    "k_true": ("int", True),
    "dim": ("int", True),
    "separation": ("float", True),
    "noise_std": ("float", True),
}
_SCHEMAS = {
    "gen": {
        "kind": ("str", True),
        "seed": ("int", True),
        "out": ("str", False),
        "toy_seg": (_TOY_SEG_SCHEMA, False),
        "point_cloud": (_POINT_CLOUD_SCHEMA, False),
    },
    "train": {
        "dataset": ("str", True),
        "seed": ("int", True),
        "out": ("str", False),
        "train": (_TRAIN_SECTION_SCHEMA, True),
        "hem": (_HEM_SCHEMA, False),
        "model": (_MODEL_SCHEMA, True),
    },
    "gradcheck": {
        "seed": ("int", True),
        "instances": ("int", False),
        "out": ("str", False),
    },
    "fig3": {
        "dataset": ("str", True),
        "seed": ("int", True),
        "out": ("str", False),
        "checkpoint": ("str", False),
        "train": (_TRAIN_SECTION_SCHEMA, False),
        "hem": (_HEM_SCHEMA, False),
        "model": (_MODEL_SCHEMA, True),
        "fig3": (
            {
                "etas": ("list_float", True),
                "num_layers": ("int", False),
                "probe_size": ("int", False),
            },
            True,
        ),
    },
}
_SCHEMAS["sweep"] = dict(
    _SCHEMAS["train"],
    sweep=(
        {
            "etas": ("list_float", True),
            "t_train": ("list_int", True),
            "t_eval": ("list_int", True),
        },
        True,
    ),
)


def _is_int(v) -> bool:
    return isinstance(v, int) and not isinstance(v, bool)


def _check_type(value, kind, path):
    if kind == "int" and not _is_int(value):
        raise ConfigError(f"config key {path}: expected integer, got {value!r}")
    if kind == "float" and not (_is_int(value) or isinstance(value, float)):
        raise ConfigError(f"config key {path}: expected number, got {value!r}")
    if kind == "str" and not isinstance(value, str):
        raise ConfigError(f"config key {path}: expected string, got {value!r}")
    if kind == "bool" and not isinstance(value, bool):
        raise ConfigError(f"config key {path}: expected boolean, got {value!r}")
    if kind == "float_or_auto" and not (
        _is_int(value) or isinstance(value, float) or value == "auto"
    ):
        raise ConfigError(f"config key {path}: expected number or 'auto', got {value!r}")
    if kind == "list_float" and not (
        isinstance(value, list)
        and value
        and all(_is_int(v) or isinstance(v, float) for v in value)
    ):
        raise ConfigError(f"config key {path}: expected non-empty number list")
    if kind == "list_int" and not (
        isinstance(value, list) and value and all(_is_int(v) for v in value)
    ):
        raise ConfigError(f"config key {path}: expected non-empty integer list")


def _validate(config, schema, path="") -> None:
    if not isinstance(config, dict):
        raise ConfigError(f"config section {path or '<root>'} must be an object")
    for key in config:
        if key not in schema:
            raise ConfigError(f"unknown config key {path}{key}")
    for key, (kind, required) in schema.items():
        if key not in config:
            if required:
                raise ConfigError(f"missing required config key {path}{key}")
            continue
        if isinstance(kind, dict):
            _validate(config[key], kind, f"{path}{key}.")
        else:
            _check_type(config[key], kind, f"{path}{key}")


def _load_config(args, command: str, need_out: bool = True) -> dict:
    path = Path(args.config)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as err:
        raise DataFormatError(f"cannot read config {path}: {err}") from err
    try:
        config = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config {path} is not valid JSON: {err}") from err
    _validate(config, _SCHEMAS[command])
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out is not None:
        config["out"] = args.out
    if need_out and "out" not in config:
        raise ConfigError("missing required config key out (or pass --out)")
    return config


def _prepare_out(config) -> Path:
    out = Path(config["out"])
    out.mkdir(parents=True, exist_ok=True)
    resolved = out / "resolved_config.json"
    resolved.write_text(json.dumps(config, indent=2, sort_keys=True) + "\n", "utf-8")
    return out


def _emit_path(name: str, path: Path) -> None:
    print(f"{name}={path}")


def _build_hem(config) -> HemConfig:
    return HemConfig(**config.get("hem", {}))


def _build_model_cfg(config, dataset: SegDataset) -> ModelConfig:
    section = dict(config["model"])
    return ModelConfig(
        input_dim=dataset.samples[0].raw_features.shape[1],
        num_classes=dataset.num_classes,
        **section,
    )


def _build_train_cfg(config, dataset: SegDataset) -> TrainConfig:
    return TrainConfig(
        seed=config["seed"],
        hem=_build_hem(config),
        model=_build_model_cfg(config, dataset),
        **config["train"],
    )


def _load_dataset_checked(config) -> SegDataset:
    path = Path(config["dataset"])
    if not path.exists():
        raise DataFormatError(f"dataset file {path} does not exist")
    dataset = load_dataset(path)
    if not dataset.samples:
        raise DataFormatError(f"dataset file {path} contains no samples")
    return dataset


def cmd_gen(args) -> int:
    config = _load_config(args, "gen")
    kind = config["kind"]
    if kind == "toy_seg":
        if "toy_seg" not in config:
            raise ConfigError("kind=toy_seg requires a toy_seg section")
        section = dict(config["toy_seg"])
        num_images = section.pop("num_images")
        spec = ToySegSpec(seed=config["seed"], **section)
        dataset = gen_seg_dataset(spec, num_images)
        out = _prepare_out(config)
        path = out / "dataset.bin"
        save_dataset(dataset, path)
        labels = np.concatenate([s.labels for s in dataset.samples])
        hist = np.bincount(labels, minlength=dataset.num_classes)
        print(
            f"toy_seg dataset: {len(dataset.samples)} images, "
            f"{labels.size} pixels, class histogram {hist.tolist()}",
            file=sys.stderr,
        )
    elif kind == "point_cloud":
        if "point_cloud" not in config:
            raise ConfigError("kind=point_cloud requires a point_cloud section")
        spec = PointCloudSpec(seed=config["seed"], **config["point_cloud"])
        points, labels = gen_point_cloud(spec)
        out = _prepare_out(config)
        path = out / "dataset.bin"
        write_container(
            path,
            {
                "meta": np.array([spec.k_true, spec.dim], dtype=np.uint32),
                "points": points,
                "labels": labels,
            },
        )
        hist = np.bincount(labels, minlength=spec.k_true)
        print(
            f"point cloud: {points.shape[0]} points in {spec.dim}-D, "
            f"component histogram {hist.tolist()}",
            file=sys.stderr,
        )
    else:
        raise ConfigError(f"unknown dataset kind {kind!r}")
    _emit_path("dataset", path)
    return 0


def cmd_train(args) -> int:
    config = _load_config(args, "train")
    dataset = _load_dataset_checked(config)
    train_cfg = _build_train_cfg(config, dataset)
    out = _prepare_out(config)
    try:
        result = train(dataset, train_cfg)
    except TrainingDivergedError as err:
        dump_path = out / "diverged_dump.json"
        dump_path.write_text(
            json.dumps({"error": str(err), **err.dump}, indent=2, sort_keys=True) + "\n",
            "utf-8",
        )
        print(f"training diverged: {err}", file=sys.stderr)
        _emit_path("diverged_dump", dump_path)
        return 4
    metrics_path = out / "metrics.csv"
    grads_path = out / "grads.csv"
    summary_path = out / "summary.json"
    checkpoint_path = out / "checkpoint.bin"
    diagnostics.emit_csv(result.metrics_records, metrics_path)
    diagnostics.emit_csv(result.grads_records, grads_path)
    diagnostics.emit_summary_json(
        result.metrics_records + result.grads_records, summary_path
    )
    save_checkpoint(checkpoint_path, result.params, result.state, train_cfg.model)
    print(
        f"trained {train_cfg.epochs} epochs: final loss {result.final_loss:.6f}, "
        f"accuracy {result.final_accuracy:.4f}",
        file=sys.stderr,
    )
    _emit_path("metrics_csv", metrics_path)
    _emit_path("grads_csv", grads_path)
    _emit_path("summary_json", summary_path)
    _emit_path("checkpoint", checkpoint_path)
    return 0


def cmd_gradcheck(args) -> int:
    if args.config:
        config = _load_config(args, "gradcheck", need_out=False)
    else:
        config = {"seed": args.seed if args.seed is not None else 0}
        if args.out is not None:
            config["out"] = args.out
    report = run_gradcheck(config["seed"], config.get("instances", 40))
    for line in report.lines():
        print(line, file=sys.stderr)
    if "out" in config:
        out = _prepare_out(config)
        report_path = out / "gradcheck_report.json"
        report_path.write_text(
            json.dumps(
                {
                    "passed": report.passed,
                    "checks": [
                        {
                            "name": r.name,
                            "max_error": r.max_error,
                            "tolerance": r.tolerance,
                            "passed": r.passed,
                        }
                        for r in report.results
                    ],
                },
                indent=2,
                sort_keys=True,
            )
            + "\n",
            "utf-8",
        )
        _emit_path("report", report_path)
    if not report.passed:
        print(f"FAILED checks: {', '.join(report.failing())}", file=sys.stderr)
        return 5
    return 0


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _sweep_cell(dataset, config, eta, t_train, t_evals):
    base_hem = _build_hem(config)
    hem_cfg = replace(
        base_hem, step_size=eta, num_layers_train=t_train, num_layers_eval=t_train
    )
    train_cfg = replace(_build_train_cfg(config, dataset), hem=hem_cfg)
    rows = []
    try:
        result = train(dataset, train_cfg)
    except TrainingDivergedError as err:
        for t_eval in t_evals:
            rows.append((eta, t_train, t_eval, None, None, f"failed: {err}"))
        return rows
    for t_eval in t_evals:
        accuracy = evaluate_accuracy(
            dataset, result.params, result.state, hem_cfg, t_override=t_eval
        )
        finals = []
        for sample in dataset.samples:
            fwd = model_forward(
                sample.raw_features, result.params, result.state, hem_cfg,
                t_override=t_eval,
            )
            finals.append(fwd.trace.elbo_per_layer[-1].total)
        rows.append((eta, t_train, t_eval, accuracy, float(np.mean(finals)), "ok"))
    return rows


def cmd_sweep(args) -> int:
    config = _load_config(args, "sweep")
    dataset = _load_dataset_checked(config)
    _build_train_cfg(config, dataset)  # validate before any side effects
    grid = config["sweep"]
    cells = [(eta, t_train) for eta in grid["etas"] for t_train in grid["t_train"]]
    out = _prepare_out(config)
    if args.parallel > 1:
        with ThreadPoolExecutor(max_workers=args.parallel) as pool:
            futures = [
                pool.submit(_sweep_cell, dataset, config, eta, t_train, grid["t_eval"])
                for eta, t_train in cells
            ]
            all_rows = [row for fut in futures for row in fut.result()]
    else:
        all_rows = [
            row
            for eta, t_train in cells
            for row in _sweep_cell(dataset, config, eta, t_train, grid["t_eval"])
        ]
    all_rows.sort(key=lambda r: (r[0], r[1], r[2]))
    sweep_path = out / "sweep.csv"
    with sweep_path.open("w", encoding="utf-8", newline="") as fh:
        fh.write("eta,t_train,t_eval,accuracy,final_elbo,status\n")
        for row in all_rows:
            fh.write(",".join(_format_cell(v) for v in row) + "\n")
    print(f"swept {len(cells)} cells x {len(grid['t_eval'])} eval depths", file=sys.stderr)
    _emit_path("sweep_csv", sweep_path)
    return 0


def cmd_fig3(args) -> int:
    config = _load_config(args, "fig3")
    dataset = _load_dataset_checked(config)
    section = config["fig3"]
    base_hem = _build_hem(config)
    model_cfg = _build_model_cfg(config, dataset)
    num_layers = section.get("num_layers", base_hem.num_layers_train)
    probe_size = section.get("probe_size", 100)
    probe = dataset.samples[: min(probe_size, len(dataset.samples))]
    seed = config["seed"]
    out = _prepare_out(config)

    elbo_records = []
    grad_records = []
    for eta in section["etas"]:
        hem_cfg = replace(
            base_hem, step_size=eta, num_layers_train=num_layers,
            num_layers_eval=num_layers,
        )
        if "checkpoint" in config:
            params, state, _ = load_checkpoint(config["checkpoint"])
        elif "train" in config:
            train_cfg = TrainConfig(
                seed=seed, hem=hem_cfg, model=model_cfg, **config["train"]
            )
            result = train(dataset, train_cfg)
            params, state = result.params, result.state
        else:
            params = init_params(model_cfg, seed)
            state = init_bases(
                model_cfg.num_bases, model_cfg.feature_dim, seed + 1,
                base_hem.normalize_bases,
            )
        runs = probe_runs(probe, params, state, hem_cfg)
        tags = {"eta": eta, "T": num_layers, "kernel": hem_cfg.kernel.value, "seed": seed}
        elbo_means = np.mean(
            [[e.total for e in trace.elbo_per_layer] for trace, _, _ in runs], axis=0
        )
        for t, value in enumerate(elbo_means, start=1):
            elbo_records.append(diagnostics.make_record(0, t, "elbo_total", value, **tags))
        stats, skip_profile = diagnostics.probe_grad_stats(runs)
        grad_records.extend(diagnostics.stats_records(stats, skip_profile, **tags))
    elbo_path = out / "elbo_curve.csv"
    grads_path = out / "grad_profile.csv"
    diagnostics.emit_csv(elbo_records, elbo_path)
    diagnostics.emit_csv(grad_records, grads_path)
    _emit_path("elbo_curve_csv", elbo_path)
    _emit_path("grad_profile_csv", grads_path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hem",
        description="Unrolled EM / highway-EM attention experiments on synthetic data",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, func in [
        ("gen", cmd_gen),
        ("train", cmd_train),
        ("gradcheck", cmd_gradcheck),
        ("sweep", cmd_sweep),
        ("fig3", cmd_fig3),
    ]:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=(name != "gradcheck"), help="JSON config file")
        cmd.add_argument("--out", help="output directory (overrides config)")
        cmd.add_argument("--seed", type=int, help="seed override")
        if name == "sweep":
            cmd.add_argument(
                "--parallel", type=int, default=1, help="worker threads for sweep cells"
            )
        cmd.set_defaults(func=func)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except (DataFormatError, OSError) as err:
        print(f"I/O error: {err}", file=sys.stderr)
        return 3
    except TrainingDivergedError as err:
        print(f"training error: {err}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
