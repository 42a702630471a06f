"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the per-criterion
lines. The committed experiment configuration lives in configs/ and the A7
margin below was calibrated against it.
"""

import json
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pytest

from highway_em import cli, diagnostics, gmm
from highway_em.backprop import GradMode, hem_backward
from highway_em.config import HemConfig, Kernel, ModelConfig, TrainConfig
from highway_em.datagen import ToySegSpec, gen_seg_dataset
from highway_em.gradcheck import (
    check_model_fd,
    check_skip_decay,
    check_skip_structure,
    check_stack_fd,
)
from highway_em.model import evaluate_accuracy, init_params, probe_runs, train
from highway_em.stack import BasisState, eval_extrapolate, hem_forward, init_bases

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

#: A7 margin calibrated against configs/train_default.json (measured gaps
#: were >= +0.058 across training seeds 0..3 and 7; committed seeds below).
A7_MARGIN = 0.02
A7_SEEDS = (7, 0)


def report(name, ok, detail=""):
    print(f"{name}: {'PASS' if ok else 'FAIL'}{' - ' + detail if detail else ''}")
    assert ok, f"{name} failed: {detail}"


def committed_dataset():
    gen_cfg = json.loads((CONFIG_DIR / "gen_toy_seg.json").read_text())
    section = dict(gen_cfg["toy_seg"])
    num_images = section.pop("num_images")
    return gen_seg_dataset(ToySegSpec(seed=gen_cfg["seed"], **section), num_images)


def committed_train_config(seed, bypass):
    raw = json.loads((CONFIG_DIR / "train_default.json").read_text())
    hem_cfg = HemConfig(**raw["hem"])
    model_section = {k: v for k, v in raw["model"].items() if k != "bypass_stack"}
    model_cfg = ModelConfig(
        input_dim=5, num_classes=4, bypass_stack=bypass, **model_section
    )
    return TrainConfig(seed=seed, hem=hem_cfg, model=model_cfg, **raw["train"])


@pytest.fixture(scope="module")
def committed_runs():
    """Train the committed HEM model and its no-stack baseline per seed."""
    dataset = committed_dataset()
    runs = {}
    for seed in A7_SEEDS:
        per_seed = {}
        for bypass in (False, True):
            cfg = committed_train_config(seed, bypass)
            result = train(dataset, cfg)
            accuracy = evaluate_accuracy(
                dataset, result.params, result.state, cfg.hem, bypass_stack=bypass
            )
            per_seed[bypass] = (result, accuracy, cfg)
        runs[seed] = per_seed
    return dataset, runs


def test_a1_eta_one_reduces_to_classic_em():
    start = time.time()
    for i in range(50):
        rng = np.random.default_rng(1000 + i)
        n = int(rng.integers(8, 129))
        k = int(rng.integers(2, 9))
        c = int(rng.integers(2, 9))
        t = int(rng.integers(1, 17))
        sigma2 = float(rng.uniform(0.5, 2.0))
        x = rng.standard_normal((n, c)) * 1.5
        state = BasisState(rng.standard_normal((k, c)))
        cfg = HemConfig(num_layers_train=t, step_size=1.0, temperature=sigma2)
        trace = hem_forward(x, state, cfg)
        mu = state.running_mu.copy()
        for layer in range(t):
            gamma = gmm.e_step(x, gmm.GmmParams(mu, sigma2), Kernel.RBF)
            mu = gmm.m_step(gamma, x)
            assert np.array_equal(trace.mu_per_layer[layer + 1], mu)
    elapsed = time.time() - start
    report("A1 eta=1 equals classic EM (bitwise, 50 instances)", elapsed < 10.0,
           f"{elapsed:.1f}s")


def test_a2_elbo_monotonicity_500_instances():
    start = time.time()
    etas = [0.1, 0.25, 0.5, 0.75, 1.0]
    worst_drop = -np.inf
    strict_failures = 0
    for i in range(500):
        rng = np.random.default_rng(20_000 + i)
        n = int(rng.integers(8, 257))
        k = int(rng.integers(2, 9))
        c = int(rng.integers(2, 17))
        t = int(rng.integers(2, 9))
        x = rng.standard_normal((n, c)) * float(rng.uniform(0.5, 3.0))
        state = BasisState(rng.standard_normal((k, c)))
        cfg = HemConfig(
            num_layers_train=t, step_size=etas[i % 5],
            temperature=float(rng.uniform(0.5, 3.0)),
        )
        trace = hem_forward(x, state, cfg)
        totals = [e.total for e in trace.elbo_per_layer]
        for j in range(1, t):
            worst_drop = max(worst_drop, totals[j - 1] - totals[j])
            moved = np.abs(trace.mu_per_layer[j + 1] - trace.mu_per_layer[j]).max()
            if moved >= 1e-8 and not totals[j] > totals[j - 1]:
                strict_failures += 1
    elapsed = time.time() - start
    report(
        "A2 ELBO monotone over 500 instances",
        worst_drop <= 1e-9 and strict_failures == 0 and elapsed < 60.0,
        f"worst drop {worst_drop:.2e}, {strict_failures} strictness failures, {elapsed:.1f}s",
    )


def test_a3_gradient_oracle_200_instances():
    start = time.time()
    stack_result = check_stack_fd(np.random.default_rng(7), 140)
    model_result = check_model_fd(np.random.default_rng(8), 60)
    elapsed = time.time() - start
    worst = max(stack_result.max_error, model_result.max_error)
    report(
        "A3 analytic gradients match finite differences (200 instances)",
        stack_result.passed and model_result.passed and elapsed < 120.0,
        f"max rel err {worst:.2e} <= 1e-6, {elapsed:.1f}s",
    )


def test_a4_skip_gradient_decay_law():
    result = check_skip_decay(np.random.default_rng(9), 100)
    report(
        "A4 skip-only basis gradients decay as (1-eta)^(T-t)",
        result.passed,
        f"max err {result.max_error:.2e} <= 1e-12 incl. eta=1 zeros",
    )


def test_a5_skip_contribution_structure():
    result = check_skip_structure(np.random.default_rng(10), 100)
    report(
        "A5 skip-only input contributions match responsibility rescaling",
        result.passed,
        f"max err {result.max_error:.2e} <= 1e-10",
    )


def test_a6_gradient_profile_entropy_decreases_with_eta():
    etas = [round(0.1 * i, 1) for i in range(1, 10)]
    failures = []
    for seed in range(10):
        spec = ToySegSpec(
            height=16, width=16, num_shapes=3, num_classes=4,
            pixel_noise_std=0.5, seed=42 + 1000 * seed,
        )
        dataset = gen_seg_dataset(spec, 4)
        model_cfg = ModelConfig(input_dim=5, feature_dim=8, num_bases=12, num_classes=4)
        params = init_params(model_cfg, seed)
        state = init_bases(12, 8, seed + 1)
        entropies = []
        for eta in etas:
            cfg = HemConfig(
                num_layers_train=6, num_layers_eval=6, step_size=eta,
                temperature=0.15, kernel=Kernel.RBF,
            )
            runs = probe_runs(dataset.samples, params, state, cfg)
            _, skip_profile = diagnostics.probe_grad_stats(runs)
            entropies.append(diagnostics.layer_entropy(skip_profile))
        if not all(b < a for a, b in zip(entropies, entropies[1:])):
            failures.append(seed)
    report(
        "A6 skip grad-x profile entropy strictly decreasing in eta (T=6, 10 seeds)",
        not failures,
        f"failing seeds: {failures or 'none'}",
    )


def test_a7_learning_benefit_over_linear_baseline(committed_runs):
    start = time.time()
    _, runs = committed_runs
    details = []
    ok = True
    for seed, per_seed in runs.items():
        _, hem_acc, _ = per_seed[False]
        _, base_acc, _ = per_seed[True]
        details.append(f"seed {seed}: hem {hem_acc:.4f} vs baseline {base_acc:.4f}")
        ok = ok and hem_acc > base_acc + A7_MARGIN
    elapsed = time.time() - start
    report(
        f"A7 training accuracy beats no-stack baseline by > {A7_MARGIN}",
        ok and elapsed < 300.0,
        "; ".join(details),
    )


def test_a8_eval_depth_extrapolation(committed_runs):
    dataset, runs = committed_runs
    depths = [1, 2, 4, 8]
    accuracy_by_depth = {}
    ok = True
    for seed, per_seed in runs.items():
        result, _, cfg = per_seed[False]
        for sample in dataset.samples:
            fwd_x = sample.raw_features @ result.params.backbone_weight
            fwd_x = fwd_x + result.params.backbone_bias
            traces = eval_extrapolate(fwd_x, result.state, cfg.hem, depths)
            finals = [t.elbo_per_layer[-1].total for t in traces]
            ok = ok and all(b >= a - 1e-9 for a, b in zip(finals, finals[1:]))
        accuracy_by_depth[seed] = {
            d: evaluate_accuracy(
                dataset, result.params, result.state, cfg.hem, t_override=d
            )
            for d in depths
        }
    detail = "; ".join(
        f"seed {seed} acc@T " + ", ".join(f"{d}:{a:.3f}" for d, a in accs.items())
        for seed, accs in accuracy_by_depth.items()
    )
    report("A8 final-layer ELBO non-decreasing in eval depth {1,2,4,8}", ok, detail)


def _median_forward_time(n, k, c, t, eta, reps=21):
    rng = np.random.default_rng(123)
    x = rng.standard_normal((n, c))
    state = BasisState(rng.standard_normal((k, c)))
    cfg = HemConfig(num_layers_train=t, step_size=eta, temperature=1.0)
    hem_forward(x, state, cfg)
    hem_forward(x, state, cfg)
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        hem_forward(x, state, cfg)
        times.append(time.perf_counter() - t0)
    return float(np.median(times))


def test_a9_forward_cost_and_scaling():
    em = _median_forward_time(2048, 16, 16, 4, 1.0)
    hem = _median_forward_time(2048, 16, 16, 4, 0.5)
    ratio = hem / em
    small = _median_forward_time(4096, 8, 8, 2, 0.5)
    large = _median_forward_time(8192, 8, 8, 2, 0.5)
    scaling = large / small
    report(
        "A9 highway forward costs <= 1.10x plain EM and scales ~linearly in N",
        ratio <= 1.10 and 1.4 <= scaling <= 2.6,
        f"cost ratio {ratio:.3f}, N-doubling ratio {scaling:.2f}",
    )


def test_a10_cli_outputs_byte_identical(tmp_path):
    gen_config = {
        "kind": "toy_seg",
        "seed": 5,
        "out": str(tmp_path / "data"),
        "toy_seg": {
            "height": 8, "width": 8, "num_shapes": 2, "num_classes": 3,
            "pixel_noise_std": 0.4, "num_images": 4,
        },
    }
    (tmp_path / "gen.json").write_text(json.dumps(gen_config))
    assert cli.main(["gen", "--config", str(tmp_path / "gen.json")]) == 0

    base = {
        "dataset": str(tmp_path / "data" / "dataset.bin"),
        "seed": 3,
        "train": {
            "learning_rate": 0.5, "epochs": 3, "batch_size": 2,
            "grad_log_interval": 4, "probe_size": 2,
        },
        "hem": {"num_layers_train": 2, "num_layers_eval": 2, "step_size": 0.5,
                "temperature": 0.15},
        "model": {"feature_dim": 6, "num_bases": 4},
    }
    train_blobs, sweep_blobs = [], []
    for run in ("r1", "r2"):
        train_cfg = dict(base, out=str(tmp_path / f"train_{run}"))
        (tmp_path / "train.json").write_text(json.dumps(train_cfg))
        assert cli.main(["train", "--config", str(tmp_path / "train.json")]) == 0
        train_blobs.append(
            (tmp_path / f"train_{run}" / "metrics.csv").read_bytes()
            + (tmp_path / f"train_{run}" / "grads.csv").read_bytes()
        )
        sweep_cfg = dict(
            base,
            out=str(tmp_path / f"sweep_{run}"),
            sweep={"etas": [0.5, 1.0], "t_train": [2], "t_eval": [1, 2]},
        )
        (tmp_path / "sweep.json").write_text(json.dumps(sweep_cfg))
        assert cli.main(["sweep", "--config", str(tmp_path / "sweep.json")]) == 0
        sweep_blobs.append((tmp_path / f"sweep_{run}" / "sweep.csv").read_bytes())
    report(
        "A10 train and sweep outputs byte-identical across reruns",
        train_blobs[0] == train_blobs[1] and sweep_blobs[0] == sweep_blobs[1],
    )
