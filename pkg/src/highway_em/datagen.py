"""Deterministic synthetic data: GMM point clouds and toy segmentation images.

Everything is a pure function of its spec (seed included), so datasets are
bitwise reproducible. Images are flattened to (H*W) x D feature matrices with
D = 3 color channels + 2 normalized pixel coordinates; the coordinates give a
linear backbone something spatial to work with.
"""

from __future__ import annotations

import colorsys
from dataclasses import dataclass

import numpy as np

from .container import read_container, write_container
from .errors import ConfigError, DataFormatError, GenerationError

_CENTER_ATTEMPTS = 100
_PLACEMENT_RESTARTS = 10


@dataclass(frozen=True)
class PointCloudSpec:
    n_points: int
    k_true: int
    dim: int
    separation: float  # min inter-center distance in units of component std
    noise_std: float
    seed: int

    def __post_init__(self):
        if self.k_true < 1 or self.n_points < self.k_true:
            raise ConfigError("need n_points >= k_true >= 1")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.separation < 0.0:
            raise ConfigError("separation must be >= 0")
        if not (self.noise_std > 0.0):
            raise ConfigError("noise_std must be positive")


@dataclass(frozen=True)
class ToySegSpec:
    height: int
    width: int
    num_shapes: int
    num_classes: int  # background class 0 plus shape classes
    pixel_noise_std: float
    seed: int

    def __post_init__(self):
        if not (1 <= self.height <= 64 and 1 <= self.width <= 64):
            raise ConfigError("height and width must be in [1, 64]")
        if not (1 <= self.num_shapes <= 4):
            raise ConfigError("num_shapes must be in [1, 4]")
        if self.num_classes < 2:
            raise ConfigError("need at least background + one shape class")
        if self.pixel_noise_std < 0.0:
            raise ConfigError("pixel_noise_std must be >= 0")


@dataclass
class SegSample:
    """One image, flattened row-major: (H*W) x 5 features, (H*W,) labels."""

    raw_features: np.ndarray
    labels: np.ndarray
    height: int
    width: int


@dataclass
class SegDataset:
    samples: list[SegSample]
    num_classes: int


def class_color(label: int, num_classes: int) -> np.ndarray:
    """Fixed palette: mid-gray background, evenly spaced hues for shapes."""
    if label == 0:
        return np.array([0.5, 0.5, 0.5])
    hue = (label - 1) / max(num_classes - 1, 1)
    return np.array(colorsys.hsv_to_rgb(hue, 0.9, 0.9))


def gen_point_cloud(spec: PointCloudSpec) -> tuple[np.ndarray, np.ndarray]:
    """Isotropic Gaussian blobs around seeded centers with guaranteed spacing."""
    rng = np.random.default_rng(spec.seed)
    min_dist = spec.separation * spec.noise_std
    for restart in range(_PLACEMENT_RESTARTS):
        side = max(1.0, min_dist) * spec.k_true * (1.0 + restart)
        centers: list[np.ndarray] = []
        for _ in range(spec.k_true):
            for _ in range(_CENTER_ATTEMPTS):
                cand = rng.uniform(0.0, side, size=spec.dim)
                if all(np.linalg.norm(cand - c) >= min_dist for c in centers):
                    centers.append(cand)
                    break
            else:
                break
        if len(centers) == spec.k_true:
            break
    else:
        raise GenerationError(
            f"could not place {spec.k_true} centers at separation {spec.separation}"
        )
    center_arr = np.stack(centers)
    # Every component gets at least one point; the rest are assigned at random.
    labels = np.concatenate(
        [
            np.arange(spec.k_true),
            rng.integers(0, spec.k_true, size=spec.n_points - spec.k_true),
        ]
    )
    labels = rng.permutation(labels)
    points = center_arr[labels] + spec.noise_std * rng.standard_normal(
        (spec.n_points, spec.dim)
    )
    return points, labels.astype(np.uint32)


def gen_toy_seg(spec: ToySegSpec) -> SegSample:
    """Axis-aligned rectangles and circles on a noisy background.

    Later shapes overwrite earlier ones; placement is clipped to the image,
    so generation never fails.
    """
    rng = np.random.default_rng(spec.seed)
    h, w = spec.height, spec.width
    label_map = np.zeros((h, w), dtype=np.int64)
    rows = np.arange(h)[:, None]
    cols = np.arange(w)[None, :]
    for i in range(spec.num_shapes):
        cls = 1 + i % (spec.num_classes - 1)
        if rng.integers(0, 2) == 0:  # rectangle
            r0 = int(rng.integers(0, max(h - 2, 1)))
            c0 = int(rng.integers(0, max(w - 2, 1)))
            rh = int(rng.integers(2, max(h // 2, 3)))
            cw = int(rng.integers(2, max(w // 2, 3)))
            label_map[r0 : min(r0 + rh, h), c0 : min(c0 + cw, w)] = cls
        else:  # circle
            cr = float(rng.uniform(0, h - 1))
            cc = float(rng.uniform(0, w - 1))
            radius = float(rng.uniform(2, max(min(h, w) / 3.0, 2.5)))
            mask = (rows - cr) ** 2 + (cols - cc) ** 2 <= radius**2
            label_map[mask] = cls
    colors = np.empty((h, w, 3))
    for cls in range(spec.num_classes):
        colors[label_map == cls] = class_color(cls, spec.num_classes)
    colors += spec.pixel_noise_std * rng.standard_normal((h, w, 3))
    coord_r = rows / max(h - 1, 1) * np.ones((h, w))
    coord_c = cols / max(w - 1, 1) * np.ones((h, w))
    features = np.concatenate(
        [colors.reshape(-1, 3), coord_r.reshape(-1, 1), coord_c.reshape(-1, 1)],
        axis=1,
    )
    return SegSample(
        raw_features=features,
        labels=label_map.reshape(-1).astype(np.uint32),
        height=h,
        width=w,
    )


def gen_seg_dataset(spec: ToySegSpec, num_images: int) -> SegDataset:
    """num_images independent draws; image i uses seed spec.seed + i."""
    if num_images < 1:
        raise ConfigError("num_images must be >= 1")
    samples = [
        gen_toy_seg(
            ToySegSpec(
                height=spec.height,
                width=spec.width,
                num_shapes=spec.num_shapes,
                num_classes=spec.num_classes,
                pixel_noise_std=spec.pixel_noise_std,
                seed=spec.seed + i,
            )
        )
        for i in range(num_images)
    ]
    return SegDataset(samples=samples, num_classes=spec.num_classes)


def save_dataset(dataset: SegDataset, path) -> None:
    entries: dict[str, np.ndarray] = {
        "meta": np.array([len(dataset.samples), dataset.num_classes], dtype=np.uint32)
    }
    for i, sample in enumerate(dataset.samples):
        entries[f"features_{i}"] = np.asarray(sample.raw_features, dtype=np.float64)
        entries[f"labels_{i}"] = np.asarray(sample.labels, dtype=np.uint32)
        entries[f"shape_{i}"] = np.array([sample.height, sample.width], dtype=np.uint32)
    write_container(path, entries)


def load_dataset(path) -> SegDataset:
    entries = read_container(path)
    if "meta" not in entries or entries["meta"].shape != (2,):
        raise DataFormatError(f"{path}: missing or malformed dataset meta entry")
    n_samples, num_classes = (int(v) for v in entries["meta"])
    samples = []
    for i in range(n_samples):
        try:
            features = entries[f"features_{i}"]
            labels = entries[f"labels_{i}"]
            height, width = (int(v) for v in entries[f"shape_{i}"])
        except KeyError as err:
            raise DataFormatError(f"{path}: missing dataset entry {err}") from err
        samples.append(
            SegSample(
                raw_features=features, labels=labels, height=height, width=width
            )
        )
    return SegDataset(samples=samples, num_classes=num_classes)
