"""Synthetic classification datasets with fixed four-way splits."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

KINDS = ("blobs", "rings", "xor")
SPLITS = ("search_train", "search_val", "eval_train", "eval_test")


@dataclass
class SyntheticDataset:
    features: np.ndarray
    labels: np.ndarray
    splits: dict[str, np.ndarray]
    spec: dict = field(default_factory=dict)

    @property
    def num_classes(self) -> int:
        return int(self.spec["classes"])

    @property
    def width(self) -> int:
        return self.features.shape[1]

    def subset(self, split: str) -> tuple[np.ndarray, np.ndarray]:
        idx = self.splits[split]
        return self.features[idx], self.labels[idx]


def _orthonormal(rng: np.random.Generator, rows: int, width: int) -> np.ndarray:
    q, _ = np.linalg.qr(rng.normal(size=(width, rows)))
    return q.T


def make_dataset(kind: str, n: int, width: int, classes: int, noise: float, seed: int,
                 offset: float = 0.0) -> SyntheticDataset:
    """Build a standardized dataset; identical arguments give identical bytes.

    ``blobs`` are Gaussian clusters around random centers. ``rings`` and
    ``xor`` are 2-D patterns (concentric circles, alternating angular
    sectors) rotated into ``width`` dimensions, with ``noise`` added in the
    plane and at half strength off it. For ``rings``, ``offset`` shifts the
    class-0 ring along the first plane axis, which makes the classes partly
    linearly separable.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown dataset kind {kind!r}; expected one of {KINDS}")
    if classes < 2:
        raise ValueError("need at least 2 classes")
    if n < 4 * classes:
        raise ValueError(f"n={n} too small for {classes} classes (need >= {4 * classes})")
    if width < 2:
        raise ValueError("width must be >= 2")
    if noise < 0:
        raise ValueError("noise must be >= 0")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(np.arange(n) % classes)

    if kind == "blobs":
        centers = rng.normal(scale=3.0, size=(classes, width))
        x = centers[labels] + noise * rng.normal(size=(n, width))
    else:
        if kind == "rings":
            radius = 1.0 + labels
            angle = rng.uniform(0.0, 2 * np.pi, n)
        else:
            # 2*classes angular sectors, sector s belongs to class s % classes
            sector = labels + classes * rng.integers(0, 2, n)
            width_rad = np.pi / classes
            angle = (sector + rng.uniform(0.1, 0.9, n)) * width_rad
            radius = rng.uniform(0.3, 1.0, n)
        plane = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
        if kind == "rings":
            plane[:, 0] += offset * (labels == 0)
        plane += noise * rng.normal(size=plane.shape)
        x = plane @ _orthonormal(rng, 2, width) + 0.5 * noise * rng.normal(size=(n, width))

    std = x.std(axis=0)
    x = (x - x.mean(axis=0)) / np.where(std > 0, std, 1.0)

    order = rng.permutation(n)
    parts = np.array_split(order, len(SPLITS))
    splits = {name: np.sort(p) for name, p in zip(SPLITS, parts)}
    spec = {"kind": kind, "n": n, "width": width, "classes": classes, "noise": noise, "seed": seed}
    if offset:
        spec["offset"] = offset
    return SyntheticDataset(x, labels.astype(np.int64), splits, spec)


def dataset_from_spec(spec: dict) -> SyntheticDataset:
    return make_dataset(spec["kind"], spec["n"], spec["width"], spec["classes"], spec["noise"], spec["seed"],
                        spec.get("offset", 0.0))
