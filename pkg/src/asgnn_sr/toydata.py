"""Procedural textured grayscale images for desk-scale training runs."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .degradation import DatasetManifest, DegradationConfig, degrade, rng_for, write_image
from .network import NetworkConfig
from .trainer import TrainRunConfig


def textured_image(size: int, seed: int) -> np.ndarray:
    """Smooth shading + oriented gratings + hard-edged ellipses and bars, in [0.05, 0.95]."""
    rng = rng_for(seed)
    yy, xx = np.mgrid[0:size, 0:size] / size
    img = 0.3 * (rng.uniform(-1, 1) * xx + rng.uniform(-1, 1) * yy)
    for _ in range(3):
        freq = rng.uniform(2.0, 10.0)
        theta = rng.uniform(0, np.pi)
        phase = rng.uniform(0, 2 * np.pi)
        img += rng.uniform(0.05, 0.2) * np.sin(2 * np.pi * freq * (np.cos(theta) * xx + np.sin(theta) * yy) + phase)
    for _ in range(int(rng.integers(3, 7))):
        cy, cx = rng.uniform(0, 1, size=2)
        ry, rx = rng.uniform(0.05, 0.3, size=2)
        inside = ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1.0
        img += rng.uniform(-0.4, 0.4) * inside
    for _ in range(int(rng.integers(1, 4))):
        if rng.uniform() < 0.5:
            lo = rng.uniform(0, 0.9)
            img += rng.uniform(-0.3, 0.3) * ((xx >= lo) & (xx < lo + rng.uniform(0.02, 0.1)))
        else:
            lo = rng.uniform(0, 0.9)
            img += rng.uniform(-0.3, 0.3) * ((yy >= lo) & (yy < lo + rng.uniform(0.02, 0.1)))
    img -= img.min()
    img /= max(img.max(), 1e-12)
    return 0.05 + 0.9 * img


def toy_pairs(count: int = 20, size: int = 96, scale: int = 2, seed: int = 0,
              degradation: DegradationConfig | None = None):
    """In-memory (hr, lr) pairs; image k uses seed + k for content and noise."""
    cfg = degradation or DegradationConfig(scale=scale)
    pairs = []
    for k in range(count):
        hr = textured_image(size, seed + k)
        pair = degrade(hr, scale, seed=10_000 + seed + k, config=cfg)
        pairs.append((pair.hr, pair.lr))
    return pairs


def write_toy_dataset(root, count: int = 20, held_out: int = 5, size: int = 96, scale: int = 2,
                      seed: int = 0) -> tuple[DatasetManifest, DatasetManifest]:
    """Write HR/LR PGMs (16-bit) plus train/test manifests under ``root``."""
    root = Path(root)
    train, test = [], []
    for k, (hr, lr) in enumerate(toy_pairs(count, size, scale, seed)):
        name = f"img_{k:03d}.pgm"
        write_image(root / "hr" / name, hr, maxval=65535)
        write_image(root / f"lr_x{scale}" / name, lr, maxval=65535)
        entry = (f"hr/{name}", f"lr_x{scale}/{name}", 10_000 + seed + k)
        (test if k >= count - held_out else train).append(entry)
    tr, te = DatasetManifest(train, "train"), DatasetManifest(test, "test")
    tr.save(root / "train.tsv")
    te.save(root / "test.tsv")
    return tr, te


def toy_network() -> NetworkConfig:
    """Desk-scale network: width 16, one FEM of two DFCMs, 4x4 windows."""
    return NetworkConfig(scale=2, width=16, fem_count=1, dfcm_per_fem=2, patch=4, alpha=0.75)


def toy_run(seed: int = 0) -> TrainRunConfig:
    """500 AdamW steps of batch 6 on 48x48 HR crops, evaluated every epoch."""
    return TrainRunConfig(epochs=10, batch_size=6, crop_size=48, steps_per_epoch=50, seed=seed)
