"""Synthetic per-user image classes for desk-scale experiments.

Each user owns a distinct oriented-grating texture family: 16x16
grayscale images of a sinusoid with class-specific spatial frequency,
random phase, small per-image frequency jitter and pixel noise. The
classes overlap in pixel statistics but differ in structure, which is
what a per-user reconstructor keys on.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

# (fx, fy) cycles per image edge per user slot
_FREQS = [
    (3.0, 0.0),
    (0.0, 3.0),
    (2.0, 2.0),
    (5.0, 0.0),
    (0.0, 5.0),
    (4.0, -2.0),
    (1.0, 4.0),
    (-3.0, 3.0),
    (6.0, 2.0),
    (2.0, -5.0),
]


def make_class(user_slot: int, count: int, rng: np.random.Generator, size: int = 16):
    fx, fy = _FREQS[user_slot % len(_FREQS)]
    xs, ys = np.meshgrid(np.arange(size), np.arange(size), indexing="ij")
    images = np.empty((count, size, size, 1))
    for i in range(count):
        phase = rng.uniform(0, 2 * np.pi)
        jx = fx * (1 + rng.normal(0, 0.02))
        jy = fy * (1 + rng.normal(0, 0.02))
        wave = np.sin(2 * np.pi * (jx * xs + jy * ys) / size + phase)
        amp = rng.uniform(0.3, 0.45)
        img = 0.5 + amp * wave + rng.normal(0, 0.02, (size, size))
        images[i, :, :, 0] = np.clip(img, 0.0, 1.0)
    return images


def make_dataset(n_users: int, count: int, seed: int = 0, size: int = 16):
    """Per-user train/test split: dict user_id -> (train, test)."""
    rng = np.random.default_rng(seed)
    data = {}
    for slot in range(n_users):
        images = make_class(slot, count, rng, size)
        n_test = max(1, count // 4)
        data[slot + 1] = (images[n_test:], images[:n_test])
    return data


def save_class_dir(path, images: np.ndarray):
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    np.save(path / "images.npy", images)


def load_class_dir(path) -> np.ndarray:
    return np.load(Path(path) / "images.npy")
