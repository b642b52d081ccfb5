"""Synthetic two-class image data for toy training runs.

Class 0: bright top half, dark bottom half; class 1: the opposite.  The
halves differ by far more than the noise band, so the high bit planes
separate the classes cleanly and a binarized model can fit the set.
Images are 8-bit, matching what the engine consumes.
"""

from __future__ import annotations

import numpy as np

__all__ = ["synthetic_dataset", "load_npz_dataset"]


def synthetic_dataset(rng: np.random.Generator, n: int, h: int = 8, w: int = 8):
    """n labeled (h, w, 3) uint8 images, balanced classes."""
    labels = rng.integers(0, 2, size=n)
    top = np.where(labels == 0, 190.0, 60.0)
    img = np.empty((n, h, w, 3), dtype=np.float64)
    img[:, : h // 2] = top[:, None, None, None]
    img[:, h // 2 :] = (250.0 - top)[:, None, None, None]
    # mild per-channel tint plus uniform noise
    img *= np.array([1.0, 0.95, 0.9])
    img += rng.uniform(-45.0, 45.0, size=img.shape)
    return np.clip(img, 0, 255).astype(np.uint8), labels.astype(np.int64)


def load_npz_dataset(path):
    """User-supplied subset: an .npz with `images` (N,H,W,3) uint8 and
    `labels` (N,) integer arrays."""
    with np.load(path) as f:
        images = np.asarray(f["images"], dtype=np.uint8)
        labels = np.asarray(f["labels"], dtype=np.int64)
    if images.ndim != 4 or images.shape[0] != labels.shape[0]:
        raise ValueError("npz dataset must hold images (N,H,W,C) and labels (N,)")
    return images, labels
