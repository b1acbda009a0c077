"""Training data for the worker: bundled handwritten digits or synthetic
particle-count images. Both return float32 images in [0, 1] with integer
class labels 0..n_classes-1, class-balanced to the requested subset size."""

from __future__ import annotations

import numpy as np


def _balance(images: np.ndarray, labels: np.ndarray, n_classes: int,
             subset_size: int, rng: np.random.Generator):
    """Per-class resampling to subset_size total (with replacement if a
    class is short)."""
    per_class = subset_size // n_classes
    counts = [per_class + (1 if i < subset_size % n_classes else 0)
              for i in range(n_classes)]
    chosen = []
    for c in range(n_classes):
        pool = np.flatnonzero(labels == c)
        replace = pool.size < counts[c]
        chosen.append(rng.choice(pool, size=counts[c], replace=replace))
    idx = np.concatenate(chosen)
    rng.shuffle(idx)
    return images[idx], labels[idx]


def load_digits_subset(n_classes: int, subset_size: int, image_size: int,
                       rng: np.random.Generator):
    """First n_classes of the bundled 8x8 digits, rescaled to [0, 1]."""
    from sklearn.datasets import load_digits

    data = load_digits()
    keep = data.target < n_classes
    images = (data.images[keep] / 16.0).astype(np.float32)
    labels = data.target[keep].astype(np.int64)
    if image_size != images.shape[1]:
        raise ValueError(
            f"digits images are {images.shape[1]}x{images.shape[2]}; "
            f"set image_size={images.shape[1]}"
        )
    return _balance(images, labels, n_classes, subset_size, rng)


def make_blobs_subset(n_classes: int, subset_size: int, image_size: int,
                      rng: np.random.Generator):
    """Synthetic class-k images containing k+1 Gaussian blobs at random
    positions (particle-count style labels)."""
    yy, xx = np.mgrid[0:image_size, 0:image_size].astype(np.float32)
    sigma = max(image_size / 10.0, 0.8)
    images, labels = [], []
    per_class = [subset_size // n_classes + (1 if i < subset_size % n_classes else 0)
                 for i in range(n_classes)]
    for c in range(n_classes):
        for _ in range(per_class[c]):
            canvas = np.zeros((image_size, image_size), dtype=np.float32)
            for _ in range(c + 1):
                cy, cx = rng.uniform(1, image_size - 1, size=2)
                canvas += np.exp(-(((yy - cy) ** 2 + (xx - cx) ** 2)
                                   / (2.0 * sigma ** 2)))
            canvas /= max(canvas.max(), 1e-6)
            images.append(canvas)
            labels.append(c)
    images = np.stack(images)
    labels = np.array(labels, dtype=np.int64)
    order = rng.permutation(len(labels))
    return images[order], labels[order]


def load_dataset(name: str, n_classes: int, subset_size: int, image_size: int,
                 seed: int):
    rng = np.random.default_rng(seed)
    if name == "digits":
        return load_digits_subset(n_classes, subset_size, image_size, rng)
    if name == "blobs":
        return make_blobs_subset(n_classes, subset_size, image_size, rng)
    raise ValueError(f"unknown dataset {name!r}")
