from __future__ import annotations

import numpy as np


def class_weights(labels) -> np.ndarray:
    """Per-item weight 1 / count(class of item)."""
    labels = np.asarray(labels).astype(np.int64)
    classes, inverse, counts = np.unique(labels, return_inverse=True, return_counts=True)
    if len(classes) < 2:
        raise ValueError(f"weighted sampling needs both classes, got only {classes.tolist()}")
    return 1.0 / counts[inverse]


def weighted_sample(labels, batch_size: int, seed: int | np.random.Generator = 0) -> np.ndarray:
    """Draw ``batch_size`` indices with replacement, balanced across classes in expectation."""
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    w = class_weights(labels)
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.choice(len(w), size=batch_size, replace=True, p=w / w.sum())
