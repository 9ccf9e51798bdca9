"""Stratified fold assignment."""

from __future__ import annotations

import numpy as np


def kfold_split(n: int, k: int, labels, seed: int = 0) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold partition of ``range(n)``.

    Indices of each class are shuffled and dealt round-robin over the folds.
    Each class resumes dealing at the fold where the previous class stopped,
    so overall test sizes differ by at most one as well.

    Returns
    -------
    list of (train_idx, test_idx)
        Sorted index arrays, one pair per fold.
    """
    labels = np.asarray(labels)
    if len(labels) != n:
        raise ValueError(f"{len(labels)} labels for n={n}")
    if k < 2:
        raise ValueError(f"k must be at least 2, got {k}")
    if k > n:
        raise ValueError(f"cannot split {n} samples into {k} folds")
    classes = np.unique(labels)
    if len(classes) < 2:
        raise ValueError("stratified splitting needs both classes present")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=int)
    start = 0
    for c in classes:
        idx = rng.permutation(np.flatnonzero(labels == c))
        fold_of[idx] = (start + np.arange(len(idx))) % k
        start = (start + len(idx)) % k
    everything = np.arange(n)
    return [(everything[fold_of != f], everything[fold_of == f]) for f in range(k)]


def stratified_holdout(labels, fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Split off roughly ``fraction`` of the indices, stratified by label."""
    labels = np.asarray(labels)
    if not 0.0 < fraction < 1.0:
        raise ValueError(f"fraction must lie in (0, 1), got {fraction}")
    k = min(len(labels), max(2, int(round(1.0 / fraction))))
    return kfold_split(len(labels), k, labels, seed)[0]
