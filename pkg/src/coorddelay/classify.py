"""Median-split delay classification with a cross-validated random forest.

Delays are split into LOW/HIGH groups at the sample median; a random
forest (bagged trees with random feature subsets at each split) is tuned
over the feature-subset size by stratified cross-validation and scored on
one held-out test split that is reused across all model levels.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from sklearn.ensemble import RandomForestClassifier
from sklearn.model_selection import StratifiedKFold

from .metrics import ModelMatrix

log = logging.getLogger(__name__)

LOW, HIGH = "LOW", "HIGH"


@dataclass
class SplitLabels:
    threshold: float
    labels: np.ndarray  # array of "LOW"/"HIGH"


@dataclass
class ClassificationResult:
    cv_accuracy: float
    test_accuracy: float
    best_feature_count: int
    seed: int


def median_split(y: np.ndarray) -> SplitLabels:
    """LOW for delays at or below the sample median, HIGH above it."""
    y = np.asarray(y, dtype=float)
    if y.size < 2:
        raise ValueError("need at least two delays to split")
    threshold = float(np.median(y))
    labels = np.where(y <= threshold, LOW, HIGH)
    return SplitLabels(threshold=threshold, labels=labels)


def holdout_split(
    labels: np.ndarray, test_fraction: float, seed: int, stratify: bool = True
) -> tuple[np.ndarray, np.ndarray]:
    """(train, test) index split; depends only on labels and seed, so every
    model level sees the identical test set."""
    if not 0.0 < test_fraction < 0.5:
        raise ValueError(f"test fraction must be in (0, 0.5), got {test_fraction}")
    n = len(labels)
    rng = np.random.default_rng(seed)
    if not stratify:
        permutation = rng.permutation(n)
        cut = max(1, int(round(test_fraction * n)))
        return np.sort(permutation[cut:]), np.sort(permutation[:cut])
    test: list[int] = []
    for value in np.unique(labels):
        members = np.flatnonzero(labels == value)
        members = rng.permutation(members)
        cut = max(1, int(round(test_fraction * len(members))))
        test.extend(members[:cut])
    test_idx = np.sort(np.array(test, dtype=int))
    mask = np.ones(n, dtype=bool)
    mask[test_idx] = False
    return np.flatnonzero(mask), test_idx


def default_feature_grid(k: int) -> list[int]:
    root = max(1, int(math.isqrt(k)))
    grid = sorted({max(1, root // 2), root, min(k, 2 * root)})
    return grid


def train_and_evaluate(
    X: ModelMatrix | np.ndarray,
    labels: np.ndarray,
    test_fraction: float = 0.1,
    folds: int = 10,
    seed: int = 0,
    n_trees: int = 500,
    feature_grid: list[int] | None = None,
    tune: bool = True,
    stratify: bool = True,
) -> ClassificationResult:
    """Tune, train, and score the forest for one model matrix.

    Cross-validation runs over ``feature_grid`` candidates for the number
    of features examined per split; the reported accuracy is on the held
    -out test split. Results are deterministic for a fixed seed.
    """
    arr = X.rows if isinstance(X, ModelMatrix) else np.asarray(X, dtype=float)
    labels = np.asarray(labels)
    train_idx, test_idx = holdout_split(labels, test_fraction, seed, stratify)
    X_train, y_train = arr[train_idx], labels[train_idx]
    X_test, y_test = arr[test_idx], labels[test_idx]
    grid = feature_grid or default_feature_grid(arr.shape[1])

    _, class_counts = np.unique(y_train, return_counts=True)
    usable_folds = min(folds, int(class_counts.min()))
    if usable_folds < folds:
        log.warning(
            "reducing folds from %d to %d: smallest class has %d members",
            folds,
            usable_folds,
            int(class_counts.min()),
        )
    cv_accuracy = float("nan")
    best = grid[0]
    if tune and len(grid) > 1 and usable_folds >= 2:
        scores: dict[int, float] = {}
        splitter = StratifiedKFold(n_splits=usable_folds, shuffle=True, random_state=seed)
        for m in grid:
            fold_scores = []
            for fold_train, fold_valid in splitter.split(X_train, y_train):
                forest = _forest(n_trees, m, seed)
                forest.fit(X_train[fold_train], y_train[fold_train])
                fold_scores.append(forest.score(X_train[fold_valid], y_train[fold_valid]))
            scores[m] = float(np.mean(fold_scores))
        best = min(scores, key=lambda m: (-scores[m], m))
        cv_accuracy = scores[best]
    forest = _forest(n_trees, best, seed)
    forest.fit(X_train, y_train)
    test_accuracy = float(forest.score(X_test, y_test))
    return ClassificationResult(
        cv_accuracy=cv_accuracy,
        test_accuracy=test_accuracy,
        best_feature_count=best,
        seed=seed,
    )


def _forest(n_trees: int, max_features: int, seed: int) -> RandomForestClassifier:
    return RandomForestClassifier(
        n_estimators=n_trees,
        max_features=max_features,
        bootstrap=True,
        min_samples_leaf=1,
        random_state=seed,
        n_jobs=-1,
    )
