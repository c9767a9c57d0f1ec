"""Adaptive per-class confidence thresholds for pseudo-labeling.

A running, momentum-smoothed mean of each class's correct-prediction
probability feeds a threshold that warms up over epochs:

    T[c] = beta * mean_prob[c] / (1 + gamma^(-epoch))

At epoch 0 the divisor is 2 (half-strength thresholds); it decays toward 1,
so T[c] rises toward beta * mean_prob[c].  Unlabeled samples whose weak-view
max probability strictly exceeds the threshold of their argmax class become
pseudo-labeled; the rest are routed to the consistency loss instead.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .data_model import N_EXPRESSION_CLASSES
from .errors import ConfigError, DataError


@dataclass(frozen=True)
class ThresholdConfig:
    beta: float = 0.95
    gamma: float = math.e
    momentum: float = 0.9

    def __post_init__(self):
        if not 0.0 < self.beta <= 1.0:
            raise ConfigError(f"beta must lie in (0, 1], got {self.beta}")
        if self.gamma <= 1.0:
            raise ConfigError(f"gamma must be > 1, got {self.gamma}")
        if not 0.0 <= self.momentum < 1.0:
            raise ConfigError(f"momentum must lie in [0, 1), got {self.momentum}")


@dataclass(frozen=True, eq=False)
class ClassStatAccumulator:
    """Running mean correct-prediction probability per class.

    mean_prob starts at the neutral 0.5 for every class and stays in [0, 1]
    (each update is a convex combination of values in [0, 1]).
    """

    mean_prob: np.ndarray
    seen: np.ndarray

    @staticmethod
    def fresh() -> "ClassStatAccumulator":
        return ClassStatAccumulator(
            mean_prob=np.full(N_EXPRESSION_CLASSES, 0.5),
            seen=np.zeros(N_EXPRESSION_CLASSES, dtype=bool),
        )


def update_class_stats(
    acc: ClassStatAccumulator,
    weak_probs: np.ndarray,
    gold_labels: np.ndarray,
    momentum: float = 0.9,
) -> ClassStatAccumulator:
    """Fold one labeled batch into the per-class statistics.

    For class c, collect the class-c probability of samples whose gold label
    is c and whose argmax prediction is also c; if any exist, the batch mean
    of those probabilities enters the momentum update:

        mean_prob[c] <- momentum * mean_prob[c] + (1 - momentum) * batch_mean

    Classes with no correct prediction this batch are untouched.
    """
    gold_labels = np.asarray(gold_labels)
    if len(gold_labels) == 0:
        return acc
    if gold_labels.min() < 0 or gold_labels.max() >= N_EXPRESSION_CLASSES:
        raise DataError(f"gold labels outside [0, {N_EXPRESSION_CLASSES})")
    pred = np.argmax(weak_probs, axis=1)
    mean_prob = acc.mean_prob.copy()
    seen = acc.seen.copy()
    correct = pred == gold_labels
    for c in range(N_EXPRESSION_CLASSES):
        hits = correct & (gold_labels == c)
        if np.any(hits):
            batch_mean = float(weak_probs[hits, c].mean())
            mean_prob[c] = momentum * mean_prob[c] + (1.0 - momentum) * batch_mean
            seen[c] = True
    return ClassStatAccumulator(mean_prob=mean_prob, seen=seen)


@dataclass(frozen=True, eq=False)
class ConfidencePartition:
    """Split of an unlabeled batch: pseudo-labeled rows vs the rest."""

    confident: np.ndarray      # bool per input row
    pseudo_labels: np.ndarray  # argmax class per input row (valid everywhere)


def adaptive_thresholds(
    acc: ClassStatAccumulator, epoch: int, config: ThresholdConfig
) -> np.ndarray:
    """T[c] = beta * mean_prob[c] / (1 + gamma^(-epoch)); epoch counts from 0."""
    if epoch < 0:
        raise DataError(f"epoch must be >= 0, got {epoch}")
    divisor = 1.0 + config.gamma ** (-float(epoch))
    return config.beta * acc.mean_prob / divisor


def partition_confident(
    weak_probs: np.ndarray, thresholds: np.ndarray
) -> ConfidencePartition:
    """Confident iff max prob strictly exceeds its class threshold.

    Argmax ties break toward the lowest class index (numpy convention).
    """
    weak_probs = np.asarray(weak_probs)
    if weak_probs.ndim != 2 or weak_probs.shape[1] != N_EXPRESSION_CLASSES:
        raise DataError(f"expected (n, {N_EXPRESSION_CLASSES}) probabilities")
    pseudo = np.argmax(weak_probs, axis=1)
    top = weak_probs[np.arange(len(pseudo)), pseudo]
    confident = top > np.asarray(thresholds)[pseudo]
    return ConfidencePartition(confident=confident, pseudo_labels=pseudo)
