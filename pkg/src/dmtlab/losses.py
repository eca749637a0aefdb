"""Disagreement-weighted cross-entropy for pseudo-labelled units.

A frozen labelling model supplies ``(y_a, c_a)`` per unit; the model under
training supplies its live probabilities, from which ``y_b``, ``c_b`` and
``p_b`` (its probability of ``y_a``) are read.  The weight depends on
whether the two agree and, if not, which one is more confident:

======================  =====================  ==============
case                    standard               flip
======================  =====================  ==============
y_a == y_b              p_b ** gamma1          same
y_a != y_b, c_a >= c_b  p_b ** gamma2          same
y_a != y_b, c_a <  c_b  0                      label y_b, (1 - c_a) ** gamma2
======================  =====================  ==============

The ``naive`` variant weights every unit by ``p_b ** gamma1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import nn
from .errors import ConfigError, NumericError, ShapeError

VARIANTS = ("standard", "naive", "flip")


@dataclass(frozen=True)
class DynamicWeightConfig:
    gamma1: float = 5.0
    gamma2: float = 5.0
    variant: str = "standard"

    def __post_init__(self):
        for g in (self.gamma1, self.gamma2):
            if not math.isfinite(g) or g < 0:
                raise ConfigError(f"gamma must be finite and >= 0, got {g}")
        if self.variant not in VARIANTS:
            raise ConfigError(f"unknown dynamic-weight variant {self.variant!r}")

    def with_gammas(self, gamma1: float, gamma2: float) -> "DynamicWeightConfig":
        return DynamicWeightConfig(gamma1, gamma2, self.variant)


@dataclass(frozen=True)
class DisagreementInputs:
    y_a: int
    y_b: int
    c_a: float
    c_b: float
    p_b: float


@dataclass(frozen=True)
class WeightedTarget:
    effective_label: int
    weight: float


@dataclass(frozen=True)
class LossBreakdown:
    labeled: float
    unlabeled: float
    total: float


def dynamic_weight(d: DisagreementInputs, cfg: DynamicWeightConfig) -> WeightedTarget:
    if cfg.variant == "naive":
        return WeightedTarget(d.y_a, d.p_b ** cfg.gamma1)
    if d.y_a == d.y_b:
        return WeightedTarget(d.y_a, d.p_b ** cfg.gamma1)
    if d.c_a >= d.c_b:
        return WeightedTarget(d.y_a, d.p_b ** cfg.gamma2)
    if cfg.variant == "flip":
        return WeightedTarget(d.y_b, (1.0 - d.c_a) ** cfg.gamma2)
    return WeightedTarget(d.y_a, 0.0)


def dynamic_weights(y_a: np.ndarray, c_a: np.ndarray, probs_b: np.ndarray,
                    cfg: DynamicWeightConfig) -> tuple[np.ndarray, np.ndarray]:
    """Vectorised ``dynamic_weight`` over units.

    ``probs_b`` holds the live ``(n, C)`` probabilities of the model being
    trained.  Returns ``(effective_labels, weights)``.
    """
    y_a = np.asarray(y_a, dtype=np.int64)
    c_a = np.asarray(c_a, dtype=np.float64)
    probs_b = np.asarray(probs_b, dtype=np.float64)
    if probs_b.ndim != 2 or probs_b.shape[0] != y_a.size or c_a.shape != y_a.shape:
        raise ShapeError("pseudo labels, confidences and probabilities must align")
    rows = np.arange(y_a.size)
    y_b = nn.argmax(probs_b)
    c_b = probs_b[rows, y_b]
    p_b = probs_b[rows, y_a]

    labels = y_a.copy()
    if cfg.variant == "naive":
        return labels, p_b ** cfg.gamma1

    agree = y_a == y_b
    negative = ~agree & (c_a >= c_b)
    positive = ~agree & (c_a < c_b)
    weights = np.zeros(y_a.size)
    weights[agree] = p_b[agree] ** cfg.gamma1
    weights[negative] = p_b[negative] ** cfg.gamma2
    if cfg.variant == "flip":
        labels[positive] = y_b[positive]
        weights[positive] = (1.0 - c_a[positive]) ** cfg.gamma2
    if not np.all(np.isfinite(weights)):
        raise NumericError("non-finite dynamic weight")
    return labels, weights


def _check_n(count: int, batch_size: int) -> None:
    if batch_size <= 0 or count > batch_size:
        raise ShapeError(f"{count} units cannot belong to a batch of size {batch_size}")


def unlabeled_loss(weighted_targets: Sequence[WeightedTarget], probs_b: Sequence, batch_size: int) -> float:
    if len(weighted_targets) != len(probs_b):
        raise ShapeError("one probability vector per weighted target required")
    _check_n(len(weighted_targets), batch_size)
    total = sum(t.weight * nn.cross_entropy(p, t.effective_label)
                for t, p in zip(weighted_targets, probs_b))
    return total / batch_size


def labeled_loss(ground_truth: Sequence[int], probs: Sequence, batch_size: int) -> float:
    if len(ground_truth) != len(probs):
        raise ShapeError("one probability vector per label required")
    _check_n(len(ground_truth), batch_size)
    return sum(nn.cross_entropy(p, y) for y, p in zip(ground_truth, probs)) / batch_size


def combined_loss(lx: float, lu: float) -> LossBreakdown:
    if lx < 0 or lu < 0:
        raise ConfigError("loss terms must be non-negative")
    return LossBreakdown(lx, lu, lx + lu)


@dataclass(frozen=True)
class MixedSample:
    inputs: np.ndarray
    labels: tuple[int, int]
    weights: tuple[float, float]


def mixup_pair(sample_a, sample_b, label_a: int, label_b: int, weight_a: float, weight_b: float,
               lam: float) -> MixedSample:
    """Interpolate two inputs together with their loss weights."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"mixup lambda must lie in [0, 1], got {lam}")
    a = np.asarray(sample_a, dtype=np.float64)
    b = np.asarray(sample_b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("mixup samples must have the same shape")
    return MixedSample(lam * a + (1.0 - lam) * b, (int(label_a), int(label_b)),
                       (lam * weight_a, (1.0 - lam) * weight_b))


def mixup_batch(inputs: np.ndarray, labels: np.ndarray, weights: np.ndarray, lam: float,
                perm: np.ndarray, class_count: int) -> tuple[np.ndarray, np.ndarray]:
    """Mix every row with row ``perm[i]``; returns inputs and an ``(n, C)`` target matrix."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"mixup lambda must lie in [0, 1], got {lam}")
    mixed = lam * inputs + (1.0 - lam) * inputs[perm]
    t = np.zeros((len(inputs), class_count))
    rows = np.arange(len(inputs))
    np.add.at(t, (rows, labels), lam * weights)
    np.add.at(t, (rows, labels[perm]), (1.0 - lam) * weights[perm])
    return mixed, t
