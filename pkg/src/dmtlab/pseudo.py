"""Offline pseudo-labelling, selection policies and noise statistics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterator, NamedTuple, Sequence

import numpy as np

from . import nn
from .errors import ConfigError, EmptyInputError, ShapeError

DEFAULT_FRACTIONS = (0.2, 0.4, 0.6, 0.8, 1.0)


class PseudoLabelRecord(NamedTuple):
    unit_id: int
    y_a: int
    c_a: float
    selected: bool
    ignored: bool


@dataclass
class PseudoLabels:
    """Column store of pseudo-label records.

    ``unit_ids`` index the unlabelled units (for pixel tasks the row-major
    flat index of ``(image, row, col)``); ``probs`` is only kept when a
    policy needs full probability vectors.
    """

    unit_ids: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray
    selected: np.ndarray
    class_count: int
    probs: np.ndarray | None = field(default=None, repr=False)

    def __len__(self) -> int:
        return self.labels.size

    @property
    def ignored(self) -> np.ndarray:
        return ~self.selected

    def records(self) -> Iterator[PseudoLabelRecord]:
        for uid, y, c, s in zip(self.unit_ids, self.labels, self.confidences, self.selected):
            yield PseudoLabelRecord(int(uid), int(y), float(c), bool(s), not s)

    @classmethod
    def from_probs(cls, probs: np.ndarray, unit_ids=None, keep_probs: bool = False) -> "PseudoLabels":
        probs = np.asarray(probs, dtype=np.float64)
        labels = nn.argmax(probs)
        conf = probs[np.arange(len(probs)), labels]
        ids = np.arange(len(probs)) if unit_ids is None else np.asarray(unit_ids, dtype=np.int64)
        return cls(ids, labels, conf, np.zeros(len(probs), dtype=bool), probs.shape[1],
                   probs if keep_probs else None)


def generate_pseudo_labels(model: nn.Model, features, unit_ids=None, keep_probs: bool = False
                           ) -> PseudoLabels:
    """Argmax label and its probability for every unit; nothing selected yet."""
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"features {x.shape} do not match model input {model.input_dim}")
    return PseudoLabels.from_probs(nn.predict_proba(model, x), unit_ids, keep_probs)


# --- selection policies ------------------------------------------------------

@dataclass(frozen=True)
class FixedThreshold:
    threshold: float

    def __post_init__(self):
        if not 0 <= self.threshold <= 1:
            raise ConfigError("threshold must lie in [0, 1]")


@dataclass(frozen=True)
class _Fraction:
    alpha: float

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ConfigError("alpha must lie in (0, 1]")


class GlobalTopFraction(_Fraction):
    pass


class ClassBalancedTopFraction(_Fraction):
    pass


class CBSTRenormalized(_Fraction):
    pass


SelectionPolicy = FixedThreshold | GlobalTopFraction | ClassBalancedTopFraction | CBSTRenormalized

POLICY_NAMES = {
    "threshold": FixedThreshold,
    "global": GlobalTopFraction,
    "class_balanced": ClassBalancedTopFraction,
    "cbst_renorm": CBSTRenormalized,
}


def top_count(alpha: float, n: int) -> int:
    # round up so a positive fraction never selects nothing; guard float fuzz like 0.6*5
    return min(n, math.ceil(round(alpha * n, 9)))


def confidence_order(confidences: np.ndarray, unit_ids: np.ndarray) -> np.ndarray:
    """Indices sorted by confidence descending, ties by lower unit id."""
    return np.lexsort((unit_ids, -confidences))


def class_thresholds(pl: PseudoLabels, alpha: float) -> np.ndarray:
    """Confidence of the ``ceil(alpha * n_c)``-th most confident unit of each class.

    Classes nobody predicts get ``+inf``.
    """
    if not 0 < alpha <= 1:
        raise ConfigError("alpha must lie in (0, 1]")
    theta = np.full(pl.class_count, np.inf)
    for c in range(pl.class_count):
        conf = np.sort(pl.confidences[pl.labels == c])[::-1]
        if conf.size:
            theta[c] = conf[top_count(alpha, conf.size) - 1]
    return theta


def select(pl: PseudoLabels, policy: SelectionPolicy) -> PseudoLabels:
    if len(pl) == 0:
        raise EmptyInputError("no pseudo labels to select from")
    chosen = np.zeros(len(pl), dtype=bool)
    labels, conf = pl.labels, pl.confidences

    if isinstance(policy, FixedThreshold):
        chosen = conf > policy.threshold
    elif isinstance(policy, GlobalTopFraction):
        order = confidence_order(conf, pl.unit_ids)
        chosen[order[:top_count(policy.alpha, len(pl))]] = True
    elif isinstance(policy, ClassBalancedTopFraction):
        for c in range(pl.class_count):
            members = np.flatnonzero(labels == c)
            if members.size:
                order = members[confidence_order(conf[members], pl.unit_ids[members])]
                chosen[order[:top_count(policy.alpha, members.size)]] = True
    elif isinstance(policy, CBSTRenormalized):
        if pl.probs is None:
            raise ConfigError("re-normalised selection needs stored probability vectors")
        theta = class_thresholds(pl, policy.alpha)
        scaled = pl.probs / theta
        labels = nn.argmax(scaled)
        chosen = scaled[np.arange(len(pl)), labels] > 1.0
        conf = pl.probs[np.arange(len(pl)), labels]
    else:
        raise ConfigError(f"unknown selection policy {policy!r}")
    return replace(pl, labels=labels, confidences=conf, selected=chosen)


def renormalize(probs, thresholds) -> np.ndarray:
    return np.asarray(probs, dtype=np.float64) / np.asarray(thresholds, dtype=np.float64)


# --- noise analysis ----------------------------------------------------------

@dataclass(frozen=True)
class Stratum:
    fraction: float
    retained: int
    errors: int

    @property
    def error_rate(self) -> float:
        return self.errors / self.retained if self.retained else 0.0


@dataclass(frozen=True)
class NoiseReport:
    strata: tuple[Stratum, ...]
    overall: Stratum

    @property
    def overall_error_rate(self) -> float:
        return self.overall.error_rate

    @property
    def stratified(self) -> list[tuple[float, float]]:
        return [(s.fraction, s.error_rate) for s in self.strata]

    @property
    def retained_counts(self) -> list[int]:
        return [s.retained for s in self.strata]


def noise_report(pl: PseudoLabels, ground_truth, fractions: Sequence[float] = DEFAULT_FRACTIONS
                 ) -> NoiseReport:
    """Error rate of pseudo labels among the top-confidence fraction of units."""
    truth = np.asarray(ground_truth, dtype=np.int64)
    if len(pl) == 0:
        raise EmptyInputError("noise report needs at least one record")
    if truth.shape != pl.labels.shape:
        raise ShapeError("one ground-truth label per record required")
    fractions = sorted(float(f) for f in fractions)
    if any(not 0 < f <= 1 for f in fractions):
        raise ConfigError("strata fractions must lie in (0, 1]")
    wrong = (pl.labels != truth)[confidence_order(pl.confidences, pl.unit_ids)]
    strata = []
    for f in fractions:
        k = top_count(f, len(pl))
        strata.append(Stratum(f, k, int(wrong[:k].sum())))
    return NoiseReport(tuple(strata), Stratum(1.0, len(pl), int(wrong.sum())))
