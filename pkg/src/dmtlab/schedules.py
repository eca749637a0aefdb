"""Subset sampling, batch composition, gamma and learning-rate schedules, EMA."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn
from .errors import ConfigError, ShapeError


@dataclass(frozen=True)
class SplitPair:
    subset_a: list
    subset_b: list
    overlap: list


def difference_maximized_split(ids: Sequence, subset_size: int, seed: int) -> SplitPair:
    """Two equal-size subsets of ``ids`` with the smallest possible overlap.

    The ids are shuffled once; A takes the head and B the tail of the
    shuffled order, so they only share the middle run when ``2s > n``.
    """
    ids = list(ids)
    n, s = len(ids), int(subset_size)
    if not 1 <= s <= n:
        raise ConfigError(f"subset size {s} must lie in [1, {n}]")
    order = nn.make_rng(seed).permutation(n)
    shuffled = [ids[i] for i in order]
    a, b = shuffled[:s], shuffled[n - s:]
    overlap = shuffled[n - s:s] if 2 * s > n else []
    return SplitPair(a, b, overlap)


@dataclass(frozen=True)
class GammaSchedule:
    """``constant`` returns gamma; ``ramp`` returns gamma * exp(sign * 5 * (1 - t/t_max)^2)."""

    gamma: float
    ramp: bool = False
    t_max: int = 1
    sign: float = 1.0

    def __post_init__(self):
        if self.gamma < 0 or not math.isfinite(self.gamma):
            raise ConfigError("gamma must be finite and >= 0")
        if self.ramp and self.t_max < 1:
            raise ConfigError("ramp needs t_max >= 1")
        if self.sign not in (1.0, -1.0):
            raise ConfigError("ramp sign must be +1 or -1")


def gamma_at(sched: GammaSchedule, t: float) -> float:
    if not sched.ramp:
        return sched.gamma
    t = min(max(t, 0), sched.t_max)  # out-of-range steps clamp
    return sched.gamma * math.exp(sched.sign * 5.0 * (1.0 - t / sched.t_max) ** 2)


LR_MODES = ("constant", "poly", "cosine")


@dataclass(frozen=True)
class LrSchedule:
    base_lr: float
    mode: str = "constant"
    t_max: int = 1
    power: float = 0.9

    def __post_init__(self):
        if self.base_lr <= 0:
            raise ConfigError("base learning rate must be positive")
        if self.mode not in LR_MODES:
            raise ConfigError(f"unknown lr schedule {self.mode!r}")
        if self.t_max < 1:
            raise ConfigError("t_max must be >= 1")


def lr_at(sched: LrSchedule, t: float) -> float:
    frac = min(max(t, 0), sched.t_max) / sched.t_max
    if sched.mode == "poly":
        return sched.base_lr * (1.0 - frac) ** sched.power
    if sched.mode == "cosine":
        return sched.base_lr * 0.5 * (1.0 + math.cos(math.pi * frac))
    return sched.base_lr


def batch_split(batch_size: int, ratio: int) -> tuple[int, int]:
    """Labelled and pseudo-labelled share of a batch with ``ratio`` unlabelled per labelled."""
    if ratio < 0:
        raise ConfigError("batch ratio must be >= 0")
    if batch_size <= 0 or batch_size % (ratio + 1):
        raise ConfigError(f"batch size {batch_size} is not divisible by ratio+1 = {ratio + 1}")
    n_lab = batch_size // (ratio + 1)
    return n_lab, batch_size - n_lab


class CyclicSampler:
    """Draws indices without replacement, reshuffling once the pool is spent."""

    def __init__(self, size: int, rng: np.random.Generator):
        if size <= 0:
            raise ConfigError("cannot sample from an empty pool")
        self.size = size
        self.rng = rng
        self._order = rng.permutation(size)
        self._pos = 0

    def draw(self, k: int) -> np.ndarray:
        out = []
        while k > 0:
            if self._pos == self.size:
                self._order = self.rng.permutation(self.size)
                self._pos = 0
            take = min(k, self.size - self._pos)
            out.append(self._order[self._pos:self._pos + take])
            self._pos += take
            k -= take
        return np.concatenate(out) if out else np.zeros(0, dtype=np.int64)


class BatchComposer:
    """Mixes labelled and pseudo-labelled units in a fixed per-batch ratio."""

    def __init__(self, labeled_size: int, pseudo_size: int, ratio: int, batch_size: int,
                 rng: np.random.Generator):
        self.n_labeled, self.n_pseudo = batch_split(batch_size, ratio)
        if pseudo_size == 0:
            # nothing to pseudo-label yet: fill the batch with labelled units
            self.n_labeled, self.n_pseudo = batch_size, 0
        self.labeled = CyclicSampler(labeled_size, rng) if self.n_labeled else None
        self.pseudo = CyclicSampler(pseudo_size, rng) if self.n_pseudo else None

    def steps_per_epoch(self) -> int:
        steps = 1
        if self.labeled:
            steps = max(steps, math.ceil(self.labeled.size / self.n_labeled))
        if self.pseudo:
            steps = max(steps, math.ceil(self.pseudo.size / self.n_pseudo))
        return steps

    def next(self) -> tuple[np.ndarray, np.ndarray]:
        lab = self.labeled.draw(self.n_labeled) if self.labeled else np.zeros(0, dtype=np.int64)
        pse = self.pseudo.draw(self.n_pseudo) if self.pseudo else np.zeros(0, dtype=np.int64)
        return lab, pse


def compose_batch(labeled_size: int, pseudo_size: int, ratio: int, batch_size: int,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """One batch of ``(labeled indices, pseudo indices)``."""
    n_lab, n_pse = batch_split(batch_size, ratio)
    if (n_lab and labeled_size <= 0) or (n_pse and pseudo_size <= 0):
        raise ConfigError("a pool with a positive share is empty")
    return BatchComposer(labeled_size, pseudo_size, ratio, batch_size, rng).next()


@dataclass
class EmaTracker:
    decay: float
    shadow: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if not 0 <= self.decay <= 1:
            raise ConfigError("EMA decay must lie in [0, 1]")

    @classmethod
    def of(cls, model: nn.Model, decay: float, zero: bool = False) -> "EmaTracker":
        params = model.parameters()
        return cls(decay, [np.zeros_like(p) if zero else p.copy() for p in params])

    def model_like(self, model: nn.Model) -> nn.Model:
        out = model.copy()
        for dst, src in zip(out.parameters(), self.shadow):
            dst[...] = src
        return out


def ema_update(tracker: EmaTracker, model: nn.Model) -> EmaTracker:
    params = model.parameters()
    if len(params) != len(tracker.shadow) or any(p.shape != s.shape for p, s in zip(params, tracker.shadow)):
        raise ShapeError("EMA shadow does not match the model")
    for s, p in zip(tracker.shadow, params):
        s *= tracker.decay
        s += (1.0 - tracker.decay) * p
    return tracker
