"""Evaluation metrics and CSV reporting."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigError, DmtError, EmptyInputError, ParseError, ShapeError
from .pseudo import NoiseReport

METRICS_HEADER = ("run_id", "seed", "iteration", "metric", "value")
NOISE_HEADER = ("fraction", "retained", "errors", "error_rate")

METRIC_NAMES = frozenset({
    "accuracy", "fine_grained_accuracy", "mean_iou",
    "valtiny_accuracy", "valtiny_mean_iou",
    "selected_count", "mean_dynamic_weight", "corrupted_count",
    "epochs", "epoch_loss", "loss_labeled", "loss_unlabeled", "loss_total",
    "threshold", "seed_used",
})


def _pair(predictions, ground_truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(predictions).ravel()
    g = np.asarray(ground_truth).ravel()
    if p.shape != g.shape:
        raise ShapeError("predictions and ground truth differ in length")
    if p.size == 0:
        raise EmptyInputError("no units to evaluate")
    return p, g


def accuracy(predictions, ground_truth) -> float:
    p, g = _pair(predictions, ground_truth)
    return float(np.mean(p == g))


def fine_grained_accuracy(prob_vectors, ground_truth) -> float:
    """Correct units count with the probability given to their true class; wrong ones count 0."""
    probs = np.asarray(prob_vectors, dtype=np.float64)
    g = np.asarray(ground_truth, dtype=np.int64).ravel()
    if probs.ndim != 2 or probs.shape[0] != g.size:
        raise ShapeError("one probability vector per ground-truth label required")
    if g.size == 0:
        raise EmptyInputError("no units to evaluate")
    rows = np.arange(g.size)
    correct = np.argmax(probs, axis=1) == g
    return float(np.mean(np.where(correct, probs[rows, g], 0.0)))


def confusion_matrix(predictions, ground_truth, class_count: int) -> np.ndarray:
    """``(C, C)`` counts with ground truth on rows and predictions on columns."""
    p, g = _pair(predictions, ground_truth)
    p, g = p.astype(np.int64), g.astype(np.int64)
    if p.min() < 0 or g.min() < 0 or p.max() >= class_count or g.max() >= class_count:
        raise IndexError("class index out of range")
    return np.bincount(g * class_count + p, minlength=class_count ** 2).reshape(class_count, class_count)


def mean_iou(confusion) -> float:
    """Mean of TP / (TP + FP + FN) over classes present in truth or prediction."""
    cm = np.asarray(confusion, dtype=np.float64)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise ShapeError("confusion matrix must be square")
    tp = np.diag(cm)
    union = cm.sum(axis=0) + cm.sum(axis=1) - tp
    seen = union > 0
    if not seen.any():
        raise EmptyInputError("confusion matrix is all zeros")
    return float(np.mean(tp[seen] / union[seen]))


# --- CSV -------------------------------------------------------------------

@dataclass(frozen=True)
class MetricRow:
    run_id: str
    seed: int
    iteration: int
    metric: str
    value: float

    def __post_init__(self):
        if self.metric not in METRIC_NAMES:
            raise ConfigError(f"unregistered metric {self.metric!r}")


def _fmt(v: float) -> str:
    return f"{v:.6f}"


def write_metrics(rows: Iterable[MetricRow], path) -> None:
    # stable sort: repeated names (per-epoch losses) keep emission order
    ordered = sorted(rows, key=lambda r: (r.run_id, r.iteration, r.metric))
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(METRICS_HEADER)
            for r in ordered:
                w.writerow((r.run_id, r.seed, r.iteration, r.metric, _fmt(r.value)))
    except OSError as exc:
        raise DmtError(f"cannot write metrics to {path}: {exc}") from exc


def read_metrics(path) -> list[MetricRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if tuple(header or ()) != METRICS_HEADER:
            raise ParseError("bad metrics header", 1)
        out = []
        for lineno, row in enumerate(reader, start=2):
            try:
                run_id, seed, it, metric, value = row
                out.append(MetricRow(run_id, int(seed), int(it), metric, float(value)))
            except (ValueError, ConfigError) as exc:
                raise ParseError(str(exc), lineno) from exc
    return out


def noise_report_rows(report: NoiseReport) -> list[tuple[str, ...]]:
    rows = [(_fmt(s.fraction), str(s.retained), str(s.errors), _fmt(s.error_rate)) for s in report.strata]
    o = report.overall
    rows.append(("overall", str(o.retained), str(o.errors), _fmt(o.error_rate)))
    return rows


def write_noise_report(report: NoiseReport, path) -> None:
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(NOISE_HEADER)
            w.writerows(noise_report_rows(report))
    except OSError as exc:
        raise DmtError(f"cannot write noise report to {path}: {exc}") from exc


def summarize(rows: Sequence[MetricRow], metric: str) -> dict[int, float]:
    """Last value of ``metric`` per iteration."""
    return {r.iteration: r.value for r in rows if r.metric == metric}
