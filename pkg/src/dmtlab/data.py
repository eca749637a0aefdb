"""Synthetic tasks, CSV I/O, labelled/unlabelled splitting and augmentation.

Ground truth of ``unlabeled`` rows is sealed: ``labels_for("unlabeled")``
refuses, and only ``sealed_truth()`` (used by the noise analyser and the
acceptance harness) can read it.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import nn
from .errors import ConfigError, ParseError, ShapeError

SPLITS = ("labeled", "unlabeled", "valtiny", "test")
NO_LABEL = -1


class _SplitMixin:
    labels: np.ndarray
    splits: np.ndarray

    def mask(self, split: str) -> np.ndarray:
        if split not in SPLITS:
            raise ConfigError(f"unknown split {split!r}")
        return self.splits == split

    def count(self, split: str) -> int:
        return int(self.mask(split).sum())

    def labels_for(self, split: str) -> np.ndarray:
        if split == "unlabeled":
            raise PermissionError("labels of unlabeled rows are sealed")
        return self.labels[self.mask(split)]

    def sealed_truth(self) -> np.ndarray:
        """Ground truth of the unlabeled rows, for analysis only (-1 where unknown)."""
        return self.labels[self.mask("unlabeled")]


@dataclass
class TabularDataset(_SplitMixin):
    features: np.ndarray
    labels: np.ndarray
    class_count: int
    splits: np.ndarray = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        n = len(self.features)
        if self.splits is None:
            self.splits = np.full(n, "labeled", dtype=object)
        self.splits = np.asarray(self.splits, dtype=object)
        if self.features.ndim != 2 or self.labels.shape != (n,) or self.splits.shape != (n,):
            raise ShapeError("features, labels and splits must describe the same rows")
        if not np.all(np.isfinite(self.features)):
            raise ShapeError("features must be finite")
        bad = set(self.splits.tolist()) - set(SPLITS)
        if bad:
            raise ConfigError(f"unknown split tags {sorted(bad)}")
        if np.any((self.labels == NO_LABEL) & (self.splits != "unlabeled")):
            raise ConfigError("labeled, valtiny and test rows need a label")

    def __len__(self) -> int:
        return len(self.features)

    def features_for(self, split: str) -> np.ndarray:
        return self.features[self.mask(split)]

    def with_splits(self, splits) -> "TabularDataset":
        return replace(self, splits=np.asarray(splits, dtype=object))


@dataclass
class GridDataset(_SplitMixin):
    """``images`` is ``(n, H, W, channels)``; one split tag per image."""

    images: np.ndarray
    labels: np.ndarray
    class_count: int
    radius: int = 1
    splits: np.ndarray = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 4 or self.labels.shape != self.images.shape[:3]:
            raise ShapeError("images must be (n, H, W, ch) with (n, H, W) labels")
        if min(self.images.shape[1:3]) < 4:
            raise ConfigError("grid images must be at least 4x4")
        n = len(self.images)
        if self.splits is None:
            self.splits = np.full(n, "labeled", dtype=object)
        self.splits = np.asarray(self.splits, dtype=object)
        if self.splits.shape != (n,):
            raise ShapeError("one split tag per image")
        bad = set(self.splits.tolist()) - set(SPLITS)
        if bad:
            raise ConfigError(f"unknown split tags {sorted(bad)}")

    def __len__(self) -> int:
        return len(self.images)

    @property
    def feature_dim(self) -> int:
        return self.images.shape[3] * (2 * self.radius + 1) ** 2 + 2

    def images_for(self, split: str) -> np.ndarray:
        return self.images[self.mask(split)]

    def labels_for(self, split: str) -> np.ndarray:
        if split == "unlabeled":
            raise PermissionError("labels of unlabeled images are sealed")
        return self.labels[self.mask(split)]

    def with_splits(self, splits) -> "GridDataset":
        return replace(self, splits=np.asarray(splits, dtype=object))


def pixel_features(images: np.ndarray, radius: int) -> np.ndarray:
    """Per-pixel rows: the ``(2r+1)^2`` channel window (edge padded) plus (row, col) in [0, 1].

    ``images`` is ``(n, H, W, ch)``; output is ``(n * H * W, ch * (2r+1)^2 + 2)``
    in row-major pixel order.
    """
    images = np.asarray(images, dtype=np.float64)
    if images.ndim == 3:
        images = images[None]
    n, h, w, ch = images.shape
    r = radius
    padded = np.pad(images, ((0, 0), (r, r), (r, r), (0, 0)), mode="edge")
    windows = [padded[:, dy:dy + h, dx:dx + w, :] for dy in range(2 * r + 1) for dx in range(2 * r + 1)]
    rows, cols = np.meshgrid(np.arange(h) / max(h - 1, 1), np.arange(w) / max(w - 1, 1), indexing="ij")
    coords = np.broadcast_to(np.stack([rows, cols], axis=-1), (n, h, w, 2))
    feats = np.concatenate(windows + [coords], axis=-1)
    return feats.reshape(n * h * w, -1)


# --- generators ----------------------------------------------------------------

def gen_toy_binary(n: int, class_separation: float = 0.0, noise: float | None = None, seed: int = 0,
                   shape: str = "blobs") -> TabularDataset:
    """Two-class 2-D toy data.

    ``blobs``: two Gaussian blobs of std ``noise`` (default 0.4) whose
    centres lie ``1 + class_separation`` apart, so overlap is set by their
    ratio.  ``moons``: two interleaving half-moons with Gaussian jitter
    ``noise`` (default 0.1); ``class_separation`` pushes the lower moon
    further down; a separation of a few units makes them linearly separable.
    """
    if n < 4:
        raise ConfigError("toy task needs n >= 4")
    if shape not in ("moons", "blobs"):
        raise ConfigError(f"unknown toy shape {shape!r}")
    if noise is None:
        noise = 0.4 if shape == "blobs" else 0.1
    if noise < 0:
        raise ConfigError("noise must be >= 0")
    rng = nn.make_rng(seed)
    n0 = n // 2
    labels = np.r_[np.zeros(n0, dtype=np.int64), np.ones(n - n0, dtype=np.int64)]
    if shape == "moons":
        theta = rng.uniform(0.0, math.pi, n)
        x = np.where(labels == 0, np.cos(theta), 1.0 - np.cos(theta))
        y = np.where(labels == 0, np.sin(theta), 0.5 - np.sin(theta) - class_separation)
    else:
        half = (1.0 + class_separation) / 2
        x = np.zeros(n)
        y = np.where(labels == 0, half, -half)
    feats = np.stack([x, y], axis=1)
    if noise > 0:
        feats = feats + rng.normal(0.0, noise, (n, 2))
    order = rng.permutation(n)
    return TabularDataset(feats[order], labels[order], 2)


def class_fractions(class_count: int, imbalance: float, background_fraction: float | None = None
                    ) -> np.ndarray:
    """Target pixel share per class: ``imbalance ** -c``, normalised."""
    if class_count < 2:
        raise ConfigError("need at least two classes")
    if imbalance < 1:
        raise ConfigError("imbalance factor must be >= 1")
    share = imbalance ** -np.arange(class_count, dtype=np.float64)
    share /= share.sum()
    if background_fraction is not None:
        if not 0 <= background_fraction <= 1:
            raise ConfigError("background fraction must lie in [0, 1]")
        rest = share[1:] / share[1:].sum() * (1.0 - background_fraction)
        share = np.r_[background_fraction, rest]
    return share


def _stripe_layout(length: int, shares: np.ndarray, order: np.ndarray, offset: int) -> np.ndarray:
    bounds = np.rint(np.cumsum(shares[order]) * length).astype(int)
    line = np.empty(length, dtype=np.int64)
    start = 0
    for cls, end in zip(order, bounds):
        line[start:end] = cls
        start = end
    return np.roll(line, offset)


def gen_grid_seg(n: int, height: int = 8, width: int = 8, class_count: int = 4, imbalance: float = 1.0,
                 seed: int = 0, noise: float = 0.15, twist: float = 3.0, channels: int = 2,
                 radius: int = 1, background_fraction: float | None = None) -> GridDataset:
    """Striped images whose class colours drift with a per-image illumination.

    Each image draws ``t ~ U(0, 1)``; class ``c`` is painted with colour
    ``(0.3 + t) * (cos a, sin a)``, ``a = 2 pi c / C + twist * t``, plus
    per-pixel Gaussian noise.  Pooled over images the classes form
    interleaved spiral arms, so a handful of labelled images only covers a
    few points of each arm.  Extra channels beyond two carry pure noise.
    """
    if height < 4 or width < 4:
        raise ConfigError("grid images must be at least 4x4")
    if channels < 2:
        raise ConfigError("need at least two channels")
    if n < 1:
        raise ConfigError("need at least one image")
    shares = class_fractions(class_count, imbalance, background_fraction)
    rng = nn.make_rng(seed)
    labels = np.empty((n, height, width), dtype=np.int64)
    images = np.empty((n, height, width, channels))
    for i in range(n):
        vertical = rng.uniform() < 0.5
        order = rng.permutation(class_count)
        length = width if vertical else height
        line = _stripe_layout(length, shares, order, int(rng.integers(length)))
        labels[i] = np.broadcast_to(line[None, :], (height, width)) if vertical else \
            np.broadcast_to(line[:, None], (height, width))
        t = rng.uniform()
        angle = 2 * math.pi * np.arange(class_count) / class_count + twist * t
        palette = np.zeros((class_count, channels))
        palette[:, 0] = (0.3 + t) * np.cos(angle)
        palette[:, 1] = (0.3 + t) * np.sin(angle)
        images[i] = palette[labels[i]] + rng.normal(0.0, noise, (height, width, channels))
    return GridDataset(images, labels, class_count, radius)


# --- splitting -------------------------------------------------------------------

def _stratified_take(labels: np.ndarray, candidates: np.ndarray, k: int, rng, stratify: bool) -> np.ndarray:
    """``k`` candidates, per-class counts within one of proportional when stratified."""
    candidates = rng.permutation(candidates)
    if not stratify or k == 0:
        return np.sort(candidates[:k])
    classes, counts = np.unique(labels[candidates], return_counts=True)
    exact = counts * k / candidates.size
    take = np.floor(exact).astype(int)
    short = k - take.sum()
    # largest remainders first, ties towards the lower class index
    for j in np.lexsort((classes, -(exact - take)))[:short]:
        take[j] += 1
    chosen = [candidates[labels[candidates] == c][:t] for c, t in zip(classes, take)]
    return np.sort(np.concatenate(chosen))


def split(dataset, labeled_ratio: float | None = None, valtiny_size: int = 0, seed: int = 0,
          test_fraction: float = 0.2, stratify: bool = True, labeled_count: int | None = None):
    """Tag every row (or image) as test, valtiny, labeled or unlabeled.

    Order: a fixed ``test_fraction`` is held out, ``valtiny_size`` rows are
    drawn from the rest, then ``ceil(labeled_ratio * n_train)`` (or exactly
    ``labeled_count``) rows of the remaining training pool are labelled.
    Grid datasets are split per image, stratified by each image's majority
    non-background class.
    """
    n = len(dataset)
    if labeled_count is None:
        if labeled_ratio is None or not 0 < labeled_ratio <= 1:
            raise ConfigError("labeled ratio must lie in (0, 1]")
    if not 0 <= test_fraction < 1:
        raise ConfigError("test fraction must lie in [0, 1)")
    rng = nn.make_rng(seed)
    if isinstance(dataset, GridDataset):
        flat = dataset.labels.reshape(n, -1)
        strata = np.array([np.bincount(row, minlength=dataset.class_count)[1:].argmax() for row in flat])
    else:
        strata = dataset.labels

    everything = np.arange(n)
    n_test = int(round(test_fraction * n))
    test = _stratified_take(strata, everything, n_test, rng, stratify)
    rest = np.setdiff1d(everything, test)
    if valtiny_size < 0 or valtiny_size > rest.size - 1:
        raise ConfigError(f"valtiny of {valtiny_size} does not fit in {rest.size} non-test rows")
    valtiny = np.sort(rng.permutation(rest)[:valtiny_size])
    train = np.setdiff1d(rest, valtiny)
    if labeled_count is None:
        k = min(train.size, math.ceil(round(labeled_ratio * train.size, 9)))
    else:
        if not 1 <= labeled_count <= train.size:
            raise ConfigError(f"labeled count {labeled_count} outside [1, {train.size}]")
        k = labeled_count
    labeled = _stratified_take(strata, train, k, rng, stratify)

    tags = np.full(n, "unlabeled", dtype=object)
    tags[test] = "test"
    tags[valtiny] = "valtiny"
    tags[labeled] = "labeled"
    return dataset.with_splits(tags)


# --- augmentation ------------------------------------------------------------------

@dataclass(frozen=True)
class AugmentSpec:
    sigma: float = 0.0
    flip_prob: float = 0.0
    crop: tuple[int, int] | None = None

    def __post_init__(self):
        if self.sigma < 0:
            raise ConfigError("jitter sigma must be >= 0")
        if not 0 <= self.flip_prob <= 1:
            raise ConfigError("flip probability must lie in [0, 1]")
        if self.crop is not None and min(self.crop) < 1:
            raise ConfigError("crop size must be positive")


def jitter(features: np.ndarray, spec: AugmentSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.sigma == 0:
        return features
    return features + rng.normal(0.0, spec.sigma, features.shape)


def flip_horizontal(image: np.ndarray, *maps: np.ndarray):
    return (image[:, ::-1],) + tuple(m[:, ::-1] for m in maps)


def augment_pixels(image: np.ndarray, maps: list[np.ndarray], spec: AugmentSpec,
                   rng: np.random.Generator) -> tuple[np.ndarray, list[np.ndarray]]:
    """Flip and crop ``image`` (H, W, ch) and every (H, W) map identically.

    Pseudo labels travel with the image as maps; they are never recomputed
    on the perturbed input.
    """
    h, w = image.shape[:2]
    if any(m.shape[:2] != (h, w) for m in maps):
        raise ShapeError("every map must match the image's spatial size")
    out = [image, *maps]
    if spec.flip_prob and rng.uniform() < spec.flip_prob:
        out = list(flip_horizontal(*out))
    if spec.crop is not None:
        ch, cw = spec.crop
        if ch > h or cw > w:
            raise ConfigError(f"crop {spec.crop} exceeds image size {(h, w)}")
        top, left = int(rng.integers(h - ch + 1)), int(rng.integers(w - cw + 1))
        out = [a[top:top + ch, left:left + cw] for a in out]
    return out[0], out[1:]


def augment(batch, spec: AugmentSpec, rng: np.random.Generator):
    """Jitter a feature matrix, or flip/crop an ``(image, *maps)`` tuple."""
    if isinstance(batch, tuple):
        image, *maps = batch
        image, maps = augment_pixels(image, list(maps), spec, rng)
        return (image, *maps)
    return jitter(np.asarray(batch, dtype=np.float64), spec, rng)


# --- CSV ---------------------------------------------------------------------------

def _label_field(label: int) -> str:
    return "-" if label == NO_LABEL else str(label)


def save_csv(dataset: TabularDataset, path) -> None:
    d = dataset.features.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(d)] + ["label", "split"])
        for x, y, s in zip(dataset.features, dataset.labels, dataset.splits):
            w.writerow([repr(float(v)) for v in x] + [_label_field(int(y)), s])


def save_grid_csv(dataset: GridDataset, path) -> None:
    n, h, wd, ch = dataset.images.shape
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["image", "row", "col"] + [f"f{j}" for j in range(ch)] + ["label", "split"])
        for i in range(n):
            for r in range(h):
                for c in range(wd):
                    w.writerow([i, r, c] + [repr(float(v)) for v in dataset.images[i, r, c]]
                               + [_label_field(int(dataset.labels[i, r, c])), dataset.splits[i]])


def _parse_label(text: str, split_tag: str, lineno: int) -> int:
    if split_tag not in SPLITS:
        raise ParseError(f"unknown split tag {split_tag!r}", lineno)
    if text == "-":
        if split_tag != "unlabeled":
            raise ParseError(f"{split_tag} row is missing its label", lineno)
        return NO_LABEL
    try:
        label = int(text)
    except ValueError:
        raise ParseError(f"label {text!r} is not an integer", lineno) from None
    if label < 0:
        raise ParseError("labels must be non-negative", lineno)
    return label


def _parse_floats(fields: list[str], lineno: int) -> list[float]:
    try:
        vals = [float(v) for v in fields]
    except ValueError as exc:
        raise ParseError(f"non-numeric feature ({exc})", lineno) from None
    if not all(math.isfinite(v) for v in vals):
        raise ParseError("non-finite feature", lineno)
    return vals


def load_csv(path, class_count: int | None = None):
    """Read a tabular (``f0..fk,label,split``) or grid (``image,row,col,...``) CSV."""
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise ConfigError(f"cannot open dataset {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header or header[-2:] != ["label", "split"]:
            raise ParseError("header must end with 'label,split'", 1)
        if header[:3] == ["image", "row", "col"]:
            return _load_grid(reader, header, class_count)
        d = len(header) - 2
        if d < 1 or header[:d] != [f"f{j}" for j in range(d)]:
            raise ParseError("feature columns must be named f0, f1, ...", 1)
        feats, labels, splits = [], [], []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != d + 2:
                raise ParseError(f"expected {d + 2} fields, got {len(row)}", lineno)
            feats.append(_parse_floats(row[:d], lineno))
            labels.append(_parse_label(row[d], row[d + 1], lineno))
            splits.append(row[d + 1])
    labels = np.array(labels, dtype=np.int64)
    k = class_count or max(2, int(labels.max()) + 1 if labels.size else 2)
    return TabularDataset(np.array(feats).reshape(len(feats), d), labels, k, np.array(splits, dtype=object))


def _load_grid(reader, header, class_count):
    ch = len(header) - 5
    if ch < 1 or header[3:3 + ch] != [f"f{j}" for j in range(ch)]:
        raise ParseError("channel columns must be named f0, f1, ...", 1)
    cells = {}
    for lineno, row in enumerate(reader, start=2):
        if len(row) != ch + 5:
            raise ParseError(f"expected {ch + 5} fields, got {len(row)}", lineno)
        try:
            i, r, c = (int(v) for v in row[:3])
        except ValueError:
            raise ParseError("image/row/col must be integers", lineno) from None
        cells[(i, r, c)] = (_parse_floats(row[3:3 + ch], lineno), _parse_label(row[-2], row[-1], lineno), row[-1])
    if not cells:
        raise ParseError("grid dataset has no pixels", 2)
    n, h, w = (max(k[j] for k in cells) + 1 for j in range(3))
    if len(cells) != n * h * w:
        raise ParseError("grid dataset has missing pixels")
    images = np.empty((n, h, w, ch))
    labels = np.empty((n, h, w), dtype=np.int64)
    splits = np.empty(n, dtype=object)
    for (i, r, c), (vals, lab, tag) in cells.items():
        images[i, r, c] = vals
        labels[i, r, c] = lab
        if splits[i] is not None and splits[i] != tag:
            raise ParseError(f"image {i} mixes split tags")
        splits[i] = tag
    k = class_count or max(2, int(labels.max()) + 1)
    return GridDataset(images, labels, k, splits=splits)


def save_dataset(dataset, path) -> None:
    if isinstance(dataset, GridDataset):
        save_grid_csv(dataset, path)
    else:
        save_csv(dataset, path)
