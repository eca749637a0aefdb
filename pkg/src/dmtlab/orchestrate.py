"""End-to-end procedures: supervised baseline, iterative DMT and ablations.

Both tasks share one training loop.  A *unit* is a row (classification) or
an image (pixel task); batches are composed of units, while losses and
weights are computed per row (per pixel for images).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import data, losses, nn, pseudo, schedules
from .config import ExperimentConfig
from .data import AugmentSpec, GridDataset, TabularDataset
from .errors import ConfigError
from .metrics import MetricRow, accuracy, confusion_matrix, fine_grained_accuracy, mean_iou

# seed roles for derive_seed
_INIT, _STREAM, _CORRUPT, _SPLIT = 0, 1, 2, 3


def supervised_epochs(labeled_ratio: float, base_epochs: int) -> int:
    """``sqrt(1 / ratio) * N`` rounded half up."""
    if not 0 < labeled_ratio <= 1:
        raise ConfigError("labeled ratio must lie in (0, 1]")
    if base_epochs < 1:
        raise ConfigError("base epochs must be >= 1")
    return int(math.floor(math.sqrt(1.0 / labeled_ratio) * base_epochs + 0.5))


# --- task views ------------------------------------------------------------------

@dataclass
class TaskData:
    """Labelled and unlabelled units of one dataset, plus evaluation splits."""

    dataset: TabularDataset | GridDataset
    pixel: bool

    @classmethod
    def of(cls, dataset) -> "TaskData":
        td = cls(dataset, isinstance(dataset, GridDataset))
        if dataset.count("labeled") == 0:
            raise ConfigError("the labelled set is empty")
        return td

    @property
    def class_count(self) -> int:
        return self.dataset.class_count

    @property
    def input_dim(self) -> int:
        return self.dataset.feature_dim if self.pixel else self.dataset.features.shape[1]

    def units(self, split: str) -> np.ndarray:
        d = self.dataset
        return d.images_for(split) if self.pixel else d.features_for(split)

    def labels(self, split: str) -> np.ndarray:
        return self.dataset.labels_for(split)

    def rows(self, units: np.ndarray) -> np.ndarray:
        return data.pixel_features(units, self.dataset.radius) if self.pixel else units

    @property
    def labeled_ratio(self) -> float:
        n_train = self.dataset.count("labeled") + self.dataset.count("unlabeled")
        return self.dataset.count("labeled") / n_train


@dataclass
class PseudoPool:
    """Pseudo-labelled units with teacher labels, confidences and selection masks.

    Arrays are per row for classification and ``(m, H, W)`` for images.
    """

    units: np.ndarray
    labels: np.ndarray
    confidences: np.ndarray
    selected: np.ndarray
    corrupted: np.ndarray

    def __len__(self) -> int:
        return len(self.units)

    @property
    def selected_count(self) -> int:
        return int(self.selected.sum())


# --- evaluation -------------------------------------------------------------------

def evaluate(model: nn.Model, task: TaskData, split: str = "test") -> dict[str, float]:
    """Accuracy and fine-grained accuracy (classification) or mean IoU (pixel)."""
    units = task.units(split)
    truth = task.dataset.labels[task.dataset.mask(split)]
    if len(units) == 0:
        return {}
    probs = nn.predict_proba(model, task.rows(units))
    pred = nn.argmax(probs)
    if task.pixel:
        cm = confusion_matrix(pred, truth.ravel(), task.class_count)
        return {"mean_iou": mean_iou(cm), "accuracy": accuracy(pred, truth.ravel())}
    return {"accuracy": accuracy(pred, truth), "fine_grained_accuracy": fine_grained_accuracy(probs, truth)}


def headline(task: TaskData) -> str:
    return "mean_iou" if task.pixel else "accuracy"


def validation_score(model: nn.Model, task: TaskData) -> float:
    scores = evaluate(model, task, "valtiny")
    return scores.get(headline(task), float("nan"))


# --- training loop ----------------------------------------------------------------

@dataclass
class FitStats:
    epoch_losses: list[float] = field(default_factory=list)
    loss_labeled: float = 0.0
    loss_unlabeled: float = 0.0
    weight_sum: float = 0.0
    weight_count: int = 0
    corrupted_weight_sum: float = 0.0
    corrupted_count: int = 0
    steps: int = 0

    @property
    def mean_weight(self) -> float:
        return self.weight_sum / self.weight_count if self.weight_count else float("nan")

    @property
    def mean_clean_weight(self) -> float:
        n = self.weight_count - self.corrupted_count
        return (self.weight_sum - self.corrupted_weight_sum) / n if n else float("nan")

    @property
    def mean_corrupted_weight(self) -> float:
        return self.corrupted_weight_sum / self.corrupted_count if self.corrupted_count else float("nan")


def _augment_spec(cfg: ExperimentConfig, pixel: bool) -> AugmentSpec:
    a = cfg.augment
    if pixel:
        return AugmentSpec(flip_prob=a.flip_prob, crop=(a.crop, a.crop) if a.crop else None)
    return AugmentSpec(sigma=a.sigma)


def _pixel_batch(task: TaskData, images: np.ndarray, maps: list[np.ndarray], spec, rng):
    outs, out_maps = [], [[] for _ in maps]
    for i, image in enumerate(images):
        img, ms = data.augment_pixels(image, [m[i] for m in maps], spec, rng)
        outs.append(img)
        for acc, m in zip(out_maps, ms):
            acc.append(m)
    rows = data.pixel_features(np.stack(outs), task.dataset.radius)
    return rows, [np.stack(m).ravel() for m in out_maps]


def fit(model: nn.Model, task: TaskData, cfg: ExperimentConfig, epochs: int, stream_seed: int,
        pool: PseudoPool | None = None, weighting: str = "dynamic", fine_tuning: bool = False,
        weight_cfg: losses.DynamicWeightConfig | None = None,
        labeled_units: np.ndarray | None = None, labeled_labels: np.ndarray | None = None
        ) -> tuple[nn.Model, FitStats]:
    """Train ``model`` in place on labelled units plus an optional pseudo pool.

    ``weighting`` is ``dynamic`` (pseudo rows weighted by the live dynamic
    weight), ``uniform`` (selected rows weight 1) or ``online`` (labels come
    from the model itself each step, kept above ``online.threshold``).
    """
    if weighting not in ("dynamic", "uniform", "online"):
        raise ConfigError(f"unknown weighting {weighting!r}")
    if epochs < 1:
        raise ConfigError("need at least one epoch")
    rng = nn.make_rng(stream_seed)
    t = cfg.train
    C = task.class_count
    x_lab = task.units("labeled") if labeled_units is None else labeled_units
    y_lab = task.labels("labeled") if labeled_labels is None else labeled_labels
    if len(x_lab) == 0:
        raise ConfigError("the labelled set is empty")
    pool_size = 0 if pool is None else len(pool)
    composer = schedules.BatchComposer(len(x_lab), pool_size, t.batch_ratio, cfg.batch_units, rng)
    steps_per_epoch = composer.steps_per_epoch()
    total = epochs * steps_per_epoch
    lr_sched = schedules.LrSchedule(t.finetune_lr if fine_tuning else t.lr, cfg.lr_mode(fine_tuning), total)
    wcfg = weight_cfg or losses.DynamicWeightConfig(cfg.loss.gamma1, cfg.loss.gamma2, cfg.loss.variant)
    ramp = cfg.ramp_gamma
    g1 = schedules.GammaSchedule(wcfg.gamma1, ramp, total, cfg.gamma.ramp_sign)
    g2 = schedules.GammaSchedule(wcfg.gamma2, ramp, total, cfg.gamma.ramp_sign)
    spec = _augment_spec(cfg, task.pixel)
    # online self-training perturbs labelled data only
    pseudo_spec = AugmentSpec() if weighting == "online" else spec
    velocity = nn.zero_velocity(model)
    ema = schedules.EmaTracker.of(model, t.ema_decay) if t.eval_ema else None
    stats = FitStats()

    step = 0
    for _ in range(epochs):
        running = 0.0
        for _ in range(steps_per_epoch):
            lab_idx, pse_idx = composer.next()
            # labelled rows
            if task.pixel:
                xl, (yl,) = _pixel_batch(task, x_lab[lab_idx], [y_lab[lab_idx]], spec, rng)
            else:
                xl, yl = data.jitter(x_lab[lab_idx], spec, rng), y_lab[lab_idx]
            # pseudo rows
            if len(pse_idx):
                maps = [pool.labels[pse_idx], pool.confidences[pse_idx], pool.selected[pse_idx],
                        pool.corrupted[pse_idx]]
                if task.pixel:
                    xu, (ya, ca, sel, bad) = _pixel_batch(task, pool.units[pse_idx], maps, pseudo_spec, rng)
                else:
                    xu = data.jitter(pool.units[pse_idx], pseudo_spec, rng)
                    ya, ca, sel, bad = maps
                ya, sel, bad = ya.astype(np.int64), sel.astype(bool), bad.astype(bool)
            else:
                xu = np.zeros((0, xl.shape[1]))
                ya, ca = np.zeros(0, np.int64), np.zeros(0)
                sel = bad = np.zeros(0, bool)

            x_all = np.concatenate([xl, xu])
            probs = nn.predict_proba(model, x_all)
            probs_u = probs[len(xl):]
            if weighting == "dynamic" and len(xu):
                live = wcfg.with_gammas(schedules.gamma_at(g1, step), schedules.gamma_at(g2, step))
                lab_u, w_u = losses.dynamic_weights(ya, ca, probs_u, live)
                w_u = np.where(sel, w_u, 0.0)
            elif weighting == "online" and len(xu):
                lab_u = nn.argmax(probs_u)
                w_u = (probs_u[np.arange(len(lab_u)), lab_u] > cfg.online.threshold).astype(float)
                sel = w_u > 0
            else:
                lab_u, w_u = ya, sel.astype(float)

            if sel.any():
                stats.weight_sum += float(w_u[sel].sum())
                stats.weight_count += int(sel.sum())
                stats.corrupted_weight_sum += float(w_u[sel & bad].sum())
                stats.corrupted_count += int((sel & bad).sum())

            labels_all = np.concatenate([yl, lab_u]).astype(np.int64)
            weights_all = np.concatenate([np.ones(len(yl)), w_u])
            n_norm = len(x_all) if cfg.loss.normalize_by == "batch" else len(yl) + int(sel.sum())

            rows = np.arange(len(labels_all))
            ce = -np.log(np.maximum(probs[rows, labels_all], nn.LOG_FLOOR))
            lx = float(ce[:len(yl)].sum() / n_norm)
            lu = float((weights_all[len(yl):] * ce[len(yl):]).sum() / n_norm)

            if t.mixup and not task.pixel:
                lam = float(rng.beta(t.mixup_alpha, t.mixup_alpha))
                perm = rng.permutation(len(x_all))
                inputs, targets = losses.mixup_batch(x_all, labels_all, weights_all, lam, perm, C)
            else:
                inputs, targets = x_all, nn.target_matrix(labels_all, weights_all, C)
            loss, grads = nn.loss_and_grad(model, inputs, targets, n_norm)
            lr = schedules.lr_at(lr_sched, step)
            if lr > 0:
                _, velocity = nn.sgd_step(model, grads, lr, t.momentum, t.weight_decay, velocity)
            if ema is not None:
                schedules.ema_update(ema, model)
            running += loss
            stats.loss_labeled, stats.loss_unlabeled = lx, lu
            step += 1
        stats.epoch_losses.append(running / steps_per_epoch)
    stats.steps = step
    if ema is not None:
        model = ema.model_like(model)
    return model, stats


# --- pseudo labelling ---------------------------------------------------------------

def _policy(kind: str, alpha: float):
    return {"global": pseudo.GlobalTopFraction, "class_balanced": pseudo.ClassBalancedTopFraction,
            "cbst_renorm": pseudo.CBSTRenormalized}[kind](alpha)


def corrupt_labels(labels: np.ndarray, selected: np.ndarray, fraction: float, class_count: int,
                   rng: np.random.Generator, probs: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Replace ``round(fraction * |selected|)`` selected labels by a different class.

    The replacement is uniform over the other classes, or, when ``probs`` is
    given, the class the teacher ranks highest after the current label.
    """
    labels = labels.copy()
    idx = np.flatnonzero(selected)
    k = int(math.floor(fraction * idx.size + 0.5))
    hit = np.sort(rng.choice(idx, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
    if probs is None:
        labels[hit] = (labels[hit] + rng.integers(1, class_count, size=k)) % class_count
    elif k:
        rival = probs[hit].copy()
        rival[np.arange(k), labels[hit]] = -np.inf
        labels[hit] = nn.argmax(rival)
    mask = np.zeros(labels.shape, dtype=bool)
    mask[hit] = True
    return labels, mask


def label_pool(teacher: nn.Model, task: TaskData, cfg: ExperimentConfig, alpha: float,
               iteration: int, corrupt_seed: int, policy: str | None = None) -> tuple[PseudoPool, pseudo.PseudoLabels]:
    """Pseudo-label the unlabelled units, select by ``alpha`` and optionally corrupt."""
    units = task.units("unlabeled")
    if len(units) == 0:
        raise ConfigError("no unlabelled units to pseudo-label")
    pl = pseudo.generate_pseudo_labels(teacher, task.rows(units), keep_probs=True)
    chosen = pseudo.select(pl, _policy(policy or cfg.selection_kind, alpha))
    labels, conf = chosen.labels, chosen.confidences
    bad = np.zeros(len(chosen), dtype=bool)
    if cfg.corrupt.fraction > 0 and iteration in cfg.corrupt.iterations:
        rival = pl.probs if cfg.corrupt.mode == "runner_up" else None
        labels, bad = corrupt_labels(labels, chosen.selected, cfg.corrupt.fraction, task.class_count,
                                     nn.make_rng(corrupt_seed), rival)
        # the teacher's confidence always refers to the label it hands out
        conf = np.where(bad, pl.probs[np.arange(len(labels)), labels], conf)
    shape = units.shape[:3] if task.pixel else (len(units),)
    maps = [a.reshape(shape) for a in (labels, conf, chosen.selected, bad)]
    if task.pixel:
        return PseudoPool(units, *maps), chosen
    keep = maps[2]
    return PseudoPool(units[keep], *(m[keep] for m in maps)), chosen


# --- logs ---------------------------------------------------------------------------

@dataclass
class IterationLog:
    iteration: int
    selected_count: int
    mean_dynamic_weight: float
    validation_metric: float
    epoch_losses: list[float]
    seed: int
    loss_labeled: float = 0.0
    loss_unlabeled: float = 0.0
    corrupted_count: int = 0
    clean_weight: float = float("nan")
    corrupted_weight: float = float("nan")
    model_tag: str = ""
    scores: dict = field(default_factory=dict)
    threshold: float | None = None


@dataclass
class RunResult:
    model: nn.Model
    logs: list[IterationLog]
    models: dict[str, nn.Model] = field(default_factory=dict)
    checkpoints: list[tuple[str, nn.Model]] = field(default_factory=list)


def _log(iteration, stats: FitStats, model, task, seed, pool=None, tag="", threshold=None):
    return IterationLog(
        iteration=iteration,
        selected_count=0 if pool is None else pool.selected_count,
        mean_dynamic_weight=stats.mean_weight,
        validation_metric=validation_score(model, task),
        epoch_losses=list(stats.epoch_losses),
        seed=seed,
        loss_labeled=stats.loss_labeled,
        loss_unlabeled=stats.loss_unlabeled,
        corrupted_count=0 if pool is None else int(pool.corrupted.sum()),
        clean_weight=stats.mean_clean_weight,
        corrupted_weight=stats.mean_corrupted_weight,
        model_tag=tag,
        scores=evaluate(model, task, "test"),
        threshold=threshold,
    )


def log_rows(logs: list[IterationLog], run_id: str, seed: int, task: TaskData) -> list[MetricRow]:
    rows = []
    val_name = "valtiny_mean_iou" if task.pixel else "valtiny_accuracy"
    base_id = run_id
    for lg in logs:
        it = lg.iteration
        run_id = f"{base_id}:{lg.model_tag}" if lg.model_tag else base_id
        rows.append(MetricRow(run_id, seed, it, "epochs", len(lg.epoch_losses)))
        rows.extend(MetricRow(run_id, seed, it, "epoch_loss", v) for v in lg.epoch_losses)
        rows.append(MetricRow(run_id, seed, it, "loss_labeled", lg.loss_labeled))
        rows.append(MetricRow(run_id, seed, it, "loss_unlabeled", lg.loss_unlabeled))
        rows.append(MetricRow(run_id, seed, it, "loss_total", lg.loss_labeled + lg.loss_unlabeled))
        rows.append(MetricRow(run_id, seed, it, "selected_count", lg.selected_count))
        rows.append(MetricRow(run_id, seed, it, "seed_used", lg.seed))
        if lg.corrupted_count:
            rows.append(MetricRow(run_id, seed, it, "corrupted_count", lg.corrupted_count))
        if not math.isnan(lg.mean_dynamic_weight):
            rows.append(MetricRow(run_id, seed, it, "mean_dynamic_weight", lg.mean_dynamic_weight))
        if not math.isnan(lg.validation_metric):
            rows.append(MetricRow(run_id, seed, it, val_name, lg.validation_metric))
        if lg.threshold is not None:
            rows.append(MetricRow(run_id, seed, it, "threshold", lg.threshold))
        for name, value in sorted(lg.scores.items()):
            rows.append(MetricRow(run_id, seed, it, name, value))
    return rows


# --- procedures ------------------------------------------------------------------------

def _sync(cfg: ExperimentConfig, task: TaskData) -> None:
    cfg.run.task = "pixel" if task.pixel else "classification"


def _new_model(seed: int, task: TaskData, cfg: ExperimentConfig) -> nn.Model:
    return nn.init_model(seed, [task.input_dim, *cfg.model.hidden, task.class_count])


def train_supervised(task: TaskData, cfg: ExperimentConfig, seed: int, labeled_ratio: float | None = None,
                     base_epochs: int | None = None, model: nn.Model | None = None,
                     labeled_units=None, labeled_labels=None) -> tuple[nn.Model, FitStats]:
    """Labelled-only training for ``round-half-up(sqrt(1/ratio) * N)`` epochs."""
    if labeled_ratio is None:
        labeled_ratio = cfg.train.labeled_ratio or task.labeled_ratio
    ratio = labeled_ratio
    epochs = supervised_epochs(ratio, cfg.train.base_epochs if base_epochs is None else base_epochs)
    if model is None:
        model = _new_model(seed, task, cfg)
    return fit(model, task, cfg, epochs, nn.derive_seed(seed, _STREAM), fine_tuning=False,
               labeled_units=labeled_units, labeled_labels=labeled_labels)


def _distinct_seeds(base: int, count: int) -> list[int]:
    seeds, used = [], {base}
    k = 0
    while len(seeds) < count:
        s = nn.derive_seed(base, _INIT, k)
        k += 1
        if s not in used:
            used.add(s)
            seeds.append(s)
    return seeds


def _weighting(cfg: ExperimentConfig) -> str:
    return "uniform" if cfg.run.ablation == "cbst" else "dynamic"


def _weight_cfg(cfg: ExperimentConfig) -> losses.DynamicWeightConfig:
    variant = {"dmt_naive": "naive", "dmt_flip": "flip"}.get(cfg.run.ablation, cfg.loss.variant)
    return losses.DynamicWeightConfig(cfg.loss.gamma1, cfg.loss.gamma2, variant)


def dmt_classification(task: TaskData, cfg: ExperimentConfig, keep_checkpoints: bool = False) -> RunResult:
    """Iterative re-training: each iteration a fresh network learns from the previous one's labels.

    With ``run.ablation=dst`` the network instead fine-tunes itself.
    """
    if task.pixel:
        raise ConfigError("dmt_classification needs a tabular dataset")
    _sync(cfg, task)
    base = cfg.run.seed
    seeds = _distinct_seeds(base, cfg.run.iterations + 1)
    model, stats = train_supervised(task, cfg, seeds[0])
    logs = [_log(0, stats, model, task, seeds[0])]
    ckpts = [("iter0", model.copy())] if keep_checkpoints else []
    self_tuning = cfg.run.ablation == "dst"
    policy = "class_balanced" if cfg.run.ablation == "cbst" and cfg.select.policy == "auto" else None
    for i, alpha in enumerate(cfg.run.alpha_schedule, start=1):
        seed = seeds[i]
        pool, _ = label_pool(model, task, cfg, alpha, i, nn.derive_seed(seed, _CORRUPT), policy)
        student = model.copy() if self_tuning else _new_model(seed, task, cfg)
        model, stats = fit(student, task, cfg, cfg.epochs_per_iteration, nn.derive_seed(seed, _STREAM),
                           pool, _weighting(cfg), fine_tuning=self_tuning, weight_cfg=_weight_cfg(cfg))
        logs.append(_log(i, stats, model, task, seed, pool))
        if keep_checkpoints:
            ckpts.append((f"iter{i}", model.copy()))
    return RunResult(model, logs, {"final": model}, ckpts)


def dmt_pixel(task: TaskData, cfg: ExperimentConfig, init_seeds: tuple[int, int] | None = None,
              keep_checkpoints: bool = False) -> RunResult:
    """Two networks fine-tune on each other's class-balanced pseudo labels.

    ``orchestrate.self_supervise`` makes each network label its own data;
    ``run.ablation=dst`` keeps a single self-labelling network.
    """
    _sync(cfg, task)
    base = cfg.run.seed
    seed_a, seed_b = init_seeds or tuple(_distinct_seeds(base, 2))
    single = cfg.run.ablation == "dst"
    x_lab, y_lab = task.units("labeled"), task.labels("labeled")

    if cfg.orchestrate.init_mode == "difference_maximized_split" and not single:
        size = math.ceil(round(cfg.sampling.subset_fraction * len(x_lab), 9))
        sp = schedules.difference_maximized_split(np.arange(len(x_lab)), size, nn.derive_seed(base, _SPLIT))
        subsets = {"A": np.asarray(sp.subset_a), "B": np.asarray(sp.subset_b)}
        init = {"A": seed_a, "B": seed_a}
        stream = {"A": nn.derive_seed(seed_a, _STREAM, 0), "B": nn.derive_seed(seed_a, _STREAM, 1)}
    else:
        subsets = {"A": None, "B": None}
        init = {"A": seed_a, "B": seed_b}
        stream = {"A": seed_a, "B": seed_b}

    tags = ["A"] if single else ["A", "B"]
    models, logs, ckpts = {}, [], []
    for tag in tags:
        sub = subsets[tag]
        lu = None if sub is None else x_lab[sub]
        ll = None if sub is None else y_lab[sub]
        ratio = (cfg.train.labeled_ratio or task.labeled_ratio) * (1 if sub is None else len(sub) / len(x_lab))
        m, st = train_supervised(task, cfg, init[tag], labeled_ratio=ratio,
                                 model=_new_model(init[tag], task, cfg), labeled_units=lu, labeled_labels=ll)
        models[tag] = m
        logs.append(_log(0, st, m, task, init[tag], tag=tag))
        if keep_checkpoints:
            ckpts.append((f"iter0_{tag}", m.copy()))

    teacher_of = {"A": "A", "B": "B"} if single or cfg.orchestrate.self_supervise else {"A": "B", "B": "A"}
    for i, alpha in enumerate(cfg.run.alpha_schedule, start=1):
        previous = {tag: m.copy() for tag, m in models.items()}
        for tag in tags:
            seed = nn.derive_seed(stream[tag], i)
            pool, _ = label_pool(previous[teacher_of[tag]], task, cfg, alpha, i,
                                 nn.derive_seed(stream[tag], _CORRUPT, i))
            m, st = fit(previous[tag].copy(), task, cfg, cfg.epochs_per_iteration, seed, pool,
                        _weighting(cfg), fine_tuning=True, weight_cfg=_weight_cfg(cfg))
            models[tag] = m
            logs.append(_log(i, st, m, task, seed, pool, tag=tag))
            if keep_checkpoints:
                ckpts.append((f"iter{i}_{tag}", m.copy()))
    best = best_of(models, task)
    return RunResult(models[best], logs, models, ckpts)


def best_of(models: dict[str, nn.Model], task: TaskData) -> str:
    """Tag of the model with the higher valtiny score; ties (and no valtiny) go to A."""
    if len(models) == 1 or task.dataset.count("valtiny") == 0:
        return "A"
    sa, sb = validation_score(models["A"], task), validation_score(models["B"], task)
    return "B" if sb > sa else "A"


def online_self_training(task: TaskData, cfg: ExperimentConfig, keep_checkpoints: bool = False) -> RunResult:
    """Fine-tune the supervised model on labels it produces for itself each step."""
    _sync(cfg, task)
    seed = _distinct_seeds(cfg.run.seed, 1)[0]
    model, stats = train_supervised(task, cfg, seed)
    logs = [_log(0, stats, model, task, seed)]
    units = task.units("unlabeled")
    shape = units.shape[:3] if task.pixel else (len(units),)
    pool = PseudoPool(units, np.zeros(shape, np.int64), np.zeros(shape), np.ones(shape, bool),
                      np.zeros(shape, bool))
    stream = nn.derive_seed(seed, _STREAM, 1)
    model, stats = fit(model, task, cfg, cfg.online.epochs, stream, pool, "online", fine_tuning=True)
    lg = _log(1, stats, model, task, stream, threshold=cfg.online.threshold)
    lg.selected_count = 0
    logs.append(lg)
    ckpts = [("final", model.copy())] if keep_checkpoints else []
    return RunResult(model, logs, {"final": model}, ckpts)


MODES = ("supervised", "dmt-cls", "dmt-seg")


def run_ablation(task: TaskData, cfg: ExperimentConfig, keep_checkpoints: bool = False) -> RunResult:
    tag = cfg.run.ablation
    if tag == "none" or tag not in ("online_st", "cbst", "dst", "dmt_naive", "dmt_flip"):
        raise ConfigError(f"unknown ablation {tag!r}")
    if tag == "online_st":
        return online_self_training(task, cfg, keep_checkpoints)
    if task.pixel:
        return dmt_pixel(task, cfg, keep_checkpoints=keep_checkpoints)
    return dmt_classification(task, cfg, keep_checkpoints)


def run(dataset, cfg: ExperimentConfig, mode: str, keep_checkpoints: bool = False) -> RunResult:
    """Dispatch ``supervised``, ``dmt-cls``, ``dmt-seg`` or ``ablate:<tag>``."""
    task = TaskData.of(dataset)
    _sync(cfg, task)
    if mode.startswith("ablate:"):
        cfg.run.ablation = mode.split(":", 1)[1]
        cfg.validate()
        return run_ablation(task, cfg, keep_checkpoints)
    if mode == "supervised":
        seed = _distinct_seeds(cfg.run.seed, 1)[0]
        model, stats = train_supervised(task, cfg, seed)
        ckpts = [("final", model.copy())] if keep_checkpoints else []
        return RunResult(model, [_log(0, stats, model, task, seed)], {"final": model}, ckpts)
    if mode == "dmt-cls":
        if task.pixel:
            raise ConfigError("dmt-cls needs a tabular dataset")
        return dmt_classification(task, cfg, keep_checkpoints)
    if mode == "dmt-seg":
        if not task.pixel:
            raise ConfigError("dmt-seg needs a grid dataset")
        return dmt_pixel(task, cfg, keep_checkpoints=keep_checkpoints)
    raise ConfigError(f"unknown mode {mode!r}; expected one of {MODES} or ablate:<tag>")


def save_checkpoints(result: RunResult, directory) -> list[Path]:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for name, model in result.checkpoints:
        p = out / f"{name}.model"
        nn.save_model(model, p)
        paths.append(p)
    nn.save_model(result.model, out / "final_best.model")
    paths.append(out / "final_best.model")
    return paths
