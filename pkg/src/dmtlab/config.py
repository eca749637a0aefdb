"""Experiment configuration: typed sections addressed by dotted keys.

Config files are ``key=value`` lines (``#`` starts a comment), e.g.::

    loss.gamma1=5
    train.batch_ratio=7

Every key is validated against the registry derived from the section
dataclasses; unknown keys and bad values raise ``ConfigError``.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import ConfigError

TASKS = ("classification", "pixel")
ABLATIONS = ("none", "online_st", "cbst", "dst", "dmt_naive", "dmt_flip")
INIT_MODES = ("different_seeds", "difference_maximized_split")


@dataclass
class RunSection:
    task: str = field(default="classification", metadata={"help": "classification | pixel"})
    iterations: int = field(default=5, metadata={"help": "number of DMT iterations"})
    alpha_schedule: tuple = field(default=(0.2, 0.4, 0.6, 0.8, 1.0),
                                  metadata={"help": "selected fraction per iteration"})
    seed: int = field(default=0, metadata={"help": "base seed; every other seed derives from it"})
    ablation: str = field(default="none", metadata={"help": "|".join(ABLATIONS)})


@dataclass
class ModelSection:
    hidden: tuple = field(default=(32, 32), metadata={"help": "hidden layer widths"})


@dataclass
class LossSection:
    gamma1: float = field(default=5.0, metadata={"help": "exponent on agreement weights"})
    gamma2: float = field(default=5.0, metadata={"help": "exponent on negative-disagreement weights"})
    variant: str = field(default="standard", metadata={"help": "standard | naive | flip"})
    normalize_by: str = field(default="batch", metadata={"help": "batch | selected"})


@dataclass
class GammaSection:
    ramp: str = field(default="auto", metadata={"help": "auto (on when re-training) | on | off"})
    ramp_sign: float = field(default=1.0, metadata={"help": "+1 as published, -1 for a mean-teacher style ramp-up"})


@dataclass
class TrainSection:
    lr: float = field(default=0.1, metadata={"help": "learning rate when training from scratch"})
    finetune_lr: float = field(default=0.01, metadata={"help": "learning rate when fine-tuning a trained model"})
    momentum: float = field(default=0.9, metadata={"help": "SGD momentum"})
    weight_decay: float = field(default=5e-4, metadata={"help": "L2 weight decay"})
    lr_schedule: str = field(default="auto", metadata={"help": "auto (cosine re-training, poly fine-tuning) | constant | poly | cosine"})
    epochs: int = field(default=0, metadata={"help": "epochs per DMT iteration; 0 = 30 classification / 5 pixel"})
    base_epochs: int = field(default=30, metadata={"help": "fully supervised epoch budget N"})
    labeled_ratio: float = field(default=0.0, metadata={"help": "ratio for the supervised epoch rule; 0 = measured from the data"})
    batch_size: int = field(default=0, metadata={"help": "units per batch; 0 = 64 rows / 8 images"})
    batch_ratio: int = field(default=7, metadata={"help": "unlabelled units per labelled unit in a batch"})
    mixup: bool = field(default=False, metadata={"help": "mixup with dynamic-weight interpolation"})
    mixup_alpha: float = field(default=1.0, metadata={"help": "Beta(a, a) parameter for mixup lambda"})
    ema_decay: float = field(default=0.999, metadata={"help": "EMA decay for evaluation weights"})
    eval_ema: bool = field(default=False, metadata={"help": "evaluate the EMA network instead of the raw one"})


@dataclass
class SelectSection:
    policy: str = field(default="auto", metadata={"help": "auto | global | class_balanced | cbst_renorm"})


@dataclass
class SamplingSection:
    subset_fraction: float = field(default=0.5, metadata={"help": "difference-maximised subset size / labelled size"})


@dataclass
class OrchestrateSection:
    init_mode: str = field(default="different_seeds", metadata={"help": "|".join(INIT_MODES)})
    self_supervise: bool = field(default=False, metadata={"help": "each model labels its own data (literal listing)"})


@dataclass
class SplitSection:
    labeled_ratio: float = field(default=0.125, metadata={"help": "labelled share of the training pool"})
    labeled_count: int = field(default=0, metadata={"help": "exact labelled count; 0 = use labeled_ratio"})
    valtiny: int = field(default=50, metadata={"help": "size of the small validation split"})
    test_fraction: float = field(default=0.2, metadata={"help": "held-out test share"})
    stratify: bool = field(default=True, metadata={"help": "stratify the labelled draw by class"})


@dataclass
class AugmentSection:
    sigma: float = field(default=0.0, metadata={"help": "Gaussian feature jitter (classification)"})
    flip_prob: float = field(default=0.5, metadata={"help": "horizontal flip probability (pixel)"})
    crop: int = field(default=0, metadata={"help": "square crop size; 0 = no crop (pixel)"})


@dataclass
class CorruptSection:
    fraction: float = field(default=0.0, metadata={"help": "share of selected pseudo labels replaced by a wrong class"})
    iterations: tuple = field(default=(1,), metadata={"help": "iterations that receive injected corruption"})
    mode: str = field(default="uniform", metadata={"help": "uniform (random wrong class) | runner_up (teacher's second choice)"})


@dataclass
class OnlineSection:
    threshold: float = field(default=0.9, metadata={"help": "online self-training confidence threshold"})
    epochs: int = field(default=20, metadata={"help": "online self-training epochs"})


SECTIONS = {
    "run": RunSection, "model": ModelSection, "loss": LossSection, "gamma": GammaSection,
    "train": TrainSection, "select": SelectSection, "sampling": SamplingSection,
    "orchestrate": OrchestrateSection, "split": SplitSection, "augment": AugmentSection,
    "corrupt": CorruptSection, "online": OnlineSection,
}


@dataclass
class ExperimentConfig:
    run: RunSection = field(default_factory=RunSection)
    model: ModelSection = field(default_factory=ModelSection)
    loss: LossSection = field(default_factory=LossSection)
    gamma: GammaSection = field(default_factory=GammaSection)
    train: TrainSection = field(default_factory=TrainSection)
    select: SelectSection = field(default_factory=SelectSection)
    sampling: SamplingSection = field(default_factory=SamplingSection)
    orchestrate: OrchestrateSection = field(default_factory=OrchestrateSection)
    split: SplitSection = field(default_factory=SplitSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    corrupt: CorruptSection = field(default_factory=CorruptSection)
    online: OnlineSection = field(default_factory=OnlineSection)

    # --- derived settings -------------------------------------------------

    @property
    def is_pixel(self) -> bool:
        return self.run.task == "pixel"

    @property
    def epochs_per_iteration(self) -> int:
        return self.train.epochs or (5 if self.is_pixel else 30)

    @property
    def batch_units(self) -> int:
        return self.train.batch_size or (8 if self.is_pixel else 64)

    @property
    def ramp_gamma(self) -> bool:
        if self.gamma.ramp == "auto":
            return not self.is_pixel
        return self.gamma.ramp == "on"

    def lr_mode(self, fine_tuning: bool) -> str:
        if self.train.lr_schedule != "auto":
            return self.train.lr_schedule
        return "poly" if fine_tuning else "cosine"

    @property
    def selection_kind(self) -> str:
        if self.select.policy != "auto":
            return self.select.policy
        return "class_balanced" if self.is_pixel else "global"

    def validate(self) -> "ExperimentConfig":
        r = self.run
        if r.task not in TASKS:
            raise ConfigError(f"run.task must be one of {TASKS}")
        if r.ablation not in ABLATIONS:
            raise ConfigError(f"run.ablation must be one of {ABLATIONS}")
        if r.iterations < 1 or len(r.alpha_schedule) != r.iterations:
            raise ConfigError("run.alpha_schedule needs exactly one fraction per iteration")
        a = r.alpha_schedule
        if any(not 0 < x <= 1 for x in a) or any(x > y for x, y in zip(a, a[1:])) or a[-1] != 1.0:
            raise ConfigError("run.alpha_schedule must be nondecreasing in (0, 1] and end at 1.0")
        if any(h < 1 for h in self.model.hidden):
            raise ConfigError("model.hidden widths must be positive")
        if self.loss.variant not in ("standard", "naive", "flip"):
            raise ConfigError("loss.variant must be standard, naive or flip")
        if self.loss.normalize_by not in ("batch", "selected"):
            raise ConfigError("loss.normalize_by must be batch or selected")
        for g in (self.loss.gamma1, self.loss.gamma2):
            if not math.isfinite(g) or g < 0:
                raise ConfigError("gammas must be finite and >= 0")
        if self.gamma.ramp not in ("auto", "on", "off"):
            raise ConfigError("gamma.ramp must be auto, on or off")
        if self.gamma.ramp_sign not in (1.0, -1.0):
            raise ConfigError("gamma.ramp_sign must be 1 or -1")
        t = self.train
        if t.lr <= 0 or t.finetune_lr <= 0 or not 0 <= t.momentum < 1 or t.weight_decay < 0:
            raise ConfigError("need train.lr > 0, 0 <= momentum < 1, weight_decay >= 0")
        if t.lr_schedule not in ("auto", "constant", "poly", "cosine"):
            raise ConfigError("train.lr_schedule must be auto, constant, poly or cosine")
        if not 0 <= t.labeled_ratio <= 1:
            raise ConfigError("train.labeled_ratio must lie in [0, 1]")
        if t.epochs < 0 or t.base_epochs < 1:
            raise ConfigError("train.epochs must be >= 0 and train.base_epochs >= 1")
        if t.batch_ratio < 0 or t.batch_size < 0 or self.batch_units % (t.batch_ratio + 1):
            raise ConfigError("train.batch_size must be divisible by train.batch_ratio + 1")
        if t.mixup_alpha <= 0 or not 0 <= t.ema_decay <= 1:
            raise ConfigError("need train.mixup_alpha > 0 and train.ema_decay in [0, 1]")
        if self.select.policy not in ("auto", "global", "class_balanced", "cbst_renorm"):
            raise ConfigError("select.policy must be auto, global, class_balanced or cbst_renorm")
        if not 0 < self.sampling.subset_fraction <= 1:
            raise ConfigError("sampling.subset_fraction must lie in (0, 1]")
        if self.orchestrate.init_mode not in INIT_MODES:
            raise ConfigError(f"orchestrate.init_mode must be one of {INIT_MODES}")
        s = self.split
        if not 0 < s.labeled_ratio <= 1 or s.labeled_count < 0 or s.valtiny < 0 or not 0 <= s.test_fraction < 1:
            raise ConfigError("split settings out of range")
        g = self.augment
        if g.sigma < 0 or not 0 <= g.flip_prob <= 1 or g.crop < 0:
            raise ConfigError("augment settings out of range")
        c = self.corrupt
        if not 0 <= c.fraction <= 1 or any(i < 1 or i > r.iterations for i in c.iterations):
            raise ConfigError("corrupt.fraction must lie in [0, 1] and corrupt.iterations in 1..iterations")
        if c.mode not in ("uniform", "runner_up"):
            raise ConfigError("corrupt.mode must be uniform or runner_up")
        if not 0 <= self.online.threshold <= 1 or self.online.epochs < 1:
            raise ConfigError("online.threshold must lie in [0, 1] and online.epochs >= 1")
        return self


# --- key registry ----------------------------------------------------------------

def registry() -> dict[str, tuple[Any, Any, str]]:
    """``dotted key -> (type, default, help)`` for every setting."""
    out = {}
    for name, cls in SECTIONS.items():
        for f in fields(cls):
            default = f.default if f.default is not dataclasses.MISSING else f.default_factory()
            out[f"{name}.{f.name}"] = (f.type, default, f.metadata.get("help", ""))
    return out


def _coerce(key: str, raw, default):
    if isinstance(raw, str):
        raw = raw.strip()
    try:
        if isinstance(default, bool):
            if isinstance(raw, bool):
                return raw
            low = str(raw).lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            v = float(raw)
            if not math.isfinite(v):
                raise ValueError(raw)
            return v
        if isinstance(default, tuple):
            parts = raw if isinstance(raw, (list, tuple)) else [p for p in str(raw).split(",") if p.strip()]
            elem = type(default[0]) if default else float
            return tuple(elem(p) for p in parts)
        return str(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"bad value {raw!r} for {key}") from None


def format_value(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def apply_overrides(cfg: ExperimentConfig, overrides: dict[str, Any]) -> ExperimentConfig:
    reg = registry()
    for key, raw in overrides.items():
        if key not in reg:
            raise ConfigError(f"unknown config key {key!r}")
        section, name = key.split(".", 1)
        setattr(getattr(cfg, section), name, _coerce(key, raw, reg[key][1]))
    return cfg


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value")
        key, value = (p.strip() for p in line.split("=", 1))
        out[key] = value
    return out


def load_config(path=None, overrides: dict[str, Any] | None = None) -> ExperimentConfig:
    cfg = ExperimentConfig()
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        apply_overrides(cfg, parse_config_text(text, str(path)))
    if overrides:
        apply_overrides(cfg, overrides)
    return cfg.validate()


def dump_config(cfg: ExperimentConfig) -> str:
    lines = []
    for name in SECTIONS:
        section = getattr(cfg, name)
        for f in fields(section):
            lines.append(f"{name}.{f.name}={format_value(getattr(section, f.name))}")
    return "\n".join(lines) + "\n"
