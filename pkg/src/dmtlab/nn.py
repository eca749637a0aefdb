"""Small dense feed-forward classifier with hand-derived gradients.

Everything runs in float64.  Hidden layers use ReLU, the last layer emits
raw logits.  Weights are stored as ``(fan_in, fan_out)`` so that a batch
``X`` of shape ``(n, fan_in)`` maps to ``X @ W + b``.

Random numbers come from numpy's PCG64 bit generator (``make_rng``); the
same seed always reproduces the same stream.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

LOG_FLOOR = 1e-12
MODEL_MAGIC = "dmt-model v1"


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator backed by PCG64."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(base: int, *keys: int) -> int:
    """Independent 63-bit child seed for ``(base, *keys)``."""
    state = np.random.SeedSequence([int(base), *map(int, keys)]).generate_state(1, np.uint64)[0]
    return int(state >> np.uint64(1))


@dataclass
class Layer:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "relu"  # "relu" | "identity"


@dataclass
class Model:
    layers: list[Layer] = field(default_factory=list)

    def __post_init__(self):
        if not self.layers:
            raise ConfigError("model needs at least one layer")
        for prev, nxt in zip(self.layers, self.layers[1:]):
            if prev.weight.shape[1] != nxt.weight.shape[0]:
                raise ShapeError("consecutive layer dimensions do not chain")
        for layer in self.layers:
            if layer.bias.shape != (layer.weight.shape[1],):
                raise ShapeError("bias length must equal layer output size")
            if layer.activation not in ("relu", "identity"):
                raise ConfigError(f"unknown activation {layer.activation!r}")
        if self.layers[-1].activation != "identity":
            raise ConfigError("final layer must emit logits (identity activation)")
        if self.class_count < 2:
            raise ConfigError("need at least two classes")

    @property
    def input_dim(self) -> int:
        return self.layers[0].weight.shape[0]

    @property
    def class_count(self) -> int:
        return self.layers[-1].weight.shape[1]

    @property
    def layer_sizes(self) -> list[int]:
        return [self.input_dim] + [layer.weight.shape[1] for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        out = []
        for layer in self.layers:
            out.extend((layer.weight, layer.bias))
        return out

    def copy(self) -> "Model":
        return Model([Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        for p in self.parameters():
            h.update(np.ascontiguousarray(p, dtype=np.float64).tobytes())
        return h.hexdigest()


@dataclass
class GradientSet:
    """One gradient array per model parameter, in ``Model.parameters()`` order."""

    arrays: list[np.ndarray]

    def __iter__(self) -> Iterator[np.ndarray]:
        return iter(self.arrays)

    def __len__(self) -> int:
        return len(self.arrays)

    def __add__(self, other: "GradientSet") -> "GradientSet":
        return GradientSet([a + b for a, b in zip(self.arrays, other.arrays)])

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for a in self.arrays])


def init_model(seed: int, layer_sizes: Sequence[int]) -> Model:
    """He-normal weights, zero biases, ReLU hidden layers."""
    sizes = list(layer_sizes)
    if len(sizes) < 2:
        raise ConfigError("layer_sizes needs an input and an output size")
    if any(int(s) < 1 for s in sizes):
        raise ConfigError("layer sizes must be positive")
    rng = make_rng(seed)
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = rng.standard_normal((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        act = "identity" if k == len(sizes) - 2 else "relu"
        layers.append(Layer(w, np.zeros(fan_out), act))
    return Model(layers)


def _as_batch(model: Model, inputs) -> np.ndarray:
    x = np.asarray(inputs, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"inputs have shape {x.shape}, model expects (*, {model.input_dim})")
    return x


def _forward_cache(model: Model, x: np.ndarray) -> list[np.ndarray]:
    acts = [x]
    a = x
    for layer in model.layers:
        z = a @ layer.weight + layer.bias
        a = np.maximum(z, 0.0) if layer.activation == "relu" else z
        acts.append(a)
    return acts


def forward(model: Model, inputs) -> np.ndarray:
    """Logits of shape ``(batch, class_count)``."""
    logits = _forward_cache(model, _as_batch(model, inputs))[-1]
    if not np.all(np.isfinite(logits)):
        raise NumericError("non-finite logits in forward pass")
    return logits


def softmax(logits) -> np.ndarray:
    """Row-wise max-subtracted softmax; accepts a vector or a matrix."""
    z = np.asarray(logits, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise NumericError("softmax received non-finite logits")
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def predict_proba(model: Model, inputs) -> np.ndarray:
    return softmax(forward(model, inputs))


def argmax(probs: np.ndarray) -> np.ndarray:
    # np.argmax returns the first maximum, i.e. ties go to the lowest class index.
    return np.argmax(probs, axis=-1)


def entropy(p) -> float:
    p = np.asarray(p, dtype=np.float64)
    nz = p[p > 0]
    return float(-(nz * np.log(nz)).sum())


def cross_entropy(p, target_class: int) -> float:
    p = np.asarray(p, dtype=np.float64)
    if not 0 <= int(target_class) < p.shape[-1]:
        raise IndexError(f"class {target_class} out of range for {p.shape[-1]} classes")
    return float(-np.log(max(p[int(target_class)], LOG_FLOOR)))


def target_matrix(targets, weights, class_count: int) -> np.ndarray:
    """Dense ``(n, C)`` matrix holding ``weights[i]`` at ``targets[i]``."""
    targets = np.asarray(targets, dtype=np.int64)
    weights = np.asarray(weights, dtype=np.float64)
    if targets.shape != weights.shape or targets.ndim != 1:
        raise ShapeError("targets and weights must be equal-length vectors")
    if targets.size and (targets.min() < 0 or targets.max() >= class_count):
        raise IndexError("target class out of range")
    t = np.zeros((targets.size, class_count))
    t[np.arange(targets.size), targets] = weights
    return t


def loss_and_grad(model: Model, inputs, targets: np.ndarray, batch_size: int | None = None
                  ) -> tuple[float, GradientSet]:
    """Loss ``(1/N) sum_ic T_ic * -log p_ic`` and its exact gradient.

    ``targets`` is a non-negative ``(n, C)`` weight matrix; a weighted hard
    label is one nonzero entry per row, a mixup pair two.
    """
    x = _as_batch(model, inputs)
    t = np.asarray(targets, dtype=np.float64)
    if t.shape != (x.shape[0], model.class_count):
        raise ShapeError(f"target matrix shape {t.shape} does not match batch")
    if np.any(t < 0):
        raise ConfigError("target weights must be non-negative")
    n = x.shape[0] if batch_size is None else int(batch_size)
    if n <= 0:
        raise ShapeError("batch size must be positive")

    acts = _forward_cache(model, x)
    probs = softmax(acts[-1])
    loss = float(-(t * np.log(np.maximum(probs, LOG_FLOOR))).sum() / n)

    delta = (t.sum(axis=1, keepdims=True) * probs - t) / n
    grads: list[np.ndarray] = []
    for k in range(len(model.layers) - 1, -1, -1):
        layer = model.layers[k]
        a_in = acts[k]
        grads.append(delta.sum(axis=0))
        grads.append(a_in.T @ delta)
        if k > 0:
            delta = (delta @ layer.weight.T) * (acts[k] > 0)
    grads.reverse()  # now [W0, b0, W1, b1, ...]
    gs = GradientSet(grads)
    if not np.all(np.isfinite(gs.flat())) or not np.isfinite(loss):
        raise NumericError("non-finite loss or gradient")
    return loss, gs


def backward(model: Model, inputs, per_sample_weights, targets, batch_size: int | None = None
             ) -> GradientSet:
    """Gradient of ``(1/N) sum_i w_i CE(target_i, softmax(f(x_i)))``."""
    x = _as_batch(model, inputs)
    w = np.asarray(per_sample_weights, dtype=np.float64)
    if w.shape != (x.shape[0],):
        raise ShapeError("need exactly one weight per sample")
    t = target_matrix(targets, w, model.class_count)
    return loss_and_grad(model, x, t, batch_size)[1]


def zero_velocity(model: Model) -> list[np.ndarray]:
    return [np.zeros_like(p) for p in model.parameters()]


def sgd_step(model: Model, grads: GradientSet, lr: float, momentum: float = 0.0,
             weight_decay: float = 0.0, velocity: list[np.ndarray] | None = None
             ) -> tuple[Model, list[np.ndarray]]:
    """SGD with heavy-ball momentum, updating ``model`` in place.

    ``v <- momentum * v + g + weight_decay * p``; ``p <- p - lr * v``.
    """
    if lr <= 0:
        raise ConfigError("learning rate must be positive")
    if not 0 <= momentum < 1:
        raise ConfigError("momentum must lie in [0, 1)")
    if weight_decay < 0:
        raise ConfigError("weight decay must be non-negative")
    params = model.parameters()
    if velocity is None:
        velocity = zero_velocity(model)
    if len(grads) != len(params) or len(velocity) != len(params):
        raise ShapeError("gradient/velocity sets do not match the model")
    new_velocity = []
    for p, g, v in zip(params, grads, velocity):
        v = momentum * v + g + weight_decay * p
        p -= lr * v
        new_velocity.append(v)
    return model, new_velocity


# --- persistence -----------------------------------------------------------

def dumps_model(model: Model) -> str:
    """Header ``dmt-model v1 <sizes...>`` then every parameter, one per line.

    Order: for each layer the weight matrix row-major (fan_in x fan_out),
    then its bias.  ``repr(float)`` is the shortest round-trip decimal.
    """
    lines = [f"{MODEL_MAGIC} " + " ".join(str(s) for s in model.layer_sizes)]
    for p in model.parameters():
        lines.extend(repr(float(v)) for v in p.ravel())
    return "\n".join(lines) + "\n"


def loads_model(text: str) -> Model:
    from .errors import ParseError

    header, _, body = text.partition("\n")
    if not header.startswith(MODEL_MAGIC + " "):
        raise ParseError("missing 'dmt-model v1' header", 1)
    try:
        sizes = [int(s) for s in header[len(MODEL_MAGIC):].split()]
        values = np.array([float(v) for v in body.split()], dtype=np.float64)
    except ValueError as exc:
        raise ParseError(f"bad model file: {exc}") from exc
    expected = sum(a * b + b for a, b in zip(sizes[:-1], sizes[1:]))
    if len(sizes) < 2 or values.size != expected:
        raise ParseError(f"expected {expected} parameters for sizes {sizes}, got {values.size}")
    layers, pos = [], 0
    for k, (a, b) in enumerate(zip(sizes[:-1], sizes[1:])):
        w = values[pos:pos + a * b].reshape(a, b)
        pos += a * b
        bias = values[pos:pos + b].copy()
        pos += b
        layers.append(Layer(w.copy(), bias, "identity" if k == len(sizes) - 2 else "relu"))
    return Model(layers)


def save_model(model: Model, path) -> None:
    Path(path).write_text(dumps_model(model))


def load_model(path) -> Model:
    return loads_model(Path(path).read_text())
