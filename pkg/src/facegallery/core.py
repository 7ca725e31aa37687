"""Core domain types and numeric primitives.

Every type here is an immutable value object: numpy buffers are frozen
(``writeable = False``) at construction, so instances can be shared across
threads without synchronization.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, DimensionError, NormalizationError

# Tolerance for "this vector is unit-norm".
UNIT_NORM_ATOL = 1e-6


def _freeze(a: np.ndarray) -> np.ndarray:
    out = np.asarray(a, dtype=np.float64)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class IdentityLabel:
    """One enrolled identity: human-readable name plus dense class id."""

    name: str
    id: int

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("identity name must be non-empty")
        if self.id < 0:
            raise ValueError(f"identity id must be >= 0, got {self.id}")


@dataclass(frozen=True)
class Embedding:
    """A real feature vector, optionally guaranteed unit-norm."""

    values: np.ndarray
    normalized: bool = False

    def __post_init__(self) -> None:
        v = _freeze(self.values)
        if v.ndim != 1 or v.size == 0:
            raise DimensionError(f"embedding must be a non-empty 1-D vector, got shape {v.shape}")
        if self.normalized:
            norm = float(np.linalg.norm(v))
            if abs(norm - 1.0) > UNIT_NORM_ATOL:
                raise NormalizationError(f"embedding flagged normalized but |v| = {norm!r}")
        object.__setattr__(self, "values", v)

    @property
    def dim(self) -> int:
        return int(self.values.shape[0])


def l2_normalize(v: np.ndarray | list[float]) -> Embedding:
    """Scale ``v`` to unit Euclidean norm, preserving direction.

    Raises NormalizationError for the zero vector (and anything numerically
    indistinguishable from it).
    """
    arr = np.asarray(v, dtype=np.float64)
    norm = float(np.linalg.norm(arr))
    if not np.isfinite(norm) or norm < 1e-300:
        raise NormalizationError("cannot normalize a zero or non-finite vector")
    return Embedding(arr / norm, normalized=True)


def cosine_similarity(a: Embedding, b: Embedding) -> float:
    """Dot product of two unit embeddings; symmetric, in [-1, 1]."""
    if not (a.normalized and b.normalized):
        raise NormalizationError("cosine_similarity requires normalized embeddings")
    if a.dim != b.dim:
        raise DimensionError(f"dimension mismatch: {a.dim} vs {b.dim}")
    return float(np.dot(a.values, b.values))


@dataclass(frozen=True)
class Gallery:
    """The trainable object: one unit-norm class embedding per identity.

    ``class_embeddings`` is C x D; row c belongs to ``labels[c]`` which was
    built from ``prompts[c]``. ``logit_scale`` is the positive temperature
    multiplier applied to cosine similarities before softmax.
    """

    class_embeddings: np.ndarray
    labels: list[IdentityLabel]
    prompts: list[str]
    logit_scale: float = 100.0

    def __post_init__(self) -> None:
        m = _freeze(self.class_embeddings)
        if m.ndim != 2:
            raise DimensionError(f"class_embeddings must be 2-D, got shape {m.shape}")
        if not (m.shape[0] == len(self.labels) == len(self.prompts)):
            raise DimensionError(
                f"row/label/prompt counts disagree: {m.shape[0]}/{len(self.labels)}/{len(self.prompts)}"
            )
        if self.logit_scale <= 0:
            raise ConfigError(f"logit_scale must be > 0, got {self.logit_scale}")
        norms = np.linalg.norm(m, axis=1)
        if m.shape[0] and np.max(np.abs(norms - 1.0)) > UNIT_NORM_ATOL:
            raise NormalizationError("gallery rows must be unit-norm")
        object.__setattr__(self, "class_embeddings", m)
        object.__setattr__(self, "labels", list(self.labels))
        object.__setattr__(self, "prompts", list(self.prompts))

    @property
    def num_classes(self) -> int:
        return int(self.class_embeddings.shape[0])

    @property
    def dim(self) -> int:
        return int(self.class_embeddings.shape[1])

    def label_names(self) -> list[str]:
        return [lab.name for lab in self.labels]


@dataclass(frozen=True)
class TargetBatch:
    """Training targets: one class index per batch row plus per-class weights.

    Equivalent to a one-hot N x C matrix; ``one_hot()`` materializes it.
    """

    indices: np.ndarray
    num_classes: int
    weights: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1 or idx.size == 0:
            raise DimensionError("targets must be a non-empty 1-D index vector")
        if self.num_classes < 2:
            raise DimensionError(f"need at least 2 classes, got {self.num_classes}")
        if idx.min() < 0 or idx.max() >= self.num_classes:
            raise DimensionError("target index out of range")
        w = self.weights
        w = np.ones(self.num_classes) if w is None else np.asarray(w, dtype=np.float64)
        if w.shape != (self.num_classes,):
            raise DimensionError(f"weights must have shape ({self.num_classes},), got {w.shape}")
        if np.any(w <= 0):
            raise ValueError("class weights must be positive")
        idx.setflags(write=False)
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "weights", _freeze(w))

    @classmethod
    def from_one_hot(cls, y: np.ndarray, weights: np.ndarray | None = None) -> "TargetBatch":
        y = np.asarray(y)
        if y.ndim != 2 or not np.array_equal(y.sum(axis=1), np.ones(y.shape[0])):
            raise DimensionError("one-hot rows must each sum to exactly 1")
        return cls(np.argmax(y, axis=1), y.shape[1], weights)

    @property
    def batch_size(self) -> int:
        return int(self.indices.shape[0])

    def one_hot(self) -> np.ndarray:
        y = np.zeros((self.batch_size, self.num_classes))
        y[np.arange(self.batch_size), self.indices] = 1.0
        return y


@dataclass(frozen=True)
class ConfusionCounts:
    """TP/TN/FP/FN tallies, one count per evaluation session."""

    tp: int = 0
    tn: int = 0
    fp: int = 0
    fn: int = 0

    def __post_init__(self) -> None:
        for name in ("tp", "tn", "fp", "fn"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.tn + other.tn, self.fp + other.fp, self.fn + other.fn
        )


@dataclass(frozen=True)
class HyperParams:
    """Training and deployment knobs; defaults are the reference run."""

    learning_rate_initial: float = 5e-06
    weight_decay: float = 1e-03
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-08
    batch_size: int = 16
    epochs: int = 1
    lr_min: float = 0.0
    confidence_threshold: float = 0.80
    logit_scale: float = 100.0

    def __post_init__(self) -> None:
        if not (0 < self.beta1 < 1 and 0 < self.beta2 < 1):
            raise ConfigError("beta1 and beta2 must lie in (0, 1)")
        if self.learning_rate_initial <= 0:
            raise ConfigError("learning_rate_initial must be > 0")
        if self.lr_min < 0:
            raise ConfigError("lr_min must be >= 0")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if self.epsilon <= 0:
            raise ConfigError("epsilon must be > 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not (0 < self.confidence_threshold < 1):
            raise ConfigError("confidence_threshold must lie in (0, 1)")
        if self.logit_scale <= 0:
            raise ConfigError("logit_scale must be > 0")


# --- key/value text files -------------------------------------------------
#
# One `key = value` pair per line; blank lines and `#` comments ignored.
# Used for the hyperparameter config file and encoder backend manifests.

def read_kv_file(path: str | Path) -> dict[str, str]:
    pairs: dict[str, str] = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        pairs[key.strip()] = value.strip()
    return pairs


def write_kv_file(path: str | Path, pairs: dict[str, str], header: str | None = None) -> None:
    lines = [f"# {header}"] if header else []
    lines += [f"{k} = {v}" for k, v in pairs.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


_INT_FIELDS = {"batch_size", "epochs"}


def save_config(hp: HyperParams, path: str | Path) -> None:
    """Write every hyperparameter as `key = value` text."""
    pairs = {f.name: repr(getattr(hp, f.name)) for f in dataclasses.fields(hp)}
    write_kv_file(path, pairs, header="facegallery hyperparameters")


def load_config(path: str | Path) -> HyperParams:
    """Read a config file; missing keys keep their defaults, unknown keys fail."""
    known = {f.name for f in dataclasses.fields(HyperParams)}
    kwargs: dict[str, float | int] = {}
    for key, value in read_kv_file(path).items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            kwargs[key] = int(value) if key in _INT_FIELDS else float(value)
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r}") from exc
    return HyperParams(**kwargs)
