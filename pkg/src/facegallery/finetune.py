"""Single-shot fine-tuning of per-class embeddings over a frozen encoder.

The trainable object is the gallery's C x D class-embedding matrix. Logits
are scaled cosine similarities, the loss is weighted cross-entropy with mean
reduction over the batch, and the optimizer is decoupled AdamW followed by a
projection of each row back onto the unit sphere.

Gallery checkpoint file (magic ``GAL1``, little-endian)
-------------------------------------------------------
::

    magic        4 bytes  b"GAL1"
    num_classes  u32
    dim          u32
    logit_scale  f64
    per class:
        label_id u32
        name     u16 length + UTF-8
        prompt   u32 length + UTF-8
    rows         num_classes * dim * f64

Prompt-embedding file (magic ``PEM1``, little-endian)
-----------------------------------------------------
::

    magic     4 bytes  b"PEM1"
    count     u32
    dim       u32
    template  u32 length + UTF-8
    rows      count * dim * f32   (raw; normalized on gallery init)
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import Gallery, HyperParams, IdentityLabel, TargetBatch, l2_normalize
from .encoder import EmbeddingCache
from .errors import (
    DataFormatError,
    DimensionError,
    EmptyDatasetError,
    InsufficientClassesError,
    NumericsError,
    ScheduleError,
    TemplateError,
)

PROMPT_TEMPLATE = "This is the image of a person named {}"
GALLERY_MAGIC = b"GAL1"
PROMPT_MAGIC = b"PEM1"


def build_prompts(labels: list[IdentityLabel], template: str = PROMPT_TEMPLATE) -> list[str]:
    """One prompt per label, substituting the name into the template."""
    if template.count("{}") != 1:
        raise TemplateError(
            f"template must contain exactly one {{}} placeholder, got {template!r}"
        )
    return [template.replace("{}", lab.name) for lab in labels]


# --- prompt-embedding file ----------------------------------------------------


@dataclass(frozen=True)
class PromptEmbeddings:
    """Raw text-side vectors for templated prompts, one row per class."""

    template: str
    rows: np.ndarray  # C x D, raw (pre-normalization)

    def __post_init__(self) -> None:
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise DimensionError(f"prompt embeddings must be 2-D, got shape {rows.shape}")
        if not np.all(np.isfinite(rows)):
            raise DataFormatError("prompt embeddings contain non-finite values")
        rows.setflags(write=False)
        object.__setattr__(self, "rows", rows)


def write_prompt_embeddings(path: str | Path, pe: PromptEmbeddings) -> None:
    c, d = pe.rows.shape
    enc = pe.template.encode()
    out = struct.pack("<4sIII", PROMPT_MAGIC, c, d, len(enc)) + enc
    out += pe.rows.astype("<f4").tobytes()
    Path(path).write_bytes(out)


def read_prompt_embeddings(path: str | Path) -> PromptEmbeddings:
    buf = Path(path).read_bytes()
    if len(buf) < 16 or buf[:4] != PROMPT_MAGIC:
        raise DataFormatError(f"{path} is not a prompt-embedding file")
    _, c, d, tlen = struct.unpack("<4sIII", buf[:16])
    if len(buf) != 16 + tlen + 4 * c * d:
        raise DataFormatError(f"{path} has wrong size for {c} x {d} rows")
    template = buf[16 : 16 + tlen].decode()
    rows = np.frombuffer(buf[16 + tlen :], dtype="<f4").reshape(c, d)
    return PromptEmbeddings(template, rows.astype(np.float64))


# --- gallery initialization and checkpointing ---------------------------------


@dataclass(frozen=True)
class RandomInit:
    """Seeded random unit-vector initialization for the gallery."""

    seed: int
    dim: int


def init_gallery(
    labels: list[IdentityLabel],
    prompts: list[str],
    init_source: str | Path | RandomInit,
    logit_scale: float = 100.0,
    expected_dim: int | None = None,
) -> Gallery:
    """Gallery with unit-norm rows from a prompt-embedding file or a seed."""
    if isinstance(init_source, RandomInit):
        rng = np.random.default_rng(init_source.seed)
        raw = rng.standard_normal((len(labels), init_source.dim))
    else:
        pe = read_prompt_embeddings(init_source)
        if pe.rows.shape[0] != len(labels):
            raise DimensionError(
                f"init file has {pe.rows.shape[0]} rows for {len(labels)} labels"
            )
        raw = pe.rows
    if expected_dim is not None and raw.shape[1] != expected_dim:
        raise DimensionError(
            f"init vectors have dim {raw.shape[1]}, encoder produces {expected_dim}"
        )
    rows = np.stack([l2_normalize(r).values for r in raw])
    return Gallery(rows, tuple(labels), tuple(prompts), logit_scale)


def save_gallery(gallery: Gallery, path: str | Path) -> None:
    out = bytearray()
    out += struct.pack(
        "<4sIId", GALLERY_MAGIC, gallery.num_classes, gallery.dim, gallery.logit_scale
    )
    for lab, prompt in zip(gallery.labels, gallery.prompts):
        name = lab.name.encode()
        ptxt = prompt.encode()
        out += struct.pack("<IH", lab.id, len(name)) + name
        out += struct.pack("<I", len(ptxt)) + ptxt
    out += gallery.class_embeddings.astype("<f8").tobytes()
    Path(path).write_bytes(bytes(out))


def load_gallery(path: str | Path) -> Gallery:
    buf = Path(path).read_bytes()
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(buf):
            raise DataFormatError(f"truncated gallery file {path}")
        chunk = buf[off : off + n]
        off += n
        return chunk

    magic, c, d, scale = struct.unpack("<4sIId", take(20))
    if magic != GALLERY_MAGIC:
        raise DataFormatError(f"{path} is not a gallery file (bad magic {magic!r})")
    labels = []
    prompts = []
    for _ in range(c):
        label_id, nlen = struct.unpack("<IH", take(6))
        name = take(nlen).decode()
        (plen,) = struct.unpack("<I", take(4))
        prompts.append(take(plen).decode())
        labels.append(IdentityLabel(name, label_id))
    rows = np.frombuffer(take(8 * c * d), dtype="<f8").reshape(c, d)
    if off != len(buf):
        raise DataFormatError(f"{path} has {len(buf) - off} trailing bytes")
    return Gallery(rows.astype(np.float64), tuple(labels), tuple(prompts), scale)


# --- loss, gradient, schedule, optimizer --------------------------------------


def compute_logits(image_embs: np.ndarray, gallery: Gallery) -> np.ndarray:
    """Scaled cosine logits: x[n, c] = logit_scale * <image_n, class_c>."""
    e = np.asarray(image_embs, dtype=np.float64)
    if e.ndim != 2 or e.shape[1] != gallery.dim:
        raise DimensionError(
            f"embeddings have shape {e.shape}, gallery dim is {gallery.dim}"
        )
    return gallery.logit_scale * (e @ gallery.class_embeddings.T)


def _check_batch(logits: np.ndarray, targets: TargetBatch) -> np.ndarray:
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got shape {x.shape}")
    if x.shape != (len(targets.indices), targets.num_classes):
        raise DimensionError(
            f"logits shape {x.shape} does not match batch "
            f"({len(targets.indices)} samples, {targets.num_classes} classes)"
        )
    if not np.all(np.isfinite(x)):
        raise NumericsError("logits contain non-finite values")
    return x


def _log_softmax(x: np.ndarray) -> np.ndarray:
    z = x - x.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def cross_entropy_loss(logits: np.ndarray, targets: TargetBatch) -> float:
    """Weighted cross-entropy with mean reduction over the batch.

    L = (1/N) sum_n l_n with l_n = -sum_c w_c * log softmax(x_n)_c * y_{n,c},
    which for one-hot targets is -w_{t_n} * log softmax(x_n)_{t_n}. The
    softmax is stabilized by subtracting each row's maximum.
    """
    x = _check_batch(logits, targets)
    logp = _log_softmax(x)
    n = x.shape[0]
    picked = logp[np.arange(n), targets.indices]
    return float(-(targets.weights[targets.indices] * picked).sum() / n)


def loss_gradient(
    logits: np.ndarray,
    targets: TargetBatch,
    image_embs: np.ndarray,
    gallery: Gallery,
) -> np.ndarray:
    """Analytic gradient of cross_entropy_loss wrt the class-embedding rows.

    With p = softmax(x), a_n = w_{t_n} and one-hot y:
    dL/dx[n, c] = (a_n * p[n, c] - w_c * y[n, c]) / N, and since
    x = scale * E G^T, dL/dG = scale * (dL/dx)^T E. For w = 1 this reduces to
    (scale / N) * (p - y)^T E.
    """
    x = _check_batch(logits, targets)
    e = np.asarray(image_embs, dtype=np.float64)
    n = x.shape[0]
    if e.shape != (n, gallery.dim):
        raise DimensionError(
            f"embeddings shape {e.shape} does not match {n} samples of dim {gallery.dim}"
        )
    p = np.exp(_log_softmax(x))
    a = targets.weights[targets.indices]
    dx = p * a[:, None]
    dx[np.arange(n), targets.indices] -= targets.weights[targets.indices]
    dx /= n
    return gallery.logit_scale * (dx.T @ e)


def cosine_lr(step: int, total_steps: int, lr0: float, lr_min: float = 0.0) -> float:
    """Cosine annealing from lr0 at step 0 down to lr_min at total_steps."""
    if total_steps < 1:
        raise ScheduleError(f"total_steps must be >= 1, got {total_steps}")
    if not 0 <= step <= total_steps:
        raise ScheduleError(f"step {step} outside schedule range [0, {total_steps}]")
    if step == 0:
        return lr0
    if step == total_steps:
        return lr_min
    return lr_min + (lr0 - lr_min) * (1.0 + math.cos(math.pi * step / total_steps)) / 2.0


@dataclass
class OptimizerState:
    """AdamW moment accumulators; t counts completed steps."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, shape: tuple[int, ...]) -> "OptimizerState":
        return cls(np.zeros(shape), np.zeros(shape), 0)


def adamw_update(
    theta: np.ndarray,
    grad: np.ndarray,
    state: OptimizerState,
    hp: HyperParams,
    lr: float,
) -> np.ndarray:
    """One raw decoupled-AdamW step; mutates state, returns new parameters.

    m <- b1 m + (1 - b1) g;  v <- b2 v + (1 - b2) g^2; bias-corrected
    m_hat, v_hat; theta <- theta - lr * (m_hat / (sqrt(v_hat) + eps)
    + weight_decay * theta). No normalization here; adamw_step adds the
    projection back onto the unit sphere.
    """
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != np.shape(theta):
        raise DimensionError(f"gradient shape {g.shape} != parameter shape {np.shape(theta)}")
    if not np.all(np.isfinite(g)):
        raise NumericsError("gradient contains non-finite values")
    state.m = hp.beta1 * state.m + (1.0 - hp.beta1) * g
    state.v = hp.beta2 * state.v + (1.0 - hp.beta2) * g * g
    state.t += 1
    mhat = state.m / (1.0 - hp.beta1**state.t)
    vhat = state.v / (1.0 - hp.beta2**state.t)
    return theta - lr * (mhat / (np.sqrt(vhat) + hp.epsilon) + hp.weight_decay * theta)


def adamw_step(
    gallery: Gallery,
    grads: np.ndarray,
    state: OptimizerState,
    hp: HyperParams,
    lr: float,
) -> tuple[Gallery, OptimizerState]:
    """AdamW update of the class rows followed by row renormalization."""
    raw = adamw_update(gallery.class_embeddings, grads, state, hp, lr)
    norms = np.linalg.norm(raw, axis=1, keepdims=True)
    if np.any(norms < 1e-300) or not np.all(np.isfinite(norms)):
        raise NumericsError("a class row collapsed to zero or diverged during the update")
    rows = raw / norms
    return Gallery(rows, gallery.labels, gallery.prompts, gallery.logit_scale), state


# --- training loop -------------------------------------------------------------


@dataclass(frozen=True)
class TrainRecord:
    step: int
    lr: float
    loss: float
    batch_accuracy: float  # percent


@dataclass(frozen=True)
class TrainHistory:
    records: tuple[TrainRecord, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        for i, r in enumerate(self.records):
            if r.step != i:
                raise DataFormatError(f"history steps not contiguous at index {i}")

    def __len__(self) -> int:
        return len(self.records)

    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def save_csv(self, path: str | Path) -> None:
        lines = ["step,lr,loss,batch_accuracy"]
        for r in self.records:
            lines.append(f"{r.step},{r.lr!r},{r.loss!r},{r.batch_accuracy!r}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load_csv(cls, path: str | Path) -> "TrainHistory":
        lines = Path(path).read_text(encoding="utf-8").strip().splitlines()
        if not lines or lines[0] != "step,lr,loss,batch_accuracy":
            raise DataFormatError(f"{path} is not a training-history CSV")
        records = []
        for line in lines[1:]:
            step, lr, loss, acc = line.split(",")
            records.append(TrainRecord(int(step), float(lr), float(loss), float(acc)))
        return cls(tuple(records))


def finetune_single_shot(
    cache: EmbeddingCache,
    gallery: Gallery,
    hp: HyperParams,
    seed: int,
) -> tuple[Gallery, TrainHistory]:
    """Fine-tune the gallery on a train-split cache for hp.epochs passes.

    Minibatches of hp.batch_size are drawn in a seeded shuffle per epoch; the
    last partial batch is kept. The learning rate follows cosine annealing
    over total_steps = epochs * ceil(N / batch_size).
    """
    if len(cache) == 0:
        raise EmptyDatasetError("training split is empty")
    if gallery.num_classes < 2:
        raise InsufficientClassesError("fine-tuning needs at least 2 classes")
    if cache.dim != gallery.dim:
        raise DimensionError(f"cache dim {cache.dim} != gallery dim {gallery.dim}")

    id_to_class = {lab.id: c for c, lab in enumerate(gallery.labels)}
    try:
        class_idx = np.array([id_to_class[i] for i in cache.label_ids()], dtype=np.int64)
    except KeyError as exc:
        raise DataFormatError(f"cache references label id {exc} missing from gallery") from exc

    embs = cache.embeddings()
    n = embs.shape[0]
    steps_per_epoch = -(-n // hp.batch_size)
    total_steps = hp.epochs * steps_per_epoch
    rng = np.random.default_rng(seed)
    state = OptimizerState.zeros(gallery.class_embeddings.shape)
    records = []
    step = 0
    for _ in range(hp.epochs):
        order = rng.permutation(n)
        for start in range(0, n, hp.batch_size):
            pick = order[start : start + hp.batch_size]
            batch = embs[pick]
            tb = TargetBatch(class_idx[pick], gallery.num_classes)
            lr = cosine_lr(step, total_steps, hp.learning_rate_initial, hp.lr_min)
            logits = compute_logits(batch, gallery)
            loss = cross_entropy_loss(logits, tb)
            acc = 100.0 * float(np.mean(np.argmax(logits, axis=1) == tb.indices))
            grad = loss_gradient(logits, tb, batch, gallery)
            gallery, state = adamw_step(gallery, grad, state, hp, lr)
            records.append(TrainRecord(step, lr, loss, acc))
            step += 1
    return gallery, TrainHistory(tuple(records))
