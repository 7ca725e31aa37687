"""Open-set prediction: known identity or Unknown via a confidence threshold.

"Confidence" is the maximum softmax probability over the gallery classes.
The threshold rule is literal: confidence below the threshold is rejected,
so a confidence exactly equal to the threshold passes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Embedding, Gallery, IdentityLabel
from .errors import ConfigError, DimensionError, NumericsError

PROB_SUM_ATOL = 1e-9


def softmax(logits: np.ndarray) -> np.ndarray:
    """Probability vector from one row of logits, max-subtracted for stability."""
    x = np.asarray(logits, dtype=np.float64).reshape(-1)
    if x.size == 0:
        raise DimensionError("softmax of an empty vector")
    if not np.all(np.isfinite(x)):
        raise NumericsError("softmax input contains non-finite values")
    z = np.exp(x - x.max())
    return z / z.sum()


@dataclass(frozen=True)
class RecognitionDecision:
    """Outcome of scoring one embedding (or one session) against the gallery.

    ``top_label`` is always the best-scoring identity; ``identified`` says
    whether its confidence cleared the threshold. The full probability
    vector is kept for diagnostics.
    """

    identified: bool
    top_label: IdentityLabel
    confidence: float
    probabilities: np.ndarray

    def __post_init__(self) -> None:
        p = np.asarray(self.probabilities, dtype=np.float64)
        p.setflags(write=False)
        object.__setattr__(self, "probabilities", p)
        if not 0.0 <= self.confidence <= 1.0:
            raise NumericsError(f"confidence {self.confidence} outside [0, 1]")
        if abs(float(p.sum()) - 1.0) > PROB_SUM_ATOL:
            raise NumericsError(f"probabilities sum to {p.sum()}, not 1")

    @property
    def label(self) -> IdentityLabel | None:
        return self.top_label if self.identified else None

    def format_line(self) -> str:
        name = self.top_label.name if self.identified else "UNKNOWN"
        return f"{name} {self.confidence:.4f}"


def argmax_lowest_id(scores: np.ndarray, labels: tuple[IdentityLabel, ...]) -> int:
    """Index of the maximum score; exact ties go to the lowest label id."""
    scores = np.asarray(scores)
    tied = np.flatnonzero(scores == scores.max())
    return int(min(tied, key=lambda i: labels[i].id))


def predict(emb: Embedding, gallery: Gallery, threshold: float = 0.8) -> RecognitionDecision:
    """Score one unit-norm embedding against every gallery class."""
    if not 0.0 < threshold < 1.0:
        raise ConfigError(f"threshold must be in (0, 1), got {threshold}")
    if emb.values.shape[0] != gallery.dim:
        raise DimensionError(
            f"embedding dim {emb.values.shape[0]} != gallery dim {gallery.dim}"
        )
    logits = gallery.logit_scale * (gallery.class_embeddings @ emb.values)
    probs = softmax(logits)
    best = argmax_lowest_id(probs, gallery.labels)
    confidence = float(probs[best])
    return RecognitionDecision(
        identified=confidence >= threshold,
        top_label=gallery.labels[best],
        confidence=confidence,
        probabilities=probs,
    )
