"""Deployment-protocol simulation: sessions, confusion counts, rate metrics.

One participant stands in front of the camera per session; the session-level
decision is a strict-majority vote over per-frame decisions. Each session
contributes exactly one confusion count:

  known participant    correct Identified -> TP, Unknown -> FN,
                       wrong Identified -> FP (a spurious acceptance)
  unknown participant  Unknown -> TN, any Identified -> FP

Session manifest format: one session per text line,
``<identity|UNKNOWN> <frame paths...>``, paths relative to the manifest,
blank lines and ``#`` comments ignored.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import ConfusionCounts, Embedding, Gallery, IdentityLabel
from .encoder import EmbeddingCache, EncoderBackend, embed_image
from .errors import DataFormatError, EmptyDatasetError, UndefinedMetricError
from .preprocess import prepare_face
from .recognize import RecognitionDecision, argmax_lowest_id, predict

UNKNOWN_TOKEN = "UNKNOWN"


@dataclass(frozen=True)
class Session:
    """One participant's presence: ordered frames, no overlap with others.

    ``participant`` is None for a person outside the gallery.
    """

    participant: IdentityLabel | None
    frames: tuple[Embedding, ...]
    duration_s: float = 5.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "frames", tuple(self.frames))
        if not self.frames:
            raise EmptyDatasetError("session has no frames")


def decide_session(s: Session, gallery: Gallery, threshold: float = 0.8) -> RecognitionDecision:
    """Majority vote over per-frame predictions.

    A label wins only with a strict majority (> half of the frames); anything
    short of that, including ties, resolves to Unknown. The reported
    confidence and probability vector are averaged over the frames that voted
    for the winning outcome (all frames when Unknown wins without any
    Unknown-voting frame).
    """
    frame_decisions = [predict(f, gallery, threshold) for f in s.frames]
    votes = Counter(d.top_label for d in frame_decisions if d.identified)
    n = len(frame_decisions)
    winner = None
    for label, count in votes.items():
        if 2 * count > n:
            winner = label
            break
    if winner is not None:
        chosen = [d for d in frame_decisions if d.identified and d.top_label == winner]
    else:
        chosen = [d for d in frame_decisions if not d.identified] or frame_decisions
    confidence = float(np.mean([d.confidence for d in chosen]))
    probs = np.mean([d.probabilities for d in chosen], axis=0)
    top = winner if winner is not None else gallery.labels[argmax_lowest_id(probs, gallery.labels)]
    return RecognitionDecision(
        identified=winner is not None,
        top_label=top,
        confidence=confidence,
        probabilities=probs,
    )


def count_outcome(participant_name: str | None, decision: RecognitionDecision) -> ConfusionCounts:
    """Confusion contribution of one session; identities compared by name.

    A wrong Identified on a known participant is a spurious acceptance and
    counts as FP, not FN.
    """
    if participant_name is None:
        return ConfusionCounts(fp=1) if decision.identified else ConfusionCounts(tn=1)
    if not decision.identified:
        return ConfusionCounts(fn=1)
    if decision.top_label.name == participant_name:
        return ConfusionCounts(tp=1)
    return ConfusionCounts(fp=1)


def score_sessions(
    sessions: list[Session], gallery: Gallery, threshold: float = 0.8
) -> ConfusionCounts:
    """One confusion count per session."""
    if not sessions:
        raise EmptyDatasetError("no sessions to score")
    counts = ConfusionCounts()
    for s in sessions:
        d = decide_session(s, gallery, threshold)
        name = s.participant.name if s.participant is not None else None
        counts = counts + count_outcome(name, d)
    return counts


def accuracy(c: ConfusionCounts) -> float:
    """100 * (TP + TN) / (TP + TN + FP + FN)."""
    if c.total() == 0:
        raise UndefinedMetricError("accuracy undefined for all-zero counts")
    return 100.0 * (c.tp + c.tn) / c.total()


def fpr(c: ConfusionCounts) -> float:
    """100 * FP / (FP + TN); undefined without negatives or false accepts."""
    if c.fp + c.tn == 0:
        raise UndefinedMetricError("FPR undefined: FP + TN = 0")
    return 100.0 * c.fp / (c.fp + c.tn)


def fnr(c: ConfusionCounts) -> float:
    """100 * FN / (FN + TP); undefined without known-positive outcomes."""
    if c.fn + c.tp == 0:
        raise UndefinedMetricError("FNR undefined: FN + TP = 0")
    return 100.0 * c.fn / (c.fn + c.tp)


def training_accuracy(cache: EmbeddingCache, gallery: Gallery) -> float:
    """Closed-set argmax accuracy of held-out embeddings, in percent."""
    if len(cache) == 0:
        raise EmptyDatasetError("evaluation split is empty")
    embs = cache.embeddings()
    logits = gallery.logit_scale * (embs @ gallery.class_embeddings.T)
    correct = 0
    for row, want in zip(logits, cache.label_ids()):
        best = argmax_lowest_id(row, gallery.labels)
        if gallery.labels[best].id == want:
            correct += 1
    return 100.0 * correct / len(cache)


@dataclass(frozen=True)
class SessionOutcome:
    participant: str | None
    decision: RecognitionDecision


@dataclass(frozen=True)
class EvaluationReport:
    """Everything needed to reproduce one row of the comparison table."""

    model: str
    outcomes: tuple[SessionOutcome, ...]
    counts: ConfusionCounts
    training_accuracy: float
    deployment_accuracy: float
    fpr: float
    fnr: float
    config: tuple[tuple[str, str], ...] = field(default=())

    def __post_init__(self) -> None:
        if self.deployment_accuracy != accuracy(self.counts):
            raise DataFormatError("deployment accuracy does not match the counts")
        if self.fpr != fpr(self.counts) or self.fnr != fnr(self.counts):
            raise DataFormatError("rates do not match the counts")


def make_report(
    model: str,
    outcomes: list[SessionOutcome],
    counts: ConfusionCounts,
    train_acc: float,
    config: dict[str, str] | None = None,
) -> EvaluationReport:
    cfg = tuple(sorted((config or {}).items()))
    return EvaluationReport(
        model=model,
        outcomes=tuple(outcomes),
        counts=counts,
        training_accuracy=train_acc,
        deployment_accuracy=accuracy(counts),
        fpr=fpr(counts),
        fnr=fnr(counts),
        config=cfg,
    )


@dataclass(frozen=True)
class ReportRow:
    """Just the table cells of a report, as re-read from CSV."""

    model: str
    training_accuracy: float
    deployment_accuracy: float
    fpr: float
    fnr: float


_CSV_HEADER = "model,training_accuracy,deployment_accuracy,fpr,fnr"

_COLUMNS = (
    ("Training Accuracy", "training_accuracy", True),
    ("Deployment Accuracy", "deployment_accuracy", True),
    ("FPR", "fpr", False),
    ("FNR", "fnr", False),
)


def render_report(reports: list[EvaluationReport] | list[ReportRow]) -> str:
    """Aligned comparison table; the best value per column is starred.

    Higher is better for the accuracies, lower for FPR and FNR.
    """
    if not reports:
        raise EmptyDatasetError("no reports to render")
    best = {}
    for _, attr, higher in _COLUMNS:
        vals = [getattr(r, attr) for r in reports]
        best[attr] = max(vals) if higher else min(vals)
    headers = ["Model"] + [title for title, _, _ in _COLUMNS]
    rows = []
    for r in reports:
        cells = [r.model]
        for _, attr, _ in _COLUMNS:
            v = getattr(r, attr)
            mark = "*" if v == best[attr] else " "
            cells.append(f"{v:.2f}{mark}")
        rows.append(cells)
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(w) for h, w in zip(headers, widths)).rstrip(),
        "  ".join("-" * w for w in widths),
    ]
    for row in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip())
    lines.append("(* best per column; accuracies higher is better, rates lower)")
    return "\n".join(lines)


def report_csv(reports: list[EvaluationReport] | list[ReportRow]) -> str:
    """Same table as CSV with full-precision values for lossless re-parse."""
    if not reports:
        raise EmptyDatasetError("no reports to render")
    lines = [_CSV_HEADER]
    for r in reports:
        lines.append(
            f"{r.model},{r.training_accuracy!r},{r.deployment_accuracy!r},"
            f"{r.fpr!r},{r.fnr!r}"
        )
    return "\n".join(lines) + "\n"


def parse_report_csv(text: str) -> list[ReportRow]:
    """Inverse of report_csv; raises DataFormatError on malformed input."""
    lines = [ln for ln in text.strip().splitlines() if ln]
    if not lines or lines[0] != _CSV_HEADER:
        raise DataFormatError("not a report CSV (bad header)")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != 5:
            raise DataFormatError(f"report CSV row needs 5 cells, got {ln!r}")
        try:
            rows.append(ReportRow(parts[0], *(float(p) for p in parts[1:])))
        except ValueError as exc:
            raise DataFormatError(f"non-numeric report cell in {ln!r}") from exc
    return rows


def parse_session_manifest(path: str | Path) -> list[tuple[str | None, list[str]]]:
    """(participant name or None, frame paths) per manifest line."""
    entries = []
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        tokens = line.split()
        if len(tokens) < 2:
            raise DataFormatError(f"{path}:{lineno}: need an identity and at least one frame")
        name = None if tokens[0] == UNKNOWN_TOKEN else tokens[0]
        entries.append((name, tokens[1:]))
    if not entries:
        raise EmptyDatasetError(f"session manifest {path} lists no sessions")
    return entries


def load_sessions(
    manifest_path: str | Path, backend: EncoderBackend, duration_s: float = 5.0
) -> tuple[list[Session], list[str]]:
    """Embed every frame of every session listed in a manifest.

    Frame paths resolve relative to the manifest's directory. Returns the
    sessions plus any per-frame alignment warnings.
    """
    root = Path(manifest_path).parent
    sessions = []
    warnings = []
    for name, frame_paths in parse_session_manifest(manifest_path):
        label = IdentityLabel(name, 0) if name is not None else None
        frames = []
        for rel in frame_paths:
            face, warn = prepare_face(root, rel, label, size=backend.input_size)
            if warn:
                warnings.append(warn)
            frames.append(embed_image(backend, face))
        sessions.append(Session(label, tuple(frames), duration_s))
    return sessions, warnings
