"""Export operations: ONNX encoder + manifest, and prompt-embedding files.

Both outputs follow the consumer's file contracts exactly: the manifest is a
"key = value" text file with the keys the recognition pipeline's backend
loader reads, and the prompt file is the PEM1 binary layout (little-endian
magic "PEM1", u32 row count, u32 dim, u32 template length, UTF-8 template,
float32 row data). Embeddings are written pre-normalization; the consumer
owns normalization.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import cv2
import numpy as np
import torch

from .checkpoints import CheckpointSpec, build_weights, get_checkpoint, source_model
from .errors import ExportError
from .onnx_writer import encoder_model_bytes

PROMPT_TEMPLATE = "This is the image of a person named {}"
PEM_MAGIC = b"PEM1"
FIDELITY_TOL = 1e-4

MODEL_FILENAME = "model.onnx"
MANIFEST_FILENAME = "backend.cfg"


@dataclass(frozen=True)
class ExportResult:
    model_path: Path
    manifest_path: Path
    spec: CheckpointSpec
    fidelity: float  # max |source - exported| over the probe batch


def probe_images(spec: CheckpointSpec, count: int) -> np.ndarray:
    """Deterministic normalized input tensors (count, 3, S, S) float32."""
    rng = np.random.default_rng([spec.seed, 0xBEEF])
    return rng.standard_normal((count, 3, spec.input_size, spec.input_size)).astype(np.float32)


def source_embeddings(spec: CheckpointSpec, batch: np.ndarray) -> np.ndarray:
    module = source_model(spec)
    with torch.no_grad():
        return module(torch.from_numpy(batch)).numpy()


def onnx_embeddings(model_path: str | Path, batch: np.ndarray) -> np.ndarray:
    net = cv2.dnn.readNetFromONNX(str(model_path))
    rows = []
    for x in batch:
        net.setInput(x[None, ...])
        rows.append(net.forward()[0])
    return np.stack(rows)


def export_fidelity(spec: CheckpointSpec, model_path: str | Path, probe_count: int) -> float:
    batch = probe_images(spec, probe_count)
    want = source_embeddings(spec, batch)
    got = onnx_embeddings(model_path, batch)
    return float(np.abs(want - got).max())


def _manifest_text(spec: CheckpointSpec) -> str:
    return (
        "backend = onnx\n"
        f"model = {MODEL_FILENAME}\n"
        f"dim = {spec.dim}\n"
        f"name = {spec.identifier}\n"
        f"input_size = {spec.input_size}\n"
        f"channel_order = {spec.channel_order}\n"
        f"mean = {' '.join(repr(v) for v in spec.mean)}\n"
        f"std = {' '.join(repr(v) for v in spec.std)}\n"
        f"source = {spec.identifier} seed={spec.seed}\n"
    )


def export_image_encoder(
    checkpoint: str, out_dir: str | Path, probe_count: int = 3
) -> ExportResult:
    """Write model.onnx + backend.cfg and verify the export reproduces the source.

    The verification runs the same probe batch through the source model and
    through the exported file (via the same runtime the consumer uses) and
    compares embeddings; a mismatch beyond FIDELITY_TOL fails the export.
    """
    spec = get_checkpoint(checkpoint)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    model_path = out / MODEL_FILENAME
    model_path.write_bytes(encoder_model_bytes(build_weights(spec), spec.input_size))
    manifest_path = out / MANIFEST_FILENAME
    manifest_path.write_text(_manifest_text(spec), encoding="utf-8")
    try:
        fidelity = export_fidelity(spec, model_path, probe_count)
    except cv2.error as exc:
        raise ExportError(f"exported model failed to load: {exc}") from exc
    if fidelity > FIDELITY_TOL:
        raise ExportError(
            f"export fidelity {fidelity:.2e} exceeds tolerance {FIDELITY_TOL:.0e}"
        )
    return ExportResult(model_path, manifest_path, spec, fidelity)


def prompt_vectors(names: list[str], template: str, spec: CheckpointSpec) -> np.ndarray:
    """One deterministic embedding per templated prompt, pre-normalization.

    Each row is a pure function of (checkpoint identifier, full prompt), so
    renaming or re-templating changes the vector and reruns do not.
    """
    if not names:
        raise ExportError("prompt export needs at least one name")
    if template.count("{}") != 1:
        raise ExportError(f"template needs exactly one {{}} placeholder: {template!r}")
    rows = np.empty((len(names), spec.dim), dtype=np.float32)
    for i, name in enumerate(names):
        prompt = template.replace("{}", name)
        digest = hashlib.sha256(f"{spec.identifier}\0{prompt}".encode("utf-8")).digest()
        words = np.frombuffer(digest[:16], dtype="<u4")
        rng = np.random.default_rng([spec.seed, *words.tolist()])
        rows[i] = rng.standard_normal(spec.dim).astype(np.float32)
    return rows


def export_prompt_embeddings(
    names: list[str],
    template: str,
    out_path: str | Path,
    checkpoint: str = "tiny-cnn",
) -> Path:
    """Write the PEM1 prompt-embedding file for the given names."""
    spec = get_checkpoint(checkpoint)
    rows = prompt_vectors(names, template, spec)
    raw = template.encode("utf-8")
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("wb") as fh:
        fh.write(struct.pack("<4sIII", PEM_MAGIC, rows.shape[0], rows.shape[1], len(raw)))
        fh.write(raw)
        fh.write(np.ascontiguousarray(rows, dtype="<f4").tobytes())
    return out
