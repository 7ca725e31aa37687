"""Acceptance gate for the export tool, at the stated tolerances.

Each test prints one PASS/FAIL line with the measured evidence (visible with
pytest -s or in failure output). Fidelity is a dual-path comparison: the
source model (torch) against the exported file run by OpenCV's ONNX runtime.
The prompt-file criterion drives the recognition package end to end: export,
read back, initialize a gallery.
"""

from __future__ import annotations

import numpy as np

from model_export import (
    PROMPT_TEMPLATE,
    export_image_encoder,
    export_prompt_embeddings,
    get_checkpoint,
)
from model_export.export import onnx_embeddings, probe_images, source_embeddings

from facegallery.core import IdentityLabel
from facegallery.finetune import build_prompts, init_gallery, read_prompt_embeddings

FIDELITY_TOL = 1e-4
PROBE_COUNT = 10


def report_line(ok: bool, label: str, detail: str) -> None:
    print(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")


def test_export_fidelity_on_ten_probes(tmp_path):
    spec = get_checkpoint("tiny-cnn")
    result = export_image_encoder("tiny-cnn", tmp_path, probe_count=PROBE_COUNT)
    batch = probe_images(spec, PROBE_COUNT)
    want = source_embeddings(spec, batch)
    got = onnx_embeddings(result.model_path, batch)
    worst = float(np.abs(want - got).max())
    ok = worst <= FIDELITY_TOL
    report_line(
        ok,
        "export fidelity",
        f"max |source - exported| = {worst:.2e} over {PROBE_COUNT} probes (tol {FIDELITY_TOL:.0e})",
    )
    assert ok


def test_prompt_file_round_trips_through_gallery_init(tmp_path):
    # D comes from the exported manifest file itself, not the checkpoint spec.
    result = export_image_encoder("tiny-cnn", tmp_path / "enc", probe_count=1)
    manifest = dict(
        tuple(s.strip() for s in line.split("=", 1))
        for line in result.manifest_path.read_text().splitlines()
    )
    manifest_dim = int(manifest["dim"])
    names = [f"person_{i:02d}" for i in range(10)]
    pem = export_prompt_embeddings(names, PROMPT_TEMPLATE, tmp_path / "init.pem")

    pe = read_prompt_embeddings(pem)
    labels = [IdentityLabel(n, i) for i, n in enumerate(names)]
    gallery = init_gallery(labels, build_prompts(labels), pem, expected_dim=manifest_dim)
    norms = np.linalg.norm(gallery.class_embeddings, axis=1)
    ok = (
        pe.rows.shape == (10, manifest_dim)
        and gallery.num_classes == 10
        and gallery.dim == manifest_dim
        and bool(np.allclose(norms, 1.0))
    )
    report_line(
        ok,
        "prompt round trip",
        f"C = {gallery.num_classes}, D = {gallery.dim} (manifested {manifest_dim}), "
        f"rows unit-norm = {bool(np.allclose(norms, 1.0))}",
    )
    assert ok
