"""Prompt-embedding files: layout, determinism, and the consumer round trip.

The binary layout is checked against a raw struct parse (independent of both
writer and consumer), and the files are read back with the recognition
package, which owns the format.
"""

from __future__ import annotations

import struct

import numpy as np
import pytest

from model_export import (
    PROMPT_TEMPLATE,
    ExportError,
    export_prompt_embeddings,
    get_checkpoint,
    prompt_vectors,
)

from facegallery.core import IdentityLabel
from facegallery.finetune import build_prompts, init_gallery, read_prompt_embeddings

NAMES = [f"person_{i:02d}" for i in range(10)]


class TestPromptVectors:
    def test_shape_and_dtype(self):
        spec = get_checkpoint("tiny-cnn")
        rows = prompt_vectors(NAMES, PROMPT_TEMPLATE, spec)
        assert rows.shape == (10, spec.dim)
        assert rows.dtype == np.float32
        assert np.all(np.isfinite(rows))

    def test_each_row_is_a_pure_function_of_its_name(self):
        spec = get_checkpoint("tiny-cnn")
        batch = prompt_vectors(NAMES, PROMPT_TEMPLATE, spec)
        for i, name in enumerate(NAMES):
            single = prompt_vectors([name], PROMPT_TEMPLATE, spec)
            assert np.array_equal(single[0], batch[i])

    def test_different_names_differ(self):
        spec = get_checkpoint("tiny-cnn")
        rows = prompt_vectors(["alice", "bob"], PROMPT_TEMPLATE, spec)
        assert not np.array_equal(rows[0], rows[1])

    def test_different_templates_differ(self):
        spec = get_checkpoint("tiny-cnn")
        a = prompt_vectors(NAMES, PROMPT_TEMPLATE, spec)
        b = prompt_vectors(NAMES, "a photo of {}", spec)
        assert not np.array_equal(a, b)

    def test_empty_names_rejected(self):
        spec = get_checkpoint("tiny-cnn")
        with pytest.raises(ExportError, match="at least one name"):
            prompt_vectors([], PROMPT_TEMPLATE, spec)

    def test_template_needs_exactly_one_placeholder(self):
        spec = get_checkpoint("tiny-cnn")
        for bad in ("no placeholder", "two {} and {}"):
            with pytest.raises(ExportError, match="placeholder"):
                prompt_vectors(NAMES, bad, spec)

    def test_default_template_has_one_placeholder(self):
        assert PROMPT_TEMPLATE.count("{}") == 1


class TestPromptFile:
    def test_ten_names_give_ten_rows(self, tmp_path):
        out = export_prompt_embeddings(NAMES, PROMPT_TEMPLATE, tmp_path / "p.pem")
        pe = read_prompt_embeddings(out)
        assert pe.rows.shape[0] == 10

    def test_raw_binary_layout(self, tmp_path):
        spec = get_checkpoint("tiny-cnn")
        out = export_prompt_embeddings(NAMES, PROMPT_TEMPLATE, tmp_path / "p.pem")
        buf = out.read_bytes()
        magic, c, d, tlen = struct.unpack("<4sIII", buf[:16])
        assert magic == b"PEM1"
        assert (c, d) == (10, spec.dim)
        assert buf[16 : 16 + tlen].decode() == PROMPT_TEMPLATE
        assert len(buf) == 16 + tlen + 4 * c * d
        rows = np.frombuffer(buf[16 + tlen :], dtype="<f4").reshape(c, d)
        assert np.array_equal(rows, prompt_vectors(NAMES, PROMPT_TEMPLATE, spec))

    def test_same_inputs_twice_identical_files(self, tmp_path):
        a = export_prompt_embeddings(NAMES, PROMPT_TEMPLATE, tmp_path / "a.pem")
        b = export_prompt_embeddings(NAMES, PROMPT_TEMPLATE, tmp_path / "b.pem")
        assert a.read_bytes() == b.read_bytes()

    def test_template_changes_the_file(self, tmp_path):
        a = export_prompt_embeddings(NAMES, PROMPT_TEMPLATE, tmp_path / "a.pem")
        b = export_prompt_embeddings(NAMES, "a photo of {}", tmp_path / "b.pem")
        assert a.read_bytes() != b.read_bytes()

    def test_empty_names_rejected(self, tmp_path):
        with pytest.raises(ExportError, match="at least one name"):
            export_prompt_embeddings([], PROMPT_TEMPLATE, tmp_path / "p.pem")

    def test_unknown_checkpoint_rejected(self, tmp_path):
        with pytest.raises(ExportError, match="unavailable"):
            export_prompt_embeddings(NAMES, PROMPT_TEMPLATE, tmp_path / "p.pem", "nope")


class TestPrimaryConsumption:
    def test_reader_recovers_template_and_rows(self, tmp_path):
        spec = get_checkpoint("tiny-cnn")
        out = export_prompt_embeddings(NAMES, PROMPT_TEMPLATE, tmp_path / "p.pem")
        pe = read_prompt_embeddings(out)
        assert pe.template == PROMPT_TEMPLATE
        # float32 -> float64 widening is exact, so equality is strict.
        assert np.array_equal(
            pe.rows, prompt_vectors(NAMES, PROMPT_TEMPLATE, spec).astype(np.float64)
        )

    def test_gallery_initialization_round_trip(self, tmp_path):
        spec = get_checkpoint("tiny-cnn")
        out = export_prompt_embeddings(NAMES, PROMPT_TEMPLATE, tmp_path / "p.pem")
        labels = [IdentityLabel(n, i) for i, n in enumerate(NAMES)]
        gallery = init_gallery(labels, build_prompts(labels), out, expected_dim=spec.dim)
        assert gallery.num_classes == 10
        assert gallery.dim == spec.dim
        norms = np.linalg.norm(gallery.class_embeddings, axis=1)
        assert np.allclose(norms, 1.0)

    def test_gallery_rows_are_normalized_exports(self, tmp_path):
        spec = get_checkpoint("tiny-cnn")
        out = export_prompt_embeddings(NAMES, PROMPT_TEMPLATE, tmp_path / "p.pem")
        labels = [IdentityLabel(n, i) for i, n in enumerate(NAMES)]
        gallery = init_gallery(labels, build_prompts(labels), out)
        raw = prompt_vectors(NAMES, PROMPT_TEMPLATE, spec).astype(np.float64)
        want = raw / np.linalg.norm(raw, axis=1, keepdims=True)
        assert np.allclose(gallery.class_embeddings, want, atol=1e-15)
