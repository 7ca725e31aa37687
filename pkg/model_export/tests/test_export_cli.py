"""The model-export command line, run in-process through main()."""

from __future__ import annotations

import subprocess
import sys

import pytest

from model_export.cli import main
from model_export.export import MANIFEST_FILENAME, MODEL_FILENAME


class TestEncoderCommand:
    def test_writes_artifacts_and_reports_fidelity(self, tmp_path, capsys):
        assert main(["encoder", "--out-dir", str(tmp_path), "--probes", "2"]) == 0
        out = capsys.readouterr().out
        assert (tmp_path / MODEL_FILENAME).is_file()
        assert (tmp_path / MANIFEST_FILENAME).is_file()
        assert "tiny-cnn-v1: dim 64" in out
        assert "fidelity" in out

    def test_unknown_checkpoint_exits_2(self, tmp_path, capsys):
        code = main(["encoder", "--checkpoint", "nope", "--out-dir", str(tmp_path)])
        assert code == 2
        assert "error:" in capsys.readouterr().err

    def test_out_dir_required(self, capsys):
        assert main(["encoder"]) == 2
        assert "--out-dir" in capsys.readouterr().err


class TestPromptsCommand:
    def test_writes_file(self, tmp_path, capsys):
        out = tmp_path / "p.pem"
        assert main(["prompts", "alice", "bob", "--out", str(out)]) == 0
        assert out.is_file()
        assert "2 prompt embeddings" in capsys.readouterr().out

    def test_custom_template(self, tmp_path):
        a, b = tmp_path / "a.pem", tmp_path / "b.pem"
        assert main(["prompts", "alice", "--out", str(a)]) == 0
        assert main(["prompts", "alice", "--out", str(b), "--template", "photo of {}"]) == 0
        assert a.read_bytes() != b.read_bytes()

    def test_no_names_exits_2(self, tmp_path, capsys):
        assert main(["prompts", "--out", str(tmp_path / "p.pem")]) == 2
        assert "at least one name" in capsys.readouterr().err

    def test_bad_template_exits_2(self, tmp_path, capsys):
        code = main(["prompts", "alice", "--out", str(tmp_path / "p.pem"), "--template", "x"])
        assert code == 2
        assert "placeholder" in capsys.readouterr().err

    def test_unwritable_output_exits_2(self, tmp_path, capsys):
        target = tmp_path / "blocked"
        target.write_text("a file, not a directory")
        code = main(["prompts", "alice", "--out", str(target / "p.pem")])
        assert code == 2
        assert "error:" in capsys.readouterr().err


class TestParser:
    def test_no_subcommand_exits_2(self, capsys):
        assert main([]) == 2
        capsys.readouterr()

    def test_unknown_subcommand_exits_2(self, capsys):
        assert main(["frobnicate"]) == 2
        capsys.readouterr()

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run(
            [sys.executable, "-m", "model_export", "prompts", "x", "--out", str(tmp_path / "p.pem")],
            capture_output=True,
            text=True,
        )
        assert proc.returncode == 0
        assert (tmp_path / "p.pem").is_file()
