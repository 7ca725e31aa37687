"""Synthetic dataset generator for encoder-free runs of the full pipeline.

Creates a folder-per-identity image tree of small random textures, landmark
sidecars so the alignment path is exercised, a mock-backend manifest whose
identity centers sit at a controlled pairwise angle, and a deployment session
manifest with known and unknown participants. Everything is a pure function
of the seed, so two invocations produce identical bytes.

Run as a script to build a ready-to-use demo tree::

    python -m facegallery.synthetic demo --identities 10 --per-identity 30
"""

from __future__ import annotations

import argparse
from pathlib import Path

import cv2
import numpy as np

from .encoder import equiangular_centers, save_centers_file
from .preprocess import ALIGNED_SIZE, ALIGNMENT_TEMPLATE_224, sidecar_path

IMAGE_SIDE = 32


def identity_names(count: int) -> list[str]:
    return [f"person_{i:02d}" for i in range(count)]


def _write_image(path: Path, rng: np.random.Generator) -> None:
    px = rng.integers(0, 256, (IMAGE_SIDE, IMAGE_SIDE, 3), dtype=np.uint8)
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), px):
        raise OSError(f"cannot write {path}")
    scale = IMAGE_SIDE / ALIGNED_SIZE
    pts = ALIGNMENT_TEMPLATE_224.points * scale
    lines = [f"{x:.4f} {y:.4f}" for x, y in pts]
    sidecar_path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def make_dataset(root: str | Path, names: list[str], per_identity: int, seed: int) -> Path:
    """Image tree root/<name>/img_NNN.png with landmark sidecars."""
    rootp = Path(root)
    rng = np.random.default_rng([seed, 0xDA7A])
    for name in names:
        for i in range(per_identity):
            _write_image(rootp / name / f"img_{i:03d}.png", rng)
    return rootp


def make_mock_manifest(
    out_dir: str | Path,
    names: list[str],
    separation_deg: float,
    noise_deg: float,
    dim: int,
    seed: int,
) -> Path:
    """Mock-backend manifest + centers file with the given cluster geometry."""
    outp = Path(out_dir)
    outp.mkdir(parents=True, exist_ok=True)
    vecs = equiangular_centers(len(names), separation_deg, dim, seed)
    save_centers_file(outp / "centers.json", dict(zip(names, vecs)))
    manifest = outp / "backend.cfg"
    manifest.write_text(
        "backend = mock\n"
        f"seed = {seed}\n"
        f"dim = {dim}\n"
        f"noise_deg = {noise_deg}\n"
        "centers = centers.json\n",
        encoding="utf-8",
    )
    return manifest


def make_sessions(
    out_dir: str | Path,
    known_names: list[str],
    unknown_count: int,
    frames_per_session: int,
    seed: int,
) -> Path:
    """Session frame images plus a manifest; returns the manifest path."""
    outp = Path(out_dir)
    rng = np.random.default_rng([seed, 0x5E55])
    lines = []
    participants = [(name, name) for name in known_names]
    participants += [(f"stranger_{i}", "UNKNOWN") for i in range(unknown_count)]
    for tag, token in participants:
        frames = []
        for k in range(frames_per_session):
            rel = f"frames/{tag}/frame_{k}.png"
            _write_image(outp / rel, rng)
            frames.append(rel)
        lines.append(f"{token} " + " ".join(frames))
    manifest = outp / "sessions.txt"
    manifest.parent.mkdir(parents=True, exist_ok=True)
    manifest.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return manifest


def make_demo_tree(
    out_root: str | Path,
    identities: int = 10,
    per_identity: int = 30,
    unknowns: int = 2,
    frames_per_session: int = 5,
    separation_deg: float = 60.0,
    noise_deg: float = 5.0,
    dim: int = 64,
    seed: int = 42,
) -> dict[str, Path]:
    """Build dataset + backend manifest + sessions under one root."""
    outp = Path(out_root)
    names = identity_names(identities)
    dataset = make_dataset(outp / "dataset", names, per_identity, seed)
    manifest = make_mock_manifest(outp, names, separation_deg, noise_deg, dim, seed)
    sessions = make_sessions(outp / "sessions", names, unknowns, frames_per_session, seed)
    return {"dataset": dataset, "backend": manifest, "sessions": sessions}


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_root", help="directory to create the demo tree in")
    ap.add_argument("--identities", type=int, default=10)
    ap.add_argument("--per-identity", type=int, default=30)
    ap.add_argument("--unknowns", type=int, default=2)
    ap.add_argument("--frames-per-session", type=int, default=5)
    ap.add_argument("--separation-deg", type=float, default=60.0)
    ap.add_argument("--noise-deg", type=float, default=5.0)
    ap.add_argument("--dim", type=int, default=64)
    ap.add_argument("--seed", type=int, default=42)
    args = ap.parse_args(argv)
    paths = make_demo_tree(
        args.out_root,
        identities=args.identities,
        per_identity=args.per_identity,
        unknowns=args.unknowns,
        frames_per_session=args.frames_per_session,
        separation_deg=args.separation_deg,
        noise_deg=args.noise_deg,
        dim=args.dim,
        seed=args.seed,
    )
    for key, path in sorted(paths.items()):
        print(f"{key}: {path}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
