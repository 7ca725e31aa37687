"""Command-line entry point for the export tool.

Subcommands::

    encoder  export a bundled checkpoint's image encoder to ONNX + manifest
    prompts  write per-class prompt embeddings for gallery initialization

Exit codes: 0 success, 2 export or usage error.
"""

from __future__ import annotations

import argparse
import sys

from .checkpoints import available_checkpoints
from .errors import ExportError
from .export import PROMPT_TEMPLATE, export_image_encoder, export_prompt_embeddings


def cmd_encoder(args: argparse.Namespace) -> int:
    result = export_image_encoder(args.checkpoint, args.out_dir, probe_count=args.probes)
    print(f"wrote {result.model_path} and {result.manifest_path}")
    print(
        f"{result.spec.identifier}: dim {result.spec.dim}, "
        f"input {result.spec.input_size}x{result.spec.input_size}, "
        f"fidelity {result.fidelity:.2e} over {args.probes} probes"
    )
    return 0


def cmd_prompts(args: argparse.Namespace) -> int:
    out = export_prompt_embeddings(args.names, args.template, args.out, args.checkpoint)
    print(f"wrote {out}: {len(args.names)} prompt embeddings")
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="model-export", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encoder", help="export an image encoder to ONNX + manifest")
    p.add_argument(
        "--checkpoint",
        default="tiny-cnn",
        help="bundled checkpoint key (available: %s)" % ", ".join(available_checkpoints()),
    )
    p.add_argument("--out-dir", required=True, help="directory for model.onnx + backend.cfg")
    p.add_argument("--probes", type=int, default=10, help="probe images for the fidelity check")
    p.set_defaults(func=cmd_encoder)

    p = sub.add_parser("prompts", help="write a prompt-embedding file")
    p.add_argument("names", nargs="*", help="class names, one embedding per name")
    p.add_argument("--out", required=True, help="output .pem file")
    p.add_argument("--template", default=PROMPT_TEMPLATE, help="prompt template with one {}")
    p.add_argument("--checkpoint", default="tiny-cnn", help="bundled checkpoint key")
    p.set_defaults(func=cmd_prompts)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (ExportError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
