"""Command-line entry point for the full workflow.

Subcommands::

    ingest    index a folder-per-identity dataset and split train/test
    embed     run the frozen encoder over an index into an embedding cache
    finetune  fit the per-class gallery embeddings on the train split
    evaluate  deployment sessions -> confusion counts and rate metrics
    diagnose  pairwise cosine-similarity statistics of a cache
    report    merge evaluation CSVs into one comparison table

Exit codes: 0 success, 2 usage or configuration error, 3 backend or model
error, 4 data error. All defaults reproduce the reference configuration, so
``ingest -> embed -> finetune -> evaluate`` needs no extra flags.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
import traceback
from collections import Counter
from pathlib import Path

from .core import ConfusionCounts, HyperParams, load_config
from .encoder import (
    EmbeddingCache,
    EncoderBackend,
    embed_dataset,
    embed_image,
    load_backend,
    load_centers_file,
    mock_backend,
    pairwise_cosine_stats,
)
from .errors import (
    BackendLoadError,
    ConfigError,
    EmptyDatasetError,
    FaceGalleryError,
    ScheduleError,
    TemplateError,
)
from .evaluate import (
    SessionOutcome,
    count_outcome,
    decide_session,
    load_sessions,
    make_report,
    parse_report_csv,
    render_report,
    report_csv,
    training_accuracy,
)
from .finetune import (
    PROMPT_TEMPLATE,
    RandomInit,
    build_prompts,
    finetune_single_shot,
    init_gallery,
    load_gallery,
    save_gallery,
)
from .preprocess import TEST, TRAIN, DatasetIndex, ingest_dataset, prepare_face, split_dataset
from .recognize import predict

DEFAULT_SEED = 42


def _warn(lines: list[str] | tuple[str, ...]) -> None:
    for line in lines:
        print(line, file=sys.stderr)


def _seed(args: argparse.Namespace) -> int:
    return DEFAULT_SEED if args.seed is None else args.seed


def _resolve_hp(args: argparse.Namespace) -> HyperParams:
    """Config-file values overridden by any explicitly given flags."""
    hp = load_config(args.config) if args.config else HyperParams()
    overrides = {}
    for flag, fieldname in (
        ("lr", "learning_rate_initial"),
        ("weight_decay", "weight_decay"),
        ("batch_size", "batch_size"),
        ("epochs", "epochs"),
        ("lr_min", "lr_min"),
        ("logit_scale", "logit_scale"),
        ("threshold", "confidence_threshold"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[fieldname] = value
    return dataclasses.replace(hp, **overrides) if overrides else hp


def _add_backend_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="encoder backend manifest file")
    p.add_argument("--mock", action="store_true", help="use the deterministic mock encoder")
    p.add_argument("--dim", type=int, default=64, help="mock embedding dimension")
    p.add_argument("--noise-deg", type=float, default=0.0, help="mock angular noise, degrees")
    p.add_argument("--centers", help="mock identity-centers JSON file")


def _make_backend(args: argparse.Namespace) -> EncoderBackend:
    if args.mock and args.manifest:
        raise ConfigError("--mock and --manifest are mutually exclusive")
    if args.mock:
        centers = load_centers_file(args.centers) if args.centers else None
        return mock_backend(_seed(args), args.dim, centers, args.noise_deg)
    if args.manifest:
        return load_backend(args.manifest)
    raise ConfigError("an encoder is required: pass --manifest <file> or --mock")


def cmd_ingest(args: argparse.Namespace) -> int:
    index = ingest_dataset(args.root)
    index = split_dataset(index, args.ratio, _seed(args))
    _warn(index.warnings)
    index.save(args.out)
    per_identity = Counter(e.label.name for e in index.entries)
    for lab in index.identities():
        print(f"  {lab.name}: {per_identity[lab.name]}")
    n_train = len(index.entries_for(TRAIN))
    n_test = len(index.entries_for(TEST))
    print(
        f"{len(index.identities())} identities, {len(index.entries)} images, "
        f"{n_train} train / {n_test} test"
    )
    if args.verbose:
        print(f"index written to {args.out}")
    return 0


def cmd_embed(args: argparse.Namespace) -> int:
    index = DatasetIndex.load(args.index)
    backend = _make_backend(args)
    cache = embed_dataset(backend, index)
    _warn(cache.warnings)
    cache.save(args.out)
    print(f"embedded {len(cache)} images, dim {cache.dim}, backend {cache.backend_name}")
    if args.verbose:
        print(f"cache written to {args.out}")
    return 0


def cmd_finetune(args: argparse.Namespace) -> int:
    index = DatasetIndex.load(args.index)
    cache = EmbeddingCache.load(args.cache)
    train = cache.for_split(index, TRAIN)
    labels = index.identities()
    prompts = build_prompts(labels, args.template)
    hp = _resolve_hp(args)
    init = args.init if args.init else RandomInit(_seed(args), cache.dim)
    gallery = init_gallery(labels, prompts, init, hp.logit_scale, expected_dim=cache.dim)
    gallery, history = finetune_single_shot(train, gallery, hp, _seed(args))
    save_gallery(gallery, args.out)
    history.save_csv(args.history)
    last = history.records[-1]
    print(
        f"trained {gallery.num_classes} classes on {len(train)} embeddings, "
        f"{len(history)} steps, final loss {last.loss:.6f}, "
        f"final batch accuracy {last.batch_accuracy:.2f}%"
    )
    if args.verbose:
        print(f"gallery written to {args.out}, history to {args.history}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    gallery = load_gallery(args.gallery)
    backend = _make_backend(args)
    hp = _resolve_hp(args)
    threshold = hp.confidence_threshold

    if args.image:
        img = Path(args.image)
        face, warn = prepare_face(img.parent, img.name, None, size=backend.input_size)
        if warn:
            _warn([warn])
        print(predict(embed_image(backend, face), gallery, threshold).format_line())
        return 0

    if not args.sessions:
        raise ConfigError("session mode needs --sessions (or use --image for one image)")
    if not (args.index and args.cache):
        raise ConfigError("--index and --cache are required to report training accuracy")

    sessions, warns = load_sessions(args.sessions, backend)
    _warn(warns)
    outcomes = []
    for s in sessions:
        name = s.participant.name if s.participant is not None else None
        outcomes.append(SessionOutcome(name, decide_session(s, gallery, threshold)))
    counts = ConfusionCounts()
    for o in outcomes:
        counts = counts + count_outcome(o.participant, o.decision)

    index = DatasetIndex.load(args.index)
    cache = EmbeddingCache.load(args.cache)
    tacc = training_accuracy(cache.for_split(index, TEST), gallery)

    model = args.model_name or backend.name
    report = make_report(
        model,
        outcomes,
        counts,
        tacc,
        config={
            "threshold": repr(threshold),
            "seed": str(_seed(args)),
            "gallery": str(args.gallery),
            "sessions": str(args.sessions),
        },
    )
    if args.verbose:
        for o in outcomes:
            who = o.participant if o.participant is not None else "UNKNOWN"
            print(f"  session {who}: {o.decision.format_line()}")
    c = report.counts
    print(f"TP={c.tp} TN={c.tn} FP={c.fp} FN={c.fn}")
    print(render_report([report]))
    if args.out:
        Path(args.out).write_text(report_csv([report]), encoding="utf-8")
        if args.verbose:
            print(f"report written to {args.out}")
    return 0


def cmd_diagnose(args: argparse.Namespace) -> int:
    cache = EmbeddingCache.load(args.cache)
    stats = pairwise_cosine_stats(cache)
    print(f"cache: {len(cache)} embeddings, dim {cache.dim}, backend {cache.backend_name}")
    print(stats.format_text())
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    rows = []
    for path in args.csvs:
        rows.extend(parse_report_csv(Path(path).read_text(encoding="utf-8")))
    print(render_report(rows))
    if args.out:
        Path(args.out).write_text(report_csv(rows), encoding="utf-8")
    return 0


def _common_flags(for_subparser: bool) -> argparse.ArgumentParser:
    """Flags accepted both before and after the subcommand.

    The subparser copies default to SUPPRESS: a subparser parses into a fresh
    namespace and copies every attribute it set onto the main one, so plain
    defaults there would clobber values given before the subcommand.
    """
    default = argparse.SUPPRESS if for_subparser else None
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=default, help="hyperparameter key/value file")
    common.add_argument(
        "--seed", type=int, default=default, help=f"RNG seed (default {DEFAULT_SEED})"
    )
    common.add_argument(
        "--verbose",
        action="store_true",
        default=argparse.SUPPRESS if for_subparser else False,
    )
    return common


def build_parser() -> argparse.ArgumentParser:
    common = _common_flags(for_subparser=True)

    ap = argparse.ArgumentParser(
        prog="facegallery",
        parents=[_common_flags(for_subparser=False)],
        description="Open-set face recognition over a frozen image encoder.",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", parents=[common], help="index and split a dataset")
    p.add_argument("root", help="dataset root, one folder per identity")
    p.add_argument("--out", default="index.json")
    p.add_argument("--ratio", type=float, default=0.8, help="train fraction per identity")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("embed", parents=[common], help="embed all indexed images")
    p.add_argument("index", help="dataset index file")
    p.add_argument("--out", default="embeddings.emb")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("finetune", parents=[common], help="train the class gallery")
    p.add_argument("cache", help="embedding cache file")
    p.add_argument("--index", required=True, help="dataset index file")
    p.add_argument("--out", default="gallery.gal")
    p.add_argument("--history", default="history.csv")
    p.add_argument("--init", help="prompt-embedding file for gallery initialization")
    p.add_argument("--template", default=PROMPT_TEMPLATE, help="prompt template with one {}")
    p.add_argument("--lr", type=float, default=None, help="initial learning rate")
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr-min", type=float, default=None)
    p.add_argument("--logit-scale", type=float, default=None)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", parents=[common], help="run the deployment protocol")
    p.add_argument("gallery", help="trained gallery file")
    p.add_argument("--sessions", help="session manifest file")
    p.add_argument("--image", help="score a single image instead of sessions")
    p.add_argument("--index", help="dataset index (for the held-out accuracy)")
    p.add_argument("--cache", help="embedding cache (for the held-out accuracy)")
    p.add_argument("--threshold", type=float, default=None, help="confidence threshold")
    p.add_argument("--model-name", help="row label in the report")
    p.add_argument("--out", help="write the report as CSV")
    _add_backend_flags(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("diagnose", parents=[common], help="embedding-space statistics")
    p.add_argument("cache", help="embedding cache file")
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("report", parents=[common], help="merge evaluation CSVs")
    p.add_argument("csvs", nargs="+", help="report CSV files from evaluate --out")
    p.add_argument("--out", help="write the merged CSV")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except (ConfigError, TemplateError, ScheduleError, EmptyDatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except BackendLoadError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (FaceGalleryError, OSError) as exc:
        if args.verbose:
            traceback.print_exc()
        print(f"error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    raise SystemExit(main())
