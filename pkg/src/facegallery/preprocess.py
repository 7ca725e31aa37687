"""Dataset ingestion, five-point face alignment, deterministic train/test split.

Dataset layout on disk is one folder per identity::

    root/<identity_name>/<image files>

An image may carry a landmarks sidecar with the same basename and extension
``.lm5`` holding five ``x y`` lines (left eye, right eye, nose tip, left and
right mouth corner, decimal pixels). Images without a sidecar are
center-cropped and resized instead of aligned, with a warning. Warnings are
plain-text lines ``WARN <path> <reason>``.

All operations are pure functions of their inputs and safe to call from
multiple threads.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .core import IdentityLabel
from .errors import (
    ConfigError,
    DataFormatError,
    DegenerateLandmarksError,
    EmptyDatasetError,
)

IMAGE_EXTENSIONS = {".png", ".jpg", ".jpeg", ".bmp", ".webp"}
ALIGNED_SIZE = 224

# The widely used 112x112 five-point destination template, scaled to the
# 224x224 encoder input.
_TEMPLATE_112 = np.array(
    [
        [38.2946, 51.6963],
        [73.5318, 51.5014],
        [56.0252, 71.7366],
        [41.5493, 92.3655],
        [70.7299, 92.2041],
    ]
)


@dataclass(frozen=True)
class Landmarks5:
    """Five (x, y) pixel positions: eyes, nose tip, mouth corners."""

    points: np.ndarray

    def __post_init__(self) -> None:
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (5, 2):
            raise DataFormatError(f"landmarks must have shape (5, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise DataFormatError("landmark coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def within_bounds(self, width: int, height: int) -> bool:
        x, y = self.points[:, 0], self.points[:, 1]
        return bool(np.all(x >= 0) and np.all(x <= width) and np.all(y >= 0) and np.all(y <= height))


ALIGNMENT_TEMPLATE_224 = Landmarks5(_TEMPLATE_112 * 2.0)


@dataclass(frozen=True)
class FaceImage:
    """Pixel buffer (H x W x 3 uint8, RGB) plus provenance and identity."""

    pixels: np.ndarray
    source: str = ""
    label: IdentityLabel | None = None

    def __post_init__(self) -> None:
        px = np.asarray(self.pixels)
        if px.ndim != 3 or px.shape[2] != 3 or px.dtype != np.uint8:
            raise DataFormatError(f"pixels must be H x W x 3 uint8, got {px.shape} {px.dtype}")
        px.setflags(write=False)
        object.__setattr__(self, "pixels", px)

    @property
    def width(self) -> int:
        return int(self.pixels.shape[1])

    @property
    def height(self) -> int:
        return int(self.pixels.shape[0])


@dataclass(frozen=True)
class SimilarityTransform:
    """p -> scale * R @ p + t with R a proper rotation (det +1)."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    residual_rms: float = 0.0

    def __post_init__(self) -> None:
        r = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64)
        if r.shape != (2, 2) or t.shape != (2,):
            raise DataFormatError("rotation must be 2x2 and translation length 2")
        if self.scale <= 0:
            raise DegenerateLandmarksError(f"scale must be > 0, got {self.scale}")
        if np.max(np.abs(r.T @ r - np.eye(2))) > 1e-9 or np.linalg.det(r) < 0:
            raise DegenerateLandmarksError("rotation must be orthonormal with det +1")
        r.setflags(write=False)
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    def apply(self, points: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=np.float64))
        return self.scale * pts @ self.rotation.T + self.translation

    def as_affine(self) -> np.ndarray:
        """2x3 matrix for cv2.warpAffine."""
        return np.hstack([self.scale * self.rotation, self.translation[:, None]])


def _as_points(lm: Landmarks5 | np.ndarray) -> np.ndarray:
    return lm.points if isinstance(lm, Landmarks5) else np.asarray(lm, dtype=np.float64)


def estimate_similarity_transform(
    src: Landmarks5 | np.ndarray, dst: Landmarks5 | np.ndarray
) -> SimilarityTransform:
    """Least-squares similarity fit (Umeyama): minimizes sum ||s R src + t - dst||^2.

    Raises DegenerateLandmarksError when the source points all coincide (rank-0
    covariance) or the optimal scale collapses to zero.
    """
    a = _as_points(src)
    b = _as_points(dst)
    if a.shape != b.shape or a.ndim != 2 or a.shape[1] != 2:
        raise DataFormatError(f"point sets must share shape (n, 2); got {a.shape} vs {b.shape}")
    if not (np.all(np.isfinite(a)) and np.all(np.isfinite(b))):
        raise DataFormatError("point coordinates must be finite")
    n, dim = a.shape

    mu_a = a.mean(axis=0)
    mu_b = b.mean(axis=0)
    a0 = a - mu_a
    b0 = b - mu_b
    var_a = float((a0**2).sum()) / n
    if var_a < 1e-18:
        raise DegenerateLandmarksError("source landmarks are coincident")

    cov = b0.T @ a0 / n
    u, s, vt = np.linalg.svd(cov)
    d = np.ones(dim)
    if np.linalg.det(cov) < 0:
        d[-1] = -1.0

    rank = int(np.linalg.matrix_rank(cov))
    if rank == 0:
        raise DegenerateLandmarksError("degenerate landmark configuration")
    if rank == dim - 1:
        # Collinear case: the reflection ambiguity is resolved by the sign of
        # det(U) * det(V) rather than det(cov).
        if np.linalg.det(u) * np.linalg.det(vt) > 0:
            rot = u @ vt
        else:
            d[-1] = -1.0
            rot = u @ np.diag(d) @ vt
    else:
        rot = u @ np.diag(d) @ vt

    scale = float(s @ d) / var_a
    if scale <= 1e-12:
        raise DegenerateLandmarksError("optimal similarity scale collapsed to zero")
    trans = mu_b - scale * rot @ mu_a

    fitted = scale * a @ rot.T + trans
    rms = float(np.sqrt(((fitted - b) ** 2).sum(axis=1).mean()))
    return SimilarityTransform(scale, rot, trans, residual_rms=rms)


def align_face(
    image: FaceImage,
    lm: Landmarks5,
    template: Landmarks5 = ALIGNMENT_TEMPLATE_224,
    size: int = ALIGNED_SIZE,
) -> FaceImage:
    """Warp so the detected landmarks land on the template; bilinear, black fill."""
    tf = estimate_similarity_transform(lm, template)
    warped = cv2.warpAffine(
        image.pixels,
        tf.as_affine(),
        (size, size),
        flags=cv2.INTER_LINEAR,
        borderMode=cv2.BORDER_CONSTANT,
        borderValue=0,
    )
    return FaceImage(warped, source=image.source, label=image.label)


def center_crop_resize(image: FaceImage, size: int = ALIGNED_SIZE) -> FaceImage:
    """Fallback for images without landmarks: largest center square, resized."""
    h, w = image.height, image.width
    side = min(h, w)
    y0 = (h - side) // 2
    x0 = (w - side) // 2
    crop = image.pixels[y0 : y0 + side, x0 : x0 + side]
    out = cv2.resize(crop, (size, size), interpolation=cv2.INTER_LINEAR)
    return FaceImage(out, source=image.source, label=image.label)


def read_image(path: str | Path) -> np.ndarray:
    """Decode an image file to H x W x 3 uint8 RGB."""
    bgr = cv2.imread(str(path), cv2.IMREAD_COLOR)
    if bgr is None:
        raise DataFormatError(f"cannot decode image {path}")
    return np.ascontiguousarray(bgr[:, :, ::-1])


def sidecar_path(image_path: str | Path) -> Path:
    return Path(image_path).with_suffix(".lm5")


def read_landmarks_sidecar(image_path: str | Path) -> Landmarks5 | None:
    """Parse the .lm5 sidecar next to an image; None when there is none."""
    sc = sidecar_path(image_path)
    if not sc.exists():
        return None
    lines = [ln for ln in sc.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(lines) != 5:
        raise DataFormatError(f"{sc}: expected 5 landmark lines, got {len(lines)}")
    pts = []
    for ln in lines:
        parts = ln.split()
        if len(parts) != 2:
            raise DataFormatError(f"{sc}: expected 'x y' per line, got {ln!r}")
        try:
            pts.append((float(parts[0]), float(parts[1])))
        except ValueError as exc:
            raise DataFormatError(f"{sc}: non-numeric landmark {ln!r}") from exc
    return Landmarks5(np.array(pts))


def prepare_face(
    root: str | Path,
    rel_path: str,
    label: IdentityLabel | None,
    template: Landmarks5 = ALIGNMENT_TEMPLATE_224,
    size: int = ALIGNED_SIZE,
) -> tuple[FaceImage, str | None]:
    """Load one dataset image and bring it to encoder geometry.

    Uses landmark alignment when a valid sidecar is present, otherwise the
    center-crop fallback. Returns the prepared face and an optional
    ``WARN ...`` line.
    """
    path = Path(root) / rel_path
    img = FaceImage(read_image(path), source=rel_path, label=label)
    warning: str | None = None
    try:
        lm = read_landmarks_sidecar(path)
    except DataFormatError as exc:
        return center_crop_resize(img, size), f"WARN {rel_path} bad landmarks sidecar ({exc})"
    if lm is None:
        warning = f"WARN {rel_path} no landmarks sidecar, center-cropped"
        return center_crop_resize(img, size), warning
    if not lm.within_bounds(img.width, img.height):
        return center_crop_resize(img, size), f"WARN {rel_path} landmarks out of image bounds, center-cropped"
    return align_face(img, lm, template, size), None


# --- dataset index ----------------------------------------------------------

TRAIN, TEST = "train", "test"


@dataclass(frozen=True)
class IndexEntry:
    path: str  # POSIX path relative to the dataset root
    label: IdentityLabel
    split: str = TRAIN

    def __post_init__(self) -> None:
        if self.split not in (TRAIN, TEST):
            raise DataFormatError(f"split must be train or test, got {self.split!r}")


@dataclass(frozen=True)
class DatasetIndex:
    """Identity-labeled image references with their train/test assignment."""

    root: str
    entries: tuple[IndexEntry, ...]
    seed: int | None = None
    ratio: float | None = None
    warnings: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "entries", tuple(self.entries))
        object.__setattr__(self, "warnings", tuple(self.warnings))

    def identities(self) -> list[IdentityLabel]:
        seen: dict[int, IdentityLabel] = {}
        for e in self.entries:
            seen.setdefault(e.label.id, e.label)
        return [seen[i] for i in sorted(seen)]

    def entries_for(self, split: str) -> list[IndexEntry]:
        return [e for e in self.entries if e.split == split]

    def fingerprint(self) -> str:
        """Content hash over entries + split parameters (root excluded)."""
        h = hashlib.sha256()
        h.update(f"seed={self.seed};ratio={self.ratio}\n".encode())
        for e in self.entries:
            h.update(f"{e.path}|{e.label.id}|{e.label.name}|{e.split}\n".encode())
        return h.hexdigest()

    def save(self, path: str | Path) -> None:
        doc = {
            "root": self.root,
            "seed": self.seed,
            "ratio": self.ratio,
            "entries": [
                {"path": e.path, "name": e.label.name, "id": e.label.id, "split": e.split}
                for e in self.entries
            ],
        }
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "DatasetIndex":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
            entries = tuple(
                IndexEntry(e["path"], IdentityLabel(e["name"], e["id"]), e["split"])
                for e in doc["entries"]
            )
            return cls(doc["root"], entries, doc.get("seed"), doc.get("ratio"))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DataFormatError(f"corrupt dataset index {path}: {exc}") from exc


def ingest_dataset(root: str | Path) -> DatasetIndex:
    """Index a folder-per-identity dataset; ids are dense in sorted-name order.

    Unreadable images are skipped with a warning, never fatally.
    """
    rootp = Path(root)
    if not rootp.is_dir():
        raise EmptyDatasetError(f"dataset root {root} does not exist")
    id_dirs = sorted(d for d in rootp.iterdir() if d.is_dir())
    if not id_dirs:
        raise EmptyDatasetError(f"dataset root {root} has no identity subdirectories")

    entries: list[IndexEntry] = []
    warnings: list[str] = []
    next_id = 0
    for d in id_dirs:
        files = sorted(
            f.name for f in d.iterdir() if f.is_file() and f.suffix.lower() in IMAGE_EXTENSIONS
        )
        readable: list[str] = []
        for name in files:
            rel = f"{d.name}/{name}"
            if cv2.imread(str(d / name), cv2.IMREAD_COLOR) is None:
                warnings.append(f"WARN {rel} unreadable image, skipped")
            else:
                readable.append(rel)
        if not readable:
            warnings.append(f"WARN {d.name}/ no readable images, identity skipped")
            continue
        label = IdentityLabel(d.name, next_id)
        next_id += 1
        entries.extend(IndexEntry(rel, label) for rel in readable)

    if not entries:
        raise EmptyDatasetError(f"dataset root {root} contains no readable images")
    return DatasetIndex(str(rootp), tuple(entries), warnings=tuple(warnings))


def _split_rank(seed: int, identity: str, rel_path: str) -> str:
    # Platform-stable ordering key: SHA-256 of "seed|identity|path". The split
    # therefore depends only on file names and the seed, never on RNG library
    # internals.
    return hashlib.sha256(f"{seed}|{identity}|{rel_path}".encode()).hexdigest()


def split_dataset(index: DatasetIndex, ratio: float, seed: int) -> DatasetIndex:
    """Stratified per-identity split; deterministic across runs and platforms.

    Train count per identity is round(ratio * n) (half-up), clamped so that
    every identity with >= 2 images appears in both splits. Single-image
    identities go to train with a warning.
    """
    if not (0.0 < ratio < 1.0):
        raise ConfigError(f"split ratio must lie in (0, 1), got {ratio}")

    by_id: dict[int, list[IndexEntry]] = {}
    for e in index.entries:
        by_id.setdefault(e.label.id, []).append(e)

    warnings = list(index.warnings)
    assignment: dict[str, str] = {}
    for entries in by_id.values():
        name = entries[0].label.name
        n = len(entries)
        if n == 1:
            assignment[entries[0].path] = TRAIN
            warnings.append(f"WARN {entries[0].path} identity has a single image, kept in train")
            continue
        n_train = int(math.floor(ratio * n + 0.5))
        n_train = min(max(n_train, 1), n - 1)
        ranked = sorted(entries, key=lambda e: (_split_rank(seed, name, e.path), e.path))
        train_paths = {e.path for e in ranked[:n_train]}
        for e in entries:
            assignment[e.path] = TRAIN if e.path in train_paths else TEST

    new_entries = tuple(
        IndexEntry(e.path, e.label, assignment[e.path]) for e in index.entries
    )
    return DatasetIndex(index.root, new_entries, seed=seed, ratio=ratio, warnings=tuple(warnings))
