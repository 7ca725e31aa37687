"""Frozen image-encoder backends, the on-disk embedding cache, diagnostics.

Backend manifest
----------------
A key/value text file (see ``core.read_kv_file``)::

    backend = onnx              # or "mock"
    model = encoder.onnx        # path relative to the manifest file
    dim = 512
    name = my-encoder           # optional display name
    channel_order = RGB         # or BGR
    mean = 0.48145466 0.4578275 0.40821073      # per channel, 0..1 scale
    std  = 0.26862954 0.26130258 0.27577711
    input_size = 224            # optional, defaults to 224

A mock manifest replaces ``model``/``mean``/``std`` with::

    backend = mock
    seed = 7
    dim = 64
    noise_deg = 5.0             # optional angular noise, degrees
    centers = centers.json      # optional {"name": [unit vector], ...}

Embedding cache file (magic ``EMB1``, little-endian)
----------------------------------------------------
::

    magic        4 bytes  b"EMB1"
    dim          u32
    count        u64
    backend      u16 length + UTF-8
    fingerprint  u16 length + UTF-8   (DatasetIndex.fingerprint())
    count records:
        path     u16 length + UTF-8   (POSIX, relative to dataset root)
        label_id u32
        vector   dim * f64            (raw, pre-normalization)

Raw vectors are cached; l2-normalization happens on load.
"""

from __future__ import annotations

import hashlib
import json
import math
import struct
import threading
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .core import Embedding, l2_normalize, read_kv_file
from .errors import (
    BackendLoadError,
    DataFormatError,
    DimensionError,
    EmptyDatasetError,
    InsufficientClassesError,
    ShapeError,
)
from .preprocess import DatasetIndex, FaceImage, prepare_face

CACHE_MAGIC = b"EMB1"


class EncoderBackend(ABC):
    """A frozen feature extractor: same pixels in, same vector out, always."""

    name: str
    dim: int
    input_size: int = 224

    @abstractmethod
    def infer(self, img: FaceImage) -> np.ndarray:
        """Raw (pre-normalization) feature vector of length ``dim``."""


class OnnxBackend(EncoderBackend):
    """Runs any ONNX model with input 1x3xSxS and output 1xD via cv2.dnn.

    The underlying net is not thread-safe, so inference is serialized with a
    lock; callers may use the backend from any thread.
    """

    def __init__(
        self,
        model_path: str | Path,
        dim: int,
        name: str | None = None,
        channel_order: str = "RGB",
        mean: tuple[float, float, float] = (0.0, 0.0, 0.0),
        std: tuple[float, float, float] = (1.0, 1.0, 1.0),
        input_size: int = 224,
    ) -> None:
        if channel_order not in ("RGB", "BGR"):
            raise BackendLoadError(f"channel_order must be RGB or BGR, got {channel_order!r}")
        try:
            self._net = cv2.dnn.readNetFromONNX(str(model_path))
        except cv2.error as exc:
            raise BackendLoadError(f"cannot load ONNX model {model_path}: {exc}") from exc
        self.name = name or Path(model_path).stem
        self.dim = int(dim)
        self.input_size = int(input_size)
        self.channel_order = channel_order
        self._mean = np.asarray(mean, dtype=np.float32).reshape(1, 1, 3)
        self._std = np.asarray(std, dtype=np.float32).reshape(1, 1, 3)
        self._lock = threading.Lock()

    def infer(self, img: FaceImage) -> np.ndarray:
        px = img.pixels
        if self.channel_order == "BGR":
            px = px[:, :, ::-1]
        x = (px.astype(np.float32) / 255.0 - self._mean) / self._std
        blob = np.ascontiguousarray(x.transpose(2, 0, 1)[None])
        with self._lock:
            self._net.setInput(blob)
            out = self._net.forward()
        out = np.asarray(out).reshape(-1)
        if out.shape[0] != self.dim:
            raise BackendLoadError(
                f"model produced {out.shape[0]} values but manifest says dim = {self.dim}"
            )
        return out.astype(np.float64)


class MockBackend(EncoderBackend):
    """Deterministic stand-in for a frozen encoder.

    The embedding is derived from SHA-256 of the pixel buffer (and the seed),
    so identical pixels always produce identical vectors. With
    ``identity_centers`` given, an image labeled with a known identity maps to
    that identity's center perturbed by Gaussian angular noise; unlabeled or
    unknown-identity images fall back to a pixel-hash direction.
    """

    def __init__(
        self,
        seed: int,
        dim: int,
        identity_centers: dict[str, np.ndarray] | None = None,
        noise_deg: float = 0.0,
    ) -> None:
        if dim < 2:
            raise DimensionError(f"mock backend needs dim >= 2, got {dim}")
        self.seed = int(seed)
        self.dim = int(dim)
        self.noise_deg = float(noise_deg)
        self.centers = None
        if identity_centers is not None:
            self.centers = {
                name: l2_normalize(np.asarray(vec, dtype=np.float64)).values
                for name, vec in identity_centers.items()
            }
            for name, vec in self.centers.items():
                if vec.shape[0] != self.dim:
                    raise DimensionError(f"center {name!r} has dim {vec.shape[0]}, expected {dim}")
        suffix = "-centers" if self.centers else ""
        self.name = f"mock-d{self.dim}-s{self.seed}{suffix}"

    def _rng(self, px: np.ndarray) -> np.random.Generator:
        digest = hashlib.sha256(px.tobytes()).digest()
        words = [int.from_bytes(digest[i : i + 4], "little") for i in range(0, 16, 4)]
        return np.random.default_rng([self.seed, *words])

    def infer(self, img: FaceImage) -> np.ndarray:
        rng = self._rng(img.pixels)
        center = None
        if self.centers is not None and img.label is not None:
            center = self.centers.get(img.label.name)
        if center is None:
            return rng.standard_normal(self.dim)
        theta = rng.standard_normal() * math.radians(self.noise_deg)
        g = rng.standard_normal(self.dim)
        w = g - np.dot(g, center) * center
        wn = np.linalg.norm(w)
        if wn < 1e-12:  # astronomically unlikely; keep the center direction
            return center.copy()
        return math.cos(theta) * center + math.sin(theta) * (w / wn)


def mock_backend(
    seed: int,
    dim: int,
    identity_centers: dict[str, np.ndarray] | None = None,
    noise_deg: float = 0.0,
) -> MockBackend:
    """Factory for the deterministic test-double encoder."""
    return MockBackend(seed, dim, identity_centers, noise_deg)


def equiangular_centers(
    count: int, separation_deg: float, dim: int, seed: int = 0
) -> np.ndarray:
    """``count`` unit vectors in R^dim with pairwise angle ``separation_deg``.

    Built from the Cholesky factor of the equiangular Gram matrix, then
    rotated by a seeded random orthogonal matrix.
    """
    if count < 2 or count > dim:
        raise DimensionError(f"need 2 <= count <= dim, got count={count}, dim={dim}")
    alpha = math.cos(math.radians(separation_deg))
    if not (-1.0 / (count - 1) < alpha < 1.0):
        raise ValueError(f"separation {separation_deg} deg is not realizable for {count} centers")
    gram = (1.0 - alpha) * np.eye(count) + alpha * np.ones((count, count))
    base = np.linalg.cholesky(gram)  # rows: unit vectors with the target dots
    vecs = np.zeros((count, dim))
    vecs[:, :count] = base
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((dim, dim)))
    q *= np.sign(np.diag(r))
    return vecs @ q.T


def embed_image(backend: EncoderBackend, img: FaceImage) -> Embedding:
    """Run the frozen backend and l2-normalize its raw output."""
    expected = (backend.input_size, backend.input_size, 3)
    if img.pixels.shape != expected:
        raise ShapeError(f"encoder expects {expected}, got {img.pixels.shape}")
    return l2_normalize(backend.infer(img))


@dataclass(frozen=True)
class CacheRecord:
    path: str
    label_id: int
    vector: np.ndarray  # raw, pre-normalization, float64

    def __post_init__(self) -> None:
        v = np.asarray(self.vector, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "vector", v)


@dataclass(frozen=True, eq=False)
class EmbeddingCache:
    """All raw embeddings for one dataset index, reloadable bit-identically."""

    dim: int
    backend_name: str
    fingerprint: str
    records: tuple[CacheRecord, ...]
    warnings: tuple[str, ...] = field(default=())

    def __post_init__(self) -> None:
        object.__setattr__(self, "records", tuple(self.records))
        object.__setattr__(self, "warnings", tuple(self.warnings))
        for r in self.records:
            if r.vector.shape != (self.dim,):
                raise DimensionError(
                    f"record {r.path} has dim {r.vector.shape}, cache dim is {self.dim}"
                )

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, EmbeddingCache):
            return NotImplemented
        return (
            self.dim == other.dim
            and self.backend_name == other.backend_name
            and self.fingerprint == other.fingerprint
            and len(self.records) == len(other.records)
            and all(
                a.path == b.path
                and a.label_id == b.label_id
                and np.array_equal(a.vector, b.vector)
                for a, b in zip(self.records, other.records)
            )
        )

    def __len__(self) -> int:
        return len(self.records)

    def embeddings(self) -> np.ndarray:
        """N x dim matrix of unit-norm embeddings (normalize-on-load)."""
        if not self.records:
            raise EmptyDatasetError("embedding cache is empty")
        mat = np.stack([r.vector for r in self.records])
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        if np.any(norms < 1e-300):
            raise DataFormatError("cache contains a zero vector")
        return mat / norms

    def label_ids(self) -> np.ndarray:
        return np.array([r.label_id for r in self.records], dtype=np.int64)

    def subset(self, paths: set[str]) -> "EmbeddingCache":
        kept = tuple(r for r in self.records if r.path in paths)
        return EmbeddingCache(self.dim, self.backend_name, self.fingerprint, kept)

    def for_split(self, index: DatasetIndex, split: str) -> "EmbeddingCache":
        """Records of one split, after checking the cache matches the index."""
        if self.fingerprint != index.fingerprint():
            raise DataFormatError("cache fingerprint does not match the dataset index")
        return self.subset({e.path for e in index.entries_for(split)})

    def save(self, path: str | Path) -> None:
        out = bytearray()
        out += struct.pack("<4sIQ", CACHE_MAGIC, self.dim, len(self.records))
        for text in (self.backend_name, self.fingerprint):
            enc = text.encode()
            out += struct.pack("<H", len(enc)) + enc
        for r in self.records:
            enc = r.path.encode()
            out += struct.pack("<H", len(enc)) + enc
            out += struct.pack("<I", r.label_id)
            out += r.vector.astype("<f8").tobytes()
        Path(path).write_bytes(bytes(out))

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingCache":
        buf = Path(path).read_bytes()
        off = 0

        def take(n: int) -> bytes:
            nonlocal off
            if off + n > len(buf):
                raise DataFormatError(f"truncated embedding cache {path}")
            chunk = buf[off : off + n]
            off += n
            return chunk

        magic, dim, count = struct.unpack("<4sIQ", take(16))
        if magic != CACHE_MAGIC:
            raise DataFormatError(f"{path} is not an embedding cache (bad magic {magic!r})")
        texts = []
        for _ in range(2):
            (ln,) = struct.unpack("<H", take(2))
            texts.append(take(ln).decode())
        backend_name, fingerprint = texts
        records = []
        for _ in range(count):
            (ln,) = struct.unpack("<H", take(2))
            rel = take(ln).decode()
            (label_id,) = struct.unpack("<I", take(4))
            vec = np.frombuffer(take(8 * dim), dtype="<f8").astype(np.float64)
            records.append(CacheRecord(rel, label_id, vec))
        if off != len(buf):
            raise DataFormatError(f"{path} has {len(buf) - off} trailing bytes")
        return cls(dim, backend_name, fingerprint, tuple(records))


def embed_dataset(backend: EncoderBackend, index: DatasetIndex) -> EmbeddingCache:
    """One raw embedding per indexed image; per-image failures become warnings."""
    if not index.entries:
        raise EmptyDatasetError("dataset index has no entries")
    records: list[CacheRecord] = []
    warnings: list[str] = []
    for e in index.entries:
        try:
            face, warn = prepare_face(index.root, e.path, e.label, size=backend.input_size)
            if warn:
                warnings.append(warn)
            emb_raw = backend.infer(face)
        except (DataFormatError, ShapeError) as exc:
            warnings.append(f"WARN {e.path} embedding failed ({exc})")
            continue
        records.append(CacheRecord(e.path, e.label.id, np.asarray(emb_raw, dtype=np.float64)))
    if not records:
        raise EmptyDatasetError("no image could be embedded")
    return EmbeddingCache(
        backend.dim, backend.name, index.fingerprint(), tuple(records), tuple(warnings)
    )


# --- embedding-space diagnostics ---------------------------------------------

HIST_BINS = 20


@dataclass(frozen=True)
class SimilarityStats:
    count: int
    mean: float
    min: float
    max: float
    hist_counts: tuple[int, ...]
    bin_edges: tuple[float, ...]

    @classmethod
    def from_values(cls, values: np.ndarray) -> "SimilarityStats":
        if values.size == 0:
            edges = np.linspace(-1.0, 1.0, HIST_BINS + 1)
            return cls(0, float("nan"), float("nan"), float("nan"), (0,) * HIST_BINS, tuple(edges))
        counts, edges = np.histogram(values, bins=HIST_BINS, range=(-1.0, 1.0))
        return cls(
            int(values.size),
            float(values.mean()),
            float(values.min()),
            float(values.max()),
            tuple(int(c) for c in counts),
            tuple(float(e) for e in edges),
        )


@dataclass(frozen=True)
class PairwiseStats:
    """Cosine-similarity statistics over image pairs in a cache.

    ``cross`` covers cross-identity pairs (the headline diagnostic); ``within``
    and ``all_pairs`` are reported alongside so the pair population is never
    ambiguous.
    """

    cross: SimilarityStats
    within: SimilarityStats
    all_pairs: SimilarityStats

    def format_text(self) -> str:
        lines = []
        for title, block in (
            ("cross-identity", self.cross),
            ("within-identity", self.within),
            ("all pairs", self.all_pairs),
        ):
            if block.count == 0:
                lines.append(f"{title:>15}: no pairs")
            else:
                lines.append(
                    f"{title:>15}: n={block.count}  mean={block.mean:+.4f}  "
                    f"min={block.min:+.4f}  max={block.max:+.4f}"
                )
        return "\n".join(lines)


def pairwise_cosine_stats(cache: EmbeddingCache) -> PairwiseStats:
    """Cosine similarity over image pairs, split by identity relation."""
    labels = cache.label_ids()
    if np.unique(labels).size < 2:
        raise InsufficientClassesError("pairwise diagnostics need at least 2 identities")
    v = cache.embeddings()
    sims = v @ v.T
    iu, ju = np.triu_indices(len(labels), k=1)
    vals = sims[iu, ju]
    same = labels[iu] == labels[ju]
    return PairwiseStats(
        cross=SimilarityStats.from_values(vals[~same]),
        within=SimilarityStats.from_values(vals[same]),
        all_pairs=SimilarityStats.from_values(vals),
    )


def load_centers_file(path: str | Path) -> dict[str, np.ndarray]:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        if not isinstance(doc, dict):
            raise TypeError("centers file must hold a name -> vector mapping")
        return {str(k): np.asarray(v, dtype=np.float64) for k, v in doc.items()}
    except (TypeError, ValueError, json.JSONDecodeError) as exc:
        raise BackendLoadError(f"corrupt centers file {path}: {exc}") from exc


def save_centers_file(path: str | Path, centers: dict[str, np.ndarray]) -> None:
    doc = {k: [float(x) for x in np.asarray(v)] for k, v in centers.items()}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_backend(manifest_path: str | Path) -> EncoderBackend:
    """Build a backend from its manifest file."""
    manifest = Path(manifest_path)
    if not manifest.is_file():
        raise BackendLoadError(f"backend manifest {manifest_path} not found")
    try:
        kv = read_kv_file(manifest)
    except Exception as exc:
        raise BackendLoadError(f"cannot parse manifest {manifest_path}: {exc}") from exc

    kind = kv.get("backend", "onnx")
    try:
        if kind == "mock":
            centers = None
            if "centers" in kv:
                centers = load_centers_file(manifest.parent / kv["centers"])
            return MockBackend(
                seed=int(kv.get("seed", "0")),
                dim=int(kv["dim"]),
                identity_centers=centers,
                noise_deg=float(kv.get("noise_deg", "0")),
            )
        if kind == "onnx":
            mean = tuple(float(x) for x in kv.get("mean", "0 0 0").split())
            std = tuple(float(x) for x in kv.get("std", "1 1 1").split())
            if len(mean) != 3 or len(std) != 3:
                raise BackendLoadError("mean and std need exactly 3 values")
            return OnnxBackend(
                model_path=manifest.parent / kv["model"],
                dim=int(kv["dim"]),
                name=kv.get("name"),
                channel_order=kv.get("channel_order", "RGB"),
                mean=mean,  # type: ignore[arg-type]
                std=std,  # type: ignore[arg-type]
                input_size=int(kv.get("input_size", "224")),
            )
    except KeyError as exc:
        raise BackendLoadError(f"manifest {manifest_path} is missing key {exc}") from exc
    except ValueError as exc:
        raise BackendLoadError(f"manifest {manifest_path} has a bad value: {exc}") from exc
    raise BackendLoadError(f"unknown backend kind {kind!r} in {manifest_path}")
