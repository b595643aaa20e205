"""Dataset loading, validation, normalization, and synthesis.

Embedding files are headerless little-endian float32, row-major; all shape
metadata lives in a JSON manifest next to them. Ground truth maps each query
row to exactly one gallery row.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    DimensionMismatch,
    GroundTruthOutOfRange,
    InvalidConfig,
    MissingFile,
    NonFiniteValue,
    ParseError,
    ZeroVector,
)

ZERO_NORM_THRESHOLD = 1e-12


@dataclass(frozen=True)
class DatasetManifest:
    """Shape and ground-truth metadata for one query/gallery embedding pair."""

    name: str
    dim: int
    query_count: int
    gallery_count: int
    query_path: Path
    gallery_path: Path
    ground_truth: dict[int, int]
    seed: int | None = None

    def validate(self) -> None:
        if self.dim < 1:
            raise ParseError(f"dim must be >= 1, got {self.dim}")
        if self.query_count < 1 or self.gallery_count < 1:
            raise ParseError("query_count and gallery_count must be >= 1")
        for qid in range(self.query_count):
            if qid not in self.ground_truth:
                raise GroundTruthOutOfRange(f"query {qid} has no ground-truth entry")
        for qid, gid in self.ground_truth.items():
            if not 0 <= qid < self.query_count:
                raise GroundTruthOutOfRange(f"query id {qid} outside [0, {self.query_count})")
            if not 0 <= gid < self.gallery_count:
                raise GroundTruthOutOfRange(
                    f"ground_truth[{qid}] = {gid} outside [0, {self.gallery_count})"
                )
        if len(self.ground_truth) != self.query_count:
            raise GroundTruthOutOfRange("ground_truth must cover every query exactly once")


@dataclass
class EmbeddingMatrix:
    """Dense row-major float32 matrix of embeddings, one vector per row."""

    data: np.ndarray
    normalized: bool = False

    @property
    def rows(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass(frozen=True)
class SynthConfig:
    """Parameters for a deterministic synthetic retrieval benchmark."""

    n_identities: int
    dim: int
    noise_sigma: float
    confusable_fraction: float
    confusable_gap: float
    seed: int

    def validate(self) -> None:
        if self.n_identities < 1 or self.dim < 1:
            raise InvalidConfig("n_identities and dim must be >= 1")
        if self.confusable_fraction > 0 and self.n_identities < 2:
            raise InvalidConfig("n_identities must be >= 2 when confusable_fraction > 0")
        if self.noise_sigma < 0:
            raise InvalidConfig("noise_sigma must be nonnegative")
        if not 0.0 <= self.confusable_fraction <= 1.0:
            raise InvalidConfig("confusable_fraction must be in [0, 1]")
        if not 0.0 < self.confusable_gap < 1.0:
            raise InvalidConfig("confusable_gap must be in (0, 1)")


@dataclass
class ValidationCheck:
    name: str
    passed: bool
    detail: str = ""


@dataclass
class ValidationReport:
    checks: list[ValidationCheck] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks)


def _expected_bytes(rows: int, dim: int) -> int:
    return rows * dim * 4


def load_manifest(path: str | Path) -> DatasetManifest:
    """Parse and fully validate a dataset manifest, including file sizes."""
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"manifest not found: {path}")
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ParseError(f"manifest {path} is not valid JSON: {exc}") from exc

    try:
        gt_pairs = raw["ground_truth"]
        manifest = DatasetManifest(
            name=str(raw["name"]),
            dim=int(raw["dim"]),
            query_count=int(raw["query_count"]),
            gallery_count=int(raw["gallery_count"]),
            query_path=(path.parent / raw["query_path"]).resolve(),
            gallery_path=(path.parent / raw["gallery_path"]).resolve(),
            ground_truth={int(q): int(g) for q, g in gt_pairs},
            seed=None if raw.get("seed") is None else int(raw["seed"]),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise ParseError(f"manifest {path} has a malformed field: {exc}") from exc

    manifest.validate()

    for split, fpath, rows in (
        ("query", manifest.query_path, manifest.query_count),
        ("gallery", manifest.gallery_path, manifest.gallery_count),
    ):
        if not fpath.is_file():
            raise MissingFile(f"{split} file not found: {fpath}")
        expected = _expected_bytes(rows, manifest.dim)
        actual = fpath.stat().st_size
        if actual != expected:
            raise DimensionMismatch(
                f"{split} file {fpath} is {actual} bytes, expected {expected} "
                f"({rows} x {manifest.dim} x 4)"
            )
    return manifest


def save_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    """Write a manifest as JSON; embedding paths are stored relative to it."""
    path = Path(path)
    doc = {
        "name": manifest.name,
        "dim": manifest.dim,
        "query_count": manifest.query_count,
        "gallery_count": manifest.gallery_count,
        "query_path": str(Path(manifest.query_path).name),
        "gallery_path": str(Path(manifest.gallery_path).name),
        "ground_truth": [[q, manifest.ground_truth[q]] for q in sorted(manifest.ground_truth)],
        "seed": manifest.seed,
    }
    path.write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")


def read_embedding_file(path: str | Path, rows: int, dim: int) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise MissingFile(f"embedding file not found: {path}")
    buf = path.read_bytes()
    if len(buf) != _expected_bytes(rows, dim):
        raise DimensionMismatch(
            f"{path}: {len(buf)} bytes, expected {_expected_bytes(rows, dim)}"
        )
    arr = np.frombuffer(buf, dtype="<f4").reshape(rows, dim)
    if not np.all(np.isfinite(arr)):
        bad = int(np.argwhere(~np.isfinite(arr))[0][0])
        raise NonFiniteValue(f"{path}: non-finite value in row {bad}")
    return np.ascontiguousarray(arr)


def write_embedding_file(path: str | Path, data: np.ndarray) -> None:
    arr = np.ascontiguousarray(data, dtype="<f4")
    Path(path).write_bytes(arr.tobytes())


def load_embeddings(manifest: DatasetManifest, split: str) -> EmbeddingMatrix:
    """Load one split (``query`` or ``gallery``) as an un-normalized matrix."""
    if split == "query":
        arr = read_embedding_file(manifest.query_path, manifest.query_count, manifest.dim)
    elif split == "gallery":
        arr = read_embedding_file(manifest.gallery_path, manifest.gallery_count, manifest.dim)
    else:
        raise InvalidConfig(f"split must be 'query' or 'gallery', got {split!r}")
    return EmbeddingMatrix(data=arr, normalized=False)


def l2_normalize(m: EmbeddingMatrix) -> EmbeddingMatrix:
    """Scale every row to unit L2 norm. Idempotent; rejects near-zero rows."""
    norms = np.linalg.norm(m.data.astype(np.float64), axis=1)
    small = np.nonzero(norms <= ZERO_NORM_THRESHOLD)[0]
    if small.size:
        raise ZeroVector(f"row {int(small[0])} has norm <= {ZERO_NORM_THRESHOLD}")
    out = (m.data.astype(np.float64) / norms[:, None]).astype(np.float32)
    return EmbeddingMatrix(data=out, normalized=True)


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    v = rng.standard_normal((n, dim))
    return v / np.linalg.norm(v, axis=1)[:, None]


def _orthogonal_unit(rng: np.random.Generator, anchor: np.ndarray) -> np.ndarray:
    # anchor is unit-norm; rejection loop guards against a parallel draw
    while True:
        v = rng.standard_normal(anchor.shape[0])
        v -= np.dot(v, anchor) * anchor
        norm = np.linalg.norm(v)
        if norm > 1e-8:
            return v / norm


def generate_synthetic(
    cfg: SynthConfig,
    out_dir: str | Path,
    name: str = "synthetic",
    heldout: bool = False,
) -> DatasetManifest:
    """Write a seeded synthetic dataset to out_dir and return its manifest.

    Gallery rows are unit vectors, one per identity. A fraction of identity
    pairs is planted close together (cosine >= 1 - confusable_gap) so that
    their queries collide at rank 1. Query i is its gallery row plus isotropic
    Gaussian noise, renormalized. With heldout=True a second query set drawn
    from an independent noise stream is written alongside, sharing the
    gallery, as ``manifest_heldout.json``.
    """
    cfg.validate()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    n, dim = cfg.n_identities, cfg.dim
    rng_gallery = np.random.default_rng([cfg.seed, 0])
    gallery = _unit_rows(rng_gallery, n, dim)

    n_pairs = int(round(cfg.confusable_fraction * n / 2))
    if n_pairs:
        perm = rng_gallery.permutation(n)
        # cosine of the planted pair is 1 - gap/2, safely above 1 - gap
        theta = math.acos(1.0 - cfg.confusable_gap / 2.0)
        for p in range(n_pairs):
            a, b = int(perm[2 * p]), int(perm[2 * p + 1])
            ortho = _orthogonal_unit(rng_gallery, gallery[a])
            gallery[b] = math.cos(theta) * gallery[a] + math.sin(theta) * ortho

    def make_queries(stream: int) -> np.ndarray:
        rng = np.random.default_rng([cfg.seed, stream])
        q = gallery + cfg.noise_sigma * rng.standard_normal((n, dim))
        norms = np.linalg.norm(q, axis=1)
        if np.any(norms <= ZERO_NORM_THRESHOLD):
            raise ZeroVector("noise collapsed a query row to zero")
        return q / norms[:, None]

    gallery_path = out_dir / "gallery.f32"
    write_embedding_file(gallery_path, gallery)

    def write_split(stream: int, qfile: str, mfile: str, dname: str) -> DatasetManifest:
        qpath = out_dir / qfile
        write_embedding_file(qpath, make_queries(stream))
        manifest = DatasetManifest(
            name=dname,
            dim=dim,
            query_count=n,
            gallery_count=n,
            query_path=qpath.resolve(),
            gallery_path=gallery_path.resolve(),
            ground_truth={i: i for i in range(n)},
            seed=cfg.seed,
        )
        save_manifest(manifest, out_dir / mfile)
        return manifest

    manifest = write_split(1, "queries.f32", "manifest.json", name)
    if heldout:
        write_split(2, "queries_heldout.f32", "manifest_heldout.json", name + "-heldout")
    return manifest


def validate_dataset(manifest: DatasetManifest) -> ValidationReport:
    """Run every dataset health check; failures become report entries."""
    report = ValidationReport()

    def check(name: str, passed: bool, detail: str = "") -> None:
        report.checks.append(ValidationCheck(name, passed, detail))

    arrays = {}
    for split, fpath, rows in (
        ("query", manifest.query_path, manifest.query_count),
        ("gallery", manifest.gallery_path, manifest.gallery_count),
    ):
        fpath = Path(fpath)
        expected = _expected_bytes(rows, manifest.dim)
        exists = fpath.is_file()
        size_ok = exists and fpath.stat().st_size == expected
        check(f"{split}_file_size", size_ok,
              "" if size_ok else f"expected {expected} bytes")
        if size_ok:
            arr = np.frombuffer(fpath.read_bytes(), dtype="<f4").reshape(rows, manifest.dim)
            finite = bool(np.all(np.isfinite(arr)))
            check(f"{split}_finite", finite)
            if finite:
                arrays[split] = arr

    in_range = all(0 <= g < manifest.gallery_count for g in manifest.ground_truth.values())
    check("ground_truth_range", in_range)
    covered = set(manifest.ground_truth) == set(range(manifest.query_count))
    check("ground_truth_coverage", covered)
    values = list(manifest.ground_truth.values())
    check("ground_truth_one_to_one", len(set(values)) == len(values),
          "duplicate gallery targets" if len(set(values)) != len(values) else "")

    for split, arr in arrays.items():
        norms = np.linalg.norm(arr.astype(np.float64), axis=1)
        dev = float(np.max(np.abs(norms - 1.0))) if norms.size else 0.0
        if dev > 1e-5:
            report.warnings.append(
                f"{split} rows are not unit-normalized (max norm deviation {dev:.3g})"
            )
    return report
