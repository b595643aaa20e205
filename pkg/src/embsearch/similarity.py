"""Exact batched cosine similarity and deterministic top-k retrieval.

Inputs must be unit-normalized so the dense product is cosine similarity.
Ties are always broken toward the lower gallery id, which makes ranked
lists reproducible bit-for-bit across runs.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .data import EmbeddingMatrix
from .errors import DimMismatch, KOutOfRange, NonFiniteValue, NotNormalized, ParseError


@dataclass
class RankedList:
    """Retrieved gallery ids for one query, best first, scores non-increasing."""

    query_id: int
    entries: list[tuple[int, float]]


def similarity_matrix(queries: EmbeddingMatrix, gallery: EmbeddingMatrix) -> np.ndarray:
    """Dense n_queries x n_gallery cosine score matrix (float32)."""
    if not queries.normalized or not gallery.normalized:
        raise NotNormalized("similarity_matrix requires normalized inputs")
    if queries.dim != gallery.dim:
        raise DimMismatch(f"query dim {queries.dim} != gallery dim {gallery.dim}")
    sims = queries.data @ gallery.data.T
    if not np.all(np.isfinite(sims)):
        raise NonFiniteValue("similarity matrix contains non-finite entries")
    return sims


def top_k(sims: np.ndarray, k: int) -> list[RankedList]:
    """Per-query k best gallery ids; equal scores resolve to the lower id."""
    n_gallery = sims.shape[1]
    if not 1 <= k <= n_gallery:
        raise KOutOfRange(f"k={k} outside [1, {n_gallery}]")
    # stable sort on negated scores keeps ascending gallery-id order for ties
    order = np.argsort(-sims, axis=1, kind="stable")[:, :k]
    picked = np.take_along_axis(sims, order, axis=1)
    return [
        RankedList(
            query_id=i,
            entries=[(int(g), float(s)) for g, s in zip(order[i], picked[i])],
        )
        for i in range(sims.shape[0])
    ]


def write_ranked_lists(
    path: str | Path,
    lists: list[RankedList],
    meta: dict | None = None,
    source_ranks: dict[int, list[int]] | None = None,
) -> None:
    """Serialize lists as `query_id TAB rank TAB gallery_id TAB score` lines.

    Scores carry 9 significant digits, enough to round-trip float32 exactly.
    An optional fifth column records each entry's rank in the pre-resolution
    list. Metadata is embedded as leading `# key=value` comment lines.
    """
    out = []
    for key, value in (meta or {}).items():
        out.append(f"# {key}={value}")
    for rl in lists:
        ranks = source_ranks.get(rl.query_id) if source_ranks else None
        for j, (gid, score) in enumerate(rl.entries):
            line = f"{rl.query_id}\t{j + 1}\t{gid}\t{score:.9g}"
            if ranks is not None:
                line += f"\t{ranks[j]}"
            out.append(line)
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def read_ranked_lists(path: str | Path) -> list[RankedList]:
    """Parse a ranked-list file; extra columns (source_rank) are ignored."""
    lists: dict[int, list[tuple[int, float]]] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) < 4:
            raise ParseError(f"{path}:{lineno}: expected at least 4 tab-separated fields")
        try:
            qid, rank, gid, score = int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3])
        except ValueError as exc:
            raise ParseError(f"{path}:{lineno}: {exc}") from exc
        entries = lists.setdefault(qid, [])
        if rank != len(entries) + 1:
            raise ParseError(f"{path}:{lineno}: rank {rank} out of order for query {qid}")
        entries.append((gid, score))
    return [RankedList(query_id=q, entries=lists[q]) for q in sorted(lists)]
