"""Recall@k computation and before/after comparison reports.

With exactly one relevant gallery item per query, Recall@k is the fraction
of queries whose ground-truth id appears in their top k. Reports serialize
to key-value text with a fixed field order so diffs stay meaningful.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

from .errors import KExceedsDepth, KOutOfRange, MismatchedRuns, MissingGroundTruth, ParseError
from .similarity import RankedList


@dataclass
class EvalReport:
    dataset: str
    k_values: list[int]
    recall: dict[int, float]
    n_queries: int
    config: dict = field(default_factory=dict)
    timestamp: str | None = None


@dataclass
class DeltaReport:
    dataset: str
    k_values: list[int]
    before: dict[int, float]
    after: dict[int, float]
    delta: dict[int, float]
    relative: dict[int, float]
    regressions: list[int]


def recall_at_k(
    lists: list[RankedList],
    ground_truth: dict[int, int],
    ks: list[int],
    dataset: str = "",
    config: dict | None = None,
    timestamp: str | None = None,
) -> EvalReport:
    """Hit rate at each cutoff in ks, averaged over queries."""
    if not ks or any(k < 1 for k in ks):
        raise KOutOfRange("every k must be a positive integer")
    ks = sorted(set(ks))
    min_depth = min(len(rl.entries) for rl in lists)
    if max(ks) > min_depth:
        raise KExceedsDepth(f"k={max(ks)} exceeds retrieval depth {min_depth}")

    hit_ranks = []
    for rl in lists:
        if rl.query_id not in ground_truth:
            raise MissingGroundTruth(f"query {rl.query_id} has no ground-truth entry")
        target = ground_truth[rl.query_id]
        rank = next((j + 1 for j, (g, _) in enumerate(rl.entries) if g == target), None)
        hit_ranks.append(rank)

    n = len(lists)
    recall = {
        k: sum(1 for r in hit_ranks if r is not None and r <= k) / n for k in ks
    }
    return EvalReport(
        dataset=dataset,
        k_values=ks,
        recall=recall,
        n_queries=n,
        config=dict(config or {}),
        timestamp=timestamp,
    )


def compare_reports(before: EvalReport, after: EvalReport) -> DeltaReport:
    """Per-k signed and relative recall change; negative deltas are flagged."""
    if before.dataset != after.dataset or before.k_values != after.k_values:
        raise MismatchedRuns("reports cover different datasets or k values")
    delta, relative, regressions = {}, {}, []
    for k in before.k_values:
        d = after.recall[k] - before.recall[k]
        delta[k] = d
        relative[k] = d / before.recall[k] if before.recall[k] else 0.0
        if d < 0:
            regressions.append(k)
    return DeltaReport(
        dataset=before.dataset,
        k_values=before.k_values,
        before=dict(before.recall),
        after=dict(after.recall),
        delta=delta,
        relative=relative,
        regressions=regressions,
    )


def write_report(path: str | Path, report: EvalReport) -> None:
    lines = [
        f"dataset: {report.dataset}",
        f"n_queries: {report.n_queries}",
        "k_values: " + ",".join(str(k) for k in report.k_values),
    ]
    for k in report.k_values:
        lines.append(f"recall@{k}: {report.recall[k]:.10g}")
    for key in sorted(report.config):
        lines.append(f"config.{key}: {report.config[key]}")
    lines.append(f"timestamp: {report.timestamp if report.timestamp else '-'}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report(path: str | Path) -> EvalReport:
    fields: dict[str, str] = {}
    config: dict[str, str] = {}
    recall: dict[int, float] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        if ": " not in line:
            raise ParseError(f"{path}:{lineno}: expected 'key: value'")
        key, value = line.split(": ", 1)
        if key.startswith("recall@"):
            recall[int(key[len("recall@"):])] = float(value)
        elif key.startswith("config."):
            config[key[len("config."):]] = value
        else:
            fields[key] = value
    try:
        return EvalReport(
            dataset=fields["dataset"],
            k_values=[int(k) for k in fields["k_values"].split(",")],
            recall=recall,
            n_queries=int(fields["n_queries"]),
            config=config,
            timestamp=None if fields.get("timestamp", "-") == "-" else fields["timestamp"],
        )
    except (KeyError, ValueError) as exc:
        raise ParseError(f"{path}: malformed report: {exc}") from exc


def render_delta_table(delta: DeltaReport) -> str:
    """Aligned plain-text comparison table, recall as percent to 2 decimals."""
    header = f"{'k':>4}  {'before':>8}  {'after':>8}  {'delta':>8}  {'rel%':>8}"
    rows = [header, "-" * len(header)]
    for k in delta.k_values:
        flag = "  (regression)" if k in delta.regressions else ""
        rows.append(
            f"{k:>4}  {100 * delta.before[k]:>8.2f}  {100 * delta.after[k]:>8.2f}  "
            f"{100 * delta.delta[k]:>+8.2f}  {100 * delta.relative[k]:>+8.2f}{flag}"
        )
    return "\n".join(rows)
