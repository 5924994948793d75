"""Query-side pipeline (exact / user-defined / code-summary queries) and the
retrieval evaluation harness.

EQ and UDQ text is cleaned the same way the index side cleaned the content so
an exact query can land at distance zero. CSQ summarizes a stored code chunk
and queries with that summary, scoring whether the summary finds its source.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import NamedTuple

from .gateway import ModelGateway
from .preprocess import clean_code, clean_markdown
from .store import SearchHit, VectorStore

QUERY_TYPES = ("EQ", "UDQ", "CSQ")

# Table rendering: which perspective each query type probes.
_PERSPECTIVE = {"EQ": "author", "UDQ": "searcher", "CSQ": "summarizer"}


class EmptyStore(Exception):
    """Queries need at least one stored object."""


class UnknownTarget(Exception):
    """CSQ target key does not name a stored code chunk."""


class ChunkKey(NamedTuple):
    notebook_id: str
    cell_index: int
    unit_index: int


@dataclass
class Query:
    qtype: str  # EQ | UDQ | CSQ
    text: str = ""
    target: ChunkKey | None = None
    k: int = 5
    expected: ChunkKey | None = None

    def __post_init__(self):
        if self.qtype not in QUERY_TYPES:
            raise ValueError(f"unknown query type: {self.qtype!r}")
        if self.qtype in ("EQ", "UDQ") and not self.text:
            raise ValueError(f"{self.qtype} query requires non-empty text")
        if self.qtype == "CSQ" and self.target is None:
            raise ValueError("CSQ query requires a target chunk key")


def clean_query_text(text: str) -> str:
    """Mirror index-side cleaning: markdown cleaner for single-line text,
    code cleaner when the text spans lines."""
    if "\n" in text:
        return clean_code(text).text
    return clean_markdown(text).text


def run_query(query: Query, store: VectorStore, gateway: ModelGateway) -> list[SearchHit]:
    """Resolve one query to its ranked hits."""
    if len(store) == 0:
        raise EmptyStore("the store holds no objects")

    if query.qtype == "CSQ":
        target = store.get(*query.target)
        if target is None:
            raise UnknownTarget(f"no stored chunk {tuple(query.target)}")
        if target.cell_type != "code":
            raise UnknownTarget(f"CSQ target {tuple(query.target)} is not a code chunk")
        # Embed the summary verbatim: index-side Summary chunks embed their
        # summary text uncleaned, and the query must mirror that.
        embed_text = gateway.summarize_code(target.contents)
    else:
        embed_text = clean_query_text(query.text)
        if not embed_text:
            raise ValueError("query text is empty after cleaning")

    vector = gateway.embed_batch([embed_text])[0]
    return store.search(vector, k=query.k)


@dataclass
class EvalRow:
    qtype: str
    query_count: int = 0
    mean_distance_of_rank1: float | None = None
    recall_at_1: float | None = None
    recall_at_k: float | None = None


@dataclass
class EvalReport:
    rows: dict[str, EvalRow] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            qtype: {
                "query_count": row.query_count,
                "mean_distance_of_rank1": row.mean_distance_of_rank1,
                "recall_at_1": row.recall_at_1,
                "recall_at_k": row.recall_at_k,
            }
            for qtype, row in self.rows.items()
        }


def evaluate(queries: list[Query], store: VectorStore, gateway: ModelGateway) -> EvalReport:
    """Run scored queries and aggregate rank-1 distance and recall per type.

    Every query must carry the key of its intended source chunk (`expected`).
    """
    sums = {q: [0, 0.0, 0, 0] for q in QUERY_TYPES}  # count, dist_sum, hit1, hitk
    for query in queries:
        if query.expected is None and query.qtype == "CSQ":
            query = Query(qtype="CSQ", target=query.target, k=query.k, expected=query.target)
        if query.expected is None:
            raise ValueError("evaluation queries must carry an expected chunk key")
        hits = run_query(query, store, gateway)
        bucket = sums[query.qtype]
        bucket[0] += 1
        if hits:
            bucket[1] += hits[0].distance
            keys = [ChunkKey(h.object.notebook_id, h.object.cell_index, h.object.unit_index) for h in hits]
            if keys[0] == query.expected:
                bucket[2] += 1
            if query.expected in keys:
                bucket[3] += 1

    report = EvalReport()
    for qtype in QUERY_TYPES:
        count, dist_sum, hit1, hitk = sums[qtype]
        row = EvalRow(qtype=qtype, query_count=count)
        if count:
            row.mean_distance_of_rank1 = dist_sum / count
            row.recall_at_1 = hit1 / count
            row.recall_at_k = hitk / count
        report.rows[qtype] = row
    return report


def render_report(report: EvalReport) -> str:
    """Aligned three-row table: one row per query type."""
    headers = ("Query Type", "Perspective", "Queries", "Mean Rank-1 Distance", "Recall@1", "Recall@k")
    table = [headers]
    for qtype in QUERY_TYPES:
        row = report.rows.get(qtype, EvalRow(qtype=qtype))
        table.append((
            qtype,
            _PERSPECTIVE[qtype],
            str(row.query_count),
            "-" if row.mean_distance_of_rank1 is None else f"{row.mean_distance_of_rank1:.4f}",
            "-" if row.recall_at_1 is None else f"{row.recall_at_1:.3f}",
            "-" if row.recall_at_k is None else f"{row.recall_at_k:.3f}",
        ))
    widths = [max(len(r[c]) for r in table) for c in range(len(headers))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(widths[c]) for c, cell in enumerate(row)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * widths[c] for c in range(len(headers))))
    return "\n".join(lines)


def parse_query_line(line: str) -> Query:
    """Parse one JSON-lines query record."""
    rec = json.loads(line)
    if not isinstance(rec, dict):
        raise ValueError("query record must be a JSON object")
    return Query(
        qtype=rec.get("qtype", ""),
        text=rec.get("text", "") or "",
        target=_key_from(rec.get("target")),
        k=int(rec.get("k", 5)),
        expected=_key_from(rec.get("expected")),
    )


def load_query_file(path) -> tuple[list[Query], list[tuple[int, str]]]:
    """Read a JSON-lines query file.

    Returns (queries, errors); each error is (1-based line number, message)
    and does not block the remaining lines.
    """
    queries: list[Query] = []
    errors: list[tuple[int, str]] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                queries.append(parse_query_line(line))
            except (json.JSONDecodeError, ValueError, TypeError, KeyError) as exc:
                errors.append((lineno, str(exc)))
    return queries, errors


def _key_from(value) -> ChunkKey | None:
    if value is None:
        return None
    if not isinstance(value, dict):
        raise ValueError("chunk key must be an object with notebook_id/cell_index/unit_index")
    return ChunkKey(
        notebook_id=str(value["notebook_id"]),
        cell_index=int(value["cell_index"]),
        unit_index=int(value["unit_index"]),
    )
