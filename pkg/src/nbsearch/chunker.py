"""Split cleaned cells into embeddable chunks that respect the token budget.

A cell that fits the budget is embedded whole. Oversized markdown is packed
paragraph-by-paragraph; oversized code drops to class/function granularity via
the AST, with model summarization as the last resort for units that are still
too large. Every chunk that leaves the planner fits the budget.
"""

from __future__ import annotations

import ast
import enum
import re
from dataclasses import dataclass
from typing import Callable

from .ingest import Cell, CellKind
from .preprocess import CleanText, clean_markdown

HEURISTIC_V1 = "heuristic-v1"
DEFAULT_MAX_TOKENS = 8191

# heuristic-v1: a token is a maximal [0-9A-Za-z_] run or one other
# non-whitespace character; ASCII classes keep counts portable.
_TOKEN_RE = re.compile(r"[0-9A-Za-z_]+|[^0-9A-Za-z_\s]", re.ASCII)


class SyntaxErrorInCell(Exception):
    """Cell source does not parse as Python; the planner falls back to truncation."""


class SummarizerUnavailable(Exception):
    """The summarization callback cannot produce a summary; the cell is skipped."""


def tokens(text: str) -> list[str]:
    """The heuristic-v1 token sequence of text."""
    return _TOKEN_RE.findall(text)


def _heuristic_v1(text: str) -> int:
    return len(_TOKEN_RE.findall(text))


_ESTIMATORS: dict[str, Callable[[str], int]] = {HEURISTIC_V1: _heuristic_v1}


def register_estimator(estimator_id: str, fn: Callable[[str], int]) -> None:
    """Register a provider-exact token counter under estimator_id."""
    _ESTIMATORS[estimator_id] = fn


def count_tokens(text: str, estimator_id: str = HEURISTIC_V1) -> int:
    try:
        return _ESTIMATORS[estimator_id](text)
    except KeyError:
        raise ValueError(f"unknown token estimator: {estimator_id!r}") from None


def truncate_to_tokens(text: str, max_tokens: int, estimator_id: str = HEURISTIC_V1) -> str:
    """Head-truncate text so it contains at most max_tokens tokens."""
    if count_tokens(text, estimator_id) <= max_tokens:
        return text
    if estimator_id == HEURISTIC_V1:
        end = 0
        for i, match in enumerate(_TOKEN_RE.finditer(text)):
            if i == max_tokens:
                break
            end = match.end()
        return text[:end]
    # Generic estimator: bisect the shortest prefix within budget.
    lo, hi = 0, len(text)
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if count_tokens(text[:mid], estimator_id) <= max_tokens:
            lo = mid
        else:
            hi = mid - 1
    return text[:lo]


@dataclass
class TokenBudget:
    max_tokens: int = DEFAULT_MAX_TOKENS
    estimator_id: str = HEURISTIC_V1

    def __post_init__(self):
        if self.max_tokens < 1:
            raise ValueError("max_tokens must be positive")


class ChunkKind(enum.Enum):
    WHOLE_CELL = "WholeCell"
    CLASS_UNIT = "ClassUnit"
    FUNCTION_UNIT = "FunctionUnit"
    RESIDUE = "Residue"
    SUMMARY = "Summary"
    TRUNCATED = "Truncated"


@dataclass
class CodeUnit:
    kind: ChunkKind
    name: str
    source: str
    line_span: tuple[int, int]


@dataclass
class Chunk:
    notebook_id: str
    cell_index: int
    unit_index: int
    kind: ChunkKind
    contents: str
    embed_text: str
    cell_type: str  # "text" | "code"
    token_count: int


def extract_units(code: str) -> list[CodeUnit]:
    """Decompose top-level Python code into class/function units plus one residue.

    Top-level class and function definitions become their own units (bodies
    intact, nested defs are not split out, decorators included). Everything
    else is concatenated in source order into a single residue unit, emitted
    last and omitted when empty.
    """
    try:
        tree = ast.parse(code)
    except (SyntaxError, ValueError) as exc:
        raise SyntaxErrorInCell(str(exc)) from exc

    lines = code.splitlines()
    units: list[CodeUnit] = []
    residue_nodes: list[ast.stmt] = []

    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef, ast.ClassDef)):
            start = node.lineno
            if node.decorator_list:
                start = min(start, min(d.lineno for d in node.decorator_list))
            end = node.end_lineno or start
            kind = ChunkKind.CLASS_UNIT if isinstance(node, ast.ClassDef) else ChunkKind.FUNCTION_UNIT
            units.append(
                CodeUnit(
                    kind=kind,
                    name=node.name,
                    source="\n".join(lines[start - 1 : end]),
                    line_span=(start, end),
                )
            )
        else:
            residue_nodes.append(node)

    if residue_nodes:
        # Column-precise segments: line slicing would duplicate source for
        # statements sharing a line ("x=1; y=2").
        parts = [ast.get_source_segment(code, node) or "" for node in residue_nodes]
        units.append(
            CodeUnit(
                kind=ChunkKind.RESIDUE,
                name="<residue>",
                source="\n".join(parts),
                line_span=(residue_nodes[0].lineno, residue_nodes[-1].end_lineno or residue_nodes[-1].lineno),
            )
        )
    return units


def plan_chunks(
    cell: Cell,
    cleaned: CleanText,
    budget: TokenBudget,
    summarize: Callable[[str], str],
) -> list[Chunk]:
    """Plan the embeddable chunks for one cleaned cell.

    Under-budget cells become a single WholeCell chunk. Oversized markdown is
    split on paragraph boundaries and greedily repacked; oversized code is
    split into AST units, and units still over budget are summarized (the
    chunk keeps the original source as contents and embeds the summary).
    Cells that cannot be parsed fall back to head truncation.

    Raises SummarizerUnavailable if the callback fails; the caller skips the
    whole cell rather than indexing it partially.
    """
    text = cleaned.text
    if not text:
        return []
    cell_type = "text" if cell.kind is CellKind.MARKDOWN else "code"
    est = budget.estimator_id

    total = count_tokens(text, est)
    if total <= budget.max_tokens:
        parts = [(ChunkKind.WHOLE_CELL, text, text)]
    elif cell.kind is CellKind.MARKDOWN:
        pieces = _pack_paragraphs(cell.source, budget) or [truncate_to_tokens(text, budget.max_tokens, est)]
        parts = [(ChunkKind.WHOLE_CELL, t, t) for t in pieces]
    else:
        parts = _plan_code(text, budget, summarize)

    return [
        Chunk(
            notebook_id="",
            cell_index=cell.cell_index,
            unit_index=i,
            kind=kind,
            contents=contents,
            embed_text=embed_text,
            cell_type=cell_type,
            token_count=count_tokens(embed_text, est),
        )
        for i, (kind, contents, embed_text) in enumerate(parts)
    ]


def _pack_paragraphs(raw_source: str, budget: TokenBudget) -> list[str]:
    """Greedily pack cleaned markdown paragraphs into budget-sized pieces.

    Paragraph boundaries come from the raw cell source (cleaning collapses
    newlines, so boundaries must be found before cleaning). A single paragraph
    over budget is head-truncated.
    """
    est = budget.estimator_id
    paragraphs = []
    for block in re.split(r"\n\s*\n", raw_source):
        cleaned = clean_markdown(block).text
        if cleaned:
            paragraphs.append(cleaned)

    pieces: list[str] = []
    group: list[str] = []
    group_tokens = 0
    for para in paragraphs:
        n = count_tokens(para, est)
        if n > budget.max_tokens:
            if group:
                pieces.append(" ".join(group))
                group, group_tokens = [], 0
            pieces.append(truncate_to_tokens(para, budget.max_tokens, est))
            continue
        if group and group_tokens + n > budget.max_tokens:
            pieces.append(" ".join(group))
            group, group_tokens = [], 0
        group.append(para)
        group_tokens += n
    if group:
        pieces.append(" ".join(group))
    return pieces


def _plan_code(
    text: str, budget: TokenBudget, summarize: Callable[[str], str]
) -> list[tuple[ChunkKind, str, str]]:
    est = budget.estimator_id
    try:
        units = extract_units(text)
    except SyntaxErrorInCell:
        units = []
    if not units:
        # Unparseable or statement-free (e.g. comments only): keep the head.
        head = truncate_to_tokens(text, budget.max_tokens, est)
        return [(ChunkKind.TRUNCATED, head, head)]

    parts: list[tuple[ChunkKind, str, str]] = []
    for unit in units:
        if count_tokens(unit.source, est) <= budget.max_tokens:
            parts.append((unit.kind, unit.source, unit.source))
        else:
            summary = summarize(unit.source)
            if count_tokens(summary, est) > budget.max_tokens:
                summary = truncate_to_tokens(summary, budget.max_tokens, est)
            parts.append((ChunkKind.SUMMARY, unit.source, summary))
    return parts
