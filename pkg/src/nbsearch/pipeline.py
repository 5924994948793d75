"""Glue between parsing, cleaning, chunk planning, embedding and storage."""

from __future__ import annotations

import logging
from dataclasses import dataclass

from .chunker import Chunk, SummarizerUnavailable, TokenBudget, plan_chunks
from .gateway import ModelGateway, OverCompletionBudget, ProviderError
from .ingest import Cell, CellKind, NotebookDocument
from .preprocess import clean_code, clean_markdown
from .store import StoredObject

logger = logging.getLogger(__name__)


@dataclass
class NotebookChunks:
    chunks: list[Chunk]
    cells_skipped: int = 0


def chunk_cell(cell: Cell, budget: TokenBudget, summarize) -> list[Chunk]:
    """Clean one cell with the cleaner matching its kind, then plan chunks."""
    if cell.kind is CellKind.MARKDOWN:
        cleaned = clean_markdown(cell.source)
    else:
        cleaned = clean_code(cell.source)
    return plan_chunks(cell, cleaned, budget, summarize)


def chunk_notebook(doc: NotebookDocument, budget: TokenBudget, gateway: ModelGateway) -> NotebookChunks:
    """Plan chunks for every cell of a notebook.

    A cell whose oversized units cannot be summarized is skipped whole and
    reported, never indexed partially.
    """

    def summarize(code: str) -> str:
        try:
            return gateway.summarize_code(code)
        except (ProviderError, OverCompletionBudget) as exc:
            raise SummarizerUnavailable(str(exc)) from exc

    out = NotebookChunks(chunks=[])
    for cell in doc.cells:
        try:
            chunks = chunk_cell(cell, budget, summarize)
        except SummarizerUnavailable as exc:
            logger.warning("skipping cell %d of %s: %s", cell.cell_index, doc.notebook_id, exc)
            out.cells_skipped += 1
            continue
        for chunk in chunks:
            chunk.notebook_id = doc.notebook_id
        out.chunks.extend(chunks)
    return out


def embed_chunks(doc: NotebookDocument, chunks: list[Chunk], gateway: ModelGateway) -> list[StoredObject]:
    """Embed planned chunks in one batch and wrap them as store records."""
    if not chunks:
        return []
    vectors = gateway.embed_batch([chunk.embed_text for chunk in chunks])
    return [
        StoredObject(
            notebook_id=doc.notebook_id,
            contents=chunk.contents,
            cell_type=chunk.cell_type,
            author_name=doc.author_name,
            modified_at=doc.modified_at,
            created_at=doc.created_at,
            vector=vector,
            cell_index=chunk.cell_index,
            unit_index=chunk.unit_index,
            chunk_kind=chunk.kind.value,
        )
        for chunk, vector in zip(chunks, vectors)
    ]
