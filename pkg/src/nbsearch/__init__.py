"""Semantic search for Jupyter Notebook repositories.

Chunks notebooks at cell and function granularity, embeds the chunks through
a pluggable model gateway, stores them in an embedded vector index, and
answers exact top-k cosine-distance queries.
"""

from .chunker import Chunk, ChunkKind, CodeUnit, TokenBudget, count_tokens, extract_units, plan_chunks
from .gateway import EmbeddingVector, ModelConfig, ModelGateway, deterministic_embed
from .ingest import Cell, CellKind, NotebookDocument, parse_notebook, scan_repository
from .preprocess import CleanText, clean_code, clean_markdown
from .queries import ChunkKey, EvalReport, Query, evaluate, run_query
from .store import SearchFilter, SearchHit, StoredObject, VectorStore

__version__ = "0.1.0"

__all__ = [
    "Cell",
    "CellKind",
    "Chunk",
    "ChunkKey",
    "ChunkKind",
    "CleanText",
    "CodeUnit",
    "EmbeddingVector",
    "EvalReport",
    "ModelConfig",
    "ModelGateway",
    "NotebookDocument",
    "Query",
    "SearchFilter",
    "SearchHit",
    "StoredObject",
    "TokenBudget",
    "VectorStore",
    "clean_code",
    "clean_markdown",
    "count_tokens",
    "deterministic_embed",
    "evaluate",
    "extract_units",
    "parse_notebook",
    "plan_chunks",
    "run_query",
    "scan_repository",
    "__version__",
]
