"""Discover notebook files in a repository and parse them into typed cells.

Only nbformat-v4-shaped JSON is accepted (a top-level ``cells`` array); the
legacy v3 ``worksheets`` layout raises MalformedNotebook. Output cells keep
just what the pipeline needs: position, markdown/code kind, and joined source.
"""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass
from pathlib import Path

from .hashing import fnv1a_64

logger = logging.getLogger(__name__)

DEFAULT_GLOB = "**/*.ipynb"


class MalformedNotebook(Exception):
    """The file is not a parseable v4 notebook; callers report and skip it whole."""


class RootNotFound(Exception):
    """The repository root to scan does not exist."""


class CellKind(enum.Enum):
    MARKDOWN = "markdown"
    CODE = "code"


@dataclass
class Cell:
    cell_index: int
    kind: CellKind
    source: str


@dataclass
class NotebookDocument:
    notebook_id: str
    cells: list[Cell]
    author_name: str = ""
    created_at: int = 0
    modified_at: int = 0
    content_hash: int = 0


@dataclass
class ScannedFile:
    path: str
    modified_at: int
    content_hash: int


def parse_notebook(
    raw_bytes: bytes,
    path: str,
    *,
    modified_at: int = 0,
    created_at: int | None = None,
    author_name: str = "",
) -> NotebookDocument:
    """Parse raw .ipynb bytes into a NotebookDocument.

    Keeps markdown and code cells in file order (anything else, e.g. "raw",
    is dropped); cell outputs and execution metadata are discarded. Raises
    MalformedNotebook for anything that is not v4-shaped notebook JSON.
    """
    try:
        data = json.loads(raw_bytes.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedNotebook(f"{path}: not UTF-8 JSON: {exc}") from exc

    if not isinstance(data, dict) or not isinstance(data.get("cells"), list):
        raise MalformedNotebook(f"{path}: no top-level 'cells' array")

    cells: list[Cell] = []
    for raw_cell in data["cells"]:
        if not isinstance(raw_cell, dict) or "cell_type" not in raw_cell or "source" not in raw_cell:
            raise MalformedNotebook(f"{path}: cell missing 'cell_type' or 'source'")
        cell_type = raw_cell["cell_type"]
        if cell_type == "markdown":
            kind = CellKind.MARKDOWN
        elif cell_type == "code":
            kind = CellKind.CODE
        else:
            continue
        cells.append(Cell(cell_index=len(cells), kind=kind, source=_join_source(raw_cell["source"], path)))

    modified_at = int(modified_at)
    created = modified_at if created_at is None else int(created_at)
    if created > modified_at:
        created = modified_at

    return NotebookDocument(
        notebook_id=path.replace("\\", "/"),
        cells=cells,
        author_name=_author_name(data, author_name),
        created_at=created,
        modified_at=modified_at,
        content_hash=fnv1a_64(raw_bytes),
    )


def _join_source(source, path: str) -> str:
    # Notebook JSON stores source as a string or a list of strings that are
    # concatenated without inserting separators.
    if isinstance(source, str):
        return source
    if isinstance(source, list) and all(isinstance(part, str) for part in source):
        return "".join(source)
    raise MalformedNotebook(f"{path}: cell 'source' is neither string nor list of strings")


def _author_name(data: dict, fallback: str) -> str:
    authors = data.get("metadata", {})
    authors = authors.get("authors") if isinstance(authors, dict) else None
    if isinstance(authors, list) and authors:
        first = authors[0]
        if isinstance(first, dict) and isinstance(first.get("name"), str):
            return first["name"]
    return fallback


def scan_repository(root: str | Path, glob: str = DEFAULT_GLOB) -> list[ScannedFile]:
    """List matching notebook files under root, hashed and sorted by path.

    Paths are repository-relative with '/' separators. Files inside hidden
    directories (any path component starting with '.', which covers
    .ipynb_checkpoints) are skipped. Unreadable files are logged and skipped.
    """
    root = Path(root)
    if not root.is_dir():
        raise RootNotFound(str(root))

    found: list[ScannedFile] = []
    for path in root.glob(glob):
        if not path.is_file():
            continue
        rel = path.relative_to(root)
        if any(part.startswith(".") for part in rel.parts[:-1]):
            continue
        try:
            raw = path.read_bytes()
            mtime = int(path.stat().st_mtime)
        except OSError as exc:
            logger.warning("skipping unreadable file %s: %s", path, exc)
            continue
        found.append(ScannedFile(path=rel.as_posix(), modified_at=mtime, content_hash=fnv1a_64(raw)))

    found.sort(key=lambda f: f.path)
    return found


def file_times(path: Path) -> tuple[int, int | None]:
    """(modified_at, created_at) for a file; created_at is None when the
    platform exposes no birth time."""
    st = path.stat()
    modified = int(st.st_mtime)
    birth = getattr(st, "st_birthtime", None)
    created = int(birth) if birth is not None else None
    return modified, created
