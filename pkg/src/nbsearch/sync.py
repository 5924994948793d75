"""Repository indexing and the periodic synchronization loop.

Change detection is by content hash: touching a file without changing bytes
is not an update. Re-indexing a changed notebook is delete-then-insert at
file granularity, so an interrupted cycle leaves every other notebook intact
and the interrupted file is picked up again on the next cycle.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path

from .chunker import TokenBudget
from .config import AppConfig
from .gateway import OFFLINE_MODEL_ID, ModelGateway, ProviderError
from .ingest import MalformedNotebook, ScannedFile, file_times, parse_notebook, scan_repository
from .pipeline import chunk_notebook, embed_chunks
from .store import VectorStore

logger = logging.getLogger(__name__)

STATE_FILE = "sync_state.json"
LOCK_FILE = "sync.lock"


@dataclass
class NotebookState:
    content_hash: int
    modified_at: int
    chunk_count: int


@dataclass
class SyncState:
    notebooks: dict[str, NotebookState] = field(default_factory=dict)
    last_sync_at: int = 0

    def save(self, index_dir: Path) -> None:
        payload = {
            "last_sync_at": self.last_sync_at,
            "notebooks": {
                nb_id: {
                    "content_hash": f"{st.content_hash:016x}",
                    "modified_at": st.modified_at,
                    "chunk_count": st.chunk_count,
                }
                for nb_id, st in sorted(self.notebooks.items())
            },
        }
        index_dir.mkdir(parents=True, exist_ok=True)
        (index_dir / STATE_FILE).write_text(json.dumps(payload, indent=2), encoding="utf-8")

    @classmethod
    def load(cls, index_dir: Path) -> "SyncState":
        path = index_dir / STATE_FILE
        if not path.is_file():
            return cls()
        data = json.loads(path.read_text(encoding="utf-8"))
        notebooks = {
            nb_id: NotebookState(
                content_hash=int(rec["content_hash"], 16),
                modified_at=int(rec["modified_at"]),
                chunk_count=int(rec["chunk_count"]),
            )
            for nb_id, rec in data.get("notebooks", {}).items()
        }
        return cls(notebooks=notebooks, last_sync_at=int(data.get("last_sync_at", 0)))


@dataclass
class IndexSummary:
    notebooks: int = 0
    chunks: int = 0
    skipped: int = 0
    errors: int = 0


@dataclass
class SyncSummary:
    added: int = 0
    updated: int = 0
    removed: int = 0
    errors: int = 0

    @property
    def changed(self) -> bool:
        return bool(self.added or self.updated or self.removed or self.errors)


def _owner_name(path: Path) -> str:
    try:
        import pwd

        return pwd.getpwuid(path.stat().st_uid).pw_name
    except (ImportError, KeyError, OSError):
        return ""


def _load_document(config: AppConfig, scanned: ScannedFile):
    """Parse one scanned notebook; raises MalformedNotebook."""
    abs_path = config.repo_root / scanned.path
    raw = abs_path.read_bytes()
    modified_at, created_at = file_times(abs_path)
    return parse_notebook(
        raw,
        scanned.path,
        modified_at=modified_at,
        created_at=created_at,
        author_name=_owner_name(abs_path),
    )


def _index_one(config: AppConfig, gateway: ModelGateway, scanned: ScannedFile, store: VectorStore):
    """notebook file -> (StoredObjects, cells_skipped). May raise
    MalformedNotebook or ProviderError."""
    doc = _load_document(config, scanned)
    budget = TokenBudget(max_tokens=config.token_budget, estimator_id=store.estimator_id)
    planned = chunk_notebook(doc, budget, gateway)
    return embed_chunks(doc, planned.chunks, gateway), planned.cells_skipped


def _probe_dim(config: AppConfig, gateway: ModelGateway) -> int:
    """Embedding dimension for a new index; in provider mode this doubles as
    the gateway reachability check."""
    if config.model.offline_mode:
        return config.model.offline_dim
    return gateway.embed_batch(["dimension probe"])[0].dim


def create_store(config: AppConfig, gateway: ModelGateway) -> VectorStore:
    budget = TokenBudget(max_tokens=config.token_budget)
    model_id = OFFLINE_MODEL_ID if config.model.offline_mode else config.model.embed_model
    return VectorStore(
        dim=_probe_dim(config, gateway),
        model_id=model_id,
        estimator_id=budget.estimator_id,
        path=config.index_dir,
    )


def index_repository(config: AppConfig, gateway: ModelGateway) -> IndexSummary:
    """Full build: parse, clean, chunk, embed and store every matched file."""
    files = scan_repository(config.repo_root, config.glob)
    store = create_store(config, gateway)
    state = SyncState()
    summary = IndexSummary()

    for scanned in files:
        try:
            objects, cells_skipped = _index_one(config, gateway, scanned, store)
        except MalformedNotebook as exc:
            logger.error("malformed notebook skipped: %s", exc)
            summary.errors += 1
            continue
        store.upsert(objects)
        state.notebooks[scanned.path] = NotebookState(
            content_hash=scanned.content_hash,
            modified_at=scanned.modified_at,
            chunk_count=len(objects),
        )
        summary.notebooks += 1
        summary.chunks += len(objects)
        summary.skipped += cells_skipped

    state.last_sync_at = int(time.time())
    state.save(config.index_dir)
    return summary


def sync_cycle(config: AppConfig, store: VectorStore, state: SyncState, gateway: ModelGateway) -> SyncSummary:
    """One reconciliation pass between the filesystem and the store.

    A cycle that changes nothing performs no store mutation and no state-file
    write.
    """
    files = scan_repository(config.repo_root, config.glob)
    current = {f.path: f for f in files}
    summary = SyncSummary()

    for path, scanned in current.items():
        prev = state.notebooks.get(path)
        if prev is not None and prev.content_hash == scanned.content_hash:
            continue
        is_new = prev is None
        try:
            objects, _ = _index_one(config, gateway, scanned, store)
        except MalformedNotebook as exc:
            logger.error("malformed notebook: %s", exc)
            if not is_new:
                store.delete_notebook(path)
                del state.notebooks[path]
            summary.errors += 1
            continue
        except ProviderError as exc:
            logger.error("embedding failed for %s: %s", path, exc)
            summary.errors += 1
            continue
        if not is_new:
            store.delete_notebook(path)
        store.upsert(objects)
        state.notebooks[path] = NotebookState(
            content_hash=scanned.content_hash,
            modified_at=scanned.modified_at,
            chunk_count=len(objects),
        )
        if is_new:
            summary.added += 1
        else:
            summary.updated += 1

    for path in sorted(set(state.notebooks) - set(current)):
        store.delete_notebook(path)
        del state.notebooks[path]
        summary.removed += 1

    if summary.changed:
        state.last_sync_at = int(time.time())
        state.save(config.index_dir)
    return summary


def run_sync(config: AppConfig, gateway: ModelGateway, once: bool = False) -> SyncSummary:
    """Run sync cycles forever (or a single one when once=True).

    Holds an exclusive lock file so at most one sync process runs per index
    directory. Returns the last cycle's summary.
    """
    from filelock import FileLock, Timeout

    lock = FileLock(str(config.index_dir / LOCK_FILE))
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise RuntimeError(f"another sync process holds {config.index_dir / LOCK_FILE}")
    try:
        store = VectorStore.load(config.index_dir)
        state = SyncState.load(config.index_dir)
        while True:
            summary = sync_cycle(config, store, state, gateway)
            logger.info(
                "sync cycle: added=%d updated=%d removed=%d errors=%d",
                summary.added, summary.updated, summary.removed, summary.errors,
            )
            if once:
                return summary
            time.sleep(config.sync_interval_s)
    finally:
        lock.release()
