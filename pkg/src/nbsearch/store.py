"""Embedded vector store: exact top-k cosine search over stored chunks.

Objects live in memory as one float32 matrix plus a parallel metadata list;
search is an exact full scan in double precision. When the store is bound to
a directory every mutation is persisted: `manifest.json` (header),
`objects.jsonl` (one metadata record per row) and `vectors.bin` (magic
"NBSV1\\0" followed by row-major little-endian float32).

Concurrency contract: many readers or one writer. Readers operate on an
immutable snapshot grabbed at call start, so a search that began before an
upsert commits sees the pre-commit state.
"""

from __future__ import annotations

import json
import os
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .gateway import EmbeddingVector

VECTORS_MAGIC = b"NBSV1\x00"
FORMAT_VERSION = 1

MANIFEST_FILE = "manifest.json"
OBJECTS_FILE = "objects.jsonl"
VECTORS_FILE = "vectors.bin"


class DimensionMismatch(Exception):
    """Vector dimension disagrees with the store's manifest dimension."""


class DuplicateKeyInBatch(Exception):
    """Two objects in one upsert batch share an upsert key."""


class CorruptIndex(Exception):
    """The on-disk layout is missing, inconsistent, or damaged."""


@dataclass
class StoredObject:
    notebook_id: str
    contents: str
    cell_type: str  # "text" | "code"
    author_name: str
    modified_at: int
    created_at: int
    vector: EmbeddingVector
    cell_index: int
    unit_index: int
    chunk_kind: str
    seq: int = -1  # assigned by the store

    @property
    def key(self) -> tuple[str, int, int]:
        return (self.notebook_id, self.cell_index, self.unit_index)


@dataclass
class SearchHit:
    object: StoredObject
    distance: float


@dataclass
class SearchFilter:
    cell_type: str | None = None
    notebook_prefix: str | None = None

    def matches(self, obj: StoredObject) -> bool:
        if self.cell_type is not None and obj.cell_type != self.cell_type:
            return False
        if self.notebook_prefix is not None and not obj.notebook_id.startswith(self.notebook_prefix):
            return False
        return True


@dataclass
class UpsertResult:
    inserted: int = 0
    replaced: int = 0


@dataclass
class _Snapshot:
    objects: tuple[StoredObject, ...] = ()
    matrix32: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.float32))
    matrix64: np.ndarray = field(default_factory=lambda: np.zeros((0, 0), dtype=np.float64))
    # row_alias[i] = first row with byte-identical vector; BLAS reductions can
    # differ in the last ulp across row offsets, and equal vectors must score
    # exactly equal for the (distance, seq) tie rule to engage.
    row_alias: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    by_key: dict = field(default_factory=dict)


def _alias_rows(matrix32: np.ndarray) -> np.ndarray:
    alias = np.arange(matrix32.shape[0], dtype=np.intp)
    first_seen: dict[bytes, int] = {}
    for i in range(matrix32.shape[0]):
        alias[i] = first_seen.setdefault(matrix32[i].tobytes(), i)
    return alias


def _unit_rows(matrix32: np.ndarray) -> np.ndarray:
    """Stored rows upcast to float64 and renormalized for the distance scan.

    float32 storage perturbs unit norms by ~1e-7; renormalizing in double
    precision keeps 1 - cos(query, row) second-order accurate (~1e-15 for an
    identical query), which the exact-query guarantees rely on.
    """
    m = matrix32.astype(np.float64)
    if m.size:
        norms = np.linalg.norm(m, axis=1, keepdims=True)
        norms[norms == 0.0] = 1.0
        m = m / norms
    return m


class VectorStore:
    def __init__(
        self,
        dim: int,
        model_id: str = "",
        estimator_id: str = "heuristic-v1",
        path: str | Path | None = None,
    ):
        if dim < 1:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.model_id = model_id
        self.estimator_id = estimator_id
        self._lock = threading.Lock()
        self._state = _Snapshot(matrix32=np.zeros((0, dim), dtype=np.float32),
                                matrix64=np.zeros((0, dim), dtype=np.float64))
        self._next_seq = 0
        self._path: Path | None = None
        if path is not None:
            self._path = Path(path)
            self.save(self._path)

    # -- queries --------------------------------------------------------

    def __len__(self) -> int:
        return len(self._state.objects)

    @property
    def object_count(self) -> int:
        return len(self._state.objects)

    def notebook_ids(self) -> set[str]:
        return {obj.notebook_id for obj in self._state.objects}

    def get(self, notebook_id: str, cell_index: int, unit_index: int) -> StoredObject | None:
        state = self._state
        row = state.by_key.get((notebook_id, cell_index, unit_index))
        return None if row is None else state.objects[row]

    def iter_objects(self):
        return iter(self._state.objects)

    def search(
        self,
        query_vector: EmbeddingVector,
        k: int,
        filter: SearchFilter | None = None,
    ) -> list[SearchHit]:
        """Exact top-k by cosine distance, ties broken by insertion seq.

        Distance is 1 - dot(query, stored) computed in double precision and
        clamped into [0, 2] (float32 storage rounds unit norms by ~1e-7).
        """
        if k < 1:
            raise ValueError("k must be >= 1")
        if query_vector.dim != self.dim:
            raise DimensionMismatch(f"query dim {query_vector.dim} != store dim {self.dim}")
        state = self._state
        if not state.objects:
            return []

        q = np.asarray(query_vector.values, dtype=np.float64)
        sims = (state.matrix64 @ q)[state.row_alias]
        distances = np.clip(1.0 - sims, 0.0, 2.0)

        if filter is None:
            candidates = range(len(state.objects))
        else:
            candidates = [i for i, obj in enumerate(state.objects) if filter.matches(obj)]
        ranked = sorted(candidates, key=lambda i: (distances[i], state.objects[i].seq))
        return [SearchHit(object=state.objects[i], distance=float(distances[i])) for i in ranked[:k]]

    # -- mutations --------------------------------------------------------

    def upsert(self, objects: list[StoredObject]) -> UpsertResult:
        """Insert objects with new keys, replace rows for existing keys.

        The whole batch is validated (dimension, in-batch key uniqueness)
        before any mutation; seq is preserved on replace. Durable before
        return when the store is bound to a directory.
        """
        seen_keys = set()
        rows32 = []
        for obj in objects:
            if obj.vector.dim != self.dim or len(obj.vector.values) != self.dim:
                raise DimensionMismatch(
                    f"object {obj.key} has dim {obj.vector.dim}, store dim {self.dim}"
                )
            if obj.key in seen_keys:
                raise DuplicateKeyInBatch(str(obj.key))
            seen_keys.add(obj.key)
            rows32.append(np.asarray(obj.vector.values, dtype=np.float32))

        with self._lock:
            state = self._state
            new_objects = list(state.objects)
            new_rows = list(state.matrix32)
            by_key = dict(state.by_key)
            result = UpsertResult()
            for obj, row32 in zip(objects, rows32):
                canonical = EmbeddingVector(values=row32, dim=self.dim, model_id=obj.vector.model_id)
                existing = by_key.get(obj.key)
                if existing is None:
                    stored = _with_seq(obj, canonical, self._next_seq)
                    self._next_seq += 1
                    by_key[obj.key] = len(new_objects)
                    new_objects.append(stored)
                    new_rows.append(row32)
                    result.inserted += 1
                else:
                    stored = _with_seq(obj, canonical, new_objects[existing].seq)
                    new_objects[existing] = stored
                    new_rows[existing] = row32
                    result.replaced += 1
            self._swap(new_objects, new_rows, by_key)
            self._persist_locked()
        return result

    def delete_notebook(self, notebook_id: str) -> int:
        """Remove every object of one notebook; returns the count removed."""
        with self._lock:
            state = self._state
            keep = [i for i, obj in enumerate(state.objects) if obj.notebook_id != notebook_id]
            removed = len(state.objects) - len(keep)
            if removed == 0:
                return 0
            new_objects = [state.objects[i] for i in keep]
            new_rows = [state.matrix32[i] for i in keep]
            by_key = {obj.key: row for row, obj in enumerate(new_objects)}
            self._swap(new_objects, new_rows, by_key)
            self._persist_locked()
        return removed

    def _swap(self, objects: list[StoredObject], rows, by_key: dict) -> None:
        if rows:
            matrix32 = np.vstack([row.reshape(1, self.dim) for row in rows]).astype(np.float32)
        else:
            matrix32 = np.zeros((0, self.dim), dtype=np.float32)
        self._state = _Snapshot(
            objects=tuple(objects),
            matrix32=matrix32,
            matrix64=_unit_rows(matrix32),
            row_alias=_alias_rows(matrix32),
            by_key=by_key,
        )

    # -- persistence --------------------------------------------------------

    def save(self, directory: str | Path) -> None:
        """Write the full on-disk layout (atomic per file)."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        state = self._state
        manifest = {
            "format_version": FORMAT_VERSION,
            "dim": self.dim,
            "model_id": self.model_id,
            "estimator_id": self.estimator_id,
            "object_count": len(state.objects),
        }
        lines = []
        for obj in state.objects:
            lines.append(json.dumps({
                "notebook_id": obj.notebook_id,
                "contents": obj.contents,
                "cell_type": obj.cell_type,
                "author_name": obj.author_name,
                "modified_at": obj.modified_at,
                "created_at": obj.created_at,
                "cell_index": obj.cell_index,
                "unit_index": obj.unit_index,
                "chunk_kind": obj.chunk_kind,
                "seq": obj.seq,
            }, ensure_ascii=False))
        _atomic_write(directory / OBJECTS_FILE, ("\n".join(lines) + ("\n" if lines else "")).encode("utf-8"))
        _atomic_write(
            directory / VECTORS_FILE,
            VECTORS_MAGIC + np.ascontiguousarray(state.matrix32, dtype="<f4").tobytes(),
        )
        _atomic_write(directory / MANIFEST_FILE, json.dumps(manifest, indent=2).encode("utf-8"))

    def _persist_locked(self) -> None:
        if self._path is not None:
            self.save(self._path)

    @classmethod
    def load(cls, directory: str | Path, bind: bool = True) -> "VectorStore":
        """Rebuild a store from its on-disk layout.

        Raises CorruptIndex whenever the manifest, metadata lines and vector
        rows do not agree exactly. With bind=True the loaded store persists
        future mutations back to the same directory.
        """
        directory = Path(directory)
        manifest_path = directory / MANIFEST_FILE
        if not manifest_path.is_file():
            raise CorruptIndex(f"missing {MANIFEST_FILE} in {directory}")
        try:
            manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise CorruptIndex(f"unreadable manifest: {exc}") from exc

        if manifest.get("format_version") != FORMAT_VERSION:
            raise CorruptIndex(f"unsupported format_version: {manifest.get('format_version')!r}")
        dim = manifest.get("dim")
        count = manifest.get("object_count")
        if not isinstance(dim, int) or dim < 1 or not isinstance(count, int) or count < 0:
            raise CorruptIndex("manifest dim/object_count invalid")

        try:
            raw_objects = (directory / OBJECTS_FILE).read_text(encoding="utf-8")
            raw_vectors = (directory / VECTORS_FILE).read_bytes()
        except OSError as exc:
            raise CorruptIndex(f"missing store file: {exc}") from exc

        if not raw_vectors.startswith(VECTORS_MAGIC):
            raise CorruptIndex("bad magic in vectors.bin")
        payload = raw_vectors[len(VECTORS_MAGIC):]
        if len(payload) != count * dim * 4:
            raise CorruptIndex(
                f"vectors.bin holds {len(payload)} payload bytes, expected {count * dim * 4}"
            )
        matrix32 = np.frombuffer(payload, dtype="<f4").reshape(count, dim).copy()

        lines = [line for line in raw_objects.splitlines() if line.strip()]
        if len(lines) != count:
            raise CorruptIndex(f"objects.jsonl has {len(lines)} rows, manifest says {count}")

        model_id = str(manifest.get("model_id", ""))
        store = cls(dim=dim, model_id=model_id, estimator_id=str(manifest.get("estimator_id", "")))
        objects = []
        for row, line in enumerate(lines):
            try:
                rec = json.loads(line)
                obj = StoredObject(
                    notebook_id=rec["notebook_id"],
                    contents=rec["contents"],
                    cell_type=rec["cell_type"],
                    author_name=rec["author_name"],
                    modified_at=rec["modified_at"],
                    created_at=rec["created_at"],
                    vector=EmbeddingVector(values=matrix32[row], dim=dim, model_id=model_id),
                    cell_index=rec["cell_index"],
                    unit_index=rec["unit_index"],
                    chunk_kind=rec["chunk_kind"],
                    seq=rec["seq"],
                )
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorruptIndex(f"objects.jsonl row {row}: {exc}") from exc
            objects.append(obj)

        keys = {obj.key for obj in objects}
        if len(keys) != len(objects):
            raise CorruptIndex("duplicate upsert keys in objects.jsonl")

        by_key = {obj.key: row for row, obj in enumerate(objects)}
        store._state = _Snapshot(
            objects=tuple(objects),
            matrix32=matrix32,
            matrix64=_unit_rows(matrix32),
            by_key=by_key,
        )
        store._next_seq = max((obj.seq for obj in objects), default=-1) + 1
        if bind:
            store._path = directory
        return store


def _with_seq(obj: StoredObject, vector: EmbeddingVector, seq: int) -> StoredObject:
    return StoredObject(
        notebook_id=obj.notebook_id,
        contents=obj.contents,
        cell_type=obj.cell_type,
        author_name=obj.author_name,
        modified_at=obj.modified_at,
        created_at=obj.created_at,
        vector=vector,
        cell_index=obj.cell_index,
        unit_index=obj.unit_index,
        chunk_kind=obj.chunk_kind,
        seq=seq,
    )


def _atomic_write(path: Path, data: bytes) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    os.replace(tmp, path)
