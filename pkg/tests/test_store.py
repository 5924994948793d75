from __future__ import annotations

import random

import numpy as np
import pytest

from nbsearch.gateway import EmbeddingVector, deterministic_embed
from nbsearch.store import (
    VECTORS_FILE,
    CorruptIndex,
    DimensionMismatch,
    DuplicateKeyInBatch,
    SearchFilter,
    StoredObject,
    VectorStore,
)

from oracles.scan_oracle import scan_top_k


def unit(values) -> EmbeddingVector:
    arr = np.asarray(values, dtype=np.float64)
    return EmbeddingVector(values=arr / np.linalg.norm(arr), dim=arr.size, model_id="test")


def obj(notebook_id, cell_index, unit_index, vector, cell_type="code", contents="c") -> StoredObject:
    return StoredObject(
        notebook_id=notebook_id,
        contents=contents,
        cell_type=cell_type,
        author_name="",
        modified_at=0,
        created_at=0,
        vector=vector,
        cell_index=cell_index,
        unit_index=unit_index,
        chunk_kind="WholeCell",
    )


def random_store(rng: random.Random, max_objects=60, max_dim=16) -> VectorStore:
    dim = rng.randint(2, max_dim)
    n = rng.randint(1, max_objects)
    store = VectorStore(dim=dim, model_id="test")
    objects = []
    vectors = []
    for i in range(n):
        if vectors and rng.random() < 0.15:
            vec = vectors[rng.randrange(len(vectors))]  # exact duplicate: exercises ties
        elif rng.random() < 0.1:
            raw = np.zeros(dim)
            raw[rng.randrange(dim)] = rng.choice([-1.0, 1.0])
            vec = unit(raw)
        else:
            vec = unit([rng.gauss(0, 1) for _ in range(dim)])
        vectors.append(vec)
        objects.append(obj(f"nb{i % 7}.ipynb", i // 7, i % 7, vec,
                           cell_type=rng.choice(["text", "code"])))
    store.upsert(objects)
    return store


def check_against_oracle(store: VectorStore, query: EmbeddingVector, k: int, filt=None):
    objects = list(store.iter_objects())
    rows = [list(map(float, o.vector.values)) for o in objects]
    seqs = [o.seq for o in objects]
    accept = None if filt is None else (lambda i: filt.matches(objects[i]))
    expected = scan_top_k(list(map(float, query.values)), rows, seqs, k, accept)
    hits = store.search(query, k=k, filter=filt)
    assert [h.object.seq for h in hits] == [objects[i].seq for i, _ in expected]
    for hit, (_, dist) in zip(hits, expected):
        assert abs(hit.distance - dist) < 1e-9


class TestUpsert:
    def test_insert_new(self):
        store = VectorStore(dim=3)
        res = store.upsert([obj("a", 0, i, unit([1, i + 1, 0])) for i in range(3)])
        assert (res.inserted, res.replaced) == (3, 0)
        assert len(store) == 3

    def test_replace_same_keys(self):
        store = VectorStore(dim=3)
        batch = [obj("a", 0, i, unit([1, i + 1, 0])) for i in range(3)]
        store.upsert(batch)
        seqs_before = [o.seq for o in store.iter_objects()]
        res = store.upsert([obj("a", 0, i, unit([i + 1, 1, 1])) for i in range(3)])
        assert (res.inserted, res.replaced) == (0, 3)
        assert [o.seq for o in store.iter_objects()] == seqs_before  # seq preserved

    def test_duplicate_key_in_batch(self):
        store = VectorStore(dim=3)
        with pytest.raises(DuplicateKeyInBatch):
            store.upsert([obj("a", 0, 0, unit([1, 0, 0])), obj("a", 0, 0, unit([0, 1, 0]))])

    def test_dimension_mismatch(self):
        store = VectorStore(dim=3)
        with pytest.raises(DimensionMismatch):
            store.upsert([obj("a", 0, 0, unit([1, 0]))])

    def test_validation_precedes_mutation(self):
        store = VectorStore(dim=3)
        store.upsert([obj("a", 0, 0, unit([1, 0, 0]))])
        with pytest.raises(DimensionMismatch):
            store.upsert([obj("b", 0, 0, unit([0, 1, 0])), obj("c", 0, 0, unit([1, 0]))])
        assert store.notebook_ids() == {"a"}


class TestDeleteNotebook:
    def test_removes_all_chunks(self):
        store = VectorStore(dim=3)
        store.upsert([obj("a", 0, i, unit([1, i + 1, 0])) for i in range(5)])
        store.upsert([obj("b", 0, 0, unit([0, 0, 1]))])
        assert store.delete_notebook("a") == 5
        assert store.notebook_ids() == {"b"}

    def test_unknown_id(self):
        store = VectorStore(dim=3)
        assert store.delete_notebook("ghost") == 0

    def test_delete_then_search_has_no_hits(self):
        store = VectorStore(dim=3)
        store.upsert([obj("a", 0, 0, unit([1, 0, 0])), obj("b", 0, 0, unit([0, 1, 0]))])
        store.delete_notebook("a")
        hits = store.search(unit([1, 0, 0]), k=10)
        assert all(h.object.notebook_id != "a" for h in hits)


class TestSearch:
    def test_identity_hit_first(self):
        store = VectorStore(dim=4)
        store.upsert([obj("a", 0, 0, unit([1, 2, 3, 4])), obj("b", 0, 0, unit([4, 3, 2, 1]))])
        hits = store.search(unit([1, 2, 3, 4]), k=2)
        assert hits[0].object.notebook_id == "a"
        assert hits[0].distance < 1e-9

    def test_axis_vectors_hand_computed(self):
        store = VectorStore(dim=4)
        store.upsert([
            obj("a", 0, 0, unit([1, 0, 0, 0])),
            obj("b", 0, 0, unit([0, 1, 0, 0])),
            obj("c", 0, 0, unit([-1, 0, 0, 0])),
        ])
        hits = store.search(unit([1, 0, 0, 0]), k=3)
        assert [h.object.notebook_id for h in hits] == ["a", "b", "c"]
        assert [h.distance for h in hits] == [0.0, 1.0, 2.0]

    def test_tie_broken_by_seq(self):
        store = VectorStore(dim=3)
        store.upsert([obj("second", 1, 0, unit([1, 1, 0]))])
        store.upsert([obj("first", 0, 0, unit([1, 1, 0]))])
        hits = store.search(unit([1, 1, 0]), k=2)
        # identical vectors: insertion order (seq) decides
        assert [h.object.notebook_id for h in hits] == ["second", "first"]

    def test_k_larger_than_store(self):
        store = VectorStore(dim=3)
        store.upsert([obj("a", 0, 0, unit([1, 0, 0]))])
        assert len(store.search(unit([1, 0, 0]), k=50)) == 1

    def test_k_must_be_positive(self):
        store = VectorStore(dim=3)
        with pytest.raises(ValueError):
            store.search(unit([1, 0, 0]), k=0)

    def test_query_dimension_checked(self):
        store = VectorStore(dim=3)
        with pytest.raises(DimensionMismatch):
            store.search(unit([1, 0]), k=1)

    def test_filter_by_cell_type(self):
        store = VectorStore(dim=3)
        store.upsert([
            obj("a", 0, 0, unit([1, 0, 0]), cell_type="text"),
            obj("a", 1, 0, unit([1, 0.1, 0]), cell_type="code"),
        ])
        hits = store.search(unit([1, 0, 0]), k=5, filter=SearchFilter(cell_type="code"))
        assert [h.object.cell_index for h in hits] == [1]

    def test_filter_by_notebook_prefix(self):
        store = VectorStore(dim=3)
        store.upsert([
            obj("proj/a.ipynb", 0, 0, unit([1, 0, 0])),
            obj("other/b.ipynb", 0, 0, unit([1, 0, 0])),
        ])
        hits = store.search(unit([1, 0, 0]), k=5, filter=SearchFilter(notebook_prefix="proj/"))
        assert [h.object.notebook_id for h in hits] == ["proj/a.ipynb"]

    def test_oracle_equivalence_randomized(self):
        rng = random.Random(1234)
        for _ in range(40):
            store = random_store(rng)
            for _ in range(3):
                query = unit([rng.gauss(0, 1) for _ in range(store.dim)])
                check_against_oracle(store, query, k=rng.randint(1, 12))

    def test_filtered_search_equals_filter_then_truncate(self):
        rng = random.Random(99)
        for _ in range(15):
            store = random_store(rng)
            query = unit([rng.gauss(0, 1) for _ in range(store.dim)])
            filt = SearchFilter(cell_type=rng.choice(["text", "code"]))
            check_against_oracle(store, query, k=8, filt=filt)
            full = store.search(query, k=len(store))
            manual = [h for h in full if filt.matches(h.object)][:8]
            hits = store.search(query, k=8, filter=filt)
            assert [h.object.seq for h in hits] == [h.object.seq for h in manual]

    def test_monotone_k_prefix(self):
        rng = random.Random(7)
        store = random_store(rng)
        query = unit([rng.gauss(0, 1) for _ in range(store.dim)])
        for k in range(1, min(len(store), 10)):
            small = store.search(query, k=k)
            big = store.search(query, k=k + 1)
            assert [h.object.seq for h in small] == [h.object.seq for h in big[:k]]

    def test_distance_range(self):
        rng = random.Random(5)
        store = random_store(rng)
        query = unit([rng.gauss(0, 1) for _ in range(store.dim)])
        for hit in store.search(query, k=len(store)):
            assert 0.0 <= hit.distance <= 2.0 + 1e-9


class TestPersistence:
    def test_round_trip_bit_exact(self, tmp_path):
        rng = random.Random(42)
        store = random_store(rng)
        store.save(tmp_path / "idx")
        loaded = VectorStore.load(tmp_path / "idx")
        assert loaded.dim == store.dim
        assert len(loaded) == len(store)
        for _ in range(5):
            query = unit([rng.gauss(0, 1) for _ in range(store.dim)])
            a = store.search(query, k=10)
            b = loaded.search(query, k=10)
            assert [h.object.key for h in a] == [h.object.key for h in b]
            assert [h.distance for h in a] == [h.distance for h in b]  # bit-exact

    def test_metadata_round_trip(self, tmp_path):
        store = VectorStore(dim=3, model_id="m1", estimator_id="heuristic-v1")
        store.upsert([obj("nb.ipynb", 2, 1, unit([1, 2, 3]), cell_type="text", contents="hello")])
        store.save(tmp_path / "idx")
        loaded = VectorStore.load(tmp_path / "idx")
        got = loaded.get("nb.ipynb", 2, 1)
        assert got is not None
        assert (got.contents, got.cell_type, got.chunk_kind, got.seq) == ("hello", "text", "WholeCell", 0)
        assert loaded.model_id == "m1"

    def test_load_empty_directory(self, tmp_path):
        with pytest.raises(CorruptIndex):
            VectorStore.load(tmp_path)

    def test_truncated_vectors_file(self, tmp_path):
        rng = random.Random(3)
        store = random_store(rng)
        store.save(tmp_path / "idx")
        vec_path = tmp_path / "idx" / VECTORS_FILE
        raw = vec_path.read_bytes()
        vec_path.write_bytes(raw[: len(raw) - store.dim * 4])  # drop one row
        with pytest.raises(CorruptIndex):
            VectorStore.load(tmp_path / "idx")

    def test_bad_magic(self, tmp_path):
        store = VectorStore(dim=2)
        store.upsert([obj("a", 0, 0, unit([1, 0]))])
        store.save(tmp_path / "idx")
        vec_path = tmp_path / "idx" / VECTORS_FILE
        vec_path.write_bytes(b"XXXXXX" + vec_path.read_bytes()[6:])
        with pytest.raises(CorruptIndex):
            VectorStore.load(tmp_path / "idx")

    def test_object_count_mismatch(self, tmp_path):
        store = VectorStore(dim=2)
        store.upsert([obj("a", 0, 0, unit([1, 0])), obj("b", 0, 0, unit([0, 1]))])
        store.save(tmp_path / "idx")
        objects_path = tmp_path / "idx" / "objects.jsonl"
        lines = objects_path.read_text().splitlines()
        objects_path.write_text("\n".join(lines[:-1]) + "\n")
        with pytest.raises(CorruptIndex):
            VectorStore.load(tmp_path / "idx")

    def test_bound_store_persists_mutations(self, tmp_path):
        store = VectorStore(dim=2, path=tmp_path / "idx")
        store.upsert([obj("a", 0, 0, unit([1, 0]))])
        assert len(VectorStore.load(tmp_path / "idx", bind=False)) == 1
        store.delete_notebook("a")
        assert len(VectorStore.load(tmp_path / "idx", bind=False)) == 0

    def test_seq_continues_after_reload(self, tmp_path):
        store = VectorStore(dim=2, path=tmp_path / "idx")
        store.upsert([obj("a", 0, 0, unit([1, 0]))])
        loaded = VectorStore.load(tmp_path / "idx")
        loaded.upsert([obj("b", 0, 0, unit([0, 1]))])
        seqs = sorted(o.seq for o in loaded.iter_objects())
        assert seqs == [0, 1]


class TestConcurrencySnapshot:
    def test_reader_sees_pre_commit_state(self):
        store = VectorStore(dim=2)
        store.upsert([obj("a", 0, 0, unit([1, 0]))])
        state_before = store._state
        store.upsert([obj("b", 0, 0, unit([0, 1]))])
        # a search started against the old snapshot is unaffected
        assert len(state_before.objects) == 1
        assert len(store._state.objects) == 2
