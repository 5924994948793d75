"""Command-line interface: index, sync, query, eval.

Exit codes: 0 success, 1 fatal configuration or IO problem, 2 query against
an empty or missing index.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from .config import AppConfig, ConfigError, load_config
from .gateway import ModelGateway, ProviderError
from .ingest import RootNotFound
from .queries import (
    ChunkKey,
    EmptyStore,
    Query,
    UnknownTarget,
    evaluate,
    load_query_file,
    render_report,
    run_query,
)
from .store import CorruptIndex, VectorStore
from .sync import index_repository, run_sync

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FATAL = 1
EXIT_EMPTY_STORE = 2

_PREVIEW_CHARS = 120


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nbsearch",
        description="Semantic search over a Jupyter Notebook repository.",
    )
    parser.add_argument("--config", type=Path, default=None, help="JSON config file")
    parser.add_argument("--offline", action="store_true", help="force the deterministic offline models")
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p_index = sub.add_parser("index", help="build the index from scratch")
    p_index.add_argument("--json", action="store_true", help="machine-readable summary")

    p_sync = sub.add_parser("sync", help="reconcile the index with the repository")
    p_sync.add_argument("--once", action="store_true", help="run a single cycle and exit")
    p_sync.add_argument("--interval", type=int, default=None, metavar="S", help="seconds between cycles")
    p_sync.add_argument("--json", action="store_true", help="machine-readable summary")

    p_query = sub.add_parser("query", help="run one query against the index")
    p_query.add_argument("text", nargs="?", default=None, help="query text (EQ/UDQ)")
    p_query.add_argument("--type", dest="qtype", choices=["EQ", "UDQ", "CSQ"], default="UDQ")
    p_query.add_argument("--target", default=None, metavar="NB:CELL:UNIT", help="stored code chunk for CSQ")
    p_query.add_argument("-k", type=int, default=None, help="number of hits")
    p_query.add_argument("--json", action="store_true", help="machine-readable hits")
    p_query.add_argument("--repl", action="store_true", help="read one query per stdin line")

    p_eval = sub.add_parser("eval", help="evaluate a query set file")
    p_eval.add_argument("queries_file", type=Path)
    p_eval.add_argument("--json", action="store_true", help="print the report as JSON")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = load_config(args.config, offline=args.offline)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL

    try:
        if args.command == "index":
            return _cmd_index(config, args)
        if args.command == "sync":
            return _cmd_sync(config, args)
        if args.command == "query":
            return _cmd_query(config, args)
        if args.command == "eval":
            return _cmd_eval(config, args)
    except (RootNotFound, CorruptIndex, ProviderError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL
    raise AssertionError(f"unhandled command {args.command}")


def _cmd_index(config: AppConfig, args) -> int:
    gateway = ModelGateway(config.model)
    summary = index_repository(config, gateway)
    payload = dataclasses.asdict(summary)
    if args.json:
        print(json.dumps(payload))
    else:
        print(
            "indexed {notebooks} notebook(s), {chunks} chunk(s); "
            "{skipped} cell(s) skipped, {errors} error(s)".format(**payload)
        )
    return EXIT_OK


def _cmd_sync(config: AppConfig, args) -> int:
    if args.interval is not None:
        config = dataclasses.replace(config, sync_interval_s=args.interval)
    if not (config.index_dir / "manifest.json").is_file():
        print(f"error: no index at {config.index_dir}; run 'nbsearch index' first", file=sys.stderr)
        return EXIT_FATAL
    gateway = ModelGateway(config.model)
    summary = run_sync(config, gateway, once=args.once)
    payload = {
        "added": summary.added,
        "updated": summary.updated,
        "removed": summary.removed,
        "errors": summary.errors,
    }
    if args.json:
        print(json.dumps(payload))
    else:
        print("sync: added={added} updated={updated} removed={removed} errors={errors}".format(**payload))
    return EXIT_OK


def _open_store(config: AppConfig) -> VectorStore | None:
    if not (config.index_dir / "manifest.json").is_file():
        return None
    return VectorStore.load(config.index_dir, bind=False)


def parse_target(raw: str) -> ChunkKey:
    try:
        notebook_id, cell_index, unit_index = raw.rsplit(":", 2)
        return ChunkKey(notebook_id, int(cell_index), int(unit_index))
    except ValueError:
        raise ValueError(f"target must look like notebook.ipynb:CELL:UNIT, got {raw!r}") from None


def _hit_payload(rank: int, hit) -> dict:
    obj = hit.object
    return {
        "rank": rank,
        "distance": hit.distance,
        "notebook_id": obj.notebook_id,
        "cell_index": obj.cell_index,
        "unit_index": obj.unit_index,
        "chunk_kind": obj.chunk_kind,
        "cell_type": obj.cell_type,
        "preview": obj.contents[:_PREVIEW_CHARS],
    }


def _print_hits(hits, as_json: bool) -> None:
    if as_json:
        print(json.dumps([_hit_payload(i + 1, h) for i, h in enumerate(hits)]))
        return
    for i, hit in enumerate(hits, start=1):
        obj = hit.object
        preview = " ".join(obj.contents[:_PREVIEW_CHARS].split())
        print(f"{i:>3}  {hit.distance:.4f}  {obj.notebook_id}  cell {obj.cell_index}/{obj.unit_index}  "
              f"{obj.chunk_kind}  {preview}")


def _cmd_query(config: AppConfig, args) -> int:
    store = _open_store(config)
    if store is None or len(store) == 0:
        print(f"error: no indexed objects at {config.index_dir}", file=sys.stderr)
        return EXIT_EMPTY_STORE
    gateway = ModelGateway(config.model)
    k = args.k if args.k is not None else config.k_default

    def run_one(text: str | None) -> int:
        try:
            if args.qtype == "CSQ":
                if args.target is None:
                    print("error: CSQ requires --target", file=sys.stderr)
                    return EXIT_FATAL
                query = Query(qtype="CSQ", target=parse_target(args.target), k=k)
            else:
                if not text:
                    print("error: query text required", file=sys.stderr)
                    return EXIT_FATAL
                query = Query(qtype=args.qtype, text=text, k=k)
            hits = run_query(query, store, gateway)
        except EmptyStore:
            print("error: the index is empty", file=sys.stderr)
            return EXIT_EMPTY_STORE
        except (UnknownTarget, ValueError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_FATAL
        _print_hits(hits, args.json)
        return EXIT_OK

    if args.repl:
        for line in sys.stdin:
            line = line.strip()
            if not line:
                break
            run_one(line)
        return EXIT_OK
    return run_one(args.text)


def _cmd_eval(config: AppConfig, args) -> int:
    store = _open_store(config)
    if store is None or len(store) == 0:
        print(f"error: no indexed objects at {config.index_dir}", file=sys.stderr)
        return EXIT_EMPTY_STORE
    if not args.queries_file.is_file():
        print(f"error: query file not found: {args.queries_file}", file=sys.stderr)
        return EXIT_FATAL

    queries, errors = load_query_file(args.queries_file)
    for lineno, message in errors:
        print(f"warning: {args.queries_file}:{lineno}: {message}", file=sys.stderr)

    gateway = ModelGateway(config.model)
    report = evaluate(queries, store, gateway)

    report_path = args.queries_file.with_name(args.queries_file.stem + ".report.json")
    report_path.write_text(json.dumps(report.to_dict(), indent=2), encoding="utf-8")

    if args.json:
        print(json.dumps(report.to_dict()))
    else:
        print(render_report(report))
        print(f"report written to {report_path}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
