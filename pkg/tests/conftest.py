from __future__ import annotations

import json
from pathlib import Path

import pytest

from nbsearch.gateway import ModelConfig, ModelGateway


def notebook_json(cells: list[tuple[str, str]], authors: list[str] | None = None) -> bytes:
    """Minimal v4-shaped notebook with (cell_type, source) pairs."""
    payload = {
        "nbformat": 4,
        "nbformat_minor": 5,
        "metadata": {},
        "cells": [
            {"cell_type": kind, "metadata": {}, "source": source}
            | ({"outputs": [], "execution_count": None} if kind == "code" else {})
            for kind, source in cells
        ],
    }
    if authors:
        payload["metadata"]["authors"] = [{"name": name} for name in authors]
    return json.dumps(payload).encode("utf-8")


def write_notebook(path: Path, cells: list[tuple[str, str]], authors: list[str] | None = None) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(notebook_json(cells, authors))
    return path


def build_fixture_repo(root: Path, notebooks: int = 20) -> None:
    """Deterministic corpus used by the end-to-end suites.

    Designed so that, with a token budget of 64, markdown cells split into
    packed paragraph chunks and code cells split into function/class/residue
    units, all under budget (no summaries) and with per-chunk token multisets
    unique across the corpus.
    """
    for i in range(notebooks):
        tag = f"nb{i:02d}"
        paragraphs = "\n\n".join(
            f"Paragraph p{j} of notebook {tag} describing step number {j} with marker m{i:02d}x{j}."
            for j in range(6)
        )
        code = (
            "import math\n"
            "\n"
            f"def load_{tag}(path):\n"
            f"    data = open(path).read()\n"
            f"    return data\n"
            "\n"
            f"def process_{tag}(data, factor):\n"
            f"    result = [x * factor for x in data]\n"
            f"    return result\n"
            "\n"
            f"class Runner_{tag}:\n"
            f"    def run(self, items):\n"
            f"        total = sum(items)\n"
            f"        return total\n"
            "\n"
            f"print(load_{tag}, process_{tag})\n"
        )
        cells = [
            ("markdown", f"# Notebook {tag}\n\nIntro words unique to {tag} alpha beta."),
            ("markdown", paragraphs),
            ("code", code),
            ("code", f"value_{tag} = {i} * 3\nanswer_{tag} = value_{tag} + 7\n"),
        ]
        write_notebook(root / f"{tag}.ipynb", cells)


@pytest.fixture
def offline_gateway() -> ModelGateway:
    return ModelGateway(ModelConfig(offline_mode=True, offline_dim=64))


@pytest.fixture
def fixture_repo(tmp_path: Path) -> Path:
    repo = tmp_path / "repo"
    build_fixture_repo(repo)
    return repo
