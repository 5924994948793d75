"""Cell text normalization applied before tokenization and embedding.

Markdown cells get aggressive cleaning (links, URLs, special characters,
heading markers, whitespace collapse). Code cells get only safe, syntax
preserving normalization: deleting those characters from code would destroy it.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

# Characters stripped from markdown text. Applies to markdown only.
_SPECIAL_CHARS = "{}:`\"'!"
_SPECIAL_RE = re.compile("[" + re.escape(_SPECIAL_CHARS) + "]")

_MD_LINK_RE = re.compile(r"\[([^\]]*)\]\(([^)]*)\)")
_BARE_URL_RE = re.compile(r"https?://\S*")
_HEADING_RE = re.compile(r"^\s*#+\s*", re.MULTILINE)
_WS_RUN_RE = re.compile(r"\s+")

# A magic/shell line has % or ! as its first non-blank character.
_MAGIC_LINE_RE = re.compile(r"^\s*[%!]")


@dataclass
class CleanText:
    text: str
    removed_url_count: int = 0


def clean_markdown(source: str) -> CleanText:
    """Normalize a markdown cell for embedding.

    Markdown links keep their anchor text, bare URLs are deleted, the special
    character set and heading markers are removed, and all whitespace runs
    (including newlines) collapse to single spaces.
    """
    removed = 0

    def _keep_anchor(m: re.Match) -> str:
        nonlocal removed
        removed += 1
        return m.group(1)

    text = _MD_LINK_RE.sub(_keep_anchor, source)

    text, n = _BARE_URL_RE.subn("", text)
    removed += n

    text = _HEADING_RE.sub("", text)
    text = _SPECIAL_RE.sub("", text)

    # Character deletion can splice a URL back together (e.g. h"ttp://x);
    # re-delete until none remain so the no-URL guarantee is unconditional.
    while True:
        text, n = _BARE_URL_RE.subn("", text)
        if n == 0:
            break
        removed += n

    text = _WS_RUN_RE.sub(" ", text).strip()
    return CleanText(text=text, removed_url_count=removed)


def clean_code(source: str) -> CleanText:
    """Normalize a code cell without touching its syntax.

    Strips trailing whitespace per line, drops Jupyter magic and shell-escape
    lines, collapses runs of three or more blank lines down to one, and trims
    blank lines at both ends. Everything else is preserved verbatim.
    """
    kept: list[str] = []
    blank_run = 0
    for line in source.splitlines():
        if _MAGIC_LINE_RE.match(line):
            continue
        line = line.rstrip()
        if not line:
            blank_run += 1
            continue
        if blank_run:
            kept.append("\n" * (blank_run if blank_run < 3 else 1))
            blank_run = 0
        kept.append(line + "\n")
    text = "".join(kept).strip("\n")
    return CleanText(text=text, removed_url_count=0)
