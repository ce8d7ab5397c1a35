"""Minimal notebook-document ingestion for the CLI submit path.

Reads only ``cells[].cell_type`` and ``cells[].source`` from a
notebook-format JSON document; outputs, metadata and format versions are
ignored so any vintage of the format works.
"""

from __future__ import annotations

import json

from .errors import CellNotFound


def code_cell_sources(text: str) -> list[str] | None:
    """Return the source of every code cell, or None if not a notebook.

    A document is a notebook iff it parses as JSON to a mapping with a
    top-level ``cells`` array.
    """
    try:
        doc = json.loads(text)
    except (json.JSONDecodeError, UnicodeDecodeError):
        return None
    if not isinstance(doc, dict) or not isinstance(doc.get("cells"), list):
        return None
    sources = []
    for cell in doc["cells"]:
        if isinstance(cell, dict) and cell.get("cell_type") == "code":
            sources.append(_join_source(cell.get("source", "")))
    return sources


def select_code_cell(text: str, index: int) -> str:
    """Source of code cell ``index`` (0-based among code cells only)."""
    sources = code_cell_sources(text)
    if sources is None:
        raise CellNotFound("not a notebook document")
    if not 0 <= index < len(sources):
        raise CellNotFound(
            f"cell {index} out of range: document has {len(sources)} code cell(s)"
        )
    return sources[index]


def _join_source(source) -> str:
    if isinstance(source, list):
        return "".join(str(part) for part in source)
    return str(source)
