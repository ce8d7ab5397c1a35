/** Notebook-document parsing, matching the service CLI's cell rules:
 * code cells only, in order, 0-indexed among code cells. */

import type { Diagnostic } from "./api.js";

export interface CellView {
  index: number;
  source: string;
  selected: boolean;
  diagnostics: Diagnostic[];
}

export type LoadResult =
  | { kind: "cells"; cells: CellView[] }
  | { kind: "error"; message: string };

function joinSource(source: unknown): string | null {
  if (typeof source === "string") {
    return source;
  }
  if (Array.isArray(source) && source.every((part) => typeof part === "string")) {
    return source.join("");
  }
  return null;
}

function cellsFrom(document: unknown): CellView[] | null {
  if (typeof document !== "object" || document === null || Array.isArray(document)) {
    return null;
  }
  const cells = (document as { cells?: unknown }).cells;
  if (!Array.isArray(cells)) {
    return null;
  }
  const views: CellView[] = [];
  for (const cell of cells) {
    if (typeof cell !== "object" || cell === null) {
      continue;
    }
    const entry = cell as { cell_type?: unknown; source?: unknown };
    if (entry.cell_type !== "code") {
      continue;
    }
    const source = joinSource(entry.source);
    if (source === null) {
      continue;
    }
    views.push({ index: views.length, source, selected: false, diagnostics: [] });
  }
  return views;
}

/** Parse pasted text: a notebook document yields its code cells; plain code
 * becomes a single cell; JSON-looking text that fails to parse is an error,
 * not a cell. */
export function parseDocument(text: string): LoadResult {
  if (text.trim() === "") {
    return { kind: "error", message: "nothing to load" };
  }
  let parsed: unknown;
  try {
    parsed = JSON.parse(text);
  } catch {
    if (/^[[{]/.test(text.trimStart())) {
      return { kind: "error", message: "malformed JSON document" };
    }
    return {
      kind: "cells",
      cells: [{ index: 0, source: text, selected: false, diagnostics: [] }],
    };
  }
  const cells = cellsFrom(parsed);
  if (cells === null) {
    return { kind: "error", message: "not a notebook document" };
  }
  return { kind: "cells", cells };
}
