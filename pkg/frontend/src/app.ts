/** The single-page client: paste or load cells, pick one, sign in, submit.
 *
 * Framework-free DOM component. All state lives on the instance and every
 * change goes through render(), which enforces the visible invariants:
 * at most one selected cell, at most one in-flight submission, and a
 * disabled Submit button with a hint whenever nothing is selected.
 */

import type { Diagnostic, SubmissionApi } from "./api.js";
import { ApiError } from "./api.js";
import { parseDocument, type CellView } from "./notebook.js";

export interface AppOptions {
  api: SubmissionApi;
  root: HTMLElement;
  /** Popup opener; the browser default is window.open. */
  openWindow?: (url: string) => unknown;
  pollIntervalMs?: number;
  authTimeoutMs?: number;
}

const SUBMIT_HINT = "Select a code cell to submit.";

function sleep(ms: number): Promise<void> {
  return new Promise((resolve) => setTimeout(resolve, ms));
}

export class App {
  cells: CellView[] = [];

  private readonly api: SubmissionApi;
  private readonly root: HTMLElement;
  private readonly openWindow: (url: string) => unknown;
  private readonly pollIntervalMs: number;
  private readonly authTimeoutMs: number;

  private username: string | null = null;
  private submitPending = false;
  private authPending = false;

  private readonly doc: Document;
  private pasteArea!: HTMLTextAreaElement;
  private loadButton!: HTMLButtonElement;
  private loadError!: HTMLElement;
  private authButton!: HTMLButtonElement;
  private authError!: HTMLElement;
  private cellsBox!: HTMLElement;
  private submitButton!: HTMLButtonElement;
  private submitHint!: HTMLElement;
  private resultBox!: HTMLElement;

  constructor(options: AppOptions) {
    this.api = options.api;
    this.root = options.root;
    this.openWindow = options.openWindow ?? ((url) => window.open(url, "_blank", "popup"));
    this.pollIntervalMs = options.pollIntervalMs ?? 1000;
    this.authTimeoutMs = options.authTimeoutMs ?? 120_000;
    this.doc = this.root.ownerDocument;
    this.buildSkeleton();
    this.render();
  }

  private element<T extends HTMLElement>(tag: string, id: string, className?: string): T {
    const node = this.doc.createElement(tag) as T;
    node.id = id;
    if (className) {
      node.className = className;
    }
    return node;
  }

  private buildSkeleton(): void {
    const loadSection = this.doc.createElement("section");
    this.pasteArea = this.element<HTMLTextAreaElement>("textarea", "paste-area");
    this.pasteArea.placeholder = "Paste a code snippet or a notebook document";
    this.loadButton = this.element<HTMLButtonElement>("button", "load-button");
    this.loadButton.textContent = "Load";
    this.loadButton.addEventListener("click", () => this.loadDocument(this.pasteArea.value));
    this.loadError = this.element("div", "load-error", "error-message");
    loadSection.append(this.pasteArea, this.loadButton, this.loadError);

    const toolbar = this.doc.createElement("section");
    this.authButton = this.element<HTMLButtonElement>("button", "auth-button");
    this.authButton.addEventListener("click", () => void this.signIn());
    this.authError = this.element("div", "auth-error", "error-message");
    this.submitButton = this.element<HTMLButtonElement>("button", "submit-button");
    this.submitButton.addEventListener("click", () => void this.submitSelected());
    this.submitHint = this.element("span", "submit-hint");
    this.submitHint.textContent = SUBMIT_HINT;
    toolbar.append(this.authButton, this.submitButton, this.submitHint, this.authError);

    this.cellsBox = this.element("div", "cells");
    this.resultBox = this.element("div", "result");
    this.root.append(loadSection, toolbar, this.cellsBox, this.resultBox);
  }

  loadDocument(text: string): void {
    const outcome = parseDocument(text);
    if (outcome.kind === "error") {
      this.loadError.textContent = outcome.message;
      return;
    }
    this.loadError.textContent = "";
    this.resultBox.textContent = "";
    this.cells = outcome.cells;
    this.render();
  }

  selectCell(index: number): void {
    this.cells = this.cells.map((cell) => ({
      ...cell,
      selected: cell.index === index ? !cell.selected : false,
    }));
    this.render();
  }

  selectedCell(): CellView | null {
    return this.cells.find((cell) => cell.selected) ?? null;
  }

  async signIn(): Promise<void> {
    if (this.authPending || this.username !== null) {
      return;
    }
    this.authPending = true;
    this.authError.textContent = "";
    this.render();
    try {
      const { authorize_url } = await this.api.authorize();
      this.openWindow(authorize_url);
      const deadline = Date.now() + this.authTimeoutMs;
      for (;;) {
        const reply = await this.api.pollToken();
        if (reply.status === "ok" && reply.username) {
          this.username = reply.username;
          break;
        }
        if (reply.status !== "pending") {
          throw new ApiError(`sign-in ${reply.status}; try again`, 0);
        }
        if (Date.now() >= deadline) {
          throw new ApiError("sign-in timed out; try again", 0);
        }
        await sleep(this.pollIntervalMs);
      }
    } catch (failure) {
      this.authError.textContent =
        failure instanceof Error ? failure.message : String(failure);
    } finally {
      this.authPending = false;
      this.render();
    }
  }

  async submitSelected(): Promise<void> {
    const cell = this.selectedCell();
    if (cell === null || this.submitPending) {
      return;
    }
    this.submitPending = true;
    this.resultBox.textContent = "";
    this.render();
    try {
      const reply = await this.api.submit(cell.source, cell.index);
      if (reply.result === "created") {
        const link = this.element<HTMLAnchorElement>("a", "pr-link");
        link.href = reply.url;
        link.textContent = reply.url;
        link.target = "_blank";
        this.resultBox.replaceChildren(link);
        this.setDiagnostics(cell.index, []);
      } else if (reply.result === "invalid") {
        this.showMessage(`validation failed (${reply.diagnostics.length} problem(s))`);
        this.setDiagnostics(cell.index, reply.diagnostics);
      } else {
        this.showMessage(reply.message);
      }
    } catch (failure) {
      this.showMessage(failure instanceof Error ? failure.message : String(failure));
    } finally {
      this.submitPending = false;
      this.render();
    }
  }

  private showMessage(message: string): void {
    const node = this.doc.createElement("div");
    node.className = "error-message";
    node.textContent = message;
    this.resultBox.replaceChildren(node);
  }

  private setDiagnostics(index: number, diagnostics: Diagnostic[]): void {
    this.cells = this.cells.map((cell) =>
      cell.index === index ? { ...cell, diagnostics } : cell,
    );
    this.render();
  }

  render(): void {
    // auth button reflects one of: anonymous, pending, authenticated
    if (this.username !== null) {
      this.authButton.textContent = this.username;
      this.authButton.dataset.state = "authenticated";
      this.authButton.disabled = true;
    } else if (this.authPending) {
      this.authButton.textContent = "Signing in…";
      this.authButton.dataset.state = "pending";
      this.authButton.disabled = true;
    } else {
      this.authButton.textContent = "Sign in";
      this.authButton.dataset.state = "anonymous";
      this.authButton.disabled = false;
    }

    const selected = this.selectedCell();
    this.submitButton.textContent = this.submitPending ? "Submitting…" : "Submit";
    this.submitButton.disabled = selected === null || this.submitPending;
    this.submitHint.hidden = selected !== null;

    this.cellsBox.replaceChildren(
      ...this.cells.map((cell) => this.renderCell(cell)),
    );
  }

  private renderCell(cell: CellView): HTMLElement {
    const box = this.doc.createElement("div");
    box.className = cell.selected ? "cell selected" : "cell";
    box.dataset.index = String(cell.index);
    box.addEventListener("click", () => this.selectCell(cell.index));

    const header = this.doc.createElement("div");
    header.className = "cell-header";
    header.textContent = `Cell ${cell.index}`;
    box.append(header);

    const errorLines = new Set(cell.diagnostics.map((d) => d.line));
    const lines = this.doc.createElement("pre");
    lines.className = "cell-lines";
    cell.source.replace(/\n$/, "").split("\n").forEach((text, offset) => {
      const line = this.doc.createElement("div");
      line.className = errorLines.has(offset + 1) ? "cell-line error-line" : "cell-line";
      line.dataset.line = String(offset + 1);
      line.textContent = text === "" ? " " : text;
      lines.append(line);
    });
    box.append(lines);

    const diagnostics = this.doc.createElement("div");
    diagnostics.className = "cell-diagnostics";
    for (const diagnostic of cell.diagnostics) {
      const note = this.doc.createElement("div");
      note.className = "diagnostic";
      note.dataset.line = String(diagnostic.line);
      note.textContent = `line ${diagnostic.line}: ${diagnostic.message}`;
      diagnostics.append(note);
    }
    box.append(diagnostics);
    return box;
  }
}
