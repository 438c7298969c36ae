// DOM wiring: a transparent textarea over a decorated backdrop, a goal
// panel, and the protocol trace panel. All rendering state comes from
// ClientView; this file only paints it.

import type { MarkupEvent, TraceRecord } from "./protocol.js";
import { computeSegments, linkAt, type ClientView } from "./state.js";

function escapeHtml(s: string): string {
  return s.replace(/&/g, "&amp;").replace(/</g, "&lt;").replace(/>/g, "&gt;");
}

export class EditorDom {
  readonly input: HTMLTextAreaElement;
  readonly highlights: HTMLElement;
  readonly goalPanel: HTMLElement;
  readonly statusLine: HTMLElement;
  readonly tracePanel: HTMLElement;
  traceVisible = false;

  constructor(root: Document) {
    this.input = root.getElementById("input") as HTMLTextAreaElement;
    this.highlights = root.getElementById("highlights")!;
    this.goalPanel = root.getElementById("goal-panel")!;
    this.statusLine = root.getElementById("status-line")!;
    this.tracePanel = root.getElementById("trace-panel")!;
  }

  /** Local text is authoritative: decorations only paint when they match it. */
  render(view: ClientView): void {
    const local = this.input.value;
    if (view.buffer !== local) {
      this.highlights.innerHTML = escapeHtml(local);
      this.statusLine.textContent = "syncing…";
      return;
    }
    const segments = computeSegments(view.buffer.length, view.spans);
    let html = "";
    for (const seg of segments) {
      const text = escapeHtml(view.buffer.slice(seg.start, seg.end));
      html += seg.classes.length ? `<span class="${seg.classes.join(" ")}">${text}</span>` : text;
    }
    this.highlights.innerHTML = html + "\n";
    const failed = view.spans.filter((s) => s.status === "failed").length;
    const pending = view.spans.filter((s) => s.status === "pending").length;
    this.statusLine.textContent =
      `${view.spans.length} spans · ${failed} failed · ${pending} pending · version ${view.version}`;
  }

  renderMarkup(markup: MarkupEvent | null): void {
    if (!markup || markup.state_text === null) {
      this.goalPanel.textContent = markup?.errors.length
        ? markup.errors.map((e) => e.message).join("\n")
        : "(no state)";
      return;
    }
    const errors = markup.errors.map((e) => e.message);
    this.goalPanel.textContent = [markup.state_text, ...errors].join("\n\n");
  }

  appendTrace(record: TraceRecord): void {
    if (!this.traceVisible) return;
    const line = document.createElement("div");
    line.className = `trace-${record.dir === "editor->prover" ? "out" : "in"}`;
    line.textContent = `${record.dir}  ${record.bytes}B\n${record.xml}`;
    this.tracePanel.appendChild(line);
    this.tracePanel.scrollTop = this.tracePanel.scrollHeight;
  }

  toggleTrace(): void {
    this.traceVisible = !this.traceVisible;
    this.tracePanel.classList.toggle("hidden", !this.traceVisible);
    if (!this.traceVisible) this.tracePanel.innerHTML = "";
  }

  /** On click inside a link: move the cursor to the definition site. */
  jumpIfLink(view: ClientView): boolean {
    const offset = this.input.selectionStart;
    const link = linkAt(view.markup, offset);
    if (link && link.def_start !== null && link.def_end !== null) {
      this.input.setSelectionRange(link.def_start, link.def_end);
      this.input.focus();
      return true;
    }
    return false;
  }

  syncScroll(): void {
    const backdrop = this.highlights.parentElement!;
    backdrop.scrollTop = this.input.scrollTop;
    backdrop.scrollLeft = this.input.scrollLeft;
  }
}
