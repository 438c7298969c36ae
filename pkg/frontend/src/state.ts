// Client-side view state: a pure reducer over server events plus the
// decoration math. Nothing in here computes prover semantics; the view
// renders exactly what the bridge last sent.

import type { MarkupEvent, ServerEvent, SpanInfo, SpansEvent, TraceRecord } from "./protocol.js";

export interface Segment {
  start: number;
  end: number;
  classes: string[];
}

export class ClientView {
  buffer = "";
  version = 0;
  revision = -1;
  spans: SpanInfo[] = [];
  markup: MarkupEvent | null = null;
  traces: TraceRecord[] = [];

  apply(event: ServerEvent): void {
    if (event.kind === "spans") {
      this.buffer = event.spans.buffer;
      this.version = event.spans.version;
      this.revision = event.spans.revision;
      this.spans = event.spans.spans;
      if (this.markup && this.markup.exec_id !== null) {
        const live = new Set(this.spans.map((s) => s.exec_id));
        if (!live.has(this.markup.exec_id)) this.markup = null;
      }
    } else if (event.kind === "markup") {
      this.markup = event.markup;
    } else {
      this.traces.push(event.trace);
    }
  }
}

/** Clamp [start,end) into a span's bounds; null when nothing remains. */
export function clampToSpan(
  start: number,
  end: number,
  span: { start: number; end: number },
): [number, number] | null {
  const lo = Math.max(start, span.start);
  const hi = Math.min(end, span.end);
  return lo < hi ? [lo, hi] : null;
}

/**
 * Flatten span shading and error squiggles into disjoint class runs.
 * Squiggle regions are clamped to their owning span, so no decoration
 * ever crosses a span boundary.
 */
export function computeSegments(bufferLength: number, spans: SpanInfo[]): Segment[] {
  const boundaries = new Set<number>([0, bufferLength]);
  for (const span of spans) {
    boundaries.add(span.start);
    boundaries.add(span.end);
    for (const [s, e] of span.errors) {
      const clamped = clampToSpan(s, e, span);
      if (clamped) {
        boundaries.add(clamped[0]);
        boundaries.add(clamped[1]);
      }
    }
  }
  const cuts = [...boundaries].filter((b) => b >= 0 && b <= bufferLength).sort((a, b) => a - b);
  const segments: Segment[] = [];
  for (let i = 0; i + 1 < cuts.length; i++) {
    const [start, end] = [cuts[i], cuts[i + 1]];
    if (start >= end) continue;
    const classes: string[] = [];
    for (const span of spans) {
      if (span.start <= start && end <= span.end) {
        classes.push(`span-${span.status}`);
        for (const [s, e] of span.errors) {
          const clamped = clampToSpan(s, e, span);
          if (clamped && clamped[0] <= start && end <= clamped[1]) classes.push("squiggle");
        }
        break;
      }
    }
    segments.push({ start, end, classes });
  }
  return segments;
}

/** The link under an offset, if any (used for click-to-definition). */
export function linkAt(markup: MarkupEvent | null, offset: number) {
  if (!markup) return null;
  for (const link of markup.links) {
    if (link.start <= offset && offset < link.end && link.def_start !== null) return link;
  }
  return null;
}

export function debounce<A extends unknown[]>(
  ms: number,
  fn: (...args: A) => void,
): (...args: A) => void {
  let timer: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    if (timer !== null) clearTimeout(timer);
    timer = setTimeout(() => {
      timer = null;
      fn(...args);
    }, ms);
  };
}

/** Leading-edge rate limit: at most one call per interval, last call wins later. */
export function throttle<A extends unknown[]>(
  ms: number,
  fn: (...args: A) => void,
): (...args: A) => void {
  let last = -Infinity;
  let trailing: ReturnType<typeof setTimeout> | null = null;
  return (...args: A) => {
    const now = Date.now();
    if (now - last >= ms) {
      last = now;
      fn(...args);
      return;
    }
    if (trailing !== null) clearTimeout(trailing);
    trailing = setTimeout(() => {
      trailing = null;
      last = Date.now();
      fn(...args);
    }, ms - (now - last));
  };
}
