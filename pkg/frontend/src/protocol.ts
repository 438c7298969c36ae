// Frame shapes shared with the bridge (docs/formats.md on the server side).

export interface SpanInfo {
  command_id: number;
  start: number;
  end: number;
  status: "pending" | "done" | "failed";
  exec_id: number | null;
  errors: [number, number][];
}

export interface SpansEvent {
  buffer: string;
  version: number;
  revision: number;
  spans: SpanInfo[];
}

export interface ErrorInfo {
  start: number;
  end: number;
  message: string;
}

export interface LinkInfo {
  start: number;
  end: number;
  name: string;
  def_command_id: number | null;
  def_offset: number;
  def_end_offset: number;
  def_start: number | null;
  def_end: number | null;
}

export interface MarkupEvent {
  offset: number;
  state_text: string | null;
  errors: ErrorInfo[];
  links: LinkInfo[];
  span: [number | null, number | null];
  command_id: number | null;
  exec_id: number | null;
}

export interface TraceRecord {
  dir: string;
  bytes: number;
  raw: string;
  xml: string;
  ts: number;
}

export type ServerEvent =
  | { kind: "spans"; spans: SpansEvent }
  | { kind: "markup"; markup: MarkupEvent }
  | { kind: "trace"; trace: TraceRecord };

export function parseServerEvent(text: string): ServerEvent | null {
  let data: unknown;
  try {
    data = JSON.parse(text);
  } catch {
    return null;
  }
  if (typeof data !== "object" || data === null) return null;
  const obj = data as Record<string, unknown>;
  if ("spans" in obj) return { kind: "spans", spans: obj.spans as SpansEvent };
  if ("markup" in obj) return { kind: "markup", markup: obj.markup as MarkupEvent };
  if ("trace" in obj) return { kind: "trace", trace: obj.trace as TraceRecord };
  return null;
}

export type EditOp =
  | { insert: { offset: number; text: string } }
  | { remove: { offset: number; length: number } };

export function editFrame(op: EditOp): string {
  return JSON.stringify({ edit: op });
}

export function queryFrame(offset: number): string {
  return JSON.stringify({ query: { offset } });
}

/** Minimal common-prefix/suffix edit ops turning oldText into newText. */
export function diffEdits(oldText: string, newText: string): EditOp[] {
  if (oldText === newText) return [];
  let prefix = 0;
  const maxPrefix = Math.min(oldText.length, newText.length);
  while (prefix < maxPrefix && oldText[prefix] === newText[prefix]) prefix++;
  let suffix = 0;
  const maxSuffix = Math.min(oldText.length, newText.length) - prefix;
  while (
    suffix < maxSuffix &&
    oldText[oldText.length - 1 - suffix] === newText[newText.length - 1 - suffix]
  ) {
    suffix++;
  }
  const removed = oldText.length - prefix - suffix;
  const inserted = newText.slice(prefix, newText.length - suffix);
  const ops: EditOp[] = [];
  if (removed > 0) ops.push({ remove: { offset: prefix, length: removed } });
  if (inserted.length > 0) ops.push({ insert: { offset: prefix, text: inserted } });
  return ops;
}

/** Replays an edit op the way the server applies it; used by tests to echo-compare. */
export function applyEdit(text: string, op: EditOp): string {
  if ("insert" in op) {
    const { offset, text: ins } = op.insert;
    return text.slice(0, offset) + ins + text.slice(offset);
  }
  const { offset, length } = op.remove;
  return text.slice(0, offset) + text.slice(offset + length);
}
