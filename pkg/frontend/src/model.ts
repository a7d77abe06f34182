// Annotation view state for one open document: the working annotation list,
// selection, provenance flags, and the timestamped action log. All gesture
// logic lives here, DOM-free, so it can be driven by tests and by the
// rendering layer alike. The clock is injectable for scripted sessions.

import type {
  ActionLogEntry,
  AnnotationPayload,
  DocumentPayload,
  LabelInfo,
  SubmissionBody,
  TokenRange,
} from "./types.js";

export class PayloadMismatchError extends Error {}

export interface WorkingAnnotation {
  startToken: number;
  endToken: number;
  label: string;
  /** true while this is an untouched machine suggestion */
  machine: boolean;
}

export type GestureResult =
  | { ok: true; annotation: WorkingAnnotation }
  | { ok: false; reason: string };

function overlaps(a: { startToken: number; endToken: number }, start: number, end: number): boolean {
  return a.startToken < end && start < a.endToken;
}

function validatePayload(doc: DocumentPayload): void {
  let previousEnd = -1;
  for (const [i, token] of doc.tokens.entries()) {
    if (token.start_char >= token.end_char || token.start_char < previousEnd) {
      throw new PayloadMismatchError(`token ${i} has inconsistent offsets`);
    }
    if (doc.text.slice(token.start_char, token.end_char) !== token.text) {
      throw new PayloadMismatchError(
        `token ${i} text ${JSON.stringify(token.text)} does not match the document text`,
      );
    }
    previousEnd = token.end_char;
  }
  const sorted = [...doc.pre_annotations].sort((a, b) => a.start_token - b.start_token);
  let lastEnd = 0;
  for (const pre of sorted) {
    if (pre.start_token < 0 || pre.end_token > doc.tokens.length || pre.start_token >= pre.end_token) {
      throw new PayloadMismatchError(
        `pre-annotation [${pre.start_token},${pre.end_token}) is out of bounds`,
      );
    }
    if (pre.start_token < lastEnd) {
      throw new PayloadMismatchError("pre-annotations overlap");
    }
    lastEnd = pre.end_token;
  }
}

/** Snap an arbitrary token range outward to whole-token boundaries and clamp. */
export function snapRange(range: TokenRange, tokenCount: number): TokenRange | null {
  const start = Math.max(0, Math.min(Math.floor(range.start), tokenCount - 1));
  const end = Math.min(tokenCount, Math.max(Math.ceil(range.end), start + 1));
  if (tokenCount === 0 || range.end <= range.start) return null;
  return { start, end };
}

export class DocumentSession {
  readonly doc: DocumentPayload;
  readonly labels: LabelInfo[];
  readonly annotations: WorkingAnnotation[] = [];
  readonly log: ActionLogEntry[] = [];
  selectedLabel: string;
  selection: TokenRange | null = null;
  readonly startedAtMs: number;
  private lastEventMs: number;
  private readonly now: () => number;

  constructor(doc: DocumentPayload, labels: LabelInfo[], opts: { now?: () => number } = {}) {
    validatePayload(doc);
    if (labels.length === 0) throw new PayloadMismatchError("label set is empty");
    this.doc = doc;
    this.labels = labels;
    this.selectedLabel = labels[0].id;
    this.now = opts.now ?? Date.now;
    this.startedAtMs = this.now();
    this.lastEventMs = this.startedAtMs;
    for (const pre of doc.pre_annotations) {
      this.annotations.push({
        startToken: pre.start_token,
        endToken: pre.end_token,
        label: pre.label,
        machine: true,
      });
    }
    this.sort();
  }

  private sort(): void {
    this.annotations.sort((a, b) => a.startToken - b.startToken || a.endToken - b.endToken);
  }

  private logAction(kind: ActionLogEntry["kind"], ann: {
    startToken: number; endToken: number; label: string;
  }): void {
    const at = this.now();
    const seconds = Math.max(0, (at - this.lastEventMs) / 1000);
    this.lastEventMs = at;
    this.log.push({
      kind,
      start_token: ann.startToken,
      end_token: ann.endToken,
      label: ann.label,
      at: new Date(at).toISOString(),
      seconds,
    });
  }

  annotationAt(index: number): WorkingAnnotation {
    const ann = this.annotations[index];
    if (!ann) throw new RangeError(`no annotation at index ${index}`);
    return ann;
  }

  /** Index of the annotation covering a token, or -1. */
  annotationIndexAtToken(token: number): number {
    return this.annotations.findIndex((a) => a.startToken <= token && token < a.endToken);
  }

  /**
   * Label the selected token range. Overlapped existing annotations are
   * replaced by the new one (a single gesture fixes a wrong-span
   * suggestion). Logged as "update" when it replaces something, "add"
   * otherwise. An empty selection is a no-op.
   */
  applyLabelToSelection(range: TokenRange | null, label?: string): GestureResult {
    if (!range || range.end <= range.start) {
      return { ok: false, reason: "empty selection" };
    }
    const snapped = snapRange(range, this.doc.tokens.length);
    if (!snapped) return { ok: false, reason: "empty selection" };
    const useLabel = label ?? this.selectedLabel;
    if (!this.labels.some((l) => l.id === useLabel)) {
      return { ok: false, reason: `unknown label ${useLabel}` };
    }
    const replaced = this.annotations.filter((a) => overlaps(a, snapped.start, snapped.end));
    for (const gone of replaced) {
      this.annotations.splice(this.annotations.indexOf(gone), 1);
    }
    const created: WorkingAnnotation = {
      startToken: snapped.start,
      endToken: snapped.end,
      label: useLabel,
      machine: false,
    };
    this.annotations.push(created);
    this.sort();
    this.logAction(replaced.length > 0 ? "update" : "add", created);
    this.selection = null;
    return { ok: true, annotation: created };
  }

  deleteAnnotation(index: number): GestureResult {
    const ann = this.annotations[index];
    if (!ann) return { ok: false, reason: `no annotation at index ${index}` };
    this.annotations.splice(index, 1);
    this.logAction("delete", ann);
    return { ok: true, annotation: ann };
  }

  changeLabel(index: number, label: string): GestureResult {
    const ann = this.annotations[index];
    if (!ann) return { ok: false, reason: `no annotation at index ${index}` };
    if (!this.labels.some((l) => l.id === label)) {
      return { ok: false, reason: `unknown label ${label}` };
    }
    ann.label = label;
    ann.machine = false;
    this.logAction("update", ann);
    return { ok: true, annotation: ann };
  }

  /** Untouched machine suggestions still present in the working list. */
  untouchedMachineAnnotations(): WorkingAnnotation[] {
    return this.annotations.filter((a) => a.machine);
  }

  elapsedSeconds(): number {
    return (this.now() - this.startedAtMs) / 1000;
  }

  buildSubmission(annotatorId: string, experimentId?: string): SubmissionBody {
    const annotations: AnnotationPayload[] = this.annotations.map((a) => ({
      start_token: a.startToken,
      end_token: a.endToken,
      label: a.label,
    }));
    const body: SubmissionBody = {
      annotator_id: annotatorId,
      annotations,
      started_at: new Date(this.startedAtMs).toISOString(),
      finished_at: new Date(this.now()).toISOString(),
      actions: [...this.log],
    };
    if (experimentId) body.experiment_id = experimentId;
    return body;
  }
}

/** Progress through the documents of one iteration (k of n). */
export class IterationProgress {
  readonly total: number;
  private done = 0;

  constructor(total: number) {
    this.total = total;
  }

  advance(): void {
    this.done = Math.min(this.total, this.done + 1);
  }

  get completed(): number {
    return this.done;
  }

  get finished(): boolean {
    return this.done >= this.total;
  }

  describe(): string {
    return `${Math.min(this.done + 1, this.total)} of ${this.total}`;
  }
}
