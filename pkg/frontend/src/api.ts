// HTTP client for the annotation service, plus an offline submission queue:
// network failures never drop a submission, they queue it (persisted when
// storage is available) and retry until the server acknowledges.

import type {
  DocumentPayload,
  IterationPayload,
  ProjectSummary,
  SubmissionBody,
  SubmitResponse,
} from "./types.js";

export class ApiError extends Error {
  readonly status: number;
  readonly detail: unknown;

  constructor(status: number, detail: unknown) {
    super(`HTTP ${status}: ${JSON.stringify(detail)}`);
    this.status = status;
    this.detail = detail;
  }
}

type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export class ApiClient {
  readonly baseUrl: string;
  private readonly fetchImpl: FetchLike;

  constructor(baseUrl = "", fetchImpl?: FetchLike) {
    this.baseUrl = baseUrl.replace(/\/$/, "");
    this.fetchImpl = fetchImpl ?? ((input, init) => fetch(input, init));
  }

  private async request<T>(method: string, path: string, body?: unknown): Promise<T> {
    const response = await this.fetchImpl(`${this.baseUrl}${path}`, {
      method,
      headers: body === undefined ? {} : { "content-type": "application/json" },
      body: body === undefined ? undefined : JSON.stringify(body),
    });
    let payload: unknown = null;
    const text = await response.text();
    if (text) {
      try {
        payload = JSON.parse(text);
      } catch {
        payload = text;
      }
    }
    if (!response.ok) {
      const detail =
        payload && typeof payload === "object" && "detail" in (payload as object)
          ? (payload as { detail: unknown }).detail
          : payload;
      throw new ApiError(response.status, detail);
    }
    return payload as T;
  }

  getProject(projectId: string): Promise<ProjectSummary> {
    return this.request("GET", `/projects/${projectId}`);
  }

  openIteration(
    projectId: string,
    opts: { size?: number; strategy?: string; seed?: number } = {},
  ): Promise<IterationPayload> {
    return this.request("POST", `/projects/${projectId}/iterations`, {
      size: opts.size ?? 10,
      strategy: opts.strategy ?? "sequential",
      ...(opts.seed === undefined ? {} : { seed: opts.seed }),
    });
  }

  currentIteration(projectId: string): Promise<IterationPayload> {
    return this.request("GET", `/projects/${projectId}/iterations/current`);
  }

  getDocument(projectId: string, documentId: string, experimentId?: string): Promise<DocumentPayload> {
    const query = experimentId ? `?experiment=${encodeURIComponent(experimentId)}` : "";
    return this.request("GET", `/projects/${projectId}/documents/${documentId}${query}`);
  }

  submitAnnotations(
    projectId: string,
    documentId: string,
    body: SubmissionBody,
  ): Promise<SubmitResponse> {
    return this.request("PUT", `/projects/${projectId}/documents/${documentId}/annotations`, body);
  }

  completeIteration(projectId: string): Promise<unknown> {
    return this.request("POST", `/projects/${projectId}/iterations/current/complete`);
  }

  submitNote(
    projectId: string,
    note: { annotator_id: string; block_index?: number | null; text: string },
  ): Promise<unknown> {
    return this.request("POST", `/projects/${projectId}/notes`, note);
  }

  getStats(projectId: string, params: Record<string, string> = {}): Promise<unknown> {
    const query = new URLSearchParams(params).toString();
    return this.request("GET", `/projects/${projectId}/stats${query ? `?${query}` : ""}`);
  }

  getExperiment(projectId: string, experimentId: string): Promise<unknown> {
    return this.request("GET", `/projects/${projectId}/experiments/${experimentId}`);
  }
}

export interface StorageLike {
  getItem(key: string): string | null;
  setItem(key: string, value: string): void;
  removeItem(key: string): void;
}

export interface QueuedSubmission {
  projectId: string;
  documentId: string;
  body: SubmissionBody;
  enqueuedAt: number;
  attempts: number;
}

const QUEUE_KEY = "annoloop.submission-queue";

function defaultStorage(): StorageLike | null {
  try {
    // not available under node or when cookies are blocked
    return typeof localStorage === "undefined" ? null : localStorage;
  } catch {
    return null;
  }
}

const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

/**
 * Wraps submission calls with an offline queue. A network failure (fetch
 * rejecting) enqueues the submission and keeps retrying in the background;
 * HTTP error responses are the caller's problem and are rethrown unqueued.
 */
export class SubmissionQueue {
  private readonly client: ApiClient;
  private readonly storage: StorageLike | null;
  private readonly retryDelayMs: number;
  private readonly sleepImpl: (ms: number) => Promise<void>;
  private readonly autoRetry: boolean;
  private queue: QueuedSubmission[] = [];
  private drainPromise: Promise<void> | null = null;
  readonly deadLetters: { item: QueuedSubmission; error: ApiError }[] = [];
  onDelivered: ((item: QueuedSubmission, response: SubmitResponse) => void) | null = null;
  onRejected: ((item: QueuedSubmission, error: ApiError) => void) | null = null;

  constructor(
    client: ApiClient,
    opts: {
      storage?: StorageLike | null;
      retryDelayMs?: number;
      sleep?: (ms: number) => Promise<void>;
      autoRetry?: boolean;
    } = {},
  ) {
    this.client = client;
    this.storage = opts.storage === undefined ? defaultStorage() : opts.storage;
    this.retryDelayMs = opts.retryDelayMs ?? 2000;
    this.sleepImpl = opts.sleep ?? sleep;
    this.autoRetry = opts.autoRetry ?? true;
    this.restore();
  }

  private restore(): void {
    if (!this.storage) return;
    const raw = this.storage.getItem(QUEUE_KEY);
    if (!raw) return;
    try {
      this.queue = JSON.parse(raw) as QueuedSubmission[];
    } catch {
      this.queue = [];
    }
  }

  private persist(): void {
    if (!this.storage) return;
    if (this.queue.length === 0) {
      this.storage.removeItem(QUEUE_KEY);
    } else {
      this.storage.setItem(QUEUE_KEY, JSON.stringify(this.queue));
    }
  }

  pending(): QueuedSubmission[] {
    return [...this.queue];
  }

  /**
   * Submit now if possible; on network failure, queue and auto-retry.
   * Returns the server response, or "queued" when it will be retried later.
   * HTTP error responses (ApiError) are the caller's problem: rethrown,
   * never queued.
   */
  async submit(
    projectId: string,
    documentId: string,
    body: SubmissionBody,
  ): Promise<SubmitResponse | "queued"> {
    if (this.queue.length > 0) {
      // keep ordering: never let a new submission overtake queued ones
      this.enqueue(projectId, documentId, body);
      if (this.autoRetry) void this.drain();
      return "queued";
    }
    try {
      return await this.client.submitAnnotations(projectId, documentId, body);
    } catch (error) {
      if (error instanceof ApiError) throw error; // 4xx/5xx: surfaced inline
      this.enqueue(projectId, documentId, body);
      if (this.autoRetry) void this.drain();
      return "queued";
    }
  }

  private enqueue(projectId: string, documentId: string, body: SubmissionBody): void {
    this.queue.push({ projectId, documentId, body, enqueuedAt: Date.now(), attempts: 0 });
    this.persist();
  }

  /**
   * Retry queued submissions in order until the queue is empty. Joining an
   * in-flight drain returns the same promise; never rejects. A queued item
   * the server refuses outright lands in ``deadLetters`` (retrying an
   * unchanged payload cannot succeed), everything else is retried forever.
   */
  drain(): Promise<void> {
    if (!this.drainPromise) {
      this.drainPromise = this.drainLoop().finally(() => {
        this.drainPromise = null;
      });
    }
    return this.drainPromise;
  }

  private async drainLoop(): Promise<void> {
    while (this.queue.length > 0) {
      const item = this.queue[0];
      try {
        const response = await this.client.submitAnnotations(
          item.projectId,
          item.documentId,
          item.body,
        );
        this.queue.shift();
        this.persist();
        this.onDelivered?.(item, response);
      } catch (error) {
        if (error instanceof ApiError) {
          this.queue.shift();
          this.persist();
          this.deadLetters.push({ item, error });
          this.onRejected?.(item, error);
          continue;
        }
        item.attempts += 1;
        this.persist();
        await this.sleepImpl(this.retryDelayMs);
      }
    }
  }
}
