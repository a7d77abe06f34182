// Secondary acceptance: scripted annotator sessions driven against a live
// server process over real HTTP. An in-test HTTP stub plays the external ML
// unit so every delivered pre-annotation is a crafted fixture and each
// correction gesture is exercised deterministically.

import { spawn, type ChildProcess } from "node:child_process";
import { mkdtempSync, rmSync } from "node:fs";
import { createServer, type Server } from "node:http";
import { tmpdir } from "node:os";
import { dirname, join } from "node:path";
import { fileURLToPath } from "node:url";
import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiClient } from "../src/api.js";
import { DocumentSession } from "../src/model.js";
import type { DocumentPayload, LabelInfo, PreAnnotationPayload } from "../src/types.js";

const REPO_ROOT = join(dirname(fileURLToPath(import.meta.url)), "..", "..");
const SENTENCE = "CEO Lorene Duck raises wages.";

const LABELS: LabelInfo[] = [
  { id: "PER", name: "Person", color: "#2e7d32" },
  { id: "ORG", name: "Organization", color: "#1565c0" },
];

// every document carries the same gold entity: "Lorene Duck" = tokens [1,3)
const GOLD = [{ start_char: 4, end_char: 15, label: "PER" }];

const DELIVERED: Record<string, PreAnnotationPayload[]> = {
  "doc-correct": [{ start_token: 1, end_token: 3, label: "PER", confidence: 0.9 }],
  "doc-wrongspan": [{ start_token: 2, end_token: 4, label: "PER", confidence: 0.5 }],
  "doc-wronglabel": [{ start_token: 1, end_token: 3, label: "ORG", confidence: 0.5 }],
  "doc-spurious": [
    { start_token: 1, end_token: 3, label: "PER", confidence: 0.9 },
    { start_token: 4, end_token: 5, label: "PER", confidence: 0.4 },
  ],
  "doc-missing": [],
};

const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

function startMlUnitStub(): Promise<{ port: number; server: Server; trainCalls: unknown[] }> {
  const trainCalls: unknown[] = [];
  const server = createServer((req, res) => {
    let body = "";
    req.on("data", (chunk) => (body += chunk));
    req.on("end", () => {
      const payload = body ? JSON.parse(body) : {};
      res.setHeader("content-type", "application/json");
      if (req.url === "/predict") {
        res.end(JSON.stringify({
          document_id: payload.document_id,
          annotations: DELIVERED[payload.document_id] ?? [],
        }));
      } else if (req.url === "/train") {
        trainCalls.push(payload);
        res.end(JSON.stringify({ ok: true }));
      } else {
        res.statusCode = 404;
        res.end("{}");
      }
    });
  });
  return new Promise((resolve) => {
    server.listen(0, "127.0.0.1", () => {
      const address = server.address();
      if (address && typeof address === "object") {
        resolve({ port: address.port, server, trainCalls });
      }
    });
  });
}

async function waitForServer(base: string, timeoutMs = 20000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    try {
      const response = await fetch(`${base}/health`);
      if (response.ok) return;
    } catch {
      // not up yet
    }
    await sleep(150);
  }
  throw new Error(`server at ${base} did not come up within ${timeoutMs}ms`);
}

describe("scripted sessions against a live server", () => {
  let annotationServer: ChildProcess;
  let mlStub: { port: number; server: Server; trainCalls: unknown[] };
  let dataDir: string;
  let client: ApiClient;
  let projectId: string;

  beforeAll(async () => {
    mlStub = await startMlUnitStub();
    dataDir = mkdtempSync(join(tmpdir(), "annoloop-ui-test-"));
    const port = 8930 + (process.pid % 50);
    const base = `http://127.0.0.1:${port}`;
    annotationServer = spawn(
      "python3",
      ["-m", "annoloop.cli", "serve", "--data-dir", dataDir, "--listen", `127.0.0.1:${port}`],
      { cwd: REPO_ROOT, stdio: "ignore" },
    );
    await waitForServer(base);
    client = new ApiClient(base);

    const response = await fetch(`${base}/projects`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify({
        labels: LABELS,
        documents: Object.keys(DELIVERED).map((id) => ({ id, text: SENTENCE, gold: GOLD })),
        ml_unit: { external: { base_url: `http://127.0.0.1:${mlStub.port}` } },
      }),
    });
    expect(response.status).toBe(201);
    projectId = ((await response.json()) as { project_id: string }).project_id;
  }, 30000);

  afterAll(() => {
    annotationServer?.kill();
    mlStub?.server.close();
    rmSync(dataDir, { recursive: true, force: true });
  });

  it("round-trips untouched pre-annotations and corrects each error type", async () => {
    const iteration = await client.openIteration(projectId, { size: 5 });
    expect(iteration.documents).toHaveLength(5);
    const byId = new Map(iteration.documents.map((d) => [d.id, d]));

    // delivered payloads match the stub's fixtures exactly
    for (const [docId, expected] of Object.entries(DELIVERED)) {
      const doc = byId.get(docId);
      expect(doc, docId).toBeDefined();
      expect(doc!.pre_annotations).toEqual(expected);
    }

    const submitted: Record<string, unknown> = {};
    let lastResponse: { iteration_completed: boolean } | null = null;

    async function submitSession(doc: DocumentPayload, session: DocumentSession) {
      const body = session.buildSubmission("scripted");
      submitted[doc.id] = body.annotations;
      lastResponse = await client.submitAnnotations(projectId, doc.id, body);
    }

    // 1. untouched: accept the correct suggestion as delivered
    {
      const doc = byId.get("doc-correct")!;
      const session = new DocumentSession(doc, LABELS);
      expect(session.untouchedMachineAnnotations()).toHaveLength(1);
      await submitSession(doc, session);
      expect(submitted["doc-correct"]).toEqual([
        { start_token: 1, end_token: 3, label: "PER" },
      ]);
    }
    // 2. fix span: "Duck raises" -> "Lorene Duck" in one gesture
    {
      const doc = byId.get("doc-wrongspan")!;
      const session = new DocumentSession(doc, LABELS);
      const result = session.applyLabelToSelection({ start: 1, end: 3 }, "PER");
      expect(result.ok).toBe(true);
      expect(session.log).toEqual([
        expect.objectContaining({ kind: "update", start_token: 1, end_token: 3, label: "PER" }),
      ]);
      await submitSession(doc, session);
    }
    // 3. fix label: ORG -> PER, span untouched
    {
      const doc = byId.get("doc-wronglabel")!;
      const session = new DocumentSession(doc, LABELS);
      session.changeLabel(0, "PER");
      await submitSession(doc, session);
      expect(submitted["doc-wronglabel"]).toEqual([
        { start_token: 1, end_token: 3, label: "PER" },
      ]);
    }
    // 4. delete spurious: remove the highlight on "wages"
    {
      const doc = byId.get("doc-spurious")!;
      const session = new DocumentSession(doc, LABELS);
      const spuriousIndex = session.annotations.findIndex((a) => a.startToken === 4);
      session.deleteAnnotation(spuriousIndex);
      expect(session.log).toEqual([
        expect.objectContaining({ kind: "delete", start_token: 4, end_token: 5 }),
      ]);
      await submitSession(doc, session);
    }
    // 5. add missing: label "Lorene Duck" on the empty document
    {
      const doc = byId.get("doc-missing")!;
      const session = new DocumentSession(doc, LABELS);
      session.applyLabelToSelection({ start: 1, end: 3 }, "PER");
      await submitSession(doc, session);
    }

    // the final submission completed the iteration on the server
    expect(lastResponse!.iteration_completed).toBe(true);

    // every corrected document now matches the gold standard exactly
    const stats = (await client.getStats(projectId)) as {
      aggregate: { percent_correct: number; missing_count: number };
      per_document: Record<string, number>[];
    };
    expect(stats.aggregate.percent_correct).toBe(1.0);
    expect(stats.aggregate.missing_count).toBe(0);
    expect(stats.per_document).toHaveLength(5);
    for (const row of stats.per_document) {
      expect(row.correct).toBe(1);
      expect(row.unnecessary).toBe(0);
    }

    // merge-back retrained the external unit with the corrected corpus
    expect(mlStub.trainCalls).toHaveLength(1);
    const trainPayload = mlStub.trainCalls[0] as {
      documents: { document_id: string; annotations: unknown[] }[];
    };
    expect(trainPayload.documents).toHaveLength(5);
    for (const doc of trainPayload.documents) {
      expect(doc.annotations).toEqual([{ start_token: 1, end_token: 3, label: "PER" }]);
    }
  }, 30000);

  it("corpus is exhausted once the scripted iteration completed", async () => {
    const response = await client.openIteration(projectId, { size: 5 });
    expect(response.complete).toBe(true);
    expect(response.documents).toHaveLength(0);
  });
});

describe("timing capture", () => {
  const doc: DocumentPayload = {
    id: "timing-doc",
    text: SENTENCE,
    tokens: [
      { text: "CEO", start_char: 0, end_char: 3 },
      { text: "Lorene", start_char: 4, end_char: 10 },
      { text: "Duck", start_char: 11, end_char: 15 },
      { text: "raises", start_char: 16, end_char: 22 },
      { text: "wages", start_char: 23, end_char: 28 },
      { text: ".", start_char: 28, end_char: 29 },
    ],
    pre_annotations: [{ start_token: 4, end_token: 5, label: "PER", confidence: 0.4 }],
  };

  it("scripted pacing with an injected clock is captured exactly", () => {
    let t = 1_700_000_000_000;
    const session = new DocumentSession(doc, LABELS, { now: () => t });
    const schedule = [1000, 2500, 4000]; // ms offsets of the scripted actions
    t += schedule[0] - 0;
    session.applyLabelToSelection({ start: 1, end: 3 }, "PER");
    t = 1_700_000_000_000 + schedule[1];
    session.changeLabel(0, "ORG");
    t = 1_700_000_000_000 + schedule[2];
    session.deleteAnnotation(1);
    const offsets = session.log.map((a) => Date.parse(a.at) - session.startedAtMs);
    expect(offsets).toEqual(schedule);
    const stamps = session.log.map((a) => Date.parse(a.at));
    expect(stamps).toEqual([...stamps].sort((x, y) => x - y));
  });

  it("real-timer pacing stays within ±100 ms of the script's schedule", async () => {
    const session = new DocumentSession(doc, LABELS);
    const plan: Array<{ delay: number; run: () => void }> = [
      { delay: 150, run: () => session.applyLabelToSelection({ start: 1, end: 3 }, "PER") },
      { delay: 200, run: () => session.changeLabel(0, "ORG") },
      { delay: 150, run: () => session.deleteAnnotation(1) },
    ];
    const expectedOffsets: number[] = [];
    let scheduled = 0;
    for (const step of plan) {
      await sleep(step.delay);
      scheduled += step.delay;
      expectedOffsets.push(scheduled);
      step.run();
    }
    expect(session.log).toHaveLength(3);
    const offsets = session.log.map((a) => Date.parse(a.at) - session.startedAtMs);
    offsets.forEach((offset, i) => {
      expect(Math.abs(offset - expectedOffsets[i])).toBeLessThanOrEqual(100);
    });
    const stamps = session.log.map((a) => Date.parse(a.at));
    expect(stamps).toEqual([...stamps].sort((x, y) => x - y));
  });
});
