// Application bootstrap: drives the iteration flow against the server API.
// URL parameters: ?project=p-0001&annotator=alice[&experiment=e-0001]

import { ApiClient, ApiError, SubmissionQueue } from "./api.js";
import { commandForKey, SHORTCUT_HELP } from "./keyboard.js";
import { DocumentSession, IterationProgress, PayloadMismatchError } from "./model.js";
import { renderDocument, renderError, renderPalette, renderProgress } from "./render.js";
import type { DocumentPayload, LabelInfo } from "./types.js";

interface AppState {
  client: ApiClient;
  queue: SubmissionQueue;
  projectId: string;
  annotatorId: string;
  experimentId: string | null;
  labels: LabelInfo[];
  documents: DocumentPayload[];
  progress: IterationProgress;
  session: DocumentSession | null;
  blockBoundaries: Map<string, number>; // last doc of each experiment block -> block index
}

const $ = (id: string): HTMLElement => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el;
};

function setStatus(text: string, isError = false): void {
  const status = $("status");
  status.textContent = text;
  status.classList.toggle("error", isError);
}

async function openNextBatch(state: AppState): Promise<void> {
  if (state.experimentId) {
    const experiment = (await state.client.getExperiment(
      state.projectId,
      state.experimentId,
    )) as {
      plan: { training_block: { index: number; document_ids: string[] } | null;
              blocks: { index: number; document_ids: string[] }[] };
      pre_annotations: Record<string, unknown[]>;
    };
    const blocks = [
      ...(experiment.plan.training_block ? [experiment.plan.training_block] : []),
      ...experiment.plan.blocks,
    ];
    const docs: DocumentPayload[] = [];
    for (const block of blocks) {
      for (const docId of block.document_ids) {
        docs.push(await state.client.getDocument(state.projectId, docId, state.experimentId));
      }
      const last = block.document_ids[block.document_ids.length - 1];
      if (last) state.blockBoundaries.set(last, block.index);
    }
    state.documents = docs;
  } else {
    const iteration = await state.client.openIteration(state.projectId, { size: 10 });
    if (iteration.complete) {
      setStatus("Corpus complete: every document is annotated.");
      state.documents = [];
      return;
    }
    state.documents = iteration.documents;
  }
  state.progress = new IterationProgress(state.documents.length);
  await showNextDocument(state);
}

async function showNextDocument(state: AppState): Promise<void> {
  const doc = state.documents[state.progress.completed];
  if (!doc) {
    await showSummary(state);
    return;
  }
  try {
    state.session = new DocumentSession(doc, state.labels);
  } catch (error) {
    if (error instanceof PayloadMismatchError) {
      renderError($("document"), error.message);
      state.session = null;
      return;
    }
    throw error;
  }
  redraw(state);
  renderProgress($("progress"), `document ${state.progress.describe()}`);
  setStatus("annotate, then press Enter to submit");
}

function redraw(state: AppState): void {
  const session = state.session;
  if (!session) return;
  renderPalette($("palette"), state.labels, session.selectedLabel, (label) => {
    session.selectedLabel = label;
    redraw(state);
  });
  renderDocument($("document"), session, {
    onApplyLabel: (range) => {
      const result = session.applyLabelToSelection(range);
      if (!result.ok) setStatus(result.reason, true);
      redraw(state);
    },
    onDeleteAnnotation: (index) => {
      session.deleteAnnotation(index);
      redraw(state);
    },
    onChangeLabel: (index, label) => {
      session.changeLabel(index, label);
      redraw(state);
    },
    onSelectLabel: (label) => {
      session.selectedLabel = label;
      redraw(state);
    },
  });
}

async function submitCurrent(state: AppState): Promise<void> {
  const session = state.session;
  if (!session) return;
  const body = session.buildSubmission(state.annotatorId, state.experimentId ?? undefined);
  try {
    const outcome = await state.queue.submit(state.projectId, session.doc.id, body);
    if (outcome === "queued") {
      setStatus("offline: submission queued, will retry automatically");
    } else if (outcome.iteration_completed) {
      setStatus("iteration complete");
    } else {
      setStatus("submitted");
    }
  } catch (error) {
    if (error instanceof ApiError) {
      setStatus(`rejected (${error.status}): ${JSON.stringify(error.detail)} — fix and press Enter to retry`, true);
      return; // keep the session open so the annotator can correct and retry
    }
    throw error;
  }
  const blockIndex = state.blockBoundaries.get(session.doc.id);
  state.progress.advance();
  state.session = null;
  if (blockIndex !== undefined) {
    showBlockNoteForm(state, blockIndex);
    return;
  }
  await showNextDocument(state);
}

function showBlockNoteForm(state: AppState, blockIndex: number): void {
  const host = $("document");
  host.replaceChildren();
  const form = document.createElement("div");
  form.className = "block-note";
  const prompt = document.createElement("p");
  prompt.textContent =
    `End of block ${blockIndex + 1}. Any observations about this block? (optional)`;
  const textarea = document.createElement("textarea");
  textarea.rows = 4;
  const next = document.createElement("button");
  next.textContent = "Continue";
  next.addEventListener("click", async () => {
    if (textarea.value.trim()) {
      await state.client.submitNote(state.projectId, {
        annotator_id: state.annotatorId,
        block_index: blockIndex,
        text: textarea.value.trim(),
      });
    }
    await showNextDocument(state);
  });
  form.append(prompt, textarea, next);
  host.appendChild(form);
  setStatus("between blocks");
}

async function showSummary(state: AppState): Promise<void> {
  const host = $("document");
  host.replaceChildren();
  const heading = document.createElement("h2");
  heading.textContent = state.experimentId ? "Experiment finished" : "Iteration finished";
  host.appendChild(heading);
  try {
    const stats = (await state.client.getStats(state.projectId)) as {
      aggregate: { percent_correct: number; missing_count: number } | null;
    };
    if (stats.aggregate) {
      const summary = document.createElement("p");
      summary.textContent =
        `So far: ${(stats.aggregate.percent_correct * 100).toFixed(1)}% correct, ` +
        `${stats.aggregate.missing_count} missing.`;
      host.appendChild(summary);
    }
  } catch {
    // stats are undefined without gold; nothing to show
  }
  if (!state.experimentId) {
    const again = document.createElement("button");
    again.textContent = "Open next iteration";
    again.addEventListener("click", () => void openNextBatch(state));
    host.appendChild(again);
  }
  renderProgress($("progress"), "");
  setStatus("done");
}

async function boot(): Promise<void> {
  const params = new URLSearchParams(window.location.search);
  const projectId = params.get("project");
  const annotatorId = params.get("annotator") ?? "anonymous";
  const experimentId = params.get("experiment");
  const client = new ApiClient("");
  if (!projectId) {
    renderError($("document"), "no project selected; open /ui/?project=<id>&annotator=<name>");
    return;
  }
  const project = await client.getProject(projectId);
  const state: AppState = {
    client,
    queue: new SubmissionQueue(client),
    projectId,
    annotatorId,
    experimentId,
    labels: project.labels,
    documents: [],
    progress: new IterationProgress(0),
    session: null,
    blockBoundaries: new Map(),
  };
  $("project-name").textContent = `${projectId} · ${annotatorId}`;
  $("shortcuts").textContent = SHORTCUT_HELP.join("  ·  ");

  document.addEventListener("keydown", (event) => {
    const command = commandForKey(event);
    if (!command || !state.session) return;
    event.preventDefault();
    if (command.type === "select-label") {
      const label = state.labels[command.index];
      if (label) {
        state.session.selectedLabel = label.id;
        redraw(state);
      }
    } else if (command.type === "submit") {
      void submitCurrent(state);
    } else if (command.type === "delete-selection") {
      const selection = state.session.selection;
      if (selection) {
        const index = state.session.annotationIndexAtToken(selection.start);
        if (index >= 0) state.session.deleteAnnotation(index);
        redraw(state);
      }
    } else if (command.type === "clear-selection") {
      state.session.selection = null;
      redraw(state);
    }
  });

  await openNextBatch(state);
}

boot().catch((error) => {
  renderError($("document"), String(error));
});
