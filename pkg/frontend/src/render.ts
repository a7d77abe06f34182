// DOM layer: renders a DocumentSession as a row of token chips with colored
// annotation highlights, a label palette, and progress. Kept as thin as
// possible; all state transitions go through the session.

import type { DocumentSession } from "./model.js";
import type { LabelInfo, TokenRange } from "./types.js";

export interface RenderCallbacks {
  onApplyLabel: (range: TokenRange | null) => void;
  onDeleteAnnotation: (index: number) => void;
  onChangeLabel: (index: number, label: string) => void;
  onSelectLabel: (label: string) => void;
}

function labelColor(labels: LabelInfo[], id: string): string {
  return labels.find((l) => l.id === id)?.color ?? "#999999";
}

export function renderError(container: HTMLElement, message: string): void {
  container.replaceChildren();
  const box = document.createElement("div");
  box.className = "error-state";
  box.textContent = `Cannot display this document: ${message}`;
  container.appendChild(box);
}

export function renderPalette(
  container: HTMLElement,
  labels: LabelInfo[],
  selected: string,
  onSelect: (label: string) => void,
): void {
  container.replaceChildren();
  labels.forEach((label, i) => {
    const button = document.createElement("button");
    button.className = "label-button" + (label.id === selected ? " selected" : "");
    button.style.setProperty("--label-color", label.color);
    button.textContent = `${i + 1} ${label.name}`;
    button.dataset.labelId = label.id;
    button.addEventListener("click", () => onSelect(label.id));
    container.appendChild(button);
  });
}

interface DragState {
  anchor: number | null;
  current: number | null;
}

export function renderDocument(
  container: HTMLElement,
  session: DocumentSession,
  callbacks: RenderCallbacks,
): void {
  container.replaceChildren();
  const drag: DragState = { anchor: null, current: null };

  const tokensHost = document.createElement("div");
  tokensHost.className = "token-row";

  const annotationFor = (tokenIndex: number) =>
    session.annotations.find((a) => a.startToken <= tokenIndex && tokenIndex < a.endToken);

  session.doc.tokens.forEach((token, index) => {
    const chip = document.createElement("span");
    chip.className = "token";
    chip.dataset.index = String(index);
    chip.textContent = token.text;
    const annotation = annotationFor(index);
    if (annotation) {
      chip.classList.add("annotated");
      if (annotation.machine) chip.classList.add("machine");
      chip.style.setProperty("--label-color", labelColor(session.labels, annotation.label));
      if (annotation.startToken === index) chip.classList.add("annotation-start");
      if (annotation.endToken === index + 1) chip.classList.add("annotation-end");
      chip.title = `${annotation.label}${annotation.machine ? " (suggestion)" : ""}`;
    }

    chip.addEventListener("mousedown", (event) => {
      event.preventDefault();
      drag.anchor = index;
      drag.current = index;
      refreshSelectionHighlight();
    });
    chip.addEventListener("mouseenter", () => {
      if (drag.anchor !== null) {
        drag.current = index;
        refreshSelectionHighlight();
      }
    });
    chip.addEventListener("mouseup", () => {
      if (drag.anchor === null) return;
      const start = Math.min(drag.anchor, drag.current ?? drag.anchor);
      const end = Math.max(drag.anchor, drag.current ?? drag.anchor) + 1;
      drag.anchor = null;
      drag.current = null;
      session.selection = { start, end };
      callbacks.onApplyLabel(session.selection);
    });
    chip.addEventListener("dblclick", () => {
      const annotationIndex = session.annotationIndexAtToken(index);
      if (annotationIndex >= 0) callbacks.onDeleteAnnotation(annotationIndex);
    });
    tokensHost.appendChild(chip);

    // preserve readable gaps between tokens
    const gapEnd = session.doc.tokens[index + 1]?.start_char ?? token.end_char;
    if (gapEnd > token.end_char) {
      tokensHost.appendChild(document.createTextNode(" "));
    }
  });

  function refreshSelectionHighlight(): void {
    const lo = Math.min(drag.anchor ?? 0, drag.current ?? 0);
    const hi = Math.max(drag.anchor ?? 0, drag.current ?? 0);
    tokensHost.querySelectorAll<HTMLElement>(".token").forEach((chip) => {
      const i = Number(chip.dataset.index);
      chip.classList.toggle("selecting", drag.anchor !== null && i >= lo && i <= hi);
    });
  }

  const list = document.createElement("ul");
  list.className = "annotation-list";
  session.annotations.forEach((annotation, index) => {
    const item = document.createElement("li");
    const swatch = document.createElement("span");
    swatch.className = "swatch";
    swatch.style.backgroundColor = labelColor(session.labels, annotation.label);
    item.appendChild(swatch);
    const text = session.doc.tokens
      .slice(annotation.startToken, annotation.endToken)
      .map((t) => t.text)
      .join(" ");
    const caption = document.createElement("span");
    caption.textContent = `${text} — ${annotation.label}` + (annotation.machine ? " · suggestion" : "");
    item.appendChild(caption);

    const relabel = document.createElement("select");
    for (const label of session.labels) {
      const option = document.createElement("option");
      option.value = label.id;
      option.textContent = label.id;
      option.selected = label.id === annotation.label;
      relabel.appendChild(option);
    }
    relabel.addEventListener("change", () => callbacks.onChangeLabel(index, relabel.value));
    item.appendChild(relabel);

    const remove = document.createElement("button");
    remove.textContent = "delete";
    remove.className = "delete-button";
    remove.addEventListener("click", () => callbacks.onDeleteAnnotation(index));
    item.appendChild(remove);
    list.appendChild(item);
  });

  container.appendChild(tokensHost);
  container.appendChild(list);
}

export function renderProgress(container: HTMLElement, text: string): void {
  container.textContent = text;
}
