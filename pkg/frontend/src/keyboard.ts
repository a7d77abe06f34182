// Keyboard-only operation: number keys pick labels, Enter submits, Delete
// removes, Escape clears the selection. Pure mapping so it is testable
// without a DOM.

export type Command =
  | { type: "select-label"; index: number }
  | { type: "submit" }
  | { type: "delete-selection" }
  | { type: "clear-selection" };

export interface KeyStroke {
  key: string;
  ctrlKey?: boolean;
  metaKey?: boolean;
  altKey?: boolean;
}

export function commandForKey(stroke: KeyStroke): Command | null {
  if (stroke.altKey) return null;
  if (stroke.key === "Enter") return { type: "submit" };
  if (stroke.key === "Delete" || stroke.key === "Backspace") {
    return { type: "delete-selection" };
  }
  if (stroke.key === "Escape") return { type: "clear-selection" };
  if (!stroke.ctrlKey && !stroke.metaKey && /^[1-9]$/.test(stroke.key)) {
    return { type: "select-label", index: Number(stroke.key) - 1 };
  }
  return null;
}

export const SHORTCUT_HELP = [
  "1-9: select label",
  "click+drag: select tokens (snaps to whole tokens)",
  "Enter: submit document",
  "Delete: remove annotation under cursor",
  "Escape: clear selection",
];
