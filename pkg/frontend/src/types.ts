// Payload types mirroring the server's JSON wire formats.

export interface LabelInfo {
  id: string;
  name: string;
  color: string;
}

export interface TokenPayload {
  text: string;
  start_char: number;
  end_char: number;
}

export interface PreAnnotationPayload {
  start_token: number;
  end_token: number;
  label: string;
  confidence?: number;
}

export interface DocumentPayload {
  id: string;
  source?: string | null;
  text: string;
  tokens: TokenPayload[];
  pre_annotations: PreAnnotationPayload[];
}

export interface IterationPayload {
  iteration_index: number;
  complete: boolean;
  documents: DocumentPayload[];
  submitted_document_ids?: string[];
}

export interface AnnotationPayload {
  start_token: number;
  end_token: number;
  label: string;
}

export type ActionKind = "add" | "update" | "delete";

export interface ActionLogEntry {
  kind: ActionKind;
  start_token: number;
  end_token: number;
  label: string;
  at: string; // ISO timestamp
  seconds: number; // duration attributed to this action
}

export interface SubmissionBody {
  annotator_id: string;
  annotations: AnnotationPayload[];
  started_at: string;
  finished_at: string;
  actions: ActionLogEntry[];
  experiment_id?: string;
}

export interface SubmitResponse {
  iteration_completed: boolean;
  revision: number;
  retrain_error?: string;
}

export interface ProjectSummary {
  project_id: string;
  labels: LabelInfo[];
  document_count: number;
  annotated_count: number;
  iteration_counter: number;
  pending_iteration: number | null;
  experiments: string[];
  complete: boolean;
}

export interface TokenRange {
  start: number; // inclusive token index
  end: number; // exclusive token index
}
