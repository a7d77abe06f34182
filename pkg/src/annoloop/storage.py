"""Durable project storage: append-only event log plus atomic snapshots.

Every state change is appended to ``projects/<id>/events.log`` (one JSON
object per line, fsynced before the change is acknowledged) and folded into
the in-memory record through a single transition function. Snapshots
(``snapshot.json``, written atomically via temp file and rename) are an
optimization: on restore the latest snapshot is loaded and newer events
replayed over it, so replaying the full log over the initial corpus always
reproduces the current state.

A torn final log line (a crash in the middle of an unacknowledged append) is
dropped and truncated on restore; corruption anywhere else refuses to start,
naming file and offset.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Mapping, Sequence

from .assistance import ExternalMLUnit, MLUnit, NullMLUnit, PreAnnotation, SimulatedMLUnit
from .corpus import Corpus, Document, Label, export_corpus, ingest_corpus
from .workcycle import (
    AnnotationSet,
    Block,
    ExperimentPlan,
    IterationPlan,
    ProjectState,
    plan_experiment,
    plan_pre_annotations,
)

log = logging.getLogger("annoloop.storage")

SCHEMA_VERSION = 1


class SnapshotCorruptionError(RuntimeError):
    """A snapshot file cannot be parsed; refusing to start."""


class EventLogCorruptionError(RuntimeError):
    """An interior event-log line cannot be parsed; refusing to start."""


class UnknownSchemaError(RuntimeError):
    """Persisted data uses a schema version this build cannot migrate."""


def default_ml_unit_factory(binding: Mapping | None, corpus: Corpus) -> MLUnit:
    """Build the ML unit for a project from its persisted binding."""
    if not binding or "none" in binding:
        return NullMLUnit()
    if "simulated" in binding:
        cfg = binding["simulated"]
        recall = float(cfg["target_recall"])
        return SimulatedMLUnit(corpus.label_ids, recall, corpus_seed=int(cfg.get("seed", 0)))
    if "external" in binding:
        return ExternalMLUnit(str(binding["external"]["base_url"]))
    raise ValueError(f"unknown ml unit binding: {sorted(binding)}")


def _pre_annotations_to_json(pre: Mapping[str, Sequence[PreAnnotation]]) -> dict:
    return {
        doc_id: [
            {"start_token": p.start, "end_token": p.end, "label": p.label,
             "confidence": p.confidence}
            for p in annotations
        ]
        for doc_id, annotations in pre.items()
    }


def _pre_annotations_from_json(raw: Mapping) -> dict[str, tuple[PreAnnotation, ...]]:
    return {
        doc_id: tuple(
            PreAnnotation(int(p["start_token"]), int(p["end_token"]), str(p["label"]),
                          confidence=float(p.get("confidence", 1.0)))
            for p in annotations
        )
        for doc_id, annotations in raw.items()
    }


def _block_from_json(raw: Mapping, documents_by_id: Mapping[str, Document]) -> Block:
    return Block(
        index=int(raw["index"]),
        documents=tuple(documents_by_id[d] for d in raw["document_ids"]),
        target_recall=raw.get("target_recall"),
        entity_total=int(raw["entity_total"]),
        is_training=bool(raw.get("is_training", False)),
    )


def _plan_from_json(raw: Mapping, corpus: Corpus) -> ExperimentPlan:
    documents_by_id = {d.id: d for d in corpus.documents}
    training = raw.get("training_block")
    return ExperimentPlan(
        labels=tuple(
            Label(lab["id"], lab.get("name", lab["id"]), lab.get("color", "#808080"))
            for lab in raw["labels"]
        ),
        blocks=tuple(_block_from_json(b, documents_by_id) for b in raw["blocks"]),
        training_block=_block_from_json(training, documents_by_id) if training else None,
        condition_order=str(raw["condition_order"]),
        target_recall=float(raw["target_recall"]),
    )


@dataclass
class ExperimentRecord:
    experiment_id: str
    config: dict
    plan: ExperimentPlan
    pre_annotations: dict[str, tuple[PreAnnotation, ...]]
    created_at: str

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "config": self.config,
            "plan": self.plan.to_dict(),
            "pre_annotations": _pre_annotations_to_json(self.pre_annotations),
            "created_at": self.created_at,
        }


@dataclass
class ProjectRecord:
    """A project's full durable state plus its revision counter."""

    project_id: str
    created_at: str
    ml_binding: dict
    state: ProjectState
    revision: int = 0
    pending_submissions: dict[str, AnnotationSet] = field(default_factory=dict)
    # experiment id -> annotator id -> document id -> latest submission
    experiment_submissions: dict[str, dict[str, dict[str, AnnotationSet]]] = field(
        default_factory=dict
    )
    experiments: dict[str, ExperimentRecord] = field(default_factory=dict)
    notes: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "project_id": self.project_id,
            "created_at": self.created_at,
            "ml_unit": self.ml_binding,
            "revision": self.revision,
            "corpus": export_corpus(self.state.corpus),
            "annotated": {
                doc_id: s.to_dict() for doc_id, s in sorted(self.state.annotated.items())
            },
            "pending_iteration": self.state.pending.to_dict() if self.state.pending else None,
            "iteration_counter": self.state.iteration_counter,
            "pending_submissions": {
                doc_id: s.to_dict() for doc_id, s in sorted(self.pending_submissions.items())
            },
            "experiment_submissions": {
                e: {
                    a: {d: s.to_dict() for d, s in sorted(docs.items())}
                    for a, docs in sorted(annotators.items())
                }
                for e, annotators in sorted(self.experiment_submissions.items())
            },
            "experiments": {e: r.to_dict() for e, r in sorted(self.experiments.items())},
            "notes": self.notes,
        }


def record_from_dict(raw: Mapping, ml_unit_factory) -> ProjectRecord:
    corpus = ingest_corpus(dict(raw["corpus"]))
    binding = dict(raw.get("ml_unit") or {})
    state = ProjectState(
        corpus=corpus,
        ml_unit=ml_unit_factory(binding, corpus),
        annotated={
            doc_id: AnnotationSet.from_dict(s) for doc_id, s in raw.get("annotated", {}).items()
        },
        pending=IterationPlan.from_dict(raw["pending_iteration"])
        if raw.get("pending_iteration")
        else None,
        iteration_counter=int(raw.get("iteration_counter", 0)),
    )
    record = ProjectRecord(
        project_id=str(raw["project_id"]),
        created_at=str(raw["created_at"]),
        ml_binding=binding,
        state=state,
        revision=int(raw["revision"]),
        pending_submissions={
            doc_id: AnnotationSet.from_dict(s)
            for doc_id, s in raw.get("pending_submissions", {}).items()
        },
        notes=list(raw.get("notes", [])),
    )
    for e_id, annotators in raw.get("experiment_submissions", {}).items():
        record.experiment_submissions[e_id] = {
            a: {d: AnnotationSet.from_dict(s) for d, s in docs.items()}
            for a, docs in annotators.items()
        }
    for e_id, exp in raw.get("experiments", {}).items():
        record.experiments[e_id] = ExperimentRecord(
            experiment_id=e_id,
            config=dict(exp["config"]),
            plan=_plan_from_json(exp["plan"], corpus),
            pre_annotations=_pre_annotations_from_json(exp["pre_annotations"]),
            created_at=str(exp["created_at"]),
        )
    return record


def apply_event(
    record: ProjectRecord | None, event: Mapping, ml_unit_factory
) -> ProjectRecord:
    """The single state-transition function: fold one event into a record.

    Used identically for live mutations and for replay; it never touches the
    network or the clock (timestamps come from the event payloads).
    """
    kind = event["type"]
    payload = event["payload"]
    if kind == "project_created":
        corpus = ingest_corpus(dict(payload["corpus"]))
        binding = dict(payload.get("ml_unit") or {})
        state = ProjectState(corpus=corpus, ml_unit=ml_unit_factory(binding, corpus))
        record = ProjectRecord(
            project_id=str(payload["project_id"]),
            created_at=str(event["at"]),
            ml_binding=binding,
            state=state,
        )
        record.revision = int(event["revision"])
        return record
    if record is None:
        raise EventLogCorruptionError(f"event {kind} before project_created")

    if kind == "iteration_opened":
        record.state = replace(record.state, pending=IterationPlan.from_dict(payload["plan"]))
        record.pending_submissions = {}
    elif kind == "annotations_submitted":
        submission = AnnotationSet.from_dict(payload["annotation_set"])
        experiment_id = payload.get("experiment_id")
        if experiment_id:
            per_annotator = record.experiment_submissions.setdefault(experiment_id, {})
            per_annotator.setdefault(submission.annotator_id, {})[
                submission.document_id
            ] = submission
        else:
            record.pending_submissions[submission.document_id] = submission
    elif kind == "iteration_completed":
        annotated = dict(record.state.annotated)
        for doc_id in payload["merged_document_ids"]:
            annotated[doc_id] = record.pending_submissions[doc_id]
        record.state = replace(
            record.state,
            annotated=annotated,
            pending=None,
            iteration_counter=record.state.iteration_counter + 1,
        )
        record.pending_submissions = {}
    elif kind == "experiment_created":
        experiment = ExperimentRecord(
            experiment_id=str(payload["experiment_id"]),
            config=dict(payload["config"]),
            plan=_plan_from_json(payload["plan"], record.state.corpus),
            pre_annotations=_pre_annotations_from_json(payload["pre_annotations"]),
            created_at=str(event["at"]),
        )
        record.experiments[experiment.experiment_id] = experiment
    elif kind == "note_recorded":
        record.notes.append(dict(payload))
    else:
        raise EventLogCorruptionError(f"unknown event type {kind!r}")
    record.revision = int(event["revision"])
    return record


def _now() -> str:
    return datetime.now(timezone.utc).isoformat()


class ProjectStore:
    """All projects under one data directory; single writer per project."""

    def __init__(
        self,
        data_dir: str | Path,
        snapshot_every: int = 50,
        ml_unit_factory: Callable[[Mapping | None, Corpus], MLUnit] = default_ml_unit_factory,
    ) -> None:
        self.data_dir = Path(data_dir)
        self.snapshot_every = snapshot_every
        self.ml_unit_factory = ml_unit_factory
        self._records: dict[str, ProjectRecord] = {}
        self._locks: dict[str, threading.RLock] = {}
        self._files: dict[str, object] = {}
        self._events_since_snapshot: dict[str, int] = {}
        self._registry_lock = threading.Lock()
        (self.data_dir / "projects").mkdir(parents=True, exist_ok=True)
        self._restore_all()

    # -- paths ---------------------------------------------------------------

    def _project_dir(self, project_id: str) -> Path:
        return self.data_dir / "projects" / project_id

    def _events_path(self, project_id: str) -> Path:
        return self._project_dir(project_id) / "events.log"

    def _snapshot_path(self, project_id: str) -> Path:
        return self._project_dir(project_id) / "snapshot.json"

    # -- restore ---------------------------------------------------------------

    def _restore_all(self) -> None:
        for path in sorted((self.data_dir / "projects").iterdir()):
            if path.is_dir():
                self._restore_project(path.name)

    def _restore_project(self, project_id: str) -> None:
        record: ProjectRecord | None = None
        snapshot_path = self._snapshot_path(project_id)
        if snapshot_path.exists():
            try:
                raw = json.loads(snapshot_path.read_text("utf-8"))
            except json.JSONDecodeError as exc:
                raise SnapshotCorruptionError(
                    f"{snapshot_path}: invalid JSON at offset {exc.pos}"
                ) from None
            if raw.get("schema_version") != SCHEMA_VERSION:
                raise UnknownSchemaError(
                    f"{snapshot_path}: schema version {raw.get('schema_version')!r}, "
                    f"expected {SCHEMA_VERSION}"
                )
            record = record_from_dict(raw["project"], self.ml_unit_factory)
        record = self._replay_events(project_id, record)
        if record is not None:
            self._records[project_id] = record
            self._locks[project_id] = threading.RLock()
            self._events_since_snapshot[project_id] = 0

    def _replay_events(
        self, project_id: str, record: ProjectRecord | None
    ) -> ProjectRecord | None:
        events_path = self._events_path(project_id)
        if not events_path.exists():
            return record
        base_revision = record.revision if record else 0
        data = events_path.read_bytes()
        offset = 0
        for line_no, line in enumerate(data.split(b"\n"), start=1):
            if not line.strip():
                offset += len(line) + 1
                continue
            try:
                event = json.loads(line)
            except json.JSONDecodeError:
                if offset + len(line) >= len(data):
                    # torn final write of an unacknowledged event: discard it
                    log.warning(
                        "%s: dropping torn final event at line %d", events_path, line_no
                    )
                    with open(events_path, "r+b") as fh:
                        fh.truncate(offset)
                    break
                raise EventLogCorruptionError(
                    f"{events_path}: invalid JSON at line {line_no}, offset {offset}"
                ) from None
            if int(event["revision"]) > base_revision:
                record = apply_event(record, event, self.ml_unit_factory)
            offset += len(line) + 1
        return record

    # -- event append ----------------------------------------------------------

    def _event_file(self, project_id: str):
        fh = self._files.get(project_id)
        if fh is None:
            fh = open(self._events_path(project_id), "ab")
            self._files[project_id] = fh
        return fh

    def _append_and_fold(self, project_id: str, kind: str, payload: dict) -> ProjectRecord:
        record = self._records.get(project_id)
        event = {
            "revision": (record.revision if record else 0) + 1,
            "type": kind,
            "at": _now(),
            "payload": payload,
        }
        fh = self._event_file(project_id)
        fh.write(json.dumps(event, sort_keys=True).encode("utf-8") + b"\n")
        fh.flush()
        os.fsync(fh.fileno())
        record = apply_event(record, event, self.ml_unit_factory)
        self._records[project_id] = record
        count = self._events_since_snapshot.get(project_id, 0) + 1
        if count >= self.snapshot_every:
            self.write_snapshot(project_id, record)
            count = 0
        self._events_since_snapshot[project_id] = count
        return record

    # -- snapshots ---------------------------------------------------------------

    def write_snapshot(self, project_id: str, record: ProjectRecord | None = None) -> None:
        record = record or self._records[project_id]
        path = self._snapshot_path(project_id)
        payload = {
            "schema_version": SCHEMA_VERSION,
            "revision": record.revision,
            "project": record.to_dict(),
        }
        tmp = path.with_suffix(".json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, sort_keys=True)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)

    def close(self) -> None:
        for project_id in list(self._records):
            with self.lock(project_id):
                self.write_snapshot(project_id)
        for fh in self._files.values():
            fh.close()
        self._files.clear()

    # -- accessors ---------------------------------------------------------------

    def lock(self, project_id: str) -> threading.RLock:
        return self._locks[project_id]

    def project_ids(self) -> list[str]:
        return sorted(self._records)

    def exists(self, project_id: str) -> bool:
        return project_id in self._records

    def get(self, project_id: str) -> ProjectRecord:
        return self._records[project_id]

    # -- mutations ---------------------------------------------------------------

    def create_project(self, corpus_payload: dict, ml_binding: Mapping | None) -> ProjectRecord:
        corpus = ingest_corpus(corpus_payload)  # validation; raises on bad input
        binding = dict(ml_binding or {})
        self.ml_unit_factory(binding, corpus)  # validate the binding early
        with self._registry_lock:
            project_id = f"p-{len(self._records) + 1:04d}"
            while self.exists(project_id) or self._project_dir(project_id).exists():
                project_id = f"p-{int(project_id.split('-')[1]) + 1:04d}"
            self._project_dir(project_id).mkdir(parents=True, exist_ok=True)
            self._locks[project_id] = threading.RLock()
        with self.lock(project_id):
            return self._append_and_fold(
                project_id,
                "project_created",
                {
                    "project_id": project_id,
                    "corpus": export_corpus(corpus),
                    "ml_unit": binding,
                },
            )

    def record_iteration_opened(self, project_id: str, plan: IterationPlan) -> ProjectRecord:
        return self._append_and_fold(project_id, "iteration_opened", {"plan": plan.to_dict()})

    def record_submission(
        self, project_id: str, submission: AnnotationSet, experiment_id: str | None = None
    ) -> ProjectRecord:
        return self._append_and_fold(
            project_id,
            "annotations_submitted",
            {
                "annotation_set": submission.to_dict(),
                "experiment_id": experiment_id,
                "received_at": _now(),
            },
        )

    def record_iteration_completed(
        self, project_id: str, merged: Sequence[str], aborted: Sequence[str]
    ) -> ProjectRecord:
        record = self._records[project_id]
        return self._append_and_fold(
            project_id,
            "iteration_completed",
            {
                "iteration_index": record.state.pending.iteration_index
                if record.state.pending
                else record.state.iteration_counter,
                "merged_document_ids": sorted(merged),
                "aborted_document_ids": sorted(aborted),
            },
        )

    def create_experiment(self, project_id: str, config: dict) -> ExperimentRecord:
        record = self._records[project_id]
        corpus = record.state.corpus
        plan = plan_experiment(
            corpus.documents,
            corpus.labels,
            k_blocks=int(config.get("k_blocks", 4)),
            condition_order=str(config.get("condition_order", "assisted_first")),
            target_recall=float(config["target_recall"]),
            training_docs=int(config.get("training_docs", 0)),
        )
        seed = int(config.get("seed", 0))
        pre = plan_pre_annotations(plan, seed)
        experiment_id = f"e-{len(record.experiments) + 1:04d}"
        stored_config = {
            "k_blocks": int(config.get("k_blocks", 4)),
            "condition_order": str(config.get("condition_order", "assisted_first")),
            "target_recall": float(config["target_recall"]),
            "training_docs": int(config.get("training_docs", 0)),
            "seed": seed,
        }
        record = self._append_and_fold(
            project_id,
            "experiment_created",
            {
                "experiment_id": experiment_id,
                "config": stored_config,
                "plan": plan.to_dict(),
                "pre_annotations": _pre_annotations_to_json(pre),
            },
        )
        return record.experiments[experiment_id]

    def record_note(self, project_id: str, note: dict) -> ProjectRecord:
        return self._append_and_fold(project_id, "note_recorded", note)
