"""HTTP service exposing projects, iterations, documents, submissions, and stats.

JSON over HTTP/1.1. A state-changing response is sent only after the
corresponding event hits stable storage (see :mod:`annoloop.storage`).
Payloads that violate corpus invariants are rejected with 4xx status codes
and machine-readable detail objects.

Routes::

    POST /projects                                   create (corpus + ml_unit binding)
    GET  /projects                                   list projects
    GET  /projects/{p}                               project summary
    GET  /projects/{p}/corpus                        re-export the corpus file
    POST /projects/{p}/iterations                    open the next iteration
    GET  /projects/{p}/iterations/current            pending iteration payload
    POST /projects/{p}/iterations/current/complete   merge a partial iteration
    GET  /projects/{p}/documents/{d}                 document payload (+ pre-annotations)
    PUT  /projects/{p}/documents/{d}/annotations     submit an annotation set
    GET  /projects/{p}/stats                         metrics report (JSON or CSV)
    POST /projects/{p}/experiments                   create a block experiment
    GET  /projects/{p}/experiments/{e}               experiment payload
    GET  /projects/{p}/experiments/{e}/report        scored experiment report
    POST /projects/{p}/notes                         free-form block note
    GET  /projects/{p}/notes                         list block notes
"""

from __future__ import annotations

from datetime import datetime, timezone
from pathlib import Path

from fastapi import Body, FastAPI, HTTPException, Query, Request, Response
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles

from .assistance import MLUnitError
from .corpus import Annotation, CorpusFormatError, Document, SpanAlignmentError
from .scoring import (
    InsufficientDataError,
    aggregate_metrics,
    classify,
    compare_conditions,
    document_stat_row,
    stats_csv,
)
from .storage import ExperimentRecord, ProjectRecord, ProjectStore
from .workcycle import (
    AnnotationAction,
    AnnotationSet,
    EmptyCorpusError,
    PendingIterationError,
    SelectionStrategy,
    correct_annotation_timings,
    open_iteration,
    parse_timestamp,
    pool_scores,
    score_block,
)

DEFAULT_MAX_UPLOAD_BYTES = 10_000_000


def _error(status: int, message: str, **extra) -> HTTPException:
    return HTTPException(status_code=status, detail={"error": message, **extra})


def _document_payload(doc: Document, pre_annotations=()) -> dict:
    return {
        "id": doc.id,
        "source": doc.source,
        "text": doc.text,
        "tokens": [t.to_dict() for t in doc.tokens],
        "pre_annotations": [
            {
                "start_token": p.start,
                "end_token": p.end,
                "label": p.label,
                "confidence": getattr(p, "confidence", 1.0),
            }
            for p in pre_annotations
        ],
    }


def _parse_timestamp(raw, fallback: datetime) -> datetime:
    if raw is None:
        return fallback
    try:
        return parse_timestamp(raw)
    except ValueError:
        raise _error(422, f"invalid timestamp {raw!r}") from None


def _parse_submission(body: dict, doc: Document, label_ids: set[str]) -> AnnotationSet:
    if not isinstance(body, dict):
        raise _error(422, "submission body must be a JSON object")
    annotator_id = body.get("annotator_id")
    if not annotator_id or not isinstance(annotator_id, str):
        raise _error(422, "annotator_id is required")
    annotations = []
    for i, raw in enumerate(body.get("annotations", [])):
        try:
            start, end = int(raw["start_token"]), int(raw["end_token"])
            label = str(raw["label"])
        except (KeyError, TypeError, ValueError):
            raise _error(422, f"annotations[{i}] is malformed") from None
        if not 0 <= start < end <= len(doc.tokens):
            raise _error(
                422,
                f"annotations[{i}] span [{start},{end}) out of bounds for "
                f"document {doc.id} with {len(doc.tokens)} tokens",
            )
        if label not in label_ids:
            raise _error(422, f"annotations[{i}] uses unknown label {label!r}")
        annotations.append(Annotation(start, end, label))
    ordered = sorted(annotations, key=lambda a: (a.start, a.end))
    for left, right in zip(ordered, ordered[1:]):
        if right.start < left.end:
            raise _error(
                422,
                "overlapping spans",
                spans=[[left.start, left.end], [right.start, right.end]],
            )
    now = datetime.now(timezone.utc)
    started = _parse_timestamp(body.get("started_at"), now)
    finished = _parse_timestamp(body.get("finished_at"), now)
    if finished < started:
        raise _error(422, "finished_at precedes started_at")
    try:
        actions = tuple(
            AnnotationAction.from_dict(a) for a in body.get("actions", [])
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise _error(422, f"malformed action log: {exc}") from None
    return AnnotationSet(
        document_id=doc.id,
        annotator_id=annotator_id,
        annotations=tuple(ordered),
        started_at=started,
        finished_at=finished,
        actions=actions,
    )


def _iteration_payload(record: ProjectRecord) -> dict:
    plan = record.state.pending
    corpus = record.state.corpus
    return {
        "iteration_index": plan.iteration_index,
        "complete": False,
        "strategy": plan.strategy.to_dict(),
        "documents": [
            _document_payload(corpus.document(doc_id), plan.pre_annotations.get(doc_id, ()))
            for doc_id in plan.document_ids
        ],
        "submitted_document_ids": sorted(record.pending_submissions),
    }


def _experiment_payload(experiment: ExperimentRecord) -> dict:
    return {
        "experiment_id": experiment.experiment_id,
        "created_at": experiment.created_at,
        "config": experiment.config,
        "plan": experiment.plan.to_dict(),
        "pre_annotations": {
            doc_id: [
                {
                    "start_token": p.start,
                    "end_token": p.end,
                    "label": p.label,
                    "confidence": p.confidence,
                }
                for p in pres
            ]
            for doc_id, pres in experiment.pre_annotations.items()
        },
    }


def experiment_report(record: ProjectRecord, experiment: ExperimentRecord) -> dict:
    """Score every annotator's stored submissions block by block.

    Mirrors the shape (and, for identical submissions, the numbers) of the
    in-process experiment runner's report.
    """
    plan = experiment.plan
    submissions = record.experiment_submissions.get(experiment.experiment_id, {})
    per_block_rows = []
    pairs = []
    annotator_rows = []
    for annotator_id in sorted(submissions):
        annotator_rows.append({"annotator_id": annotator_id})
        by_doc = submissions[annotator_id]
        assisted_scores = []
        unassisted_scores = []
        for block in plan.all_blocks():
            sets = [by_doc[d.id] for d in block.documents if d.id in by_doc]
            score = score_block(block, sets)
            per_block_rows.append(
                {
                    "annotator_id": annotator_id,
                    "block_index": block.index,
                    "condition": "assisted" if block.assisted else "none",
                    "is_training": block.is_training,
                    **score.report.to_dict(),
                }
            )
            if block.is_training:
                continue
            (assisted_scores if block.assisted else unassisted_scores).append(score)
        if assisted_scores and unassisted_scores:
            pairs.append((pool_scores(assisted_scores), pool_scores(unassisted_scores)))
    comparison = None
    if len(pairs) >= 2:
        try:
            comparison = compare_conditions(pairs).to_dict()
        except InsufficientDataError:
            comparison = None
    return {
        "plan": plan.to_dict(),
        "annotators": annotator_rows,
        "per_block": per_block_rows,
        "condition_comparison": comparison,
    }


def create_app(
    store: ProjectStore,
    max_upload_bytes: int = DEFAULT_MAX_UPLOAD_BYTES,
    frontend_dir: str | Path | None = None,
) -> FastAPI:
    app = FastAPI(title="annoloop", version="0.1.0")

    @app.middleware("http")
    async def limit_body_size(request: Request, call_next):
        length = request.headers.get("content-length")
        if length and int(length) > max_upload_bytes:
            return JSONResponse(
                status_code=413,
                content={"detail": {"error": f"payload exceeds {max_upload_bytes} bytes"}},
            )
        return await call_next(request)

    def _record(project_id: str) -> ProjectRecord:
        if not store.exists(project_id):
            raise _error(404, f"unknown project {project_id!r}")
        return store.get(project_id)

    def _document(record: ProjectRecord, document_id: str) -> Document:
        try:
            return record.state.corpus.document(document_id)
        except KeyError:
            raise _error(404, f"unknown document {document_id!r}") from None

    def _experiment(record: ProjectRecord, experiment_id: str) -> ExperimentRecord:
        experiment = record.experiments.get(experiment_id)
        if experiment is None:
            raise _error(404, f"unknown experiment {experiment_id!r}")
        return experiment

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.get("/config")
    def config() -> dict:
        return {"api_base": ""}

    @app.post("/projects", status_code=201)
    def create_project(body: dict = Body(...)) -> dict:
        try:
            record = store.create_project(body, body.get("ml_unit"))
        except (CorpusFormatError, SpanAlignmentError, ValueError) as exc:
            raise _error(400, str(exc)) from None
        return {"project_id": record.project_id, "revision": record.revision}

    @app.get("/projects")
    def list_projects() -> dict:
        return {"projects": [_summary(store.get(p)) for p in store.project_ids()]}

    def _summary(record: ProjectRecord) -> dict:
        state = record.state
        return {
            "project_id": record.project_id,
            "created_at": record.created_at,
            "revision": record.revision,
            "ml_unit": record.ml_binding or {"none": {}},
            "labels": [lab.to_dict() for lab in state.corpus.labels],
            "document_count": len(state.corpus.documents),
            "gold_count": state.corpus.gold_count,
            "annotated_count": len(state.annotated),
            "iteration_counter": state.iteration_counter,
            "pending_iteration": state.pending.iteration_index if state.pending else None,
            "experiments": sorted(record.experiments),
            "complete": not state.unannotated_ids() and state.pending is None,
        }

    @app.get("/projects/{project_id}")
    def get_project(project_id: str) -> dict:
        return _summary(_record(project_id))

    @app.get("/projects/{project_id}/corpus")
    def get_corpus(project_id: str) -> dict:
        from .corpus import export_corpus

        return export_corpus(_record(project_id).state.corpus)

    @app.post("/projects/{project_id}/iterations")
    def next_iteration(project_id: str, body: dict = Body(default={})) -> dict:
        _record(project_id)
        with store.lock(project_id):
            record = store.get(project_id)
            size = int(body.get("size", 10))
            strategy_kind = str(body.get("strategy", "sequential"))
            try:
                strategy = SelectionStrategy(strategy_kind, body.get("seed"))
            except ValueError as exc:
                raise _error(400, str(exc)) from None
            if size < 1:
                raise _error(400, "size must be >= 1")
            try:
                _, plan = open_iteration(record.state, strategy, size)
            except PendingIterationError as exc:
                raise _error(409, str(exc)) from None
            except EmptyCorpusError:
                return {"complete": True, "documents": [],
                        "iteration_index": record.state.iteration_counter}
            except MLUnitError as exc:
                raise _error(502, str(exc)) from None
            record = store.record_iteration_opened(project_id, plan)
        return _iteration_payload(record)

    @app.get("/projects/{project_id}/iterations/current")
    def current_iteration(project_id: str) -> dict:
        record = _record(project_id)
        if record.state.pending is None:
            raise _error(404, "no pending iteration")
        return _iteration_payload(record)

    @app.post("/projects/{project_id}/iterations/current/complete")
    def complete_iteration(project_id: str) -> dict:
        _record(project_id)
        with store.lock(project_id):
            record = store.get(project_id)
            plan = record.state.pending
            if plan is None:
                raise _error(409, "no pending iteration")
            merged = [d for d in plan.document_ids if d in record.pending_submissions]
            aborted = [d for d in plan.document_ids if d not in record.pending_submissions]
            record = store.record_iteration_completed(project_id, merged, aborted)
            retrain_error = _maybe_retrain(record)
        return {
            "iteration_completed": True,
            "merged_document_ids": sorted(merged),
            "aborted_document_ids": sorted(aborted),
            "iteration_counter": record.state.iteration_counter,
            "retrain_error": retrain_error,
        }

    def _maybe_retrain(record: ProjectRecord) -> str | None:
        unit = record.state.ml_unit
        if not unit.supports_training or not record.state.annotated:
            return None
        try:
            unit.train(
                [
                    (record.state.corpus.document(doc_id), record.state.annotated[doc_id].annotations)
                    for doc_id in sorted(record.state.annotated)
                ]
            )
        except MLUnitError as exc:
            # the submissions are already durable; surface the failure instead
            # of rolling back human work
            return str(exc)
        return None

    @app.get("/projects/{project_id}/documents/{document_id}")
    def get_document(
        project_id: str, document_id: str, experiment: str | None = Query(default=None)
    ) -> dict:
        record = _record(project_id)
        doc = _document(record, document_id)
        pre = ()
        if experiment is not None:
            pre = _experiment(record, experiment).pre_annotations.get(document_id, ())
        elif record.state.pending and document_id in record.state.pending.document_ids:
            pre = record.state.pending.pre_annotations.get(document_id, ())
        return _document_payload(doc, pre)

    @app.put("/projects/{project_id}/documents/{document_id}/annotations")
    def submit_annotations(
        project_id: str, document_id: str, body: dict = Body(...)
    ) -> dict:
        _record(project_id)
        with store.lock(project_id):
            record = store.get(project_id)
            doc = _document(record, document_id)
            experiment_id = body.get("experiment_id")
            label_ids = set(record.state.corpus.label_ids)
            submission = _parse_submission(body, doc, label_ids)
            if experiment_id is not None:
                experiment = _experiment(record, str(experiment_id))
                experiment_docs = {
                    d.id for b in experiment.plan.all_blocks() for d in b.documents
                }
                if document_id not in experiment_docs:
                    raise _error(
                        409, f"document {document_id!r} is not part of experiment "
                             f"{experiment_id!r}"
                    )
                record = store.record_submission(project_id, submission, str(experiment_id))
                return {"iteration_completed": False, "revision": record.revision}
            plan = record.state.pending
            if plan is None or document_id not in plan.document_ids:
                raise _error(
                    409, f"document {document_id!r} is not in the pending iteration"
                )
            record = store.record_submission(project_id, submission)
            completed = set(plan.document_ids) <= set(record.pending_submissions)
            retrain_error = None
            if completed:
                record = store.record_iteration_completed(
                    project_id, list(plan.document_ids), []
                )
                retrain_error = _maybe_retrain(record)
        response = {"iteration_completed": completed, "revision": record.revision}
        if retrain_error:
            response["retrain_error"] = retrain_error
        return response

    @app.get("/projects/{project_id}/stats")
    def stats(
        project_id: str,
        annotator: str | None = Query(default=None),
        block: int | None = Query(default=None),
        experiment: str | None = Query(default=None),
        format: str = Query(default="json"),
    ) -> Response:
        record = _record(project_id)
        corpus = record.state.corpus
        if not corpus.has_gold():
            raise _error(409, "project has no gold annotations; stats are undefined")

        experiment_record = None
        if experiment is not None:
            experiment_record = _experiment(record, experiment)
        elif len(record.experiments) == 1:
            experiment_record = next(iter(record.experiments.values()))
        if block is not None and experiment_record is None:
            raise _error(400, "block filter requires an experiment")

        block_of: dict[str, tuple[int, str]] = {}
        if experiment_record is not None:
            for blk in experiment_record.plan.all_blocks():
                for d in blk.documents:
                    block_of[d.id] = (blk.index, "assisted" if blk.assisted else "none")

        rows = []
        pooled_counts: dict = {}
        pooled_gold = 0
        pooled_timings: list[float] = []

        def add_row(annotator_id: str, doc: Document, submission: AnnotationSet) -> None:
            nonlocal pooled_gold
            if doc.gold is None:
                return
            if annotator is not None and annotator_id != annotator:
                return
            blk = block_of.get(doc.id)
            if block is not None and (blk is None or blk[0] != block):
                return
            timings = correct_annotation_timings(submission, doc.gold)
            row = document_stat_row(annotator_id, doc, submission.annotations, timings)
            if blk:
                row["block_index"], row["condition"] = blk
            rows.append(row)
            cls = classify(submission.annotations, doc.gold)
            for category, n in cls.counts.items():
                pooled_counts[category] = pooled_counts.get(category, 0) + n
            pooled_gold += doc.gold_count
            pooled_timings.extend(timings)

        if experiment_record is not None:
            per_annotator = record.experiment_submissions.get(
                experiment_record.experiment_id, {}
            )
            for annotator_id in sorted(per_annotator):
                for doc_id in sorted(per_annotator[annotator_id]):
                    add_row(
                        annotator_id,
                        corpus.document(doc_id),
                        per_annotator[annotator_id][doc_id],
                    )
        for doc_id in sorted(record.state.annotated):
            submission = record.state.annotated[doc_id]
            add_row(submission.annotator_id, corpus.document(doc_id), submission)

        aggregate = (
            aggregate_metrics(pooled_counts, pooled_gold, pooled_timings).to_dict()
            if pooled_gold
            else None
        )
        ttests = None
        if experiment_record is not None:
            report = experiment_report(record, experiment_record)
            ttests = report["condition_comparison"]
        if format == "csv":
            return Response(content=stats_csv(rows), media_type="text/csv")
        return JSONResponse(
            {"per_document": rows, "aggregate": aggregate, "ttests": ttests}
        )

    @app.post("/projects/{project_id}/experiments", status_code=201)
    def create_experiment(project_id: str, body: dict = Body(...)) -> dict:
        _record(project_id)
        with store.lock(project_id):
            record = store.get(project_id)
            corpus = record.state.corpus
            if any(d.gold is None for d in corpus.documents) or not corpus.documents:
                raise _error(
                    409, "experiments require gold annotations on every document"
                )
            if "target_recall" not in body:
                raise _error(400, "target_recall is required")
            try:
                experiment = store.create_experiment(project_id, body)
            except (ValueError, TypeError) as exc:
                raise _error(400, str(exc)) from None
        return _experiment_payload(experiment)

    @app.get("/projects/{project_id}/experiments/{experiment_id}")
    def get_experiment(project_id: str, experiment_id: str) -> dict:
        return _experiment_payload(_experiment(_record(project_id), experiment_id))

    @app.get("/projects/{project_id}/experiments/{experiment_id}/report")
    def get_experiment_report(project_id: str, experiment_id: str) -> dict:
        record = _record(project_id)
        return experiment_report(record, _experiment(record, experiment_id))

    @app.post("/projects/{project_id}/notes", status_code=201)
    def record_note(project_id: str, body: dict = Body(...)) -> dict:
        _record(project_id)
        annotator_id = body.get("annotator_id")
        if not annotator_id or not isinstance(annotator_id, str):
            raise _error(422, "annotator_id is required")
        note = {
            "annotator_id": annotator_id,
            "block_index": body.get("block_index"),
            "text": str(body.get("text", "")),
            "at": datetime.now(timezone.utc).isoformat(),
        }
        with store.lock(project_id):
            record = store.record_note(project_id, note)
        return {"recorded": True, "revision": record.revision}

    @app.get("/projects/{project_id}/notes")
    def list_notes(project_id: str) -> dict:
        return {"notes": _record(project_id).notes}

    @app.get("/")
    def root() -> dict:
        return {
            "service": "annoloop",
            "version": "0.1.0",
            "ui": "/ui/" if frontend_dir else None,
        }

    if frontend_dir and Path(frontend_dir).is_dir():
        app.mount("/ui", StaticFiles(directory=frontend_dir, html=True), name="ui")

    return app
