"""The annotation work cycle and experiment engine.

A project's corpus is annotated over several iterations: a batch of
unannotated documents is selected (sequentially, randomly, or by lowest
prediction confidence), served together with machine pre-annotations,
corrected by an annotator, and merged back, after which the bound ML unit
may be retrained. On top of that sits an experiment planner that splits a
gold corpus into entity-balanced blocks with alternating assistance
conditions, and a simulated annotator so the full cycle can be exercised
end to end without human subjects.

All state transitions are functional: operations take a
:class:`ProjectState` and return a new one, leaving the input untouched.
"""

from __future__ import annotations

import random
from datetime import datetime, timedelta, timezone
from dataclasses import dataclass, field, replace
from typing import Mapping, NamedTuple, Sequence

from .assistance import MLUnit, PreAnnotation, SimulatedMLUnit, stable_seed
from .corpus import Annotation, Corpus, Document, Label, _check_non_overlapping
from .scoring import (
    ConditionComparison,
    ErrorCategory,
    MetricsReport,
    aggregate_metrics,
    classify,
    compare_conditions,
)

#: Fixed epoch for simulated timestamps, so simulation output is reproducible.
SIM_EPOCH = datetime(2020, 1, 1, tzinfo=timezone.utc)

ACTION_KINDS = ("add", "update", "delete")


def parse_timestamp(raw: str) -> datetime:
    """ISO-8601 parse accepting the 'Z' UTC suffix JavaScript clients emit."""
    text = str(raw)
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    return datetime.fromisoformat(text)


class EmptyCorpusError(RuntimeError):
    """No unannotated documents are left to select from."""


class PendingIterationError(RuntimeError):
    """An iteration is already open for this project."""


class IncompleteIterationError(ValueError):
    """Submissions do not cover exactly the pending iteration's documents."""

    def __init__(self, missing: Sequence[str], extra: Sequence[str]):
        self.missing = tuple(sorted(missing))
        self.extra = tuple(sorted(extra))
        parts = []
        if self.missing:
            parts.append(f"missing submissions for {list(self.missing)}")
        if self.extra:
            parts.append(f"unplanned submissions for {list(self.extra)}")
        super().__init__("; ".join(parts) or "inconsistent submissions")


@dataclass(frozen=True)
class AnnotationAction:
    """One logged mutation of the working annotation list."""

    kind: str
    start: int
    end: int
    label: str
    at: datetime
    seconds: float

    def __post_init__(self) -> None:
        if self.kind not in ACTION_KINDS:
            raise ValueError(f"unknown action kind {self.kind!r}")
        if self.seconds < 0:
            raise ValueError("action seconds must be non-negative")

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "start_token": self.start,
            "end_token": self.end,
            "label": self.label,
            "at": self.at.isoformat(),
            "seconds": self.seconds,
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "AnnotationAction":
        return cls(
            kind=str(raw["kind"]),
            start=int(raw["start_token"]),
            end=int(raw["end_token"]),
            label=str(raw["label"]),
            at=parse_timestamp(raw["at"]),
            seconds=float(raw["seconds"]),
        )


@dataclass(frozen=True)
class AnnotationSet:
    """One annotator's final annotations for one document, with timing."""

    document_id: str
    annotator_id: str
    annotations: tuple[Annotation, ...]
    started_at: datetime
    finished_at: datetime
    actions: tuple[AnnotationAction, ...] = ()

    def __post_init__(self) -> None:
        _check_non_overlapping(self.annotations, f"submission for {self.document_id}")
        if self.finished_at < self.started_at:
            raise ValueError("finished_at precedes started_at")

    def to_dict(self) -> dict:
        return {
            "document_id": self.document_id,
            "annotator_id": self.annotator_id,
            "annotations": [
                {"start_token": a.start, "end_token": a.end, "label": a.label}
                for a in self.annotations
            ],
            "started_at": self.started_at.isoformat(),
            "finished_at": self.finished_at.isoformat(),
            "actions": [a.to_dict() for a in self.actions],
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "AnnotationSet":
        return cls(
            document_id=str(raw["document_id"]),
            annotator_id=str(raw["annotator_id"]),
            annotations=tuple(
                Annotation(int(a["start_token"]), int(a["end_token"]), str(a["label"]))
                for a in raw.get("annotations", [])
            ),
            started_at=parse_timestamp(raw["started_at"]),
            finished_at=parse_timestamp(raw["finished_at"]),
            actions=tuple(AnnotationAction.from_dict(a) for a in raw.get("actions", [])),
        )


def attributed_seconds(annotation_set: AnnotationSet) -> dict[Annotation, float]:
    """Seconds attributed to each final annotation.

    An annotation created or last touched by a logged action carries that
    action's duration; untouched annotations (accepted machine suggestions)
    cost nothing. Deletions consume time but leave no annotation, so their
    cost appears only in the set's total elapsed time.
    """
    by_result: dict[Annotation, float] = {}
    for action in annotation_set.actions:
        if action.kind == "delete":
            continue
        by_result[Annotation(action.start, action.end, action.label)] = action.seconds
    return {ann: by_result.get(ann, 0.0) for ann in annotation_set.annotations}


def correct_annotation_timings(
    annotation_set: AnnotationSet, gold: Sequence[Annotation]
) -> list[float]:
    """Attributed seconds of the annotations that match gold exactly."""
    seconds = attributed_seconds(annotation_set)
    cls = classify(annotation_set.annotations, gold)
    return [
        seconds[row.produced]
        for row in cls.matches
        if row.category is ErrorCategory.CORRECT and row.produced is not None
    ]


@dataclass(frozen=True)
class SelectionStrategy:
    kind: str
    seed: int | None = None

    def __post_init__(self) -> None:
        if self.kind not in ("sequential", "random", "least_confidence"):
            raise ValueError(f"unknown selection strategy {self.kind!r}")
        if self.kind == "random" and self.seed is None:
            raise ValueError("random selection needs a seed")

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind}
        if self.seed is not None:
            out["seed"] = self.seed
        return out


SEQUENTIAL = SelectionStrategy("sequential")
LEAST_CONFIDENCE = SelectionStrategy("least_confidence")


@dataclass(frozen=True)
class IterationPlan:
    iteration_index: int
    document_ids: tuple[str, ...]
    pre_annotations: Mapping[str, tuple[PreAnnotation, ...]]
    strategy: SelectionStrategy

    def to_dict(self) -> dict:
        return {
            "iteration_index": self.iteration_index,
            "document_ids": list(self.document_ids),
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
                for doc_id, pres in self.pre_annotations.items()
            },
            "strategy": self.strategy.to_dict(),
        }

    @classmethod
    def from_dict(cls, raw: Mapping) -> "IterationPlan":
        strategy = raw.get("strategy", {"kind": "sequential"})
        return cls(
            iteration_index=int(raw["iteration_index"]),
            document_ids=tuple(str(d) for d in raw["document_ids"]),
            pre_annotations={
                doc_id: tuple(
                    PreAnnotation(
                        int(p["start_token"]),
                        int(p["end_token"]),
                        str(p["label"]),
                        confidence=float(p.get("confidence", 1.0)),
                    )
                    for p in pres
                )
                for doc_id, pres in raw.get("pre_annotations", {}).items()
            },
            strategy=SelectionStrategy(strategy["kind"], strategy.get("seed")),
        )


@dataclass(frozen=True)
class ProjectState:
    corpus: Corpus
    ml_unit: MLUnit
    annotated: Mapping[str, AnnotationSet] = field(default_factory=dict)
    pending: IterationPlan | None = None
    iteration_counter: int = 0

    def unannotated_ids(self) -> list[str]:
        pending_ids = set(self.pending.document_ids) if self.pending else set()
        return [
            doc.id
            for doc in self.corpus.documents
            if doc.id not in self.annotated and doc.id not in pending_ids
        ]

    def partition(self) -> tuple[set[str], set[str], set[str]]:
        """(annotated, pending, unannotated) document-id sets."""
        pending_ids = set(self.pending.document_ids) if self.pending else set()
        return set(self.annotated), pending_ids, set(self.unannotated_ids())


def _document_confidence(unit: MLUnit, doc: Document) -> float:
    predictions = unit.predict(doc)
    if not predictions:
        return 0.0  # no predictions = maximal uncertainty
    return sum(p.confidence for p in predictions) / len(predictions)


def select_batch(state: ProjectState, strategy: SelectionStrategy, size: int) -> list[str]:
    """Pick up to ``size`` unannotated document ids according to ``strategy``.

    ``least_confidence`` orders ascending by mean pre-annotation confidence
    (ties by corpus order), so the documents the ML unit is least sure about
    come first.
    """
    if size < 1:
        raise ValueError("batch size must be >= 1")
    remaining = state.unannotated_ids()
    if not remaining:
        raise EmptyCorpusError("no unannotated documents left")
    size = min(size, len(remaining))
    if strategy.kind == "sequential":
        return remaining[:size]
    if strategy.kind == "random":
        return random.Random(strategy.seed).sample(remaining, size)
    order = {doc_id: i for i, doc_id in enumerate(remaining)}
    scored = [
        (_document_confidence(state.ml_unit, state.corpus.document(doc_id)), order[doc_id], doc_id)
        for doc_id in remaining
    ]
    scored.sort()
    return [doc_id for _, _, doc_id in scored[:size]]


def open_iteration(
    state: ProjectState, strategy: SelectionStrategy, size: int
) -> tuple[ProjectState, IterationPlan]:
    """Select a batch, gather predictions for it, and mark it pending."""
    if state.pending is not None:
        raise PendingIterationError(
            f"iteration {state.pending.iteration_index} is still pending"
        )
    batch = select_batch(state, strategy, size)
    pre = {
        doc_id: tuple(state.ml_unit.predict(state.corpus.document(doc_id)))
        for doc_id in batch
    }
    plan = IterationPlan(
        iteration_index=state.iteration_counter,
        document_ids=tuple(batch),
        pre_annotations=pre,
        strategy=strategy,
    )
    return replace(state, pending=plan), plan


def merge_back(state: ProjectState, submissions: Sequence[AnnotationSet]) -> ProjectState:
    """Fold a completed iteration's submissions into the annotated corpus.

    Submissions must cover exactly the pending documents. After the merge the
    bound ML unit is retrained on everything annotated so far, when it
    supports training.
    """
    if state.pending is None:
        raise PendingIterationError("no pending iteration to merge")
    planned = set(state.pending.document_ids)
    submitted_ids = [s.document_id for s in submissions]
    submitted = set(submitted_ids)
    duplicated = {d for d in submitted if submitted_ids.count(d) > 1}
    if planned != submitted or duplicated:
        raise IncompleteIterationError(
            missing=planned - submitted,
            extra=(submitted - planned) | duplicated,
        )
    annotated = dict(state.annotated)
    for submission in submissions:
        annotated[submission.document_id] = submission
    new_state = replace(
        state,
        annotated=annotated,
        pending=None,
        iteration_counter=state.iteration_counter + 1,
    )
    if state.ml_unit.supports_training:
        state.ml_unit.train(
            [
                (state.corpus.document(doc_id), annotated[doc_id].annotations)
                for doc_id in sorted(annotated)
            ]
        )
    return new_state


class DocumentBlock(NamedTuple):
    documents: tuple[Document, ...]
    entity_total: int


def partition_blocks(docs: Sequence[Document], k: int) -> list[DocumentBlock]:
    """Split documents into ``k`` blocks with near-equal gold-entity totals.

    Longest-processing-time greedy: documents sorted by entity count
    descending (ties by id) are assigned to the block with the smallest
    running total (ties by block index). Guarantees max and min block totals
    differ by at most the largest single-document entity count.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > len(docs):
        raise ValueError(f"cannot split {len(docs)} documents into {k} blocks")
    for doc in docs:
        if doc.gold is None:
            raise ValueError(f"document {doc.id} has no gold annotations")
    order = sorted(docs, key=lambda d: (-d.gold_count, d.id))
    totals = [0] * k
    members: list[list[Document]] = [[] for _ in range(k)]
    for doc in order:
        target = min(range(k), key=lambda i: (totals[i], i))
        members[target].append(doc)
        totals[target] += doc.gold_count
    corpus_position = {doc.id: i for i, doc in enumerate(docs)}
    return [
        DocumentBlock(
            documents=tuple(sorted(block, key=lambda d: corpus_position[d.id])),
            entity_total=total,
        )
        for block, total in zip(members, totals)
    ]


@dataclass(frozen=True)
class Block:
    """A contiguous experiment unit annotated under one assistance condition."""

    index: int
    documents: tuple[Document, ...]
    target_recall: float | None  # None = unassisted
    entity_total: int
    is_training: bool = False

    @property
    def assisted(self) -> bool:
        return self.target_recall is not None

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "document_ids": [d.id for d in self.documents],
            "condition": "assisted" if self.assisted else "none",
            "target_recall": self.target_recall,
            "entity_total": self.entity_total,
            "is_training": self.is_training,
        }


CONDITION_ORDERS = ("assisted_first", "unassisted_first")


@dataclass(frozen=True)
class ExperimentPlan:
    labels: tuple[Label, ...]
    blocks: tuple[Block, ...]
    training_block: Block | None
    condition_order: str
    target_recall: float

    def __post_init__(self) -> None:
        if self.condition_order not in CONDITION_ORDERS:
            raise ValueError(f"unknown condition order {self.condition_order!r}")

    def all_blocks(self) -> tuple[Block, ...]:
        if self.training_block is not None:
            return (self.training_block,) + self.blocks
        return self.blocks

    @property
    def label_ids(self) -> tuple[str, ...]:
        return tuple(lab.id for lab in self.labels)

    def to_dict(self) -> dict:
        return {
            "labels": [lab.to_dict() for lab in self.labels],
            "condition_order": self.condition_order,
            "target_recall": self.target_recall,
            "training_block": self.training_block.to_dict() if self.training_block else None,
            "blocks": [b.to_dict() for b in self.blocks],
        }


def plan_experiment(
    docs: Sequence[Document],
    labels: Sequence[Label],
    k_blocks: int = 4,
    condition_order: str = "assisted_first",
    target_recall: float = 0.5,
    training_docs: int = 0,
) -> ExperimentPlan:
    """Build a block plan with alternating assistance conditions.

    Entities are distributed as equally as possible between the main blocks;
    an optional training block (unassisted, excluded from comparisons) takes
    the first ``training_docs`` documents in corpus order.
    """
    if not docs:
        raise ValueError("experiment needs at least one document")
    if condition_order not in CONDITION_ORDERS:
        raise ValueError(f"unknown condition order {condition_order!r}")
    if k_blocks % 2 != 0:
        raise ValueError("alternating conditions need an even number of blocks")
    if not 0.0 <= target_recall <= 1.0:
        raise ValueError(f"target recall {target_recall} out of [0,1]")
    if not 0 <= training_docs < len(docs):
        raise ValueError("training_docs must leave documents for the main blocks")

    training_block = None
    main_docs = list(docs)
    if training_docs:
        reserved, main_docs = main_docs[:training_docs], main_docs[training_docs:]
        training_block = Block(
            index=-1,
            documents=tuple(reserved),
            target_recall=None,
            entity_total=sum(d.gold_count for d in reserved),
            is_training=True,
        )
    partitioned = partition_blocks(main_docs, k_blocks)
    assisted_first = condition_order == "assisted_first"
    blocks = tuple(
        Block(
            index=i,
            documents=part.documents,
            target_recall=target_recall if (i % 2 == 0) == assisted_first else None,
            entity_total=part.entity_total,
        )
        for i, part in enumerate(partitioned)
    )
    return ExperimentPlan(
        labels=tuple(labels),
        blocks=blocks,
        training_block=training_block,
        condition_order=condition_order,
        target_recall=target_recall,
    )


@dataclass(frozen=True)
class AnnotatorBehavior:
    """Stochastic model of how an annotator treats suggestions and misses.

    ``assisted`` optionally overrides the behavior in assisted blocks, for
    cohorts whose diligence depends on the condition.
    """

    p_fix_missing: float = 0.84
    p_fix_error: float = 0.9
    p_remove_spurious: float = 0.9
    seconds_mean: float = 8.2
    seconds_sd: float = 2.3
    seed: int = 0
    assisted: "AnnotatorBehavior | None" = None

    def __post_init__(self) -> None:
        for name in ("p_fix_missing", "p_fix_error", "p_remove_spurious"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} out of [0,1]: {value}")
        if self.seconds_mean <= 0:
            raise ValueError("seconds_mean must be positive")
        if self.seconds_sd < 0:
            raise ValueError("seconds_sd must be non-negative")

    def to_dict(self) -> dict:
        out = {
            "p_fix_missing": self.p_fix_missing,
            "p_fix_error": self.p_fix_error,
            "p_remove_spurious": self.p_remove_spurious,
            "seconds_mean": self.seconds_mean,
            "seconds_sd": self.seconds_sd,
            "seed": self.seed,
        }
        if self.assisted is not None:
            out["assisted"] = self.assisted.to_dict()
        return out


#: Floor for a single action's duration, seconds.
MIN_ACTION_SECONDS = 0.5


def _draw_seconds(rng: random.Random, behavior: AnnotatorBehavior) -> float:
    return max(MIN_ACTION_SECONDS, rng.gauss(behavior.seconds_mean, behavior.seconds_sd))


def _apply_replacing(working: list[Annotation], new: Annotation) -> None:
    working[:] = [a for a in working if not a.overlaps(new)]
    working.append(new)


def simulate_annotator(
    documents: Sequence[Document],
    pre_annotations: Mapping[str, Sequence[Annotation]],
    behavior: AnnotatorBehavior,
    annotator_id: str = "sim-001",
    rng: random.Random | None = None,
    start_at: datetime = SIM_EPOCH,
) -> list[AnnotationSet]:
    """Produce one simulated annotator's submissions for a batch of documents.

    The annotator starts from the given pre-annotations (none for unassisted
    batches), keeps correct ones untouched, repairs erroneous ones with
    probability ``p_fix_error``, deletes spurious ones with
    ``p_remove_spurious``, and adds each missed gold entity with
    ``p_fix_missing``. Repairs and additions reproduce the gold annotation
    exactly. Every mutation costs a duration drawn from the behavior's
    normal time model (clamped at ``MIN_ACTION_SECONDS``) and is logged with
    a timestamp on a simulated clock starting at ``start_at``.
    """
    rng = rng or random.Random(behavior.seed)
    clock = start_at
    out: list[AnnotationSet] = []
    for doc in documents:
        gold = list(doc.gold or ())
        working = [Annotation(p.start, p.end, p.label) for p in pre_annotations.get(doc.id, ())]
        started = clock
        actions: list[AnnotationAction] = []
        for row in classify(working, gold).matches:
            if row.category is ErrorCategory.CORRECT:
                continue
            if row.category is ErrorCategory.MISSING:
                if rng.random() < behavior.p_fix_missing:
                    seconds = _draw_seconds(rng, behavior)
                    clock += timedelta(seconds=seconds)
                    _apply_replacing(working, row.gold)
                    actions.append(
                        AnnotationAction(
                            "add", row.gold.start, row.gold.end, row.gold.label, clock, seconds
                        )
                    )
            elif row.category is ErrorCategory.UNNECESSARY:
                if rng.random() < behavior.p_remove_spurious:
                    seconds = _draw_seconds(rng, behavior)
                    clock += timedelta(seconds=seconds)
                    working.remove(row.produced)
                    actions.append(
                        AnnotationAction(
                            "delete",
                            row.produced.start,
                            row.produced.end,
                            row.produced.label,
                            clock,
                            seconds,
                        )
                    )
            else:  # erroneous pair: wrong span and/or label
                if rng.random() < behavior.p_fix_error:
                    seconds = _draw_seconds(rng, behavior)
                    clock += timedelta(seconds=seconds)
                    working.remove(row.produced)
                    fixed = Annotation(row.gold.start, row.gold.end, row.gold.label)
                    _apply_replacing(working, fixed)
                    actions.append(
                        AnnotationAction(
                            "update", fixed.start, fixed.end, fixed.label, clock, seconds
                        )
                    )
        out.append(
            AnnotationSet(
                document_id=doc.id,
                annotator_id=annotator_id,
                annotations=tuple(sorted(working, key=lambda a: (a.start, a.end))),
                started_at=started,
                finished_at=clock,
                actions=tuple(actions),
            )
        )
    return out


def block_pre_annotations(
    block: Block, label_ids: Sequence[str], experiment_seed: int
) -> dict[str, tuple[PreAnnotation, ...]]:
    """Pre-annotations for one block, shared by every annotator.

    Assisted blocks get simulated predictions seeded by the experiment seed
    and block index; unassisted (and training) blocks get none.
    """
    if not block.assisted:
        return {doc.id: () for doc in block.documents}
    unit = SimulatedMLUnit(
        label_ids,
        block.target_recall,
        corpus_seed=stable_seed(experiment_seed, "block", block.index),
    )
    return {doc.id: tuple(unit.predict(doc)) for doc in block.documents}


def plan_pre_annotations(
    plan: ExperimentPlan, experiment_seed: int
) -> dict[str, tuple[PreAnnotation, ...]]:
    """Pre-annotations for every document of the experiment, keyed by doc id."""
    out: dict[str, tuple[PreAnnotation, ...]] = {}
    for block in plan.all_blocks():
        out.update(block_pre_annotations(block, plan.label_ids, experiment_seed))
    return out


def _behavior_for(block: Block, behavior: AnnotatorBehavior) -> AnnotatorBehavior:
    if block.assisted and behavior.assisted is not None:
        return behavior.assisted
    return behavior


def simulate_cohort(
    plan: ExperimentPlan,
    behaviors: Sequence[AnnotatorBehavior],
    seed: int = 0,
) -> dict[str, dict[int, list[AnnotationSet]]]:
    """Run every behavior through every block; returns sets per annotator per block.

    Pre-annotations are generated once per block and shared across the cohort
    (the assistance is a fixed lookup, not annotator-specific); all
    per-annotator variation comes from the behavior seeds.
    """
    results: dict[str, dict[int, list[AnnotationSet]]] = {}
    for i, behavior in enumerate(behaviors):
        annotator_id = f"sim-{i + 1:03d}"
        clock = SIM_EPOCH
        per_block: dict[int, list[AnnotationSet]] = {}
        for block in plan.all_blocks():
            pre = block_pre_annotations(block, plan.label_ids, seed)
            rng = random.Random(stable_seed(behavior.seed, "block", block.index))
            sets = simulate_annotator(
                block.documents,
                pre,
                _behavior_for(block, behavior),
                annotator_id=annotator_id,
                rng=rng,
                start_at=clock,
            )
            if sets:
                clock = sets[-1].finished_at
            per_block[block.index] = sets
        results[annotator_id] = per_block
    return results


class BlockScore(NamedTuple):
    report: MetricsReport
    counts: dict[ErrorCategory, int]
    gold_count: int
    timings: list[float]


def score_block(block: Block, submissions: Sequence[AnnotationSet]) -> BlockScore:
    """Pooled metrics for one annotator's submissions over one block."""
    counts: dict[ErrorCategory, int] = {c: 0 for c in ErrorCategory}
    timings: list[float] = []
    by_doc = {s.document_id: s for s in submissions}
    for doc in block.documents:
        submission = by_doc.get(doc.id)
        produced = submission.annotations if submission else ()
        cls = classify(produced, doc.gold or ())
        for category, n in cls.counts.items():
            counts[category] += n
        if submission:
            timings.extend(correct_annotation_timings(submission, doc.gold or ()))
    gold_count = max(block.entity_total, 1)
    return BlockScore(aggregate_metrics(counts, gold_count, timings), counts, gold_count, timings)


def pool_scores(scores: Sequence[BlockScore]) -> MetricsReport:
    counts: dict[ErrorCategory, int] = {c: 0 for c in ErrorCategory}
    gold_total = 0
    timings: list[float] = []
    for score in scores:
        for category, n in score.counts.items():
            counts[category] += n
        gold_total += score.gold_count
        timings.extend(score.timings)
    return aggregate_metrics(counts, max(gold_total, 1), timings)


def run_experiment(
    plan: ExperimentPlan,
    behaviors: Sequence[AnnotatorBehavior],
    seed: int = 0,
) -> dict:
    """Simulate a full study: every annotator works every block, blocks are
    scored against gold, and assisted vs. unassisted aggregates are compared.

    Deterministic for fixed plan, behaviors, and seed. The training block,
    when present, is scored but excluded from the condition comparison.
    """
    if not behaviors:
        raise ValueError("need at least one annotator behavior")
    cohort = simulate_cohort(plan, behaviors, seed)
    per_block_rows: list[dict] = []
    pairs: list[tuple[MetricsReport, MetricsReport]] = []
    annotator_rows: list[dict] = []
    for i, behavior in enumerate(behaviors):
        annotator_id = f"sim-{i + 1:03d}"
        annotator_rows.append({"annotator_id": annotator_id, "behavior": behavior.to_dict()})
        assisted_scores: list[BlockScore] = []
        unassisted_scores: list[BlockScore] = []
        for block in plan.all_blocks():
            score = score_block(block, cohort[annotator_id][block.index])
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
    comparison: ConditionComparison | None = None
    if len(pairs) >= 2:
        comparison = compare_conditions(pairs)
    return {
        "plan": plan.to_dict(),
        "seed": seed,
        "annotators": annotator_rows,
        "per_block": per_block_rows,
        "condition_comparison": comparison.to_dict() if comparison else None,
    }
