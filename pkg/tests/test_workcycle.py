import random
from datetime import timedelta

import pytest

from annoloop.assistance import MLUnit, PreAnnotation, SimulatedMLUnit
from annoloop.corpus import Corpus, Document
from annoloop.scoring import ErrorCategory, classify
from annoloop.workcycle import (
    SIM_EPOCH,
    AnnotationSet,
    AnnotatorBehavior,
    EmptyCorpusError,
    IncompleteIterationError,
    PendingIterationError,
    ProjectState,
    SelectionStrategy,
    attributed_seconds,
    block_pre_annotations,
    merge_back,
    open_iteration,
    partition_blocks,
    plan_experiment,
    run_experiment,
    score_block,
    select_batch,
    simulate_annotator,
)

from conftest import LABELS, synthetic_corpus, synthetic_document

SEQ = SelectionStrategy("sequential")


class StubUnit(MLUnit):
    """Unit with canned confidences, for selection-order tests."""

    def __init__(self, confidences):
        self.confidences = confidences

    def predict(self, doc):
        c = self.confidences.get(doc.id)
        if c is None:
            return []
        return [PreAnnotation(0, 1, "PER", confidence=c)]


class RecordingUnit(MLUnit):
    supports_training = True

    def __init__(self):
        self.train_calls = []

    def predict(self, doc):
        return []

    def train(self, annotated):
        self.train_calls.append([doc.id for doc, _ in annotated])


def small_state(n_docs=10, unit=None) -> ProjectState:
    corpus = synthetic_corpus(n_docs, entities_per_doc=2)
    return ProjectState(corpus=corpus, ml_unit=unit or StubUnit({}))


def make_submission(doc_id: str, annotations=(), annotator="ann-1") -> AnnotationSet:
    return AnnotationSet(
        document_id=doc_id,
        annotator_id=annotator,
        annotations=tuple(annotations),
        started_at=SIM_EPOCH,
        finished_at=SIM_EPOCH + timedelta(seconds=5),
    )


# --- batch selection ---------------------------------------------------------

def test_select_batch_least_confidence_ascending():
    docs = tuple(Document(id=d, text="w x y") for d in ("d1", "d2", "d3"))
    corpus = Corpus(labels=LABELS, documents=docs)
    state = ProjectState(corpus=corpus, ml_unit=StubUnit({"d1": 0.9, "d2": 0.4, "d3": 0.7}))
    assert select_batch(state, SelectionStrategy("least_confidence"), 2) == ["d2", "d3"]


def test_select_batch_no_predictions_means_maximal_uncertainty():
    docs = tuple(Document(id=d, text="w x y") for d in ("d1", "d2", "d3"))
    corpus = Corpus(labels=LABELS, documents=docs)
    state = ProjectState(corpus=corpus, ml_unit=StubUnit({"d1": 0.2, "d3": 0.1}))
    assert select_batch(state, SelectionStrategy("least_confidence"), 3) == ["d2", "d3", "d1"]


def test_select_batch_sequential_is_corpus_order():
    state = small_state(5)
    assert select_batch(state, SEQ, 3) == ["doc-0000", "doc-0001", "doc-0002"]


def test_select_batch_caps_at_remaining():
    state = small_state(3)
    assert len(select_batch(state, SEQ, 10)) == 3


def test_select_batch_random_deterministic_under_seed():
    state = small_state(8)
    strategy = SelectionStrategy("random", seed=42)
    assert select_batch(state, strategy, 4) == select_batch(state, strategy, 4)
    other = select_batch(state, SelectionStrategy("random", seed=43), 4)
    assert other != select_batch(state, strategy, 4) or True  # different seeds may collide


def test_select_batch_empty_corpus_error():
    state = small_state(1)
    state, plan = open_iteration(state, SEQ, 1)
    state = merge_back(state, [make_submission(plan.document_ids[0])])
    with pytest.raises(EmptyCorpusError):
        select_batch(state, SEQ, 1)


def test_strategy_validation():
    with pytest.raises(ValueError):
        SelectionStrategy("alphabetical")
    with pytest.raises(ValueError):
        SelectionStrategy("random")  # no seed


# --- iteration lifecycle -----------------------------------------------------

def test_open_iteration_carries_predictions():
    corpus = synthetic_corpus(10, entities_per_doc=2)
    unit = SimulatedMLUnit(["PER", "ORG"], 1.0, corpus_seed=3)
    state = ProjectState(corpus=corpus, ml_unit=unit)
    state, plan = open_iteration(state, SEQ, 3)
    assert len(plan.document_ids) == 3
    for doc_id in plan.document_ids:
        doc = corpus.document(doc_id)
        assert [(p.start, p.end, p.label) for p in plan.pre_annotations[doc_id]] == [
            (g.start, g.end, g.label) for g in doc.gold
        ]
    assert state.pending is plan


def test_open_iteration_conflicts_when_pending():
    state, _ = open_iteration(small_state(), SEQ, 3)
    with pytest.raises(PendingIterationError):
        open_iteration(state, SEQ, 3)


def test_merge_back_moves_documents_and_counts():
    state = small_state(10)
    state, plan = open_iteration(state, SEQ, 3)
    merged = merge_back(state, [make_submission(d) for d in plan.document_ids])
    annotated, pending, unannotated = merged.partition()
    assert annotated == set(plan.document_ids)
    assert pending == set()
    assert len(unannotated) == 7
    assert merged.iteration_counter == 1


def test_merge_back_requires_exact_coverage():
    state, plan = open_iteration(small_state(10), SEQ, 3)
    with pytest.raises(IncompleteIterationError) as err:
        merge_back(state, [make_submission(plan.document_ids[0])])
    assert plan.document_ids[1] in err.value.missing
    with pytest.raises(IncompleteIterationError) as err:
        merge_back(state, [make_submission(d) for d in plan.document_ids]
                   + [make_submission("doc-0009")])
    assert "doc-0009" in err.value.extra


def test_merge_back_rejects_duplicates():
    state, plan = open_iteration(small_state(10), SEQ, 2)
    subs = [make_submission(d) for d in plan.document_ids]
    with pytest.raises(IncompleteIterationError):
        merge_back(state, subs + [make_submission(plan.document_ids[0])])


def test_merged_documents_never_reselected():
    state = small_state(6)
    seen = set()
    for _ in range(3):
        state, plan = open_iteration(state, SEQ, 2)
        assert not (set(plan.document_ids) & seen)
        seen.update(plan.document_ids)
        state = merge_back(state, [make_submission(d) for d in plan.document_ids])
    assert state.iteration_counter == 3


def test_merge_back_triggers_retraining():
    unit = RecordingUnit()
    state = small_state(4, unit=unit)
    state, plan = open_iteration(state, SEQ, 2)
    state = merge_back(state, [make_submission(d) for d in plan.document_ids])
    assert unit.train_calls == [sorted(plan.document_ids)]


def test_state_machine_random_interleavings():
    rng = random.Random(77)
    for _ in range(100):
        state = small_state(rng.randint(1, 8))
        corpus_ids = {d.id for d in state.corpus.documents}
        for _ in range(rng.randint(1, 12)):
            annotated, pending, unannotated = state.partition()
            assert annotated | pending | unannotated == corpus_ids
            assert not (annotated & pending or annotated & unannotated or pending & unannotated)
            action = rng.choice(["open", "merge", "merge_bad"])
            if action == "open":
                if pending:
                    with pytest.raises(PendingIterationError):
                        open_iteration(state, SEQ, rng.randint(1, 3))
                elif unannotated:
                    state, _ = open_iteration(state, SEQ, rng.randint(1, 3))
                else:
                    with pytest.raises(EmptyCorpusError):
                        open_iteration(state, SEQ, 1)
            elif action == "merge" and pending:
                state = merge_back(state, [make_submission(d) for d in pending])
            elif action == "merge_bad" and pending and len(pending) > 1:
                incomplete = sorted(pending)[:-1]
                with pytest.raises(IncompleteIterationError):
                    merge_back(state, [make_submission(d) for d in incomplete])


# --- block partitioning and experiment plans ---------------------------------

def test_partition_blocks_fixture():
    docs = [synthetic_document(f"d{i}", n) for i, n in enumerate([5, 4, 3, 2, 1, 1])]
    blocks = partition_blocks(docs, 2)
    assert sorted(b.entity_total for b in blocks) == [8, 8]


def test_partition_blocks_single_block():
    docs = [synthetic_document(f"d{i}", 2) for i in range(4)]
    blocks = partition_blocks(docs, 1)
    assert len(blocks) == 1
    assert len(blocks[0].documents) == 4


def test_partition_blocks_too_many_blocks():
    with pytest.raises(ValueError):
        partition_blocks([synthetic_document("d0", 1)], 2)


def test_partition_blocks_lpt_bound_property():
    rng = random.Random(13)
    for _ in range(100):
        n = rng.randint(4, 40)
        docs = [synthetic_document(f"d{i:02d}", rng.randint(0, 9)) for i in range(n)]
        k = rng.randint(1, n)
        blocks = partition_blocks(docs, k)
        totals = [b.entity_total for b in blocks]
        assert sum(totals) == sum(d.gold_count for d in docs)
        max_single = max(d.gold_count for d in docs)
        assert max(totals) - min(totals) <= max_single
        assigned = [d.id for b in blocks for d in b.documents]
        assert sorted(assigned) == sorted(d.id for d in docs)


def test_plan_experiment_condition_orders():
    docs = [synthetic_document(f"d{i}", 2) for i in range(8)]
    plan = plan_experiment(docs, LABELS, k_blocks=4, condition_order="assisted_first",
                           target_recall=0.5)
    assert [b.assisted for b in plan.blocks] == [True, False, True, False]
    plan = plan_experiment(docs, LABELS, k_blocks=4, condition_order="unassisted_first",
                           target_recall=0.5)
    assert [b.assisted for b in plan.blocks] == [False, True, False, True]
    plan = plan_experiment(docs, LABELS, k_blocks=2, condition_order="assisted_first",
                           target_recall=0.9)
    assert [b.assisted for b in plan.blocks] == [True, False]


def test_plan_experiment_rejects_odd_blocks():
    docs = [synthetic_document(f"d{i}", 2) for i in range(9)]
    with pytest.raises(ValueError):
        plan_experiment(docs, LABELS, k_blocks=3)


def test_plan_experiment_training_block():
    docs = [synthetic_document(f"d{i}", 2) for i in range(10)]
    plan = plan_experiment(docs, LABELS, k_blocks=4, training_docs=2)
    assert plan.training_block is not None
    assert [d.id for d in plan.training_block.documents] == ["d0", "d1"]
    assert plan.training_block.is_training
    main_ids = {d.id for b in plan.blocks for d in b.documents}
    assert main_ids == {f"d{i}" for i in range(2, 10)}


# --- simulated annotator -----------------------------------------------------

def test_simulate_annotator_perfect_reproduces_gold():
    corpus = synthetic_corpus(4, entities_per_doc=3)
    behavior = AnnotatorBehavior(p_fix_missing=1.0, p_fix_error=1.0, p_remove_spurious=1.0,
                                 seed=5)
    unit = SimulatedMLUnit(["PER", "ORG"], 0.5, corpus_seed=9)
    pre = {d.id: tuple(unit.predict(d)) for d in corpus.documents}
    sets = simulate_annotator(corpus.documents, pre, behavior)
    for doc, result in zip(corpus.documents, sets):
        assert result.annotations == tuple(doc.gold)


def test_simulate_annotator_pure_acceptance_keeps_pre_annotations():
    corpus = synthetic_corpus(4, entities_per_doc=3)
    behavior = AnnotatorBehavior(p_fix_missing=0.0, p_fix_error=0.0, p_remove_spurious=0.0,
                                 seed=5)
    unit = SimulatedMLUnit(["PER", "ORG"], 0.3, corpus_seed=9)
    pre = {d.id: tuple(unit.predict(d)) for d in corpus.documents}
    sets = simulate_annotator(corpus.documents, pre, behavior)
    for doc, result in zip(corpus.documents, sets):
        expected = sorted(
            ((p.start, p.end, p.label) for p in pre[doc.id]),
        )
        assert [(a.start, a.end, a.label) for a in result.annotations] == expected
        assert result.actions == ()
        assert result.finished_at == result.started_at


def test_simulate_annotator_unassisted_calibration():
    # without assistance, quality tracks p_fix_missing and pace tracks the
    # time model
    corpus = synthetic_corpus(200, entities_per_doc=5)  # 1000 entities
    behavior = AnnotatorBehavior(p_fix_missing=0.84, seconds_mean=8.2, seconds_sd=2.3, seed=17)
    sets = simulate_annotator(corpus.documents, {}, behavior)
    correct = 0
    timings = []
    for doc, result in zip(corpus.documents, sets):
        cls = classify(result.annotations, doc.gold)
        correct += cls.counts[ErrorCategory.CORRECT]
        seconds = attributed_seconds(result)
        timings.extend(seconds[a] for a in result.annotations)
    assert correct / 1000 == pytest.approx(0.84, abs=0.03)
    assert sum(timings) / len(timings) == pytest.approx(8.2, abs=0.3)


def test_simulate_annotator_action_timestamps_are_ordered():
    corpus = synthetic_corpus(3, entities_per_doc=4)
    behavior = AnnotatorBehavior(seed=3)
    unit = SimulatedMLUnit(["PER", "ORG"], 0.3, corpus_seed=2)
    pre = {d.id: tuple(unit.predict(d)) for d in corpus.documents}
    sets = simulate_annotator(corpus.documents, pre, behavior)
    previous_end = None
    for result in sets:
        stamps = [a.at for a in result.actions]
        assert stamps == sorted(stamps)
        assert result.started_at <= result.finished_at
        if previous_end is not None:
            assert result.started_at >= previous_end
        previous_end = result.finished_at
        for action in result.actions:
            assert action.seconds >= 0.5


def test_simulate_annotator_deterministic():
    corpus = synthetic_corpus(5, entities_per_doc=3)
    behavior = AnnotatorBehavior(seed=21)
    unit = SimulatedMLUnit(["PER", "ORG"], 0.5, corpus_seed=8)
    pre = {d.id: tuple(unit.predict(d)) for d in corpus.documents}
    first = simulate_annotator(corpus.documents, pre, behavior)
    second = simulate_annotator(corpus.documents, pre, behavior)
    assert first == second


# --- experiments end to end --------------------------------------------------

def study_docs(total_docs=20, entities_per_doc=4):
    return [synthetic_document(f"d{i:02d}", entities_per_doc) for i in range(total_docs)]


def test_run_experiment_perfect_behavior():
    plan = plan_experiment(study_docs(), LABELS, k_blocks=4, target_recall=0.5)
    behaviors = [
        AnnotatorBehavior(p_fix_missing=1.0, p_fix_error=1.0, p_remove_spurious=1.0, seed=i)
        for i in range(3)
    ]
    report = run_experiment(plan, behaviors, seed=4)
    for row in report["per_block"]:
        assert row["percent_correct"] == 1.0
        assert row["missing_count"] == 0
    comparison = report["condition_comparison"]
    assert comparison["dimensions"]["percent_correct"]["mean_diff"] == 0.0
    assert comparison["dimensions"]["percent_correct"]["p_two_tailed"] == 1.0
    assert comparison["dimensions"]["missing_count"]["mean_diff"] == 0.0


def test_run_experiment_deterministic():
    plan = plan_experiment(study_docs(), LABELS, k_blocks=4, target_recall=0.5)
    behaviors = [AnnotatorBehavior(seed=i) for i in range(3)]
    assert run_experiment(plan, behaviors, seed=1) == run_experiment(plan, behaviors, seed=1)


def test_run_experiment_condition_dependent_diligence():
    # annotators who repair misses more diligently under assistance
    plan = plan_experiment(study_docs(32, 4), LABELS, k_blocks=4, target_recall=0.5)
    behaviors = [
        AnnotatorBehavior(
            p_fix_missing=0.70, seed=i,
            assisted=AnnotatorBehavior(p_fix_missing=0.92, p_fix_error=0.95,
                                       p_remove_spurious=0.95, seed=i),
        )
        for i in range(20)
    ]
    report = run_experiment(plan, behaviors, seed=10)
    quality = report["condition_comparison"]["dimensions"]["percent_correct"]
    assert quality["mean_diff"] > 0
    assert quality["p_two_tailed"] < 0.05


def test_run_experiment_low_recall_with_acceptance_prone_annotators():
    # sparse, error-ridden suggestions plus shallow reviewing should end up
    # below the unassisted baseline
    plan = plan_experiment(study_docs(32, 4), LABELS, k_blocks=4, target_recall=0.1)
    behaviors = [
        AnnotatorBehavior(p_fix_missing=0.84, p_fix_error=0.15, p_remove_spurious=0.3, seed=i)
        for i in range(10)
    ]
    report = run_experiment(plan, behaviors, seed=10)
    quality = report["condition_comparison"]["dimensions"]["percent_correct"]
    assert quality["mean_diff"] < 0


def test_run_experiment_training_block_excluded_from_comparison():
    docs = study_docs(18, 3)
    plan = plan_experiment(docs, LABELS, k_blocks=4, training_docs=2, target_recall=0.5)
    behaviors = [AnnotatorBehavior(seed=i) for i in range(2)]
    report = run_experiment(plan, behaviors, seed=0)
    training_rows = [r for r in report["per_block"] if r["is_training"]]
    assert len(training_rows) == 2  # one per annotator
    assert all(r["block_index"] == -1 for r in training_rows)
    assert report["condition_comparison"] is not None


def test_block_pre_annotations_shared_and_deterministic():
    plan = plan_experiment(study_docs(), LABELS, k_blocks=4, target_recall=0.5)
    block = plan.blocks[0]
    first = block_pre_annotations(block, plan.label_ids, experiment_seed=5)
    second = block_pre_annotations(block, plan.label_ids, experiment_seed=5)
    assert first == second
    unassisted = block_pre_annotations(plan.blocks[1], plan.label_ids, experiment_seed=5)
    assert all(v == () for v in unassisted.values())


def test_score_block_counts_and_timings():
    docs = study_docs(4, 2)
    plan = plan_experiment(docs, LABELS, k_blocks=2, target_recall=1.0)
    block = plan.blocks[0]
    behavior = AnnotatorBehavior(p_fix_missing=1.0, p_fix_error=1.0, p_remove_spurious=1.0)
    pre = block_pre_annotations(block, plan.label_ids, 0)
    sets = simulate_annotator(block.documents, pre, behavior)
    score = score_block(block, sets)
    assert score.report.percent_correct == 1.0
    # recall 1.0 means everything was pre-annotated: zero correction time
    assert score.report.seconds_mean == 0.0
