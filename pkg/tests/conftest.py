import json
import random

import pytest

from annoloop.corpus import Corpus, Document, GoldAnnotation, Label, ingest_corpus

SENTENCE = "CEO Lorene Duck raises wages."

LABELS = (
    Label("PER", "Person", "#2e7d32"),
    Label("ORG", "Organization", "#1565c0"),
)


@pytest.fixture
def sentence_doc() -> Document:
    return Document(id="t1", text=SENTENCE, gold=(GoldAnnotation(1, 3, "PER"),))


@pytest.fixture
def sentence_corpus(sentence_doc) -> Corpus:
    return Corpus(labels=LABELS, documents=(sentence_doc,))


def corpus_json(documents: list[dict]) -> bytes:
    return json.dumps(
        {
            "labels": [
                {"id": "PER", "name": "Person", "color": "#2e7d32"},
                {"id": "ORG", "name": "Organization", "color": "#1565c0"},
            ],
            "documents": documents,
        }
    ).encode("utf-8")


def synthetic_document(doc_id: str, entities: int, label_cycle=("PER", "ORG")) -> Document:
    """A document with ``entities`` two-token gold entities separated by fillers."""
    words = []
    gold = []
    for j in range(entities):
        words.extend([f"pad{j}", f"ent{j}a", f"ent{j}b", f"tail{j}"])
        gold.append(GoldAnnotation(4 * j + 1, 4 * j + 3, label_cycle[j % len(label_cycle)]))
    if not words:
        words = ["nothing", "here"]
    return Document(id=doc_id, text=" ".join(words), gold=tuple(gold))


def synthetic_corpus(n_docs: int, entities_per_doc: int = 5) -> Corpus:
    docs = tuple(synthetic_document(f"doc-{i:04d}", entities_per_doc) for i in range(n_docs))
    return Corpus(labels=LABELS, documents=docs)


def random_gold_document(rng: random.Random, doc_id: str, label_ids=("PER", "ORG", "LOC")) -> Document:
    """Random document with random non-overlapping gold spans of 1-3 tokens."""
    n_tokens = rng.randint(4, 40)
    words = [f"w{i}" for i in range(n_tokens)]
    gold = []
    pos = 0
    while pos < n_tokens - 1:
        if rng.random() < 0.45:
            length = rng.randint(1, min(3, n_tokens - pos))
            gold.append(GoldAnnotation(pos, pos + length, rng.choice(label_ids)))
            pos += length + rng.randint(1, 3)
        else:
            pos += rng.randint(1, 3)
    return Document(id=doc_id, text=" ".join(words), gold=tuple(gold))


def load_corpus_fixture(documents: list[dict]) -> Corpus:
    return ingest_corpus(corpus_json(documents))


def export_synthetic_corpus(n_docs: int, entities: int = 2) -> dict:
    from annoloop.corpus import export_corpus

    docs = tuple(synthetic_document(f"doc-{i:04d}", entities) for i in range(n_docs))
    return export_corpus(Corpus(labels=LABELS, documents=docs))


def drive_random_interactions(store, rng: random.Random) -> str:
    """Apply a random but always-valid interaction sequence to a fresh project."""
    from datetime import datetime, timezone

    from annoloop.workcycle import AnnotationSet, SelectionStrategy, open_iteration

    def submission(doc_id, annotations=(), annotator="ann-1"):
        now = datetime(2021, 5, 1, tzinfo=timezone.utc)
        return AnnotationSet(document_id=doc_id, annotator_id=annotator,
                             annotations=tuple(annotations), started_at=now,
                             finished_at=now)

    n_docs = rng.randint(2, 6)
    record = store.create_project(
        export_synthetic_corpus(n_docs, entities=rng.randint(1, 3)),
        {"simulated": {"target_recall": 0.5, "seed": rng.randint(0, 99)}},
    )
    pid = record.project_id
    experiment_ids = []
    for _ in range(rng.randint(1, 15)):
        record = store.get(pid)
        state = record.state
        choice = rng.random()
        if choice < 0.3 and state.pending is None and state.unannotated_ids():
            _, plan = open_iteration(state, SelectionStrategy("sequential"),
                                     rng.randint(1, 3))
            store.record_iteration_opened(pid, plan)
        elif choice < 0.6 and state.pending is not None:
            remaining = [
                d for d in state.pending.document_ids if d not in record.pending_submissions
            ]
            if remaining:
                doc_id = rng.choice(remaining)
                doc = state.corpus.document(doc_id)
                annotations = list(doc.gold or ())[: rng.randint(0, 2)]
                store.record_submission(
                    pid, submission(doc_id, annotations, annotator=f"ann-{rng.randint(1, 3)}")
                )
        elif choice < 0.7 and state.pending is not None:
            merged = sorted(record.pending_submissions)
            aborted = [d for d in state.pending.document_ids if d not in merged]
            store.record_iteration_completed(pid, merged, aborted)
        elif choice < 0.8 and not experiment_ids:
            experiment = store.create_experiment(
                pid, {"target_recall": 0.5, "k_blocks": 2, "seed": rng.randint(0, 9)}
            )
            experiment_ids.append(experiment.experiment_id)
        elif choice < 0.9 and experiment_ids:
            doc = rng.choice(store.get(pid).state.corpus.documents)
            store.record_submission(
                pid,
                submission(doc.id, list(doc.gold or ()), annotator="exp-ann"),
                experiment_ids[0],
            )
        else:
            store.record_note(pid, {"annotator_id": "ann-1", "block_index": None,
                                    "text": "note", "at": "2021-05-01T00:00:00+00:00"})
    return pid
