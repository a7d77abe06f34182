"""Machine pre-annotation generation.

The central piece is a simulated assistance unit: it takes documents that
carry gold annotations and degrades them to an exact target recall while
keeping the relative mix of error types fixed, so downstream tooling sees
errors shaped like a real model's output at any recall level. Real models
plug in through the same interface, either in-process (:class:`MLUnit`
subclass) or over HTTP (:class:`ExternalMLUnit`).

Wire format for external units (and for pre-annotation files)::

    {"document_id": "...",
     "annotations": [{"start_token", "end_token", "label", "confidence"}, ...]}

POST ``{base_url}/predict`` receives a document (id, text, tokens) and
returns the structure above; POST ``{base_url}/train`` receives the corpus
annotated so far in the same annotation encoding.
"""

from __future__ import annotations

import enum
import hashlib
import random
from collections import Counter
from dataclasses import dataclass
from types import MappingProxyType
from typing import Mapping, NamedTuple, Sequence

import httpx

from .corpus import Annotation, Document


class ErrorCategory(enum.Enum):
    """Outcome of comparing one produced annotation against the gold standard."""

    CORRECT = "correct"
    CORRECT_LABEL_WRONG_SPAN = "correct_label_wrong_span"
    WRONG_LABEL_CORRECT_SPAN = "wrong_label_correct_span"
    WRONG_LABEL_WRONG_SPAN = "wrong_label_wrong_span"
    UNNECESSARY = "unnecessary"
    MISSING = "missing"


# Categories that consume a gold entity (everything except UNNECESSARY).
GOLD_CONSUMING = (
    ErrorCategory.CORRECT,
    ErrorCategory.CORRECT_LABEL_WRONG_SPAN,
    ErrorCategory.WRONG_LABEL_CORRECT_SPAN,
    ErrorCategory.WRONG_LABEL_WRONG_SPAN,
    ErrorCategory.MISSING,
)

_ERROR_SCALED = (
    ErrorCategory.CORRECT_LABEL_WRONG_SPAN,
    ErrorCategory.WRONG_LABEL_CORRECT_SPAN,
    ErrorCategory.WRONG_LABEL_WRONG_SPAN,
    ErrorCategory.MISSING,
)


@dataclass(frozen=True)
class CategoryDistribution:
    """Probabilities over the six error categories, summing to 1."""

    probabilities: Mapping[ErrorCategory, float]

    def __post_init__(self) -> None:
        probs = dict(self.probabilities)
        missing_keys = [c for c in ErrorCategory if c not in probs]
        if missing_keys:
            raise ValueError(f"distribution lacks categories: {missing_keys}")
        for cat, p in probs.items():
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability for {cat.value} out of [0,1]: {p}")
        total = sum(probs.values())
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        object.__setattr__(self, "probabilities", MappingProxyType(probs))

    def __getitem__(self, category: ErrorCategory) -> float:
        return self.probabilities[category]


#: Error mix of the reference tagger the simulator mimics. Scaled copies of
#: this mix keep the relative error proportions at every recall level.
BASE_ERROR_MIX = CategoryDistribution(
    {
        ErrorCategory.CORRECT: 0.578,
        ErrorCategory.CORRECT_LABEL_WRONG_SPAN: 0.078,
        ErrorCategory.WRONG_LABEL_CORRECT_SPAN: 0.031,
        ErrorCategory.WRONG_LABEL_WRONG_SPAN: 0.000,
        ErrorCategory.UNNECESSARY: 0.015,
        ErrorCategory.MISSING: 0.298,
    }
)


class ScaledDistribution(NamedTuple):
    distribution: CategoryDistribution
    spurious_rate: float


def scale_distribution(base: CategoryDistribution, target_recall: float) -> ScaledDistribution:
    """Rescale ``base`` so that the correct-category mass is exactly ``target_recall``.

    The remaining mass ``1 - target_recall`` is split over the gold-consuming
    error categories proportionally to their base weights. Spurious
    annotations cannot consume a gold entity, so their share is returned
    separately as an expected rate per gold entity instead of a probability
    inside the distribution.
    """
    if not 0.0 <= target_recall <= 1.0:
        raise ValueError(f"target recall {target_recall} out of [0,1]")
    error_mass = sum(base[c] for c in _ERROR_SCALED)
    if target_recall < 1.0 and error_mass == 0.0:
        raise ValueError("base distribution has no error mass to scale")
    remainder = 1.0 - target_recall
    probs = {c: (remainder * base[c] / error_mass if error_mass else 0.0) for c in _ERROR_SCALED}
    probs[ErrorCategory.CORRECT] = target_recall
    probs[ErrorCategory.UNNECESSARY] = 0.0
    spurious = remainder * base[ErrorCategory.UNNECESSARY] / error_mass if error_mass else 0.0
    return ScaledDistribution(CategoryDistribution(probs), spurious)


@dataclass(frozen=True)
class PreAnnotation(Annotation):
    """A machine-suggested annotation with a confidence in ``(0, 1]``.

    ``intended_category`` is set by the simulator (never shown to annotators)
    and lets tests verify that the scorer recovers exactly the error the
    generator planted.
    """

    confidence: float = 1.0
    intended_category: ErrorCategory | None = None

    def __post_init__(self) -> None:
        super().__post_init__()
        if not 0.0 < self.confidence <= 1.0:
            raise ValueError(f"confidence {self.confidence} out of (0,1]")


@dataclass(frozen=True)
class DegradeResult:
    annotations: tuple[PreAnnotation, ...]
    #: Final category per gold entity (including MISSING) plus UNNECESSARY
    #: emissions; fallbacks are counted as CORRECT and recorded in ``notes``.
    intended_counts: Mapping[ErrorCategory, int]
    notes: tuple[str, ...]


def stable_seed(*parts: object) -> int:
    """Derive a process-independent 64-bit seed from arbitrary parts."""
    digest = hashlib.sha256(":".join(str(p) for p in parts).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big")


def _perturbed_spans(gold: Annotation, n_tokens: int) -> list[tuple[int, int]]:
    s, e = gold.start, gold.end
    return [
        (s - 1, e),  # grow left
        (s + 1, e),  # shrink left
        (s, e + 1),  # grow right
        (s, e - 1),  # shrink right
        (s - 1, e - 1),  # shift left
        (s + 1, e + 1),  # shift right
    ]


def _overlaps_any(span: tuple[int, int], others: Sequence[tuple[int, int]]) -> bool:
    s, e = span
    return any(s < oe and os_ < e for os_, oe in others)


def _valid_perturbations(
    gold: Annotation,
    other_gold: Sequence[tuple[int, int]],
    emitted: Sequence[tuple[int, int]],
    n_tokens: int,
) -> list[tuple[int, int]]:
    valid = []
    for s, e in _perturbed_spans(gold, n_tokens):
        if not (0 <= s < e <= n_tokens):
            continue
        if not (s < gold.end and gold.start < e):  # must still touch the source
            continue
        if _overlaps_any((s, e), other_gold) or _overlaps_any((s, e), emitted):
            continue
        valid.append((s, e))
    return valid


def _spurious_candidates(
    n_tokens: int, blocked: Sequence[tuple[int, int]]
) -> list[tuple[int, int]]:
    cands = []
    for length in (1, 2):
        for s in range(0, n_tokens - length + 1):
            if not _overlaps_any((s, s + length), blocked):
                cands.append((s, s + length))
    return cands


def degrade(
    doc: Document,
    label_ids: Sequence[str],
    dist: CategoryDistribution,
    spurious_rate: float,
    rng_seed: int,
) -> DegradeResult:
    """Degrade a document's gold annotations into simulated pre-annotations.

    For each gold entity one of the gold-consuming categories is drawn
    (``dist`` renormalized without the unnecessary share) and realized:

    * correct: the gold span and label, verbatim
    * correct label, wrong span: one boundary moved by one token, or the whole
      span shifted by one token, such that the result still overlaps its
      source and nothing else
    * wrong label, correct span: the gold span with a different label
    * wrong label and span: both perturbations
    * missing: nothing is emitted

    Spurious annotations are added on top: their count is binomial over the
    gold count at ``spurious_rate``, each placed on a free 1-2 token span.
    When no valid perturbation (or no alternative label) exists the entity
    falls back to a correct emission, recorded in the result's notes; a
    spurious draw without a free span is skipped. Deterministic per
    ``(doc, dist, spurious_rate, rng_seed)``.
    """
    if doc.gold is None:
        raise ValueError(f"document {doc.id} has no gold annotations")
    if not 0.0 <= spurious_rate <= 1.0:
        raise ValueError(f"spurious rate {spurious_rate} out of [0,1]")
    if not label_ids:
        raise ValueError("label_ids must be non-empty")

    rng = random.Random(rng_seed)
    weights = [dist[c] for c in GOLD_CONSUMING]
    total = sum(weights)
    if total <= 0.0:
        raise ValueError("distribution has no mass on gold-consuming categories")

    n_tokens = len(doc.tokens)
    gold_order = sorted(doc.gold, key=lambda g: (g.start, g.end))
    gold_spans = [g.span for g in gold_order]
    emitted: list[PreAnnotation] = []
    emitted_spans: list[tuple[int, int]] = []
    counts: Counter = Counter({c: 0 for c in ErrorCategory})
    notes: list[str] = []

    for idx, gold in enumerate(gold_order):
        u = rng.random() * total
        acc = 0.0
        cat = GOLD_CONSUMING[-1]
        for c, w in zip(GOLD_CONSUMING, weights):
            acc += w
            if u < acc:
                cat = c
                break
        if cat is ErrorCategory.MISSING:
            counts[cat] += 1
            continue

        span = gold.span
        label = gold.label
        if cat in (ErrorCategory.CORRECT_LABEL_WRONG_SPAN, ErrorCategory.WRONG_LABEL_WRONG_SPAN):
            other_gold = gold_spans[:idx] + gold_spans[idx + 1 :]
            options = _valid_perturbations(gold, other_gold, emitted_spans, n_tokens)
            if options:
                span = rng.choice(options)
            else:
                notes.append(
                    f"{doc.id}: no valid span perturbation for gold "
                    f"[{gold.start},{gold.end}); emitted correct instead"
                )
                cat = ErrorCategory.CORRECT
        if cat in (ErrorCategory.WRONG_LABEL_CORRECT_SPAN, ErrorCategory.WRONG_LABEL_WRONG_SPAN):
            others = [lab for lab in label_ids if lab != gold.label]
            if others:
                label = rng.choice(others)
            else:
                notes.append(
                    f"{doc.id}: no alternative label for gold "
                    f"[{gold.start},{gold.end}); emitted correct instead"
                )
                cat = ErrorCategory.CORRECT
                span = gold.span
        if cat is ErrorCategory.CORRECT:
            confidence = rng.uniform(0.7, 1.0)
        else:
            confidence = rng.uniform(0.3, 0.7)
        emitted.append(
            PreAnnotation(span[0], span[1], label, confidence=confidence, intended_category=cat)
        )
        emitted_spans.append(span)
        counts[cat] += 1

    spurious_draws = sum(1 for _ in range(len(gold_order)) if rng.random() < spurious_rate)
    for _ in range(spurious_draws):
        cands = _spurious_candidates(n_tokens, gold_spans + emitted_spans)
        if not cands:
            notes.append(f"{doc.id}: no free span for a spurious annotation; draw skipped")
            continue
        span = rng.choice(cands)
        label = rng.choice(list(label_ids))
        emitted.append(
            PreAnnotation(
                span[0],
                span[1],
                label,
                confidence=rng.uniform(0.3, 0.7),
                intended_category=ErrorCategory.UNNECESSARY,
            )
        )
        emitted_spans.append(span)
        counts[ErrorCategory.UNNECESSARY] += 1

    emitted.sort(key=lambda a: (a.start, a.end))
    return DegradeResult(
        annotations=tuple(emitted),
        intended_counts=MappingProxyType(dict(counts)),
        notes=tuple(notes),
    )


class MLUnitError(RuntimeError):
    """A prediction or training call against an ML unit failed."""


class MLUnit:
    """Pluggable prediction/training component behind the pre-annotation step.

    ``predict`` must be deterministic for a fixed unit state and document.
    ``train`` is a no-op unless the unit advertises ``supports_training``.
    """

    supports_training = False

    def predict(self, doc: Document) -> list[PreAnnotation]:
        raise NotImplementedError

    def train(self, annotated: Sequence[tuple[Document, Sequence[Annotation]]]) -> None:
        pass


class NullMLUnit(MLUnit):
    """No assistance: every prediction is empty."""

    def predict(self, doc: Document) -> list[PreAnnotation]:
        return []


class SimulatedMLUnit(MLUnit):
    """Assistance simulator producing pre-annotations at an exact target recall.

    Per-document seeds are derived from ``(corpus_seed, doc.id)``, so
    predictions are deterministic and independent of call order.
    """

    def __init__(
        self,
        label_ids: Sequence[str],
        target_recall: float,
        corpus_seed: int = 0,
        base: CategoryDistribution = BASE_ERROR_MIX,
    ) -> None:
        self.label_ids = tuple(label_ids)
        self.target_recall = target_recall
        self.corpus_seed = corpus_seed
        self.distribution, self.spurious_rate = scale_distribution(base, target_recall)

    def predict(self, doc: Document) -> list[PreAnnotation]:
        if doc.gold is None:
            raise MLUnitError(f"cannot simulate predictions for {doc.id}: no gold annotations")
        result = degrade(
            doc,
            self.label_ids,
            self.distribution,
            self.spurious_rate,
            stable_seed(self.corpus_seed, doc.id),
        )
        return list(result.annotations)


class ExternalMLUnit(MLUnit):
    """Client for an ML unit served over HTTP (POST /train, POST /predict)."""

    supports_training = True

    def __init__(self, base_url: str, client: httpx.Client | None = None, timeout: float = 30.0):
        self.base_url = base_url.rstrip("/")
        self._client = client or httpx.Client(timeout=timeout)

    def predict(self, doc: Document) -> list[PreAnnotation]:
        payload = {
            "document_id": doc.id,
            "text": doc.text,
            "tokens": [t.to_dict() for t in doc.tokens],
        }
        try:
            response = self._client.post(f"{self.base_url}/predict", json=payload)
            response.raise_for_status()
            body = response.json()
        except httpx.HTTPError as exc:
            raise MLUnitError(f"predict failed for document {doc.id}: {exc}") from exc
        try:
            raw = body["annotations"]
            annotations = [
                PreAnnotation(
                    int(a["start_token"]),
                    int(a["end_token"]),
                    str(a["label"]),
                    confidence=float(a.get("confidence", 1.0)),
                )
                for a in raw
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise MLUnitError(f"malformed prediction payload for document {doc.id}: {exc}") from exc
        for ann in annotations:
            if ann.end > len(doc.tokens):
                raise MLUnitError(
                    f"prediction for document {doc.id} exceeds token count: "
                    f"[{ann.start},{ann.end})"
                )
        ordered = sorted(annotations, key=lambda a: (a.start, a.end))
        for prev, cur in zip(ordered, ordered[1:]):
            if cur.start < prev.end:
                raise MLUnitError(f"overlapping predictions for document {doc.id}")
        return ordered

    def train(self, annotated: Sequence[tuple[Document, Sequence[Annotation]]]) -> None:
        payload = {
            "documents": [
                {
                    "document_id": doc.id,
                    "text": doc.text,
                    "tokens": [t.to_dict() for t in doc.tokens],
                    "annotations": [
                        {"start_token": a.start, "end_token": a.end, "label": a.label}
                        for a in annotations
                    ],
                }
                for doc, annotations in annotated
            ]
        }
        try:
            response = self._client.post(f"{self.base_url}/train", json=payload)
            response.raise_for_status()
        except httpx.HTTPError as exc:
            raise MLUnitError(f"training call failed: {exc}") from exc
