"""Corpus ingestion, tokenization, and span alignment.

A corpus is a flat list of documents (one document = one presented paragraph),
each carrying its text, a deterministic tokenization, and optionally a set of
gold annotations. All character offsets count Unicode code points and are
end-exclusive; annotation spans are half-open token ranges ``[start, end)``.

Corpus file schema (UTF-8 JSON)::

    {
      "labels": [{"id": "PER", "name": "Person", "color": "#2e7d32"}, ...],
      "documents": [
        {"id"?, "source"?, "text",
         "gold"?: [{"start_char", "end_char", "label"}, ...]},
        ...
      ]
    }
"""

from __future__ import annotations

import json
import re
import unicodedata
from dataclasses import dataclass, field


class CorpusFormatError(ValueError):
    """The corpus file or a payload violates the corpus schema."""


class SpanAlignmentError(ValueError):
    """A character span does not coincide with token boundaries."""


_COLOR_RE = re.compile(r"^#[0-9a-fA-F]{6}$")


@dataclass(frozen=True)
class Label:
    id: str
    display_name: str
    color: str

    def __post_init__(self) -> None:
        if not self.id:
            raise CorpusFormatError("label id must be a non-empty string")
        if not _COLOR_RE.match(self.color):
            raise CorpusFormatError(
                f"label {self.id!r}: color {self.color!r} is not a #RRGGBB hex string"
            )

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.display_name, "color": self.color}


@dataclass(frozen=True)
class Token:
    text: str
    char_start: int
    char_end: int

    def to_dict(self) -> dict:
        return {"text": self.text, "start_char": self.char_start, "end_char": self.char_end}


@dataclass(frozen=True)
class Annotation:
    """A labeled half-open token span ``[start, end)``."""

    start: int
    end: int
    label: str

    def __post_init__(self) -> None:
        if not 0 <= self.start < self.end:
            raise ValueError(f"invalid span [{self.start}, {self.end})")

    @property
    def span(self) -> tuple[int, int]:
        return (self.start, self.end)

    def overlaps(self, other: "Annotation") -> bool:
        return self.start < other.end and other.start < self.end


# A gold annotation is structurally an Annotation; the alias marks intent at
# call sites that must not mix produced and reference annotations.
GoldAnnotation = Annotation


def _is_word_char(ch: str) -> bool:
    # Letters, combining marks, and decimal digits form word runs; everything
    # else that is not whitespace becomes a single-character token.
    cat = unicodedata.category(ch)
    return cat[0] in ("L", "M") or cat == "Nd"


def tokenize(text: str) -> tuple[Token, ...]:
    """Split ``text`` into tokens, deterministically.

    Maximal runs of letters/digits (including combining marks) form one token
    each; any other non-whitespace character is a single-character token.
    Offsets count Unicode code points.
    """
    tokens: list[Token] = []
    i = 0
    n = len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if _is_word_char(ch):
            j = i + 1
            while j < n and _is_word_char(text[j]):
                j += 1
        else:
            j = i + 1
        tokens.append(Token(text=text[i:j], char_start=i, char_end=j))
        i = j
    return tuple(tokens)


def _check_non_overlapping(annotations, context: str) -> None:
    ordered = sorted(annotations, key=lambda a: (a.start, a.end))
    for prev, cur in zip(ordered, ordered[1:]):
        if cur.start < prev.end:
            raise ValueError(
                f"{context}: overlapping spans [{prev.start},{prev.end}) and "
                f"[{cur.start},{cur.end})"
            )


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    tokens: tuple[Token, ...] = field(default=())
    source: str | None = None
    gold: tuple[GoldAnnotation, ...] | None = None

    def __post_init__(self) -> None:
        if not self.tokens:
            object.__setattr__(self, "tokens", tokenize(self.text))
        if self.gold is not None:
            for ann in self.gold:
                if ann.end > len(self.tokens):
                    raise ValueError(
                        f"document {self.id}: gold span [{ann.start},{ann.end}) exceeds "
                        f"token count {len(self.tokens)}"
                    )
            _check_non_overlapping(self.gold, f"document {self.id} gold")

    @property
    def gold_count(self) -> int:
        return len(self.gold) if self.gold else 0

    def token_span_text(self, start: int, end: int) -> str:
        cs, ce = token_span_to_chars(self, start, end)
        return self.text[cs:ce]


def chars_to_token_span(doc: Document, start_char: int, end_char: int) -> tuple[int, int]:
    """Convert a character span to a token range ``[start, end)``.

    Succeeds iff ``start_char`` is the start of some token and ``end_char``
    the end of some (possibly the same) token. Degenerate or misaligned spans
    raise :class:`SpanAlignmentError` rather than being snapped.
    """
    if start_char >= end_char:
        raise SpanAlignmentError(
            f"document {doc.id}: empty char span ({start_char},{end_char})"
        )
    starts = {t.char_start: i for i, t in enumerate(doc.tokens)}
    ends = {t.char_end: i for i, t in enumerate(doc.tokens)}
    if start_char not in starts or end_char not in ends:
        raise SpanAlignmentError(
            f"document {doc.id}: char span ({start_char},{end_char}) does not align "
            f"to token boundaries"
        )
    return (starts[start_char], ends[end_char] + 1)


def token_span_to_chars(doc: Document, start: int, end: int) -> tuple[int, int]:
    """Convert a token range ``[start, end)`` to its character span."""
    if not (0 <= start < end <= len(doc.tokens)):
        raise ValueError(
            f"document {doc.id}: token range [{start},{end}) out of bounds "
            f"(token count {len(doc.tokens)})"
        )
    return (doc.tokens[start].char_start, doc.tokens[end - 1].char_end)


@dataclass(frozen=True)
class Corpus:
    labels: tuple[Label, ...]
    documents: tuple[Document, ...]

    def __post_init__(self) -> None:
        if not self.labels:
            raise CorpusFormatError("a corpus needs at least one label")
        seen: set[str] = set()
        for lab in self.labels:
            if lab.id in seen:
                raise CorpusFormatError(f"duplicate label id {lab.id!r}")
            seen.add(lab.id)
        doc_ids: set[str] = set()
        for doc in self.documents:
            if doc.id in doc_ids:
                raise CorpusFormatError(f"duplicate document id {doc.id!r}")
            doc_ids.add(doc.id)

    @property
    def label_ids(self) -> tuple[str, ...]:
        return tuple(lab.id for lab in self.labels)

    def document(self, doc_id: str) -> Document:
        for doc in self.documents:
            if doc.id == doc_id:
                return doc
        raise KeyError(doc_id)

    @property
    def gold_count(self) -> int:
        return sum(doc.gold_count for doc in self.documents)

    def has_gold(self) -> bool:
        return any(doc.gold for doc in self.documents)


def _parse_label(raw: object, index: int) -> Label:
    if not isinstance(raw, dict):
        raise CorpusFormatError(f"labels[{index}]: expected an object")
    try:
        return Label(
            id=str(raw["id"]),
            display_name=str(raw.get("name", raw["id"])),
            color=str(raw.get("color", "#808080")),
        )
    except KeyError as exc:
        raise CorpusFormatError(f"labels[{index}]: missing field {exc.args[0]!r}") from None


def _parse_document(raw: object, index: int, label_ids: set[str]) -> Document:
    if not isinstance(raw, dict):
        raise CorpusFormatError(f"documents[{index}]: expected an object")
    if "text" not in raw or not isinstance(raw["text"], str):
        raise CorpusFormatError(f"documents[{index}]: missing or non-string 'text'")
    doc_id = str(raw["id"]) if raw.get("id") is not None else f"doc-{index + 1:04d}"
    text = raw["text"]
    tokens = tokenize(text)
    doc = Document(id=doc_id, text=text, tokens=tokens, source=raw.get("source"))
    gold_raw = raw.get("gold")
    if gold_raw is None:
        return doc
    if not isinstance(gold_raw, list):
        raise CorpusFormatError(f"documents[{index}]: 'gold' must be a list")
    gold: list[GoldAnnotation] = []
    for j, g in enumerate(gold_raw):
        if not isinstance(g, dict):
            raise CorpusFormatError(f"documents[{index}].gold[{j}]: expected an object")
        try:
            start_char, end_char, label = int(g["start_char"]), int(g["end_char"]), str(g["label"])
        except (KeyError, TypeError, ValueError) as exc:
            raise CorpusFormatError(
                f"documents[{index}].gold[{j}]: malformed span entry ({exc})"
            ) from None
        if label not in label_ids:
            raise CorpusFormatError(
                f"documents[{index}].gold[{j}]: unknown label {label!r}"
            )
        start, end = chars_to_token_span(doc, start_char, end_char)
        gold.append(GoldAnnotation(start=start, end=end, label=label))
    _check_non_overlapping(gold, f"documents[{index}] gold")
    return Document(id=doc_id, text=text, tokens=tokens, source=raw.get("source"),
                    gold=tuple(gold))


def ingest_corpus(raw: bytes | str | dict) -> Corpus:
    """Parse a corpus file into validated :class:`Corpus`.

    Gold annotations given in character offsets are converted to token spans;
    spans that fail token alignment are a hard error (never snapped). Document
    ids are preserved, or assigned sequentially (``doc-0001``, ...) when absent.
    """
    if isinstance(raw, (bytes, str)):
        try:
            data = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise CorpusFormatError(f"corpus file is not valid JSON: {exc}") from None
    else:
        data = raw
    if not isinstance(data, dict):
        raise CorpusFormatError("corpus file must be a JSON object")
    labels_raw = data.get("labels")
    if not isinstance(labels_raw, list) or not labels_raw:
        raise CorpusFormatError("corpus file needs a non-empty 'labels' list")
    labels = tuple(_parse_label(lab, i) for i, lab in enumerate(labels_raw))
    docs_raw = data.get("documents", [])
    if not isinstance(docs_raw, list):
        raise CorpusFormatError("'documents' must be a list")
    label_ids = {lab.id for lab in labels}
    documents = tuple(_parse_document(d, i, label_ids) for i, d in enumerate(docs_raw))
    return Corpus(labels=labels, documents=documents)


def export_corpus(corpus: Corpus) -> dict:
    """Serialize a corpus back to the file schema (gold in char offsets)."""
    docs = []
    for doc in corpus.documents:
        entry: dict = {"id": doc.id, "text": doc.text}
        if doc.source is not None:
            entry["source"] = doc.source
        if doc.gold is not None:
            entry["gold"] = [
                {
                    "start_char": token_span_to_chars(doc, g.start, g.end)[0],
                    "end_char": token_span_to_chars(doc, g.start, g.end)[1],
                    "label": g.label,
                }
                for g in doc.gold
            ]
        docs.append(entry)
    return {"labels": [lab.to_dict() for lab in corpus.labels], "documents": docs}
