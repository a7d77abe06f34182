"""Scoring produced annotations against a gold standard.

Classification assigns every produced annotation and every gold entity to
exactly one of the six error categories, by one-to-one matching in three
passes: exact-span pairs first, then overlapping pairs greedily by descending
token overlap, then leftovers. Aggregates cover annotation quality
(percent correct, precision/recall/F1), completeness (missing count), and
speed (seconds per correct annotation), with one-sample t-tests for paired
condition comparisons and a linear workday projection for annotation cost.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Sequence

from .assistance import GOLD_CONSUMING, ErrorCategory
from .corpus import Annotation, GoldAnnotation, _check_non_overlapping


@dataclass(frozen=True)
class MatchRow:
    """One classified annotation: produced-only, gold-only, or a pair."""

    produced: Annotation | None
    gold: GoldAnnotation | None
    category: ErrorCategory

    def __post_init__(self) -> None:
        if self.category is ErrorCategory.MISSING:
            if self.produced is not None or self.gold is None:
                raise ValueError("a missing row carries only a gold annotation")
        elif self.category is ErrorCategory.UNNECESSARY:
            if self.produced is None or self.gold is not None:
                raise ValueError("an unnecessary row carries only a produced annotation")
        elif self.produced is None or self.gold is None:
            raise ValueError(f"{self.category.value} requires a produced/gold pair")


@dataclass(frozen=True)
class Classification:
    matches: tuple[MatchRow, ...]
    counts: Mapping[ErrorCategory, int]

    @property
    def gold_consumed(self) -> int:
        return sum(self.counts[c] for c in GOLD_CONSUMING)

    @property
    def produced_count(self) -> int:
        return sum(n for c, n in self.counts.items() if c is not ErrorCategory.MISSING)


def _overlap(a: Annotation, b: Annotation) -> int:
    return max(0, min(a.end, b.end) - max(a.start, b.start))


def classify(
    produced: Sequence[Annotation], gold: Sequence[GoldAnnotation]
) -> Classification:
    """Match produced annotations one-to-one against gold and categorize them.

    Pass 1 pairs identical spans (correct vs. wrong label). Pass 2 pairs the
    remaining overlapping spans greedily by descending token overlap, ties
    broken by leftmost gold then shortest produced. Pass 3 marks leftovers
    unnecessary (produced) or missing (gold). Disjoint spans are never paired.
    """
    _check_non_overlapping(produced, "produced annotations")
    _check_non_overlapping(gold, "gold annotations")

    produced = sorted(produced, key=lambda a: (a.start, a.end))
    gold = sorted(gold, key=lambda a: (a.start, a.end))
    rows: list[MatchRow] = []
    used_produced: set[int] = set()
    used_gold: set[int] = set()

    by_span = {g.span: j for j, g in enumerate(gold)}
    for i, p in enumerate(produced):
        j = by_span.get(p.span)
        if j is None:
            continue
        g = gold[j]
        category = (
            ErrorCategory.CORRECT
            if p.label == g.label
            else ErrorCategory.WRONG_LABEL_CORRECT_SPAN
        )
        rows.append(MatchRow(produced=p, gold=g, category=category))
        used_produced.add(i)
        used_gold.add(j)

    candidates = []
    for i, p in enumerate(produced):
        if i in used_produced:
            continue
        for j, g in enumerate(gold):
            if j in used_gold:
                continue
            size = _overlap(p, g)
            if size > 0:
                candidates.append((-size, g.start, p.end - p.start, p.start, i, j))
    for _, _, _, _, i, j in sorted(candidates):
        if i in used_produced or j in used_gold:
            continue
        p, g = produced[i], gold[j]
        category = (
            ErrorCategory.CORRECT_LABEL_WRONG_SPAN
            if p.label == g.label
            else ErrorCategory.WRONG_LABEL_WRONG_SPAN
        )
        rows.append(MatchRow(produced=p, gold=g, category=category))
        used_produced.add(i)
        used_gold.add(j)

    for i, p in enumerate(produced):
        if i not in used_produced:
            rows.append(MatchRow(produced=p, gold=None, category=ErrorCategory.UNNECESSARY))
    for j, g in enumerate(gold):
        if j not in used_gold:
            rows.append(MatchRow(produced=None, gold=g, category=ErrorCategory.MISSING))

    rows.sort(
        key=lambda r: (
            (r.produced or r.gold).start,
            (r.produced or r.gold).end,
            r.category.value,
        )
    )
    counts = Counter({c: 0 for c in ErrorCategory})
    counts.update(r.category for r in rows)
    return Classification(matches=tuple(rows), counts=dict(counts))


@dataclass(frozen=True)
class MetricsReport:
    gold_count: int
    produced_count: int
    counts: Mapping[ErrorCategory, int]
    percent_correct: float
    missing_count: int
    precision: float
    recall: float
    f1: float
    seconds_mean: float | None = None
    seconds_sd: float | None = None
    timing_count: int = 0

    def to_dict(self) -> dict:
        return {
            "gold_count": self.gold_count,
            "produced_count": self.produced_count,
            "counts": {c.value: n for c, n in self.counts.items()},
            "percent_correct": self.percent_correct,
            "missing_count": self.missing_count,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "seconds_per_correct_annotation": {
                "mean": self.seconds_mean,
                "sd": self.seconds_sd,
                "n": self.timing_count,
            },
        }


def mean_and_sample_sd(values: Sequence[float]) -> tuple[float, float]:
    """Mean and sample standard deviation (n-1 denominator; 0.0 for n <= 1)."""
    n = len(values)
    if n == 0:
        raise ValueError("no values")
    mean = sum(values) / n
    if n == 1:
        return mean, 0.0
    var = sum((v - mean) ** 2 for v in values) / (n - 1)
    return mean, math.sqrt(var)


def aggregate_metrics(
    counts: Mapping[ErrorCategory, int],
    gold_count: int,
    timings: Sequence[float] | None = None,
) -> MetricsReport:
    """Metrics from raw category counts (e.g. pooled over several documents)."""
    if gold_count <= 0:
        raise ValueError("gold_count must be positive")
    consumed = sum(counts.get(c, 0) for c in GOLD_CONSUMING)
    if gold_count < consumed:
        raise ValueError(
            f"gold_count {gold_count} smaller than classified gold entities {consumed}"
        )
    full_counts = {c: counts.get(c, 0) for c in ErrorCategory}
    correct = full_counts[ErrorCategory.CORRECT]
    produced = sum(n for c, n in full_counts.items() if c is not ErrorCategory.MISSING)
    percent_correct = correct / gold_count
    precision = correct / produced if produced else 0.0
    recall = percent_correct
    f1 = 2 * precision * recall / (precision + recall) if (precision + recall) else 0.0
    seconds_mean = seconds_sd = None
    timing_count = 0
    if timings is not None and len(timings) > 0:
        seconds_mean, seconds_sd = mean_and_sample_sd(timings)
        timing_count = len(timings)
    return MetricsReport(
        gold_count=gold_count,
        produced_count=produced,
        counts=full_counts,
        percent_correct=percent_correct,
        missing_count=full_counts[ErrorCategory.MISSING],
        precision=precision,
        recall=recall,
        f1=f1,
        seconds_mean=seconds_mean,
        seconds_sd=seconds_sd,
        timing_count=timing_count,
    )


def metrics(
    cls: Classification,
    gold_count: int,
    timings: Sequence[float] | None = None,
) -> MetricsReport:
    """Aggregate a classification into quality/completeness/speed metrics."""
    return aggregate_metrics(cls.counts, gold_count, timings)


def _betacf(a: float, b: float, x: float) -> float:
    # Continued-fraction kernel of the regularized incomplete beta
    # (modified Lentz iteration).
    max_iterations = 300
    eps = 3e-14
    fpmin = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < fpmin:
        d = fpmin
    d = 1.0 / d
    h = d
    for m in range(1, max_iterations + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < fpmin:
            d = fpmin
        c = 1.0 + aa / c
        if abs(c) < fpmin:
            c = fpmin
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise ArithmeticError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def regularized_incomplete_beta(a: float, b: float, x: float) -> float:
    """I_x(a, b) for a, b > 0 and x in [0, 1]."""
    if a <= 0 or b <= 0:
        raise ValueError("a and b must be positive")
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (
        math.lgamma(a + b)
        - math.lgamma(a)
        - math.lgamma(b)
        + a * math.log(x)
        + b * math.log1p(-x)
    )
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def student_t_two_tailed_p(t: float, df: int) -> float:
    """P(|T| >= |t|) for a Student-t variable with ``df`` degrees of freedom."""
    if df < 1:
        raise ValueError("degrees of freedom must be >= 1")
    if t == 0.0:
        return 1.0
    x = df / (df + t * t)
    return regularized_incomplete_beta(df / 2.0, 0.5, x)


@dataclass(frozen=True)
class TTestResult:
    n: int
    mean_diff: float
    sd: float
    t: float
    df: int
    p_two_tailed: float

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "mean_diff": self.mean_diff,
            "sd": self.sd,
            "se": self.sd / math.sqrt(self.n),
            "t": self.t,
            "df": self.df,
            "p_two_tailed": self.p_two_tailed,
        }


class InsufficientDataError(ValueError):
    pass


class DegenerateSampleError(ValueError):
    pass


def one_sample_ttest(diffs: Sequence[float]) -> TTestResult:
    """One-sample t-test of the mean of ``diffs`` against zero, two-tailed.

    A zero-variance sample is degenerate unless its mean is also zero, in
    which case t = 0 and p = 1.
    """
    n = len(diffs)
    if n < 2:
        raise InsufficientDataError(f"need at least 2 values, got {n}")
    mean, sd = mean_and_sample_sd(diffs)
    if sd == 0.0:
        if mean != 0.0:
            raise DegenerateSampleError(
                f"zero variance with non-zero mean {mean}: t is undefined"
            )
        return TTestResult(n=n, mean_diff=0.0, sd=0.0, t=0.0, df=n - 1, p_two_tailed=1.0)
    t = mean / (sd / math.sqrt(n))
    return TTestResult(
        n=n,
        mean_diff=mean,
        sd=sd,
        t=t,
        df=n - 1,
        p_two_tailed=student_t_two_tailed_p(t, n - 1),
    )


def cost_projection(
    annotation_count: int, seconds_per_annotation: float, hours_per_day: float = 8.0
) -> float:
    """Workdays needed to produce ``annotation_count`` annotations at the given pace."""
    if annotation_count < 0 or seconds_per_annotation < 0:
        raise ValueError("counts and seconds must be non-negative")
    if hours_per_day <= 0:
        raise ValueError("hours_per_day must be positive")
    return annotation_count * seconds_per_annotation / 3600.0 / hours_per_day


def document_stat_row(
    annotator_id: str,
    doc,
    produced: Sequence[Annotation],
    timings: Sequence[float] | None = None,
) -> dict:
    """One flat per-document stats row, for reports and CSV export."""
    gold = doc.gold or ()
    cls = classify(produced, gold)
    row: dict = {
        "annotator_id": annotator_id,
        "document_id": doc.id,
        "gold_count": len(gold),
        "produced_count": cls.produced_count,
    }
    for category in ErrorCategory:
        row[category.value] = cls.counts[category]
    if gold:
        report = metrics(cls, len(gold), timings)
        row.update(
            percent_correct=report.percent_correct,
            precision=report.precision,
            recall=report.recall,
            f1=report.f1,
            seconds_mean=report.seconds_mean,
            seconds_sd=report.seconds_sd,
        )
    else:
        row.update(percent_correct=None, precision=None, recall=None, f1=None,
                   seconds_mean=None, seconds_sd=None)
    return row


CSV_COLUMNS = (
    "annotator_id", "document_id", "block_index", "condition",
    "gold_count", "produced_count",
    "correct", "correct_label_wrong_span", "wrong_label_correct_span",
    "wrong_label_wrong_span", "unnecessary", "missing",
    "percent_correct", "precision", "recall", "f1", "seconds_mean", "seconds_sd",
)


def stats_csv(rows: Sequence[Mapping]) -> str:
    """Flat CSV (one row per document per annotator) for external tools."""
    import csv
    import io

    buffer = io.StringIO()
    writer = csv.DictWriter(buffer, fieldnames=CSV_COLUMNS, extrasaction="ignore",
                            lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in CSV_COLUMNS})
    return buffer.getvalue()


#: Dimensions compared between assisted and unassisted blocks.
COMPARISON_DIMENSIONS = ("percent_correct", "missing_count", "seconds_per_annotation")


@dataclass(frozen=True)
class ConditionComparison:
    n: int
    ttests: Mapping[str, TTestResult]
    #: Dimensions whose per-annotator differences were constant and non-zero:
    #: a t statistic is undefined there, so only the difference is reported.
    degenerate: Mapping[str, float]
    #: Reduction of missing annotations under assistance, reported both ways:
    #: pooled over the cohort and as the mean of per-annotator reductions.
    missing_reduction_pooled: float | None = None
    missing_reduction_per_annotator_mean: float | None = None

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "dimensions": {name: tt.to_dict() for name, tt in self.ttests.items()},
            "degenerate_dimensions": dict(self.degenerate),
            "missing_reduction": {
                "pooled": self.missing_reduction_pooled,
                "per_annotator_mean": self.missing_reduction_per_annotator_mean,
            },
        }


def compare_conditions(
    per_annotator: Sequence[tuple[MetricsReport, MetricsReport]],
) -> ConditionComparison:
    """Paired assisted-vs-unassisted comparison across annotators.

    Each entry is one annotator's (assisted, unassisted) aggregate. The
    assisted-minus-unassisted difference vectors feed a one-sample t-test per
    dimension; the seconds dimension is included only when both sides carry
    timings for every annotator.
    """
    if len(per_annotator) < 2:
        raise InsufficientDataError("need at least 2 annotators to compare conditions")
    diffs: dict[str, list[float]] = {name: [] for name in COMPARISON_DIMENSIONS}
    with_seconds = all(
        a.seconds_mean is not None and u.seconds_mean is not None for a, u in per_annotator
    )
    for assisted, unassisted in per_annotator:
        diffs["percent_correct"].append(assisted.percent_correct - unassisted.percent_correct)
        diffs["missing_count"].append(float(assisted.missing_count - unassisted.missing_count))
        if with_seconds:
            diffs["seconds_per_annotation"].append(assisted.seconds_mean - unassisted.seconds_mean)
    ttests = {}
    degenerate = {}
    for name, values in diffs.items():
        if not values:
            continue
        try:
            ttests[name] = one_sample_ttest(values)
        except DegenerateSampleError:
            degenerate[name] = values[0]

    pooled_assisted = sum(a.missing_count for a, _ in per_annotator)
    pooled_unassisted = sum(u.missing_count for _, u in per_annotator)
    pooled = (
        (pooled_unassisted - pooled_assisted) / pooled_unassisted if pooled_unassisted else None
    )
    per_ann = [
        (u.missing_count - a.missing_count) / u.missing_count
        for a, u in per_annotator
        if u.missing_count
    ]
    per_ann_mean = sum(per_ann) / len(per_ann) if per_ann else None
    return ConditionComparison(
        n=len(per_annotator),
        ttests=ttests,
        degenerate=degenerate,
        missing_reduction_pooled=pooled,
        missing_reduction_per_annotator_mean=per_ann_mean,
    )
