"""Annotation work-cycle platform.

Serves documents with machine pre-annotations at a controlled recall level,
collects corrections, and quantifies annotation quality, completeness, and
speed against a gold standard.
"""

from .assistance import (
    BASE_ERROR_MIX,
    CategoryDistribution,
    DegradeResult,
    ErrorCategory,
    ExternalMLUnit,
    MLUnit,
    MLUnitError,
    NullMLUnit,
    PreAnnotation,
    SimulatedMLUnit,
    degrade,
    scale_distribution,
    stable_seed,
)
from .corpus import (
    Annotation,
    Corpus,
    CorpusFormatError,
    Document,
    GoldAnnotation,
    Label,
    SpanAlignmentError,
    Token,
    chars_to_token_span,
    export_corpus,
    ingest_corpus,
    token_span_to_chars,
    tokenize,
)
from .scoring import (
    Classification,
    ConditionComparison,
    MetricsReport,
    TTestResult,
    classify,
    compare_conditions,
    cost_projection,
    metrics,
    one_sample_ttest,
)
from .workcycle import (
    AnnotationSet,
    AnnotatorBehavior,
    Block,
    ExperimentPlan,
    IterationPlan,
    ProjectState,
    SelectionStrategy,
    merge_back,
    open_iteration,
    partition_blocks,
    plan_experiment,
    run_experiment,
    select_batch,
    simulate_annotator,
)

__version__ = "0.1.0"
