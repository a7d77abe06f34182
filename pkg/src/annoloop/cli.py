"""Command-line front door.

Subcommands::

    ingest CORPUS                          validate a corpus file, print counts
    degrade CORPUS --recall R --seed S     write degraded pre-annotations
    score --produced F --gold CORPUS       metrics report (JSON, optional CSV)
    simulate --plan F --annotators N       run a simulated experiment
    project-cost --count N --seconds X     workday projection
    ttest --values ...                     one-sample t-test
    serve --data-dir D --listen HOST:PORT  run the HTTP service

Exit codes: 0 success, 1 usage error, 2 data/validation error. Errors are
reported as one JSON object on stderr. Stochastic subcommands are
deterministic under ``--seed``.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .assistance import BASE_ERROR_MIX, ErrorCategory, degrade, scale_distribution, stable_seed
from .corpus import Corpus, ingest_corpus
from .scoring import (
    document_stat_row,
    aggregate_metrics,
    classify,
    cost_projection,
    one_sample_ttest,
    stats_csv,
)
from .workcycle import AnnotatorBehavior, plan_experiment, run_experiment


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # usage errors exit 1, not argparse's default 2
        print(
            json.dumps({"error": "usage", "message": message}),
            file=sys.stderr,
        )
        raise SystemExit(1)


def _read_corpus(path: str) -> Corpus:
    return ingest_corpus(Path(path).read_bytes())


def _write_json(path: str | None, payload: dict) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if path is None or path == "-":
        sys.stdout.write(text)
    else:
        Path(path).write_text(text, encoding="utf-8")


def _cmd_ingest(args) -> int:
    corpus = _read_corpus(args.corpus)
    _write_json(None, {
        "documents": len(corpus.documents),
        "gold_annotations": corpus.gold_count,
        "labels": list(corpus.label_ids),
        "sources": len({d.source for d in corpus.documents if d.source is not None}),
    })
    return 0


def _cmd_degrade(args) -> int:
    corpus = _read_corpus(args.corpus)
    dist, spurious = scale_distribution(BASE_ERROR_MIX, args.recall)
    documents = []
    for doc in corpus.documents:
        if doc.gold is None:
            raise ValueError(f"document {doc.id} has no gold annotations")
        result = degrade(doc, corpus.label_ids, dist, spurious,
                         stable_seed(args.seed, doc.id))
        documents.append({
            "document_id": doc.id,
            "annotations": [
                {
                    "start_token": a.start,
                    "end_token": a.end,
                    "label": a.label,
                    "confidence": a.confidence,
                    "intended_category": a.intended_category.value,
                }
                for a in result.annotations
            ],
            "intended_counts": {c.value: n for c, n in result.intended_counts.items()},
            "notes": list(result.notes),
        })
    _write_json(args.out, {
        "recall": args.recall,
        "seed": args.seed,
        "spurious_rate": spurious,
        "distribution": {c.value: dist[c] for c in ErrorCategory},
        "documents": documents,
    })
    return 0


def _cmd_score(args) -> int:
    corpus = _read_corpus(args.gold)
    produced_payload = json.loads(Path(args.produced).read_text("utf-8"))
    produced_docs = produced_payload.get("documents", produced_payload)
    if not isinstance(produced_docs, list):
        raise ValueError("produced file must contain a 'documents' list")
    rows = []
    pooled: dict = {}
    pooled_gold = 0
    from .corpus import Annotation

    for entry in produced_docs:
        doc = corpus.document(str(entry["document_id"]))
        annotations = [
            Annotation(int(a["start_token"]), int(a["end_token"]), str(a["label"]))
            for a in entry.get("annotations", [])
        ]
        rows.append(document_stat_row(entry.get("annotator_id", ""), doc, annotations))
        cls = classify(annotations, doc.gold or ())
        for category, n in cls.counts.items():
            pooled[category] = pooled.get(category, 0) + n
        pooled_gold += doc.gold_count
    aggregate = aggregate_metrics(pooled, pooled_gold).to_dict() if pooled_gold else None
    _write_json(args.out, {"per_document": rows, "aggregate": aggregate, "ttests": None})
    if args.csv:
        Path(args.csv).write_text(stats_csv(rows), encoding="utf-8")
    return 0


def _behavior_from_config(raw: dict | None, seed: int) -> AnnotatorBehavior:
    raw = raw or {}
    assisted = raw.get("assisted")
    return AnnotatorBehavior(
        p_fix_missing=float(raw.get("p_fix_missing", 0.84)),
        p_fix_error=float(raw.get("p_fix_error", 0.9)),
        p_remove_spurious=float(raw.get("p_remove_spurious", 0.9)),
        seconds_mean=float(raw.get("seconds_mean", 8.2)),
        seconds_sd=float(raw.get("seconds_sd", 2.3)),
        seed=seed,
        assisted=_behavior_from_config(assisted, seed) if assisted else None,
    )


def _cmd_simulate(args) -> int:
    plan_path = Path(args.plan)
    config = json.loads(plan_path.read_text("utf-8"))
    if "corpus" in config:
        corpus = ingest_corpus((plan_path.parent / config["corpus"]).read_bytes())
    else:
        corpus = ingest_corpus({"labels": config["labels"],
                                "documents": config["documents"]})
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    plan = plan_experiment(
        corpus.documents,
        corpus.labels,
        k_blocks=int(config.get("k_blocks", 4)),
        condition_order=str(config.get("condition_order", "assisted_first")),
        target_recall=float(config.get("target_recall", 0.5)),
        training_docs=int(config.get("training_docs", 0)),
    )
    behaviors = [
        _behavior_from_config(config.get("behavior"), stable_seed(seed, "annotator", i))
        for i in range(args.annotators)
    ]
    report = run_experiment(plan, behaviors, seed=seed)
    _write_json(args.out, report)
    return 0


def _cmd_project_cost(args) -> int:
    days = cost_projection(args.count, args.seconds, args.hours_per_day)
    print(f"{days:.2f} workdays")
    return 0


def _cmd_ttest(args) -> int:
    result = one_sample_ttest(args.values)
    _write_json(None, result.to_dict())
    return 0


def _cmd_serve(args) -> int:
    import uvicorn

    from .server import create_app
    from .storage import ProjectStore

    host, _, port = args.listen.rpartition(":")
    frontend = args.frontend
    if frontend is None and Path("frontend/dist").is_dir():
        frontend = "frontend/dist"
    store = ProjectStore(args.data_dir)
    app = create_app(store, frontend_dir=frontend)
    try:
        uvicorn.run(app, host=host or "127.0.0.1", port=int(port), log_level="info")
    finally:
        store.close()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="annoloop", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a corpus file and print counts")
    p.add_argument("corpus")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("degrade", help="degrade gold annotations to a target recall")
    p.add_argument("corpus")
    p.add_argument("--recall", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.set_defaults(func=_cmd_degrade)

    p = sub.add_parser("score", help="score produced annotations against gold")
    p.add_argument("--produced", required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.add_argument("--csv", default=None, help="also write a flat CSV here")
    p.set_defaults(func=_cmd_score)

    p = sub.add_parser("simulate", help="run a simulated annotation experiment")
    p.add_argument("--plan", required=True, help="experiment plan config (JSON)")
    p.add_argument("--annotators", type=int, default=1)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output path (default: stdout)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("project-cost", help="project annotation cost in workdays")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seconds", type=float, required=True)
    p.add_argument("--hours-per-day", type=float, default=8.0)
    p.set_defaults(func=_cmd_project_cost)

    p = sub.add_parser("ttest", help="one-sample t-test against zero")
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.set_defaults(func=_cmd_ttest)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--data-dir", default=os.environ.get("DATA_DIR", "./data"))
    p.add_argument("--listen", default=os.environ.get("LISTEN_ADDR", "127.0.0.1:8000"))
    p.add_argument("--frontend", default=os.environ.get("FRONTEND_DIR"),
                   help="directory of built UI assets to serve under /ui")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SystemExit:
        raise
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(
            json.dumps({"error": type(exc).__name__, "message": str(exc)}),
            file=sys.stderr,
        )
        return 2


if __name__ == "__main__":
    sys.exit(main())
