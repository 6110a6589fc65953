"""Command-line entry point: ``resum <subcommand> ...``.

Exit status: 0 on success, 1 on a domain error, 2 on a usage error. Data goes
to stdout (or ``--out``), diagnostics to stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import random
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from pathlib import Path
from typing import Sequence

from . import __version__
from .config import RunConfig, load_run_config
from .errors import ConfigurationError, InvalidInputError, ResumError, UndefinedCorrelationError
from .evaluation import Ensemble, evaluation_to_dict, run_evaluator
from .llm_gateway import Gateway
from .loop import generate_initial, read_traces, run_batch, trace_to_dict, write_traces
from .meta_eval import (
    MODES,
    correlate,
    load_dataset,
    load_documents,
    load_summaries,
    render_report,
)
from .prompt_kit import render_evaluation, render_initial
from .text_metrics import MetricScore, ingest_external_scores, score_summary, write_scores

logger = logging.getLogger("resum")


@contextmanager
def _output(path: str | None):
    if path is None or path == "-":
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _csv_list(value: str) -> list[str]:
    return [v.strip() for v in value.split(",") if v.strip()]


def _add_run_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="TOML run configuration")
    p.add_argument("--generator", help="agent id of the summary generator")
    p.add_argument("--evaluators", type=_csv_list, help="comma-separated evaluator agent ids")
    p.add_argument("--strategy", choices=["single", "averaging", "majority_voting", "leader_based"])
    p.add_argument("--leader", help="agent id of the leader for leader_based aggregation")
    p.add_argument("--tau", type=int, help="convergence threshold (default 4)")
    p.add_argument("--t-max", type=int, dest="t_max", help="maximum refinements (default 3)")
    p.add_argument("--dimensions", type=_csv_list, help="comma-separated dimension ids")
    p.add_argument("--cache-dir", help="response cache directory (also $RESUM_CACHE_DIR)")
    p.add_argument("--prompt-dir", help="directory with replacement prompt templates")
    p.add_argument("--parallelism", type=int, help="documents processed concurrently")
    p.add_argument("--offline", action="store_true", help="fail on cache misses instead of calling endpoints")
    p.add_argument("--dry-run", action="store_true", help="print rendered prompts, call nothing")


def _run_config(args) -> RunConfig:
    base = load_run_config(args.config) if args.config else RunConfig()
    return base.with_overrides(
        generator_id=args.generator,
        evaluator_ids=args.evaluators,
        strategy=args.strategy,
        leader_id=args.leader,
        tau=args.tau,
        t_max=args.t_max,
        dimensions=tuple(args.dimensions) if args.dimensions else None,
        cache_dir=Path(args.cache_dir) if args.cache_dir else None,
        prompt_dir=Path(args.prompt_dir) if args.prompt_dir else None,
        parallelism=args.parallelism,
    )


def _gateway(cfg: RunConfig, args) -> Gateway:
    return Gateway(cfg.cache_dir, offline=args.offline)


def _print_prompt(label: str, system: str, user: str) -> None:
    sys.stdout.write(f"===== {label} [system] =====\n{system}\n===== {label} [user] =====\n{user}\n")


def cmd_summarize(args) -> int:
    cfg = _run_config(args)
    docs = load_documents(args.docs)
    templates = cfg.templates()
    if args.dry_run:
        for doc in docs:
            _print_prompt(f"initial {doc.id}", *render_initial(doc.text, templates))
        return 0
    generator = cfg.generator()
    with _gateway(cfg, args) as gw, ThreadPoolExecutor(cfg.parallelism) as pool:
        summaries = list(pool.map(lambda d: generate_initial(gw, d, generator, templates), docs))
    with _output(args.out) as fh:
        for s in summaries:
            rec = {"id": s.id, "doc_id": s.doc_id, "system": s.system, "text": s.text, "iteration": s.iteration}
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    return 0


def _evaluator_label(evaluator) -> str:
    return evaluator.strategy.kind if isinstance(evaluator, Ensemble) else evaluator.agent_id


def cmd_evaluate(args) -> int:
    cfg = _run_config(args)
    docs = {d.id: d for d in load_documents(args.docs)}
    summaries = load_summaries(args.summaries)
    for s in summaries:
        if s.doc_id not in docs:
            raise InvalidInputError(f"summary {s.id!r} references unknown document {s.doc_id!r}")
    templates = cfg.templates()
    if args.dry_run:
        for s in summaries:
            _print_prompt(f"evaluate {s.id}", *render_evaluation(docs[s.doc_id].text, s.text, templates))
        return 0
    evaluator = cfg.evaluator()

    def one(s):
        try:
            return run_evaluator(
                gw, evaluator, docs[s.doc_id].text, s.text, s.id,
                templates=templates, scale_max=cfg.scale_max, dimensions=cfg.dimensions,
            )
        except ResumError as exc:
            return exc

    with _gateway(cfg, args) as gw, ThreadPoolExecutor(cfg.parallelism) as pool:
        results = list(pool.map(one, summaries))
    failed = 0
    label = _evaluator_label(evaluator)
    score_rows = []
    with _output(args.out) as fh:
        for s, res in zip(summaries, results):
            if isinstance(res, Exception):
                failed += 1
                print(f"error: {s.id}: {res}", file=sys.stderr)
                rec = {"summary_id": s.id, "error": f"{type(res).__name__}: {res}"}
            else:
                rec = evaluation_to_dict(res)
                for dim, score in res.scores.items():
                    score_rows.append((f"llm_{label}_{dim}", s.id, float(score)))
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")
    if args.scores_out:
        write_scores([MetricScore(m, sid, v) for m, sid, v in score_rows], args.scores_out)
    return 1 if failed else 0


def cmd_run(args) -> int:
    cfg = _run_config(args)
    docs = load_documents(args.docs)
    loop_cfg = cfg.loop_config()
    if args.dry_run:
        for doc in docs:
            _print_prompt(f"initial {doc.id}", *render_initial(doc.text, loop_cfg.templates))
        return 0
    with _gateway(cfg, args) as gw:
        traces = run_batch(gw, docs, loop_cfg, cfg.parallelism)
    if args.out:
        write_traces(traces, args.out)
    else:
        for t in traces:
            sys.stdout.write(json.dumps(trace_to_dict(t), ensure_ascii=False) + "\n")
    counts: dict[str, int] = {}
    for t in traces:
        counts[t.termination] = counts.get(t.termination, 0) + 1
        if t.error:
            print(f"error: {t.document_id}: {t.error}", file=sys.stderr)
    print("terminations: " + ", ".join(f"{k}={v}" for k, v in sorted(counts.items())), file=sys.stderr)
    return 1 if counts.get("error") else 0


def cmd_score(args) -> int:
    docs = {d.id: d for d in load_documents(args.docs)}
    summaries = load_summaries(args.summaries)
    references = None
    if args.references:
        references = {d.id: d.text for d in load_documents(args.references)}
    rows = []
    for s in summaries:
        source = references if references is not None else {k: d.text for k, d in docs.items()}
        if s.doc_id not in source:
            raise InvalidInputError(f"no reference text for document {s.doc_id!r} (summary {s.id})")
        rows.extend(score_summary(s.id, s.text, source[s.doc_id], args.rouge, args.dale_chall_path))
    if args.out:
        write_scores(rows, args.out)
    else:
        for r in rows:
            sys.stdout.write(json.dumps({"summary_id": r.summary_id, "metric": r.metric_id, "value": r.value}) + "\n")
    return 0


def cmd_meta_eval(args) -> int:
    dataset = load_dataset(args.documents, args.summaries, args.annotations, args.name)
    scores = [s for path in args.scores for s in ingest_external_scores(path)]
    metrics = args.metrics or list(dict.fromkeys(s.metric_id for s in scores))
    dims = args.dimensions or list(dataset.dimensions)
    results = []
    for metric in metrics:
        metric_scores = [s for s in scores if s.metric_id == metric]
        if not metric_scores:
            raise InvalidInputError(f"no scores for metric {metric!r}")
        for dim in dims:
            for mode in args.modes:
                try:
                    results.append(
                        correlate(dataset, metric_scores, dim, mode, metric, method=args.method, seed=args.seed)
                    )
                except UndefinedCorrelationError as exc:
                    print(f"skipped {metric}/{dim}/{mode}: {exc}", file=sys.stderr)
    with _output(args.out) as fh:
        fh.write(render_report(results, args.format))
    return 0


def cmd_export_human_eval(args) -> int:
    traces = read_traces(args.traces)
    docs = {d.id: d for d in load_documents(args.docs)}
    rng = random.Random(args.seed)
    sheet, key = [], []
    skipped = 0
    for trace in traces:
        if trace.termination == "error" or trace.final is None or not trace.iterations:
            skipped += 1
            continue
        initial = trace.iterations[0].summary
        enhanced = trace.final
        if enhanced.iteration == 0:
            skipped += 1
            continue
        if trace.document_id not in docs:
            raise InvalidInputError(f"trace references unknown document {trace.document_id!r}")
        pair_id = f"pair-{len(sheet) + 1:04d}"
        swap = rng.random() < 0.5
        a, b = (enhanced, initial) if swap else (initial, enhanced)
        sheet.append([pair_id, trace.document_id, docs[trace.document_id].text, a.text, b.text])
        key.append([pair_id, trace.document_id, "enhanced" if swap else "initial", "initial" if swap else "enhanced"])
    with _output(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "document_id", "source_document", "summary_a", "summary_b"])
        w.writerows(sheet)
    with open(args.key_out, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["pair_id", "document_id", "summary_a", "summary_b"])
        w.writerows(key)
    print(f"exported {len(sheet)} pairs, skipped {skipped} traces", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="resum", description="Self-reflective summarization and metric meta-evaluation.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("summarize", help="generate initial summaries")
    _add_run_options(p)
    p.add_argument("--docs", required=True, help="documents JSONL {id, text}")
    p.add_argument("--out", help="summaries JSONL (default stdout)")
    p.set_defaults(func=cmd_summarize)

    p = sub.add_parser("evaluate", help="score summaries with one agent or an ensemble")
    _add_run_options(p)
    p.add_argument("--docs", required=True)
    p.add_argument("--summaries", required=True, help="summaries JSONL {id, doc_id, system, text}")
    p.add_argument("--out", help="evaluations JSONL (default stdout)")
    p.add_argument("--scores-out", help="also write per-dimension scores in the metric score format")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("run", help="run the refinement loop over documents")
    _add_run_options(p)
    p.add_argument("--docs", required=True)
    p.add_argument("--out", help="traces JSONL (default stdout)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="compute lexical and readability metrics")
    p.add_argument("--docs", required=True)
    p.add_argument("--summaries", required=True)
    p.add_argument("--references", help="gold references JSONL {id: doc_id, text}; default compares to the source")
    p.add_argument("--rouge", choices=["recall", "f1"], default="recall", help="ROUGE value to export")
    p.add_argument("--dale-chall-path", help="familiar-word list (also $RESUM_DALE_CHALL_PATH)")
    p.add_argument("--out", help="scores file, .jsonl or .csv (default stdout JSONL)")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("meta-eval", help="correlate metric scores with human judgments")
    p.add_argument("--documents", required=True)
    p.add_argument("--summaries", required=True)
    p.add_argument("--annotations", required=True)
    p.add_argument("--scores", required=True, nargs="+", help="metric score files")
    p.add_argument("--name", help="dataset name (default: annotations file stem)")
    p.add_argument("--metrics", type=_csv_list)
    p.add_argument("--dimensions", type=_csv_list)
    p.add_argument("--modes", type=_csv_list, default=list(MODES))
    p.add_argument("--format", choices=["table", "delimited"], default="table")
    p.add_argument("--method", choices=["asymptotic", "permutation"], default="asymptotic")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_meta_eval)

    p = sub.add_parser("export-human-eval", help="blinded initial-vs-refined comparison sheet")
    p.add_argument("--traces", required=True)
    p.add_argument("--docs", required=True)
    p.add_argument("--out", help="sheet CSV (default stdout)")
    p.add_argument("--key-out", required=True, help="CSV revealing which side is which")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_human_eval)
    return parser


def dispatch(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    if getattr(args, "modes", None):
        bad = [m for m in args.modes if m not in MODES]
        if bad:
            print(f"resum: error: unknown mode(s) {bad}", file=sys.stderr)
            return 2
    try:
        return args.func(args)
    except ConfigurationError as exc:
        print(f"resum: configuration error: {exc}", file=sys.stderr)
        return 1
    except ResumError as exc:
        print(f"resum: error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"resum: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(dispatch())
