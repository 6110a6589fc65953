"""Evaluate -> feedback -> refine loop with best-summary fallback.

The loop evaluates the current summary, stops once every dimension reaches
``tau``, and otherwise refines using feedback on the deficient dimensions.
After ``t_max`` refinements the last summary is evaluated too, and the
summary with the highest minimum dimension score is returned (earliest wins
ties).
"""

from __future__ import annotations

import json
import logging
import os
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Sequence

from .errors import EmptyResponseError, GenerationFailedError, InvalidInputError, InvalidParameterError, ResumError
from .evaluation import (
    AggregatedEvaluation,
    Ensemble,
    EvaluationResult,
    Score,
    evaluation_from_dict,
    evaluation_to_dict,
    run_evaluator,
)
from .llm_gateway import AgentSpec, ChatRequest, ChatResponse
from .prompt_kit import LOOP_DIMENSIONS, PromptTemplates, render_initial, render_refinement

logger = logging.getLogger(__name__)

THRESHOLD_MET = "threshold_met"
MAX_ITERATIONS = "max_iterations"
ERROR = "error"


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    domain: str | None = None


@dataclass(frozen=True)
class SummaryRecord:
    id: str
    doc_id: str
    text: str
    system: str
    iteration: int = 0


@dataclass(frozen=True)
class FeedbackEntry:
    score: Score
    rationale: str


@dataclass(frozen=True)
class Feedback:
    entries: dict[str, FeedbackEntry]
    iteration: int

    def __post_init__(self):
        if not self.entries:
            raise InvalidInputError("feedback must name at least one deficient dimension")


@dataclass(frozen=True)
class LoopConfig:
    generator: AgentSpec
    evaluator: AgentSpec | Ensemble
    tau: int = 4
    t_max: int = 3
    dimensions: tuple[str, ...] = LOOP_DIMENSIONS
    scale_max: int = 5
    templates: PromptTemplates | None = None

    def __post_init__(self):
        if not 1 <= self.tau <= self.scale_max:
            raise InvalidParameterError(f"tau must be in [1, {self.scale_max}], got {self.tau}")
        if self.t_max < 1:
            raise InvalidParameterError(f"t_max must be >= 1, got {self.t_max}")
        if not self.dimensions:
            raise InvalidParameterError("at least one dimension is required")


@dataclass(frozen=True)
class Exchange:
    """One model call made during a run, kept for the audit log."""

    stage: str
    iteration: int
    agent_id: str
    system: str
    user: str
    response: str


@dataclass(frozen=True)
class IterationRecord:
    summary: SummaryRecord
    evaluation: EvaluationResult | AggregatedEvaluation | None = None
    feedback: Feedback | None = None


@dataclass(frozen=True)
class RefinementTrace:
    document_id: str
    iterations: tuple[IterationRecord, ...]
    final: SummaryRecord | None
    termination: str
    selected_iteration: int | None
    error: str | None = None
    exchanges: tuple[Exchange, ...] = field(default=(), compare=True)

    @property
    def evaluation_count(self) -> int:
        return sum(1 for it in self.iterations if it.evaluation is not None)

    @property
    def refinement_count(self) -> int:
        return sum(1 for it in self.iterations if it.summary.iteration > 0)


def min_score(evaluation, dimensions: Sequence[str] | None = None) -> Score:
    scores = evaluation.scores
    dims = dimensions if dimensions is not None else list(scores)
    return min(scores[d] for d in dims)


def build_feedback(evaluation, tau: int, iteration: int, dimensions: Sequence[str] | None = None) -> Feedback | None:
    """Feedback over the dimensions scoring below ``tau``, or None if there are none.

    Comparison is exact, so an averaged 11/3 counts as deficient against 4
    while 4 itself does not.
    """
    scores = evaluation.scores
    rationales = evaluation.rationales
    dims = dimensions if dimensions is not None else list(scores)
    entries = {d: FeedbackEntry(scores[d], rationales.get(d, "")) for d in dims if scores[d] < tau}
    if not entries:
        return None
    return Feedback(entries, iteration)


def _summary_id(doc_id: str, iteration: int) -> str:
    return f"{doc_id}:{iteration}"


def _generate(gateway, agent: AgentSpec, system: str, user: str) -> str:
    try:
        response = gateway.complete(ChatRequest(agent, system, user))
    except EmptyResponseError as exc:
        raise GenerationFailedError(str(exc)) from exc
    text = response.text.strip()
    if not text:
        raise GenerationFailedError(f"{agent.agent_id} returned an empty summary")
    return text


def generate_initial(
    gateway, document: Document, generator: AgentSpec, templates: PromptTemplates | None = None
) -> SummaryRecord:
    system, user = render_initial(document.text, templates)
    text = _generate(gateway, generator, system, user)
    return SummaryRecord(_summary_id(document.id, 0), document.id, text, generator.agent_id, 0)


def refine(
    gateway,
    document: Document,
    prev_summary: SummaryRecord,
    feedback: Feedback | None,
    generator: AgentSpec,
    templates: PromptTemplates | None = None,
) -> SummaryRecord:
    if feedback is None or not feedback.entries:
        raise InvalidInputError("refine called without feedback")
    system, user = render_refinement(document.text, prev_summary.text, feedback, templates)
    text = _generate(gateway, generator, system, user)
    iteration = prev_summary.iteration + 1
    return SummaryRecord(_summary_id(document.id, iteration), document.id, text, generator.agent_id, iteration)


class _RecordingGateway:
    """Wraps a gateway and logs every request/response pair."""

    def __init__(self, inner):
        self.inner = inner
        self.stage = "generate"
        self.iteration = 0
        self.exchanges: list[Exchange] = []
        self._lock = threading.Lock()

    def complete(self, request: ChatRequest) -> ChatResponse:
        response = self.inner.complete(request)
        with self._lock:
            self.exchanges.append(
                Exchange(
                    self.stage,
                    self.iteration,
                    request.agent.agent_id,
                    request.system_message,
                    request.user_message,
                    response.text,
                )
            )
        return response


def _sorted_exchanges(exchanges: list[Exchange]) -> tuple[Exchange, ...]:
    # Ensemble members run concurrently; fix their order for reproducible traces.
    stage_rank = {"generate": 0, "evaluate": 1, "refine": 2}
    return tuple(
        sorted(
            exchanges,
            key=lambda e: (e.iteration, stage_rank.get(e.stage, 3), e.agent_id, e.user, e.response),
        )
    )


def run_loop(gateway, document: Document, config: LoopConfig) -> RefinementTrace:
    rec = _RecordingGateway(gateway)
    summaries: list[SummaryRecord] = []
    evaluations: list = []
    feedbacks: list[Feedback | None] = []

    def evaluate(summary: SummaryRecord):
        rec.stage, rec.iteration = "evaluate", summary.iteration
        ev = run_evaluator(
            rec, config.evaluator, document.text, summary.text, summary.id,
            templates=config.templates, scale_max=config.scale_max, dimensions=config.dimensions,
        )
        evaluations.append(ev)
        return ev

    def trace(final_index: int | None, termination: str, error: str | None = None) -> RefinementTrace:
        iterations = tuple(
            IterationRecord(
                s,
                evaluations[i] if i < len(evaluations) else None,
                feedbacks[i] if i < len(feedbacks) else None,
            )
            for i, s in enumerate(summaries)
        )
        final = summaries[final_index] if final_index is not None else None
        return RefinementTrace(
            document.id, iterations, final, termination, final_index, error, _sorted_exchanges(rec.exchanges)
        )

    try:
        rec.stage, rec.iteration = "generate", 0
        summaries.append(generate_initial(rec, document, config.generator, config.templates))
        t = 0
        while t < config.t_max:
            ev = evaluate(summaries[t])
            if min_score(ev, config.dimensions) >= config.tau:
                return trace(t, THRESHOLD_MET)
            fb = build_feedback(ev, config.tau, t, config.dimensions)
            feedbacks.append(fb)
            rec.stage, rec.iteration = "refine", t + 1
            summaries.append(refine(rec, document, summaries[t], fb, config.generator, config.templates))
            t += 1
        ev = evaluate(summaries[t])
        if min_score(ev, config.dimensions) >= config.tau:
            return trace(t, THRESHOLD_MET)
        minima = [min_score(e, config.dimensions) for e in evaluations]
        best = max(range(len(minima)), key=lambda i: (minima[i], -i))
        return trace(best, MAX_ITERATIONS)
    except ResumError as exc:
        logger.warning("document %s: loop aborted: %s", document.id, exc)
        last = len(summaries) - 1 if summaries else None
        return trace(last, ERROR, f"{type(exc).__name__}: {exc}")


def run_batch(gateway, documents: Sequence[Document], config: LoopConfig, parallelism: int = 1) -> list[RefinementTrace]:
    """run_loop over many documents, at most ``parallelism`` at a time, input order kept."""
    if parallelism < 1:
        raise InvalidParameterError(f"parallelism must be >= 1, got {parallelism}")

    def one(doc: Document) -> RefinementTrace:
        try:
            return run_loop(gateway, doc, config)
        except Exception as exc:  # keep the batch alive whatever happens to one document
            logger.exception("document %s crashed", doc.id)
            return RefinementTrace(doc.id, (), None, ERROR, None, f"{type(exc).__name__}: {exc}")

    with ThreadPoolExecutor(max_workers=parallelism) as pool:
        return list(pool.map(one, documents))


def check_trace(trace: RefinementTrace, tau: int, t_max: int, dimensions: Sequence[str] | None = None) -> list[str]:
    """List every violated trace invariant (empty when the trace is sound)."""
    problems = []
    if trace.evaluation_count > t_max + 1:
        problems.append(f"{trace.evaluation_count} evaluations exceed t_max + 1")
    if trace.refinement_count > t_max:
        problems.append(f"{trace.refinement_count} refinements exceed t_max")
    indices = [it.summary.iteration for it in trace.iterations]
    if indices != list(range(len(indices))):
        problems.append(f"iteration indices not contiguous: {indices}")
    if trace.termination == ERROR:
        return problems
    if trace.final is None or trace.selected_iteration is None:
        return problems + ["finished trace has no final summary"]
    if trace.iterations[trace.selected_iteration].summary != trace.final:
        problems.append("final summary does not match the selected iteration")
    minima = [min_score(it.evaluation, dimensions) for it in trace.iterations if it.evaluation is not None]
    selected_min = minima[trace.selected_iteration] if trace.selected_iteration < len(minima) else None
    if selected_min is None:
        return problems + ["selected iteration was never evaluated"]
    if (trace.termination == THRESHOLD_MET) != (selected_min >= tau):
        problems.append(f"termination {trace.termination} inconsistent with final min score {selected_min}")
    if trace.termination == MAX_ITERATIONS:
        if any(m > selected_min for m in minima):
            problems.append("a later or earlier iterate has a strictly higher minimum score")
        if minima.index(selected_min) != trace.selected_iteration:
            problems.append("tie not broken by earliest iteration")
    for it in trace.iterations:
        if it.feedback is not None and any(e.score >= tau for e in it.feedback.entries.values()):
            problems.append(f"feedback at iteration {it.summary.iteration} names a passing dimension")
    return problems


# --- serialization --------------------------------------------------------------


def _score_json(score: Score):
    if isinstance(score, Fraction) and score.denominator != 1:
        return f"{score.numerator}/{score.denominator}"
    return int(score)


def trace_to_dict(trace: RefinementTrace) -> dict:
    def summary(s: SummaryRecord) -> dict:
        return {"id": s.id, "doc_id": s.doc_id, "system": s.system, "iteration": s.iteration, "text": s.text}

    return {
        "document_id": trace.document_id,
        "termination": trace.termination,
        "selected_iteration": trace.selected_iteration,
        "error": trace.error,
        "final": summary(trace.final) if trace.final else None,
        "iterations": [
            {
                "summary": summary(it.summary),
                "evaluation": evaluation_to_dict(it.evaluation) if it.evaluation is not None else None,
                "feedback": (
                    {
                        "iteration": it.feedback.iteration,
                        "entries": {
                            d: {"score": _score_json(e.score), "rationale": e.rationale}
                            for d, e in it.feedback.entries.items()
                        },
                    }
                    if it.feedback is not None
                    else None
                ),
            }
            for it in trace.iterations
        ],
        "exchanges": [
            {
                "stage": e.stage,
                "iteration": e.iteration,
                "agent_id": e.agent_id,
                "system": e.system,
                "user": e.user,
                "response": e.response,
            }
            for e in trace.exchanges
        ],
    }


def trace_from_dict(data: dict) -> RefinementTrace:
    def summary(d: dict) -> SummaryRecord:
        return SummaryRecord(d["id"], d["doc_id"], d["text"], d["system"], d["iteration"])

    iterations = []
    for it in data["iterations"]:
        fb = None
        if it.get("feedback"):
            fb = Feedback(
                {
                    d: FeedbackEntry(Fraction(e["score"]) if isinstance(e["score"], str) else e["score"], e["rationale"])
                    for d, e in it["feedback"]["entries"].items()
                },
                it["feedback"]["iteration"],
            )
        ev = evaluation_from_dict(it["evaluation"]) if it.get("evaluation") else None
        iterations.append(IterationRecord(summary(it["summary"]), ev, fb))
    return RefinementTrace(
        document_id=data["document_id"],
        iterations=tuple(iterations),
        final=summary(data["final"]) if data.get("final") else None,
        termination=data["termination"],
        selected_iteration=data.get("selected_iteration"),
        error=data.get("error"),
        exchanges=tuple(Exchange(**e) for e in data.get("exchanges", ())),
    )


def write_traces(traces: Iterable[RefinementTrace], path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for trace in traces:
            fh.write(json.dumps(trace_to_dict(trace), ensure_ascii=False) + "\n")


def read_traces(path: str | os.PathLike) -> list[RefinementTrace]:
    with open(path, encoding="utf-8") as fh:
        return [trace_from_dict(json.loads(line)) for line in fh if line.strip()]
