"""Single-agent scoring and multi-agent aggregation.

Averaging keeps exact ``Fraction`` scores; majority voting and the leader
strategy produce integers.
"""

from __future__ import annotations

import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence, Union

from .errors import (
    EvaluationFailedError,
    InvalidInputError,
    InvalidParameterError,
    PartialFailureError,
    ResponseParseError,
    ResumError,
)
from .llm_gateway import AgentSpec, ChatRequest
from .prompt_kit import (
    CORRECTIVE_INSTRUCTION,
    LOOP_DIMENSIONS,
    DimensionEvaluation,
    PromptTemplates,
    parse_evaluation_response,
    render_evaluation,
    render_leader,
)

logger = logging.getLogger(__name__)

STRATEGIES = ("averaging", "majority_voting", "leader_based")

Score = Union[int, Fraction]


@dataclass(frozen=True)
class EvaluationResult:
    summary_id: str
    agent_id: str
    per_dimension: dict[str, DimensionEvaluation]
    raw_response: str

    @property
    def scores(self) -> dict[str, Score]:
        return {d: e.score for d, e in self.per_dimension.items()}

    @property
    def rationales(self) -> dict[str, str]:
        return {d: e.rationale for d, e in self.per_dimension.items()}


@dataclass(frozen=True)
class AggregationStrategy:
    kind: str
    leader: AgentSpec | None = None

    def __post_init__(self):
        if self.kind not in STRATEGIES:
            raise InvalidParameterError(f"unknown aggregation strategy {self.kind!r}")
        if (self.kind == "leader_based") != (self.leader is not None):
            raise InvalidParameterError("a leader agent is required for leader_based and only for it")


@dataclass(frozen=True)
class AggregatedEvaluation:
    summary_id: str
    strategy: AggregationStrategy
    per_dimension: dict[str, Score]
    contributing: tuple[EvaluationResult, ...]
    rationales: dict[str, str] = field(default_factory=dict)
    leader_rationale: str | None = None
    leader_raw_response: str | None = None

    @property
    def scores(self) -> dict[str, Score]:
        return dict(self.per_dimension)


@dataclass(frozen=True)
class Ensemble:
    """Several evaluator agents combined by one aggregation strategy."""

    agents: tuple[AgentSpec, ...]
    strategy: AggregationStrategy

    def __post_init__(self):
        if not self.agents:
            raise InvalidParameterError("an ensemble needs at least one agent")
        if self.strategy.kind == "leader_based" and len(self.agents) < 2:
            raise InvalidParameterError("leader_based aggregation needs at least 2 agents")
        ids = [a.agent_id for a in self.agents]
        if len(set(ids)) != len(ids):
            raise InvalidParameterError(f"duplicate agent ids in ensemble: {ids}")


def _ask_for_scores(
    gateway,
    agent: AgentSpec,
    system: str,
    user: str,
    scale_max: int,
    dimensions: Sequence[str],
):
    """Call the agent and parse; one corrective retry on unparseable output."""
    response = gateway.complete(ChatRequest(agent, system, user))
    try:
        return parse_evaluation_response(response.text, scale_max, dimensions), response.text
    except ResponseParseError as first:
        logger.info("%s: unparseable evaluation (%s); asking again", agent.agent_id, first)
    retry = gateway.complete(ChatRequest(agent, system, f"{user}\n\n{CORRECTIVE_INSTRUCTION}"))
    try:
        return parse_evaluation_response(retry.text, scale_max, dimensions), retry.text
    except ResponseParseError as second:
        raise EvaluationFailedError(
            f"{agent.agent_id}: evaluation unparseable after retry: {second}", retry.text
        ) from second


def evaluate_single(
    gateway,
    agent: AgentSpec,
    document: str,
    summary: str,
    summary_id: str = "",
    *,
    templates: PromptTemplates | None = None,
    scale_max: int = 5,
    dimensions: Sequence[str] = LOOP_DIMENSIONS,
) -> EvaluationResult:
    system, user = render_evaluation(document, summary, templates)
    per_dim, raw = _ask_for_scores(gateway, agent, system, user, scale_max, dimensions)
    return EvaluationResult(summary_id, agent.agent_id, per_dim, raw)


def _check_same_dimensions(evals: Sequence[EvaluationResult]) -> list[str]:
    if not evals:
        raise InvalidInputError("aggregation needs at least one evaluation")
    dims = list(evals[0].per_dimension)
    for ev in evals[1:]:
        if set(ev.per_dimension) != set(dims):
            raise InvalidInputError(
                f"dimension sets differ: {sorted(dims)} vs {sorted(ev.per_dimension)} ({ev.agent_id})"
            )
    return dims


def aggregate_average(evals: Sequence[EvaluationResult]) -> dict[str, Fraction]:
    dims = _check_same_dimensions(evals)
    return {d: Fraction(sum(ev.per_dimension[d].score for ev in evals), len(evals)) for d in dims}


def majority_vote(scores: Sequence[int]) -> int:
    """Unique mode if there is one, else the ceil(k/2)-th smallest score.

    For three agents that disagree completely this is the median.
    """
    counts = Counter(scores).most_common()
    top = counts[0][1]
    if sum(1 for _, c in counts if c == top) == 1:
        return counts[0][0]
    ordered = sorted(scores)
    return ordered[math.ceil(len(ordered) / 2) - 1]


def aggregate_majority(evals: Sequence[EvaluationResult]) -> dict[str, int]:
    dims = _check_same_dimensions(evals)
    return {d: majority_vote([ev.per_dimension[d].score for ev in evals]) for d in dims}


def _pooled_rationales(evals: Sequence[EvaluationResult]) -> dict[str, str]:
    dims = list(evals[0].per_dimension)
    if len(evals) == 1:
        return {d: evals[0].per_dimension[d].rationale for d in dims}
    return {
        d: " ".join(
            f"(Evaluator {i}, score {ev.per_dimension[d].score}) {ev.per_dimension[d].rationale}"
            for i, ev in enumerate(evals, 1)
        )
        for d in dims
    }


def aggregate_leader(
    gateway,
    evals: Sequence[EvaluationResult],
    leader: AgentSpec,
    document: str,
    summary: str,
    *,
    templates: PromptTemplates | None = None,
    scale_max: int = 5,
) -> AggregatedEvaluation:
    dims = _check_same_dimensions(evals)
    system, user = render_leader(evals, document, summary, templates)
    per_dim, raw = _ask_for_scores(gateway, leader, system, user, scale_max, dims)
    rationales = {d: per_dim[d].rationale for d in dims}
    return AggregatedEvaluation(
        summary_id=evals[0].summary_id,
        strategy=AggregationStrategy("leader_based", leader),
        per_dimension={d: per_dim[d].score for d in dims},
        contributing=tuple(evals),
        rationales=rationales,
        leader_rationale="\n".join(f"{d}: {rationales[d]}" for d in dims),
        leader_raw_response=raw,
    )


def evaluate_multi(
    gateway,
    agents: Sequence[AgentSpec],
    strategy: AggregationStrategy,
    document: str,
    summary: str,
    summary_id: str = "",
    *,
    templates: PromptTemplates | None = None,
    scale_max: int = 5,
    dimensions: Sequence[str] = LOOP_DIMENSIONS,
    max_workers: int | None = None,
) -> AggregatedEvaluation:
    """Run every agent on the summary, then aggregate.

    Any failing agent aborts the aggregation with PartialFailureError; the
    ensemble is never silently shrunk.
    """
    ensemble = Ensemble(tuple(agents), strategy)

    def run(agent: AgentSpec):
        try:
            return evaluate_single(
                gateway, agent, document, summary, summary_id,
                templates=templates, scale_max=scale_max, dimensions=dimensions,
            )
        except ResumError as exc:
            return exc

    workers = max_workers or len(ensemble.agents)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        outcomes = list(pool.map(run, ensemble.agents))
    failures = {a.agent_id: o for a, o in zip(ensemble.agents, outcomes) if isinstance(o, Exception)}
    if failures:
        raise PartialFailureError(failures)
    evals: list[EvaluationResult] = outcomes  # type: ignore[assignment]

    if strategy.kind == "leader_based":
        return aggregate_leader(
            gateway, evals, strategy.leader, document, summary, templates=templates, scale_max=scale_max
        )
    scores = aggregate_average(evals) if strategy.kind == "averaging" else aggregate_majority(evals)
    return AggregatedEvaluation(summary_id, strategy, scores, tuple(evals), _pooled_rationales(evals))


def run_evaluator(
    gateway,
    evaluator: AgentSpec | Ensemble,
    document: str,
    summary: str,
    summary_id: str = "",
    *,
    templates: PromptTemplates | None = None,
    scale_max: int = 5,
    dimensions: Sequence[str] = LOOP_DIMENSIONS,
) -> EvaluationResult | AggregatedEvaluation:
    """Dispatch to evaluate_single or evaluate_multi depending on the evaluator."""
    if isinstance(evaluator, Ensemble):
        return evaluate_multi(
            gateway, evaluator.agents, evaluator.strategy, document, summary, summary_id,
            templates=templates, scale_max=scale_max, dimensions=dimensions,
        )
    return evaluate_single(
        gateway, evaluator, document, summary, summary_id,
        templates=templates, scale_max=scale_max, dimensions=dimensions,
    )


def _score_json(score: Score):
    if isinstance(score, Fraction):
        return score.numerator if score.denominator == 1 else f"{score.numerator}/{score.denominator}"
    return score


def _score_from_json(value) -> Score:
    if isinstance(value, str):
        return Fraction(value)
    return int(value)


def evaluation_to_dict(ev: EvaluationResult | AggregatedEvaluation) -> dict:
    """JSON-ready form. Non-integer averaged scores are written as "n/d" strings."""
    if isinstance(ev, EvaluationResult):
        return {
            "kind": "single",
            "summary_id": ev.summary_id,
            "agent_id": ev.agent_id,
            "scores": {d: e.score for d, e in ev.per_dimension.items()},
            "rationales": ev.rationales,
            "raw_response": ev.raw_response,
        }
    return {
        "kind": "aggregated",
        "summary_id": ev.summary_id,
        "strategy": ev.strategy.kind,
        "leader_id": ev.strategy.leader.agent_id if ev.strategy.leader else None,
        "scores": {d: _score_json(s) for d, s in ev.per_dimension.items()},
        "rationales": ev.rationales,
        "leader_rationale": ev.leader_rationale,
        "leader_raw_response": ev.leader_raw_response,
        "contributing": [evaluation_to_dict(c) for c in ev.contributing],
    }


def evaluation_from_dict(data: dict, agents: dict[str, AgentSpec] | None = None) -> EvaluationResult | AggregatedEvaluation:
    if data["kind"] == "single":
        per_dim = {
            d: DimensionEvaluation(d, int(s), data["rationales"].get(d, "")) for d, s in data["scores"].items()
        }
        return EvaluationResult(data["summary_id"], data["agent_id"], per_dim, data["raw_response"])
    leader = None
    if data.get("leader_id"):
        leader = (agents or {}).get(data["leader_id"]) or AgentSpec(data["leader_id"], "", "")
    return AggregatedEvaluation(
        summary_id=data["summary_id"],
        strategy=AggregationStrategy(data["strategy"], leader),
        per_dimension={d: _score_from_json(s) for d, s in data["scores"].items()},
        contributing=tuple(evaluation_from_dict(c, agents) for c in data["contributing"]),
        rationales=dict(data.get("rationales") or {}),
        leader_rationale=data.get("leader_rationale"),
        leader_raw_response=data.get("leader_raw_response"),
    )
