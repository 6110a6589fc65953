"""Self-reflective LLM summarization with multi-agent evaluation and metric meta-evaluation."""

__version__ = "0.1.0"

from .errors import ResumError
from .evaluation import (
    AggregatedEvaluation,
    AggregationStrategy,
    Ensemble,
    EvaluationResult,
    evaluate_multi,
    evaluate_single,
)
from .llm_gateway import AgentSpec, ChatRequest, ChatResponse, Gateway
from .loop import Document, LoopConfig, RefinementTrace, SummaryRecord, run_batch, run_loop
from .meta_eval import correlate, kendall_tau, krippendorff_alpha, load_dataset
from .text_metrics import score_summary

__all__ = [
    "AgentSpec",
    "AggregatedEvaluation",
    "AggregationStrategy",
    "ChatRequest",
    "ChatResponse",
    "Document",
    "Ensemble",
    "EvaluationResult",
    "Gateway",
    "LoopConfig",
    "RefinementTrace",
    "ResumError",
    "SummaryRecord",
    "correlate",
    "evaluate_multi",
    "evaluate_single",
    "kendall_tau",
    "krippendorff_alpha",
    "load_dataset",
    "run_batch",
    "run_loop",
    "score_summary",
]
