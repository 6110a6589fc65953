"""Correlation of metric scores with human judgments.

Provides dataset loading, human score aggregation, Kendall's tau-b with a
tie-corrected normal-approximation p-value, summary-level (micro) and
system-level (macro) correlation, Krippendorff's alpha and report rendering.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
import math
import os
import random
from collections import defaultdict
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import (
    IntegrityError,
    InvalidInputError,
    InvalidParameterError,
    MissingScoresError,
    ParseError,
    UndefinedCorrelationError,
)
from .loop import Document, SummaryRecord
from .prompt_kit import DIMENSIONS
from .text_metrics import MetricScore

MODES = ("micro", "macro")


@dataclass(frozen=True)
class HumanAnnotation:
    summary_id: str
    annotator_id: str
    dimension: str
    score: Fraction
    scale_min: Fraction
    scale_max: Fraction


@dataclass(frozen=True)
class EvalDataset:
    name: str
    documents: tuple[Document, ...]
    summaries: tuple[SummaryRecord, ...]
    annotations: tuple[HumanAnnotation, ...]
    dimensions: tuple[str, ...]

    def human_scores(self, dimension: str) -> dict[str, Fraction]:
        """Mean human score per summary for one dimension."""
        grouped: dict[str, list[HumanAnnotation]] = defaultdict(list)
        for ann in self.annotations:
            if ann.dimension == dimension:
                grouped[ann.summary_id].append(ann)
        return {sid: aggregate_human(anns) for sid, anns in grouped.items()}


@dataclass(frozen=True)
class CorrelationResult:
    dataset: str
    metric_id: str
    dimension: str
    mode: str
    tau: float
    p_value: float
    n: int


# --- loading ---------------------------------------------------------------------


def _read_jsonl(path: str | os.PathLike) -> Iterable[tuple[int, dict]]:
    path_s = str(path)
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno, path_s) from None
            if not isinstance(rec, dict):
                raise ParseError("each line must be a JSON object", lineno, path_s)
            yield lineno, rec


def _field(rec: dict, name: str, kind, lineno: int, path, optional: bool = False):
    if name not in rec or rec[name] is None:
        if optional:
            return None
        raise ParseError(f"missing field {name!r}", lineno, str(path))
    value = rec[name]
    if kind is str and not isinstance(value, str):
        raise ParseError(f"field {name!r} must be a string", lineno, str(path))
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise ParseError(f"field {name!r} must be an integer", lineno, str(path))
    if kind is Fraction:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ParseError(f"field {name!r} must be a number", lineno, str(path))
        return Fraction(str(value)) if isinstance(value, float) else Fraction(value)
    return value


def load_documents(path) -> list[Document]:
    docs = []
    for lineno, rec in _read_jsonl(path):
        docs.append(
            Document(
                _field(rec, "id", str, lineno, path),
                _field(rec, "text", str, lineno, path),
                _field(rec, "domain", str, lineno, path, optional=True),
            )
        )
    return docs


def load_summaries(path) -> list[SummaryRecord]:
    out = []
    for lineno, rec in _read_jsonl(path):
        iteration = _field(rec, "iteration", int, lineno, path, optional=True)
        out.append(
            SummaryRecord(
                _field(rec, "id", str, lineno, path),
                _field(rec, "doc_id", str, lineno, path),
                _field(rec, "text", str, lineno, path),
                _field(rec, "system", str, lineno, path),
                iteration or 0,
            )
        )
    return out


def load_annotations(path) -> list[HumanAnnotation]:
    out = []
    for lineno, rec in _read_jsonl(path):
        dim = _field(rec, "dimension", str, lineno, path)
        if dim not in DIMENSIONS:
            raise ParseError(f"unknown dimension {dim!r}", lineno, str(path))
        ann = HumanAnnotation(
            _field(rec, "summary_id", str, lineno, path),
            str(_field(rec, "annotator_id", None, lineno, path)),
            dim,
            _field(rec, "score", Fraction, lineno, path),
            _field(rec, "scale_min", Fraction, lineno, path),
            _field(rec, "scale_max", Fraction, lineno, path),
        )
        if not ann.scale_min <= ann.score <= ann.scale_max:
            raise ParseError(
                f"score {float(ann.score)} outside [{float(ann.scale_min)}, {float(ann.scale_max)}]", lineno, str(path)
            )
        out.append(ann)
    return out


def _unique(ids: Iterable[str], what: str) -> set[str]:
    seen: set[str] = set()
    for i in ids:
        if i in seen:
            raise IntegrityError(f"duplicate {what} id {i!r}")
        seen.add(i)
    return seen


def load_dataset(documents_path, summaries_path, annotations_path, name: str | None = None) -> EvalDataset:
    """Load and cross-check the three JSON-lines files of a meta-evaluation dataset."""
    documents = load_documents(documents_path)
    summaries = load_summaries(summaries_path)
    annotations = load_annotations(annotations_path)
    doc_ids = _unique((d.id for d in documents), "document")
    summary_ids = _unique((s.id for s in summaries), "summary")
    for s in summaries:
        if s.doc_id not in doc_ids:
            raise IntegrityError(f"summary {s.id!r} references unknown document {s.doc_id!r}")
    for a in annotations:
        if a.summary_id not in summary_ids:
            raise IntegrityError(f"annotation references unknown summary {a.summary_id!r}")
    dims = tuple(dict.fromkeys(a.dimension for a in annotations))
    return EvalDataset(
        name or Path(annotations_path).stem,
        tuple(documents),
        tuple(summaries),
        tuple(annotations),
        dims,
    )


def aggregate_human(annotations: Sequence[HumanAnnotation] | Sequence[float]) -> Fraction:
    """Arithmetic mean of the annotators' scores, kept exact."""
    if not annotations:
        raise InvalidInputError("need at least one annotation")
    values = [a.score if isinstance(a, HumanAnnotation) else a for a in annotations]
    values = [Fraction(str(v)) if isinstance(v, float) else Fraction(v) for v in values]
    return sum(values, Fraction(0)) / len(values)


# --- Kendall tau ---------------------------------------------------------------------


def _tie_sums(values: Sequence) -> tuple[int, int, int]:
    """Sum over tie groups of t(t-1)/2, t(t-1)(2t+5) and t(t-1)(t-2)."""
    counts = defaultdict(int)
    for v in values:
        counts[v] += 1
    pairs = v_sum = triple = 0
    for t in counts.values():
        pairs += t * (t - 1) // 2
        v_sum += t * (t - 1) * (2 * t + 5)
        triple += t * (t - 1) * (t - 2)
    return pairs, v_sum, triple


def _count_inversions(seq: list) -> int:
    """Strict inversions via merge sort (equal elements are not inversions)."""
    if len(seq) < 2:
        return 0
    mid = len(seq) // 2
    left, right = seq[:mid], seq[mid:]
    inv = _count_inversions(left) + _count_inversions(right)
    i = j = k = 0
    while i < len(left) and j < len(right):
        if right[j] < left[i]:
            seq[k] = right[j]
            inv += len(left) - i
            j += 1
        else:
            seq[k] = left[i]
            i += 1
        k += 1
    seq[k:] = left[i:] + right[j:]
    return inv


def _tau_statistic(x: Sequence, y: Sequence) -> tuple[int, int, int, int]:
    """Return (S, n0, n1, n2) with S = concordant - discordant (Knight's method)."""
    n = len(x)
    n0 = n * (n - 1) // 2
    order = sorted(range(n), key=lambda i: (x[i], y[i]))
    n1 = _tie_sums(x)[0]
    n2 = _tie_sums(y)[0]
    n3 = _tie_sums(list(zip(x, y)))[0]
    discordant = _count_inversions([y[i] for i in order])
    s = n0 - n1 - n2 + n3 - 2 * discordant
    return s, n0, n1, n2


def _normal_p_value(x: Sequence, y: Sequence, s: int) -> float:
    n = len(x)
    _, vx, tx3 = _tie_sums(x)
    _, vy, ty3 = _tie_sums(y)
    tx2 = 2 * _tie_sums(x)[0]
    ty2 = 2 * _tie_sums(y)[0]
    var = (n * (n - 1) * (2 * n + 5) - vx - vy) / 18
    var += tx2 * ty2 / (2 * n * (n - 1))
    if n > 2:
        var += tx3 * ty3 / (9 * n * (n - 1) * (n - 2))
    if var <= 0:
        return 1.0
    z = s / math.sqrt(var)
    return min(1.0, math.erfc(abs(z) / math.sqrt(2)))


def _permutation_p_value(x, y, tau_obs: float, n_resamples: int, seed: int) -> float:
    def tau_of(perm) -> float:
        s, n0, n1, n2 = _tau_statistic(x, perm)
        return s / math.sqrt((n0 - n1) * (n0 - n2))

    eps = 1e-12
    if len(y) <= 8:
        perms = list(itertools.permutations(y))
        hits = sum(1 for p in perms if abs(tau_of(p)) >= abs(tau_obs) - eps)
        return hits / len(perms)
    rng = random.Random(seed)
    ys = list(y)
    hits = 0
    for _ in range(n_resamples):
        rng.shuffle(ys)
        if abs(tau_of(ys)) >= abs(tau_obs) - eps:
            hits += 1
    return (hits + 1) / (n_resamples + 1)


def kendall_tau(
    x: Sequence[float],
    y: Sequence[float],
    method: str = "asymptotic",
    n_resamples: int = 9999,
    seed: int = 0,
) -> tuple[float, float]:
    """Kendall's tau-b and its two-sided p-value.

    ``method="asymptotic"`` uses the normal approximation with tie-adjusted
    variance. ``method="permutation"`` enumerates all orderings for n <= 8 and
    otherwise draws ``n_resamples`` seeded shuffles; use it for small n.
    """
    if len(x) != len(y):
        raise InvalidInputError(f"length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        raise UndefinedCorrelationError("need at least 2 points")
    if method not in ("asymptotic", "permutation"):
        raise InvalidParameterError(f"unknown p-value method {method!r}")
    s, n0, n1, n2 = _tau_statistic(x, y)
    if n1 == n0 or n2 == n0:
        raise UndefinedCorrelationError("tau is undefined when one variable is constant")
    tau = s / math.sqrt((n0 - n1) * (n0 - n2))
    tau = max(-1.0, min(1.0, tau))
    if method == "permutation":
        return tau, _permutation_p_value(x, y, tau, n_resamples, seed)
    return tau, _normal_p_value(x, y, s)


# --- correlation ----------------------------------------------------------------------


def _mean(values: Sequence) -> Fraction | float:
    return sum(values) / len(values)


def correlate(
    dataset: EvalDataset,
    metric_scores: Sequence[MetricScore] | Mapping[str, float],
    dimension: str,
    mode: str = "micro",
    metric_id: str | None = None,
    method: str = "asymptotic",
    seed: int = 0,
) -> CorrelationResult:
    """Kendall tau between one metric and aggregated human scores.

    micro: one point per annotated summary. macro: metric and human scores
    are first averaged per system, one point per system.
    """
    if mode not in MODES:
        raise InvalidParameterError(f"mode must be one of {MODES}, got {mode!r}")
    if isinstance(metric_scores, Mapping):
        values = {sid: float(v) for sid, v in metric_scores.items()}
        metric_id = metric_id or "metric"
    else:
        ids = {s.metric_id for s in metric_scores}
        if metric_id is None:
            if len(ids) != 1:
                raise InvalidInputError(f"metric_id required when scores cover several metrics: {sorted(ids)}")
            metric_id = next(iter(ids))
        values = {s.summary_id: s.value for s in metric_scores if s.metric_id == metric_id}

    human = dataset.human_scores(dimension)
    if len(human) < 2:
        raise UndefinedCorrelationError(f"fewer than 2 summaries annotated for {dimension!r}")
    missing = sorted(sid for sid in human if sid not in values)
    if missing:
        raise MissingScoresError(missing)

    summary_ids = sorted(human)
    if mode == "micro":
        xs = [values[sid] for sid in summary_ids]
        ys = [human[sid] for sid in summary_ids]
    else:
        system_of = {s.id: s.system for s in dataset.summaries}
        by_system: dict[str, list[str]] = defaultdict(list)
        for sid in summary_ids:
            by_system[system_of[sid]].append(sid)
        systems = sorted(by_system)
        if len(systems) < 2:
            raise UndefinedCorrelationError("macro correlation needs at least 2 systems")
        xs = [_mean([values[sid] for sid in by_system[sys]]) for sys in systems]
        ys = [_mean([human[sid] for sid in by_system[sys]]) for sys in systems]
    tau, p = kendall_tau(xs, ys, method=method, seed=seed)
    return CorrelationResult(dataset.name, metric_id, dimension, mode, tau, p, len(xs))


# --- Krippendorff's alpha ---------------------------------------------------------------


def _units(matrix) -> list[list[float]]:
    """Pairable values per item from an annotator x item matrix (None = missing),
    or from a mapping ``{(annotator, item): value}``."""
    if isinstance(matrix, Mapping):
        by_item: dict = defaultdict(list)
        for (_, item), value in matrix.items():
            if value is not None:
                by_item[item].append(value)
        columns = list(by_item.values())
    else:
        rows = [list(r) for r in matrix]
        if len(rows) < 2:
            raise InvalidInputError("Krippendorff's alpha needs at least 2 annotators")
        width = max(len(r) for r in rows)
        columns = [[r[i] for r in rows if i < len(r) and r[i] is not None] for i in range(width)]
    return [c for c in columns if len(c) >= 2]


def krippendorff_alpha(matrix, level: str = "interval") -> float:
    """Krippendorff's alpha via the coincidence matrix.

    ``level`` is "interval" (squared difference), "ordinal" or "nominal".
    Returns 1.0 when there is no expected disagreement.
    """
    if level not in ("interval", "ordinal", "nominal"):
        raise InvalidParameterError(f"unknown level {level!r}")
    units = _units(matrix)
    if not units:
        raise InvalidInputError("no item has at least 2 annotations")
    values = sorted({v for u in units for v in u})
    index = {v: i for i, v in enumerate(values)}
    k = len(values)
    coincidence = [[0.0] * k for _ in range(k)]
    for unit in units:
        m = len(unit)
        for a, b in itertools.permutations(range(m), 2):
            coincidence[index[unit[a]]][index[unit[b]]] += 1.0 / (m - 1)
    marginals = [sum(row) for row in coincidence]
    n = sum(marginals)

    if level == "nominal":
        def delta(i: int, j: int) -> float:
            return 0.0 if i == j else 1.0
    elif level == "interval":
        def delta(i: int, j: int) -> float:
            return float(values[i] - values[j]) ** 2
    else:
        cumulative = [0.0]
        for m_g in marginals:
            cumulative.append(cumulative[-1] + m_g)

        def delta(i: int, j: int) -> float:
            lo, hi = min(i, j), max(i, j)
            return (cumulative[hi + 1] - cumulative[lo] - (marginals[i] + marginals[j]) / 2) ** 2

    observed = sum(coincidence[i][j] * delta(i, j) for i in range(k) for j in range(k))
    expected = sum(marginals[i] * marginals[j] * delta(i, j) for i in range(k) for j in range(k))
    if expected == 0:
        return 1.0
    return 1.0 - (n - 1) * observed / expected


def annotation_matrix(annotations: Iterable[HumanAnnotation], dimension: str | None = None) -> dict:
    """``{(annotator, (summary, dimension)): score}`` for krippendorff_alpha."""
    return {
        (a.annotator_id, (a.summary_id, a.dimension)): float(a.score)
        for a in annotations
        if dimension is None or a.dimension == dimension
    }


# --- reports -----------------------------------------------------------------------


def significance_stars(p: float) -> str:
    if p < 0.001:
        return "***"
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def format_cell(tau: float, p: float) -> str:
    return f"{tau:.2f}{significance_stars(p)}"


_DELIMITED_COLUMNS = ("dataset", "metric", "dimension", "mode", "tau", "p", "n")
_TABLE_COLUMNS = ("dataset", "dimension", "metric", "mode", "tau", "n")


def _grouped(results: Sequence[CorrelationResult]) -> list[CorrelationResult]:
    first_seen: dict[tuple[str, str], int] = {}
    for r in results:
        first_seen.setdefault((r.dataset, r.dimension), len(first_seen))
    return sorted(results, key=lambda r: first_seen[(r.dataset, r.dimension)])


def render_report(results: Sequence[CorrelationResult], fmt: str = "table") -> str:
    """Aligned text table (tau to 2 decimals with stars) or full-precision CSV."""
    rows = _grouped(results)
    if fmt == "delimited":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(_DELIMITED_COLUMNS)
        for r in rows:
            writer.writerow([r.dataset, r.metric_id, r.dimension, r.mode, repr(r.tau), repr(r.p_value), r.n])
        return buf.getvalue()
    if fmt != "table":
        raise InvalidParameterError(f"unknown report format {fmt!r}")
    table = [list(_TABLE_COLUMNS)] + [
        [r.dataset, r.dimension, r.metric_id, r.mode, format_cell(r.tau, r.p_value), str(r.n)] for r in rows
    ]
    widths = [max(len(row[c]) for row in table) for c in range(len(_TABLE_COLUMNS))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip() for row in table]
    return "\n".join(lines) + "\n"
