"""Lexical overlap and readability metrics.

Every overlap metric takes the generated summary as the candidate. In the
default reference-free setup the "reference" is the source document itself;
callers may pass a gold summary instead.
"""

from __future__ import annotations

import csv
import functools
import io
import json
import math
import os
import re
import threading
import unicodedata
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

from nltk.stem.porter import PorterStemmer

from .errors import (
    ConfigurationError,
    ConflictError,
    InvalidInputError,
    InvalidParameterError,
    ParseError,
)

HIGHER_BETTER = "higher-better"
LOWER_BETTER = "lower-better"

DALE_CHALL_ENV = "RESUM_DALE_CHALL_PATH"

BLEU_SMOOTHING = 0.1


@dataclass(frozen=True)
class TokenSequence:
    tokens: tuple[str, ...]
    source_char_len: int

    def __len__(self) -> int:
        return len(self.tokens)

    def __iter__(self):
        return iter(self.tokens)


@dataclass(frozen=True)
class OverlapScore:
    precision: float
    recall: float

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


@dataclass(frozen=True)
class MetricScore:
    metric_id: str
    summary_id: str
    value: float
    direction: str = HIGHER_BETTER


def _is_punct(ch: str) -> bool:
    return unicodedata.category(ch).startswith("P")


def _strip_punct(word: str) -> str:
    start, end = 0, len(word)
    while start < end and _is_punct(word[start]):
        start += 1
    while end > start and _is_punct(word[end - 1]):
        end -= 1
    return word[start:end]


def tokenize(text: str) -> TokenSequence:
    """Whitespace split, edge punctuation stripped, lowercased."""
    tokens = []
    for raw in text.split():
        word = _strip_punct(raw).lower()
        if word:
            tokens.append(word)
    return TokenSequence(tuple(tokens), len(text))


def _as_tokens(seq: TokenSequence | Sequence[str]) -> tuple[str, ...]:
    if isinstance(seq, TokenSequence):
        return seq.tokens
    return tuple(seq)


def _ngrams(tokens: Sequence, n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate, reference, n: int = 1) -> OverlapScore:
    if n < 1:
        raise InvalidParameterError(f"n must be >= 1, got {n}")
    cand = _ngrams(_as_tokens(candidate), n)
    ref = _ngrams(_as_tokens(reference), n)
    matched = sum((cand & ref).values())
    cand_total = sum(cand.values())
    ref_total = sum(ref.values())
    precision = matched / cand_total if cand_total else 0.0
    recall = matched / ref_total if ref_total else 0.0
    return OverlapScore(precision, recall)


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b):
            cur.append(prev[j] + 1 if x == y else max(prev[j + 1], cur[j]))
        prev = cur
    return prev[-1]


def rouge_l(candidate, reference) -> OverlapScore:
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    lcs = lcs_length(cand, ref)
    return OverlapScore(
        lcs / len(cand) if cand else 0.0,
        lcs / len(ref) if ref else 0.0,
    )


def bleu(candidate, reference, max_n: int = 4) -> float:
    """Sentence BLEU with uniform weights and brevity penalty.

    Orders n >= 2 with no matches use ``(m + 0.1) / (t + 0.1)`` so an exact
    match still scores 1 even when it is shorter than ``max_n`` tokens.
    """
    if max_n < 1:
        raise InvalidParameterError(f"max_n must be >= 1, got {max_n}")
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    if not cand:
        return 0.0
    log_sum = 0.0
    for n in range(1, max_n + 1):
        cand_ngrams = _ngrams(cand, n)
        total = sum(cand_ngrams.values())
        matched = sum((cand_ngrams & _ngrams(ref, n)).values())
        if matched == 0:
            if n == 1:
                return 0.0
            precision = (matched + BLEU_SMOOTHING) / (total + BLEU_SMOOTHING)
        else:
            precision = matched / total
        log_sum += math.log(precision)
    brevity = 1.0 if len(cand) >= len(ref) else math.exp(1 - len(ref) / len(cand))
    return brevity * math.exp(log_sum / max_n)


def chrf(candidate: str, reference: str, max_char_n: int = 6, beta: float = 2.0) -> float:
    """Character n-gram F-beta averaged over orders 1..max_char_n.

    Orders for which neither string has an n-gram are skipped; an order
    present on only one side contributes 0.
    """
    if max_char_n < 1:
        raise InvalidParameterError(f"max_char_n must be >= 1, got {max_char_n}")
    cand = "".join(candidate.split())
    ref = "".join(reference.split())
    b2 = beta * beta
    scores = []
    for n in range(1, max_char_n + 1):
        c = _ngrams(cand, n)
        r = _ngrams(ref, n)
        if not c and not r:
            continue
        matched = sum((c & r).values())
        p = matched / sum(c.values()) if c else 0.0
        rec = matched / sum(r.values()) if r else 0.0
        scores.append((1 + b2) * p * rec / (b2 * p + rec) if p + rec > 0 else 0.0)
    return sum(scores) / len(scores) if scores else 0.0


_stemmer = PorterStemmer()
_stem_lock = threading.Lock()


@functools.lru_cache(maxsize=65536)
def _stem(word: str) -> str:
    with _stem_lock:
        return _stemmer.stem(word)


def meteor_alignment(candidate, reference) -> list[tuple[int, int]]:
    """Greedy unigram alignment: exact matches first, then Porter stems.

    Each candidate position takes the reference position that extends the
    previous match when possible, otherwise the earliest free one.
    Returns (candidate_index, reference_index) pairs sorted by candidate index.
    """
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    pairs: dict[int, int] = {}
    used: set[int] = set()
    for key in (lambda w: w, _stem):
        ref_keys = [key(w) for w in ref]
        for i, word in enumerate(cand):
            if i in pairs:
                continue
            k = key(word)
            prev = pairs.get(i - 1)
            if prev is not None and prev + 1 < len(ref) and prev + 1 not in used and ref_keys[prev + 1] == k:
                j = prev + 1
            else:
                j = next((j for j, rk in enumerate(ref_keys) if rk == k and j not in used), None)
            if j is not None:
                pairs[i] = j
                used.add(j)
    return sorted(pairs.items())


def count_chunks(alignment: Sequence[tuple[int, int]]) -> int:
    chunks = 0
    prev = None
    for i, j in alignment:
        if prev is None or i != prev[0] + 1 or j != prev[1] + 1:
            chunks += 1
        prev = (i, j)
    return chunks


def meteor_lite(candidate, reference) -> float:
    """METEOR with exact and stem matching only (no synonym module)."""
    cand, ref = _as_tokens(candidate), _as_tokens(reference)
    alignment = meteor_alignment(cand, ref)
    m = len(alignment)
    if m == 0:
        return 0.0
    p = m / len(cand)
    r = m / len(ref)
    f_mean = 10 * p * r / (r + 9 * p)
    penalty = 0.5 * (count_chunks(alignment) / m) ** 3
    return f_mean * (1 - penalty)


# --- readability ----------------------------------------------------------------

_SENTENCE_END = re.compile(r"[.!?]+(?=\s|$)")
_VOWEL_GROUP = re.compile(r"[aeiouy]+")


def split_sentences(text: str) -> list[str]:
    parts = [p for p in _SENTENCE_END.split(text) if tokenize(p).tokens]
    return parts or [text]


def count_syllables(word: str) -> int:
    word = word.lower()
    count = len(_VOWEL_GROUP.findall(word))
    if word.endswith("e") and not word.endswith("le"):
        count -= 1
    return max(count, 1)


@functools.lru_cache(maxsize=8)
def _load_word_list(path: str | None) -> frozenset[str]:
    try:
        if path is None:
            data = resources.files("resum").joinpath("data/dale_chall_familiar.txt").read_text("utf-8")
        else:
            data = Path(path).read_text("utf-8")
    except (FileNotFoundError, IsADirectoryError) as exc:
        raise ConfigurationError(f"Dale-Chall word list not found: {path or 'bundled asset'}") from exc
    words = frozenset(line.strip().lower() for line in data.splitlines() if line.strip())
    if not words:
        raise ConfigurationError(f"Dale-Chall word list is empty: {path or 'bundled asset'}")
    return words


def dale_chall_words(path: str | os.PathLike | None = None) -> frozenset[str]:
    """Familiar-word list: explicit path, then $RESUM_DALE_CHALL_PATH, then the bundled asset."""
    if path is None:
        path = os.environ.get(DALE_CHALL_ENV) or None
    return _load_word_list(None if path is None else str(path))


@dataclass(frozen=True)
class Readability:
    fre: float
    dcr: float
    words: int
    sentences: int
    syllables: int
    difficult_words: int


def readability_stats(text: str, dale_chall_path: str | os.PathLike | None = None) -> Readability:
    words = tokenize(text).tokens
    if not words:
        raise InvalidInputError("readability needs at least one word")
    familiar = dale_chall_words(dale_chall_path)
    n_words = len(words)
    n_sent = len(split_sentences(text))
    n_syll = sum(count_syllables(w) for w in words)
    n_difficult = sum(1 for w in words if w not in familiar)

    words_per_sentence = n_words / n_sent
    fre = 206.835 - 1.015 * words_per_sentence - 84.6 * (n_syll / n_words)
    pct_difficult = 100 * n_difficult / n_words
    dcr = 0.1579 * pct_difficult + 0.0496 * words_per_sentence
    if pct_difficult > 5:
        dcr += 3.6365
    return Readability(fre, dcr, n_words, n_sent, n_syll, n_difficult)


def readability(text: str, dale_chall_path: str | os.PathLike | None = None) -> tuple[float, float]:
    """Return (Flesch Reading Ease, Dale-Chall readability)."""
    stats = readability_stats(text, dale_chall_path)
    return stats.fre, stats.dcr


# --- metric catalog and score files -------------------------------------------------

BUILTIN_METRICS: dict[str, str] = {
    "rouge1": HIGHER_BETTER,
    "rouge2": HIGHER_BETTER,
    "rougeL": HIGHER_BETTER,
    "bleu": HIGHER_BETTER,
    "chrf": HIGHER_BETTER,
    "meteor": HIGHER_BETTER,
    "fre": HIGHER_BETTER,
    "dcr": LOWER_BETTER,
}


class MetricCatalog:
    """Registry of metric ids and their orientation."""

    def __init__(self, metrics: dict[str, str] | None = None):
        self._metrics = dict(BUILTIN_METRICS if metrics is None else metrics)
        self._lock = threading.Lock()

    def register(self, metric_id: str, direction: str = HIGHER_BETTER) -> str:
        if direction not in (HIGHER_BETTER, LOWER_BETTER):
            raise InvalidParameterError(f"unknown direction {direction!r}")
        with self._lock:
            return self._metrics.setdefault(metric_id, direction)

    def direction(self, metric_id: str) -> str:
        return self._metrics[metric_id]

    def __contains__(self, metric_id: str) -> bool:
        return metric_id in self._metrics

    def ids(self) -> list[str]:
        return list(self._metrics)


catalog = MetricCatalog()


def score_summary(
    summary_id: str,
    summary: str,
    reference: str,
    rouge_report: str = "recall",
    dale_chall_path: str | os.PathLike | None = None,
) -> list[MetricScore]:
    """All native metrics for one summary; ROUGE exported as recall or f1."""
    if rouge_report not in ("recall", "f1"):
        raise InvalidParameterError(f"rouge_report must be 'recall' or 'f1', got {rouge_report!r}")
    cand, ref = tokenize(summary), tokenize(reference)
    pick = (lambda s: s.recall) if rouge_report == "recall" else (lambda s: s.f1)
    values = {
        "rouge1": pick(rouge_n(cand, ref, 1)),
        "rouge2": pick(rouge_n(cand, ref, 2)),
        "rougeL": pick(rouge_l(cand, ref)),
        "bleu": bleu(cand, ref),
        "chrf": chrf(summary, reference),
        "meteor": meteor_lite(cand, ref),
    }
    if cand.tokens:
        values["fre"], values["dcr"] = readability(summary, dale_chall_path)
    return [MetricScore(m, summary_id, v, catalog.direction(m)) for m, v in values.items()]


_FIELDS = ("summary_id", "metric", "value")


def _parse_value(raw, line: int, path: str) -> float:
    if isinstance(raw, bool):
        raise ParseError(f"value must be numeric, got {raw!r}", line, path)
    try:
        value = float(raw)
    except (TypeError, ValueError):
        raise ParseError(f"value must be numeric, got {raw!r}", line, path) from None
    if not math.isfinite(value):
        raise ParseError(f"value must be finite, got {raw!r}", line, path)
    return value


def _iter_score_rows(text: str, path: str) -> Iterable[tuple[int, str, str, object]]:
    lines = text.splitlines()
    first = next((ln.strip() for ln in lines if ln.strip()), "")
    if first.startswith("{"):
        for lineno, ln in enumerate(lines, 1):
            if not ln.strip():
                continue
            try:
                rec = json.loads(ln)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno, path) from None
            if not isinstance(rec, dict) or any(f not in rec for f in _FIELDS):
                raise ParseError(f"record must have fields {_FIELDS}", lineno, path)
            if not isinstance(rec["summary_id"], str) or not isinstance(rec["metric"], str):
                raise ParseError("summary_id and metric must be strings", lineno, path)
            yield lineno, rec["summary_id"], rec["metric"], rec["value"]
        return
    reader = csv.reader(io.StringIO(text))
    for row in reader:
        lineno = reader.line_num
        if not row or all(not c.strip() for c in row):
            continue
        cells = [c.strip() for c in row]
        if lineno == 1 and tuple(c.lower() for c in cells) == _FIELDS:
            continue
        if len(cells) != 3:
            raise ParseError(f"expected 3 columns {_FIELDS}, got {len(cells)}", lineno, path)
        yield lineno, cells[0], cells[1], cells[2]


def ingest_external_scores(path: str | os.PathLike, registry: MetricCatalog | None = None) -> list[MetricScore]:
    """Read precomputed metric scores (JSON lines or CSV) into MetricScores.

    Unknown metric ids are registered as higher-better.
    """
    registry = catalog if registry is None else registry
    path_s = str(path)
    text = Path(path).read_text("utf-8")
    seen: set[tuple[str, str]] = set()
    out = []
    for lineno, summary_id, metric, raw in _iter_score_rows(text, path_s):
        if not summary_id or not metric:
            raise ParseError("summary_id and metric must be non-empty", lineno, path_s)
        value = _parse_value(raw, lineno, path_s)
        if (metric, summary_id) in seen:
            raise ConflictError(f"{path_s}:line {lineno}: duplicate score for ({metric}, {summary_id})")
        seen.add((metric, summary_id))
        direction = registry.register(metric)
        out.append(MetricScore(metric, summary_id, value, direction))
    return out


def write_scores(scores: Iterable[MetricScore], path: str | os.PathLike) -> None:
    """Write scores as JSON lines, or CSV when the path ends in .csv."""
    path = Path(path)
    if path.suffix.lower() == ".csv":
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(_FIELDS)
            for s in scores:
                writer.writerow([s.summary_id, s.metric_id, repr(s.value)])
        return
    with path.open("w", encoding="utf-8") as fh:
        for s in scores:
            fh.write(json.dumps({"summary_id": s.summary_id, "metric": s.metric_id, "value": s.value}) + "\n")
