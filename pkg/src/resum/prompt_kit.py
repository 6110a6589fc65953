"""Prompt rendering and parsing of the evaluator's dictionary output.

Templates live in ``prompts/v1`` as plain text with ``${slot}`` placeholders.
Substitution is single-pass, so slot values are never re-scanned for
placeholders.
"""

from __future__ import annotations

import json
import os
import re
from dataclasses import dataclass
from fractions import Fraction
from importlib import resources
from pathlib import Path
from string import Template
from typing import Any, Iterable, Mapping, Sequence

from .errors import (
    ConfigurationError,
    IncompleteResponseError,
    InvalidInputError,
    ResponseParseError,
    ScoreRangeError,
)

CORRECTIVE_INSTRUCTION = "Output only the dictionary, nothing else."


@dataclass(frozen=True)
class Dimension:
    id: str
    display_name: str
    definition: str


DIMENSIONS: dict[str, Dimension] = {
    d.id: d
    for d in (
        Dimension("clarity", "Clarity", "Is the summary reader-friendly? Does it express ideas clearly?"),
        Dimension("accuracy", "Accuracy", "Does the summary contain the same information as the original document?"),
        Dimension(
            "coverage",
            "Coverage",
            "How well does the summary cover the important information in the original document?",
        ),
        Dimension(
            "overall",
            "Overall quality",
            "How good is the summary overall at representing the original document?",
        ),
        Dimension("coherence", "Coherence", "Do the sentences build on each other in a well-organized way?"),
        Dimension("fluency", "Fluency", "Is the text free of grammar, formatting and capitalization errors?"),
        Dimension("consistency", "Consistency", "Is every statement in the summary supported by the source?"),
        Dimension("relevance", "Relevance", "Does the summary keep the important content and leave out the rest?"),
    )
}

LOOP_DIMENSIONS: tuple[str, ...] = ("clarity", "accuracy", "coverage", "overall")


def get_dimension(dim_id: str) -> Dimension:
    try:
        return DIMENSIONS[dim_id]
    except KeyError:
        raise InvalidInputError(f"unknown dimension {dim_id!r}; known: {sorted(DIMENSIONS)}") from None


@dataclass(frozen=True)
class DimensionEvaluation:
    dimension: str
    score: int
    rationale: str


def format_score(score: int | Fraction | float) -> str:
    if isinstance(score, Fraction) and score.denominator != 1:
        return f"{float(score):.2f}"
    if isinstance(score, float) and not score.is_integer():
        return f"{score:.2f}"
    return str(int(score))


# --- templates -------------------------------------------------------------------

_TEMPLATE_NAMES = (
    "initial.system",
    "initial.user",
    "evaluation.system",
    "evaluation.user",
    "refinement.system",
    "refinement.user",
    "feedback_item",
    "leader.system",
    "leader.user",
    "leader_evaluator",
)


@dataclass(frozen=True)
class PromptTemplates:
    """One complete template set, keyed by template name."""

    version: str
    texts: Mapping[str, str]

    @classmethod
    def load(cls, directory: str | os.PathLike | None = None) -> "PromptTemplates":
        """Load from ``directory`` or from the bundled v1 set."""
        texts = {}
        if directory is None:
            root = resources.files("resum").joinpath("prompts/v1")
            version = "v1"
        else:
            root = Path(directory)
            version = str(directory)
        for name in _TEMPLATE_NAMES:
            try:
                raw = root.joinpath(f"{name}.txt").read_text("utf-8")
            except (FileNotFoundError, NotADirectoryError) as exc:
                raise ConfigurationError(f"prompt template {name}.txt missing from {version}") from exc
            texts[name] = raw[:-1] if raw.endswith("\n") else raw
        return cls(version, texts)

    def fill(self, template_name: str, /, **slots: str) -> str:
        try:
            return Template(self.texts[template_name]).substitute(slots)
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(f"template {template_name} in {self.version}: bad slot {exc}") from exc


_default_templates: PromptTemplates | None = None


def default_templates() -> PromptTemplates:
    global _default_templates
    if _default_templates is None:
        _default_templates = PromptTemplates.load()
    return _default_templates


def _require(**values: str) -> None:
    for name, value in values.items():
        if not value or not value.strip():
            raise InvalidInputError(f"{name} must be non-empty")


def render_initial(document: str, templates: PromptTemplates | None = None) -> tuple[str, str]:
    _require(document=document)
    t = templates or default_templates()
    return t.fill("initial.system"), t.fill("initial.user", document=document)


def render_evaluation(document: str, summary: str, templates: PromptTemplates | None = None) -> tuple[str, str]:
    _require(document=document, summary=summary)
    t = templates or default_templates()
    return t.fill("evaluation.system"), t.fill("evaluation.user", document=document, summary=summary)


def _ordered(dim_ids: Iterable[str]) -> list[str]:
    ids = list(dim_ids)
    fixed = [d for d in LOOP_DIMENSIONS if d in ids]
    return fixed + [d for d in ids if d not in LOOP_DIMENSIONS]


def _feedback_lines(entries: Mapping[str, Any], t: PromptTemplates) -> str:
    lines = []
    for dim_id in _ordered(entries):
        entry = entries[dim_id]
        score, rationale = (entry.score, entry.rationale) if hasattr(entry, "score") else entry
        name = DIMENSIONS[dim_id].display_name if dim_id in DIMENSIONS else dim_id
        lines.append(t.fill("feedback_item", name=name, score=format_score(score), rationale=rationale))
    return "\n".join(lines)


def render_refinement(
    document: str, prev_summary: str, feedback, templates: PromptTemplates | None = None
) -> tuple[str, str]:
    """Refinement prompt. ``feedback`` is a Feedback or a mapping dim -> (score, rationale)."""
    _require(document=document, prev_summary=prev_summary)
    entries = getattr(feedback, "entries", feedback)
    if not entries:
        raise InvalidInputError("refinement needs at least one deficient dimension")
    t = templates or default_templates()
    user = t.fill(
        "refinement.user",
        feedback=_feedback_lines(entries, t),
        document=document,
        previous_summary=prev_summary,
    )
    return t.fill("refinement.system"), user


def render_leader(
    evaluations: Sequence, document: str, summary: str, templates: PromptTemplates | None = None
) -> tuple[str, str]:
    """Leader prompt listing each evaluation under an anonymous label."""
    if len(evaluations) < 2:
        raise InvalidInputError("leader aggregation needs at least 2 evaluations")
    _require(document=document, summary=summary)
    t = templates or default_templates()
    blocks = []
    for index, ev in enumerate(evaluations, 1):
        items = _feedback_lines(ev.per_dimension, t)
        blocks.append(t.fill("leader_evaluator", index=str(index), items=items))
    user = t.fill("leader.user", evaluations="\n\n".join(blocks), document=document, summary=summary)
    return t.fill("leader.system"), user


# --- response parsing --------------------------------------------------------------

_MAX_DEPTH = 32
_NUMBER = re.compile(r"-?\d+(?:\.\d+)?(?:[eE][-+]?\d+)?")
_BAREWORD = re.compile(r"[A-Za-z_][A-Za-z0-9_\- ]*")
_BARE_LITERALS = {"true": True, "false": False, "null": None, "none": None}
_SIMPLE_ESCAPES = {"n": "\n", "t": "\t", "r": "\r", "b": "\b", "f": "\f", "0": "\0", "\\": "\\", "'": "'", '"': '"', "/": "/"}


class _Syntax(Exception):
    pass


class _LenientParser:
    """Parses dict literals in JSON or Python syntax as plain data.

    A quote closes a string only when followed by ``,`` ``:`` ``}`` ``]`` or
    the end of input, which tolerates apostrophes inside single-quoted text.
    """

    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def _ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def _peek(self) -> str:
        self._ws()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def _expect(self, ch: str) -> None:
        if self._peek() != ch:
            raise _Syntax(f"expected {ch!r} at offset {self.pos}")
        self.pos += 1

    def value(self, depth: int = 0) -> Any:
        if depth > _MAX_DEPTH:
            raise _Syntax("nesting too deep")
        ch = self._peek()
        if ch == "{":
            return self.obj(depth)
        if ch == "[":
            return self.array(depth)
        if ch in ("'", '"'):
            return self.string()
        m = _NUMBER.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            num = m.group()
            return float(num) if any(c in num for c in ".eE") else int(num)
        m = _BAREWORD.match(self.text, self.pos)
        if m:
            self.pos = m.end()
            word = m.group().strip()
            return _BARE_LITERALS.get(word.lower(), word)
        raise _Syntax(f"unexpected character at offset {self.pos}")

    def obj(self, depth: int) -> dict:
        self._expect("{")
        out: dict = {}
        while True:
            ch = self._peek()
            if ch == "}":
                self.pos += 1
                return out
            if ch in ("'", '"'):
                key = self.string()
            else:
                m = _BAREWORD.match(self.text, self.pos)
                if not m:
                    raise _Syntax(f"expected key at offset {self.pos}")
                self.pos = m.end()
                key = m.group().strip()
            self._expect(":")
            out[key] = self.value(depth + 1)
            ch = self._peek()
            if ch == ",":
                self.pos += 1
            elif ch != "}":
                raise _Syntax(f"expected ',' or '}}' at offset {self.pos}")

    def array(self, depth: int) -> list:
        self._expect("[")
        out = []
        while True:
            if self._peek() == "]":
                self.pos += 1
                return out
            out.append(self.value(depth + 1))
            ch = self._peek()
            if ch == ",":
                self.pos += 1
            elif ch != "]":
                raise _Syntax(f"expected ',' or ']' at offset {self.pos}")

    def _closes(self, i: int) -> bool:
        j = i + 1
        while j < len(self.text) and self.text[j].isspace():
            j += 1
        return j >= len(self.text) or self.text[j] in ",:}]"

    def string(self) -> str:
        quote = self.text[self.pos]
        i = self.pos + 1
        buf = []
        text = self.text
        while i < len(text):
            ch = text[i]
            if ch == "\\" and i + 1 < len(text):
                nxt = text[i + 1]
                if nxt in _SIMPLE_ESCAPES:
                    buf.append(_SIMPLE_ESCAPES[nxt])
                    i += 2
                    continue
                width = {"x": 2, "u": 4, "U": 8}.get(nxt)
                if width and re.fullmatch(r"[0-9a-fA-F]+", text[i + 2 : i + 2 + width] or "x"):
                    buf.append(chr(int(text[i + 2 : i + 2 + width], 16)))
                    i += 2 + width
                    continue
                buf.append(ch)
                i += 1
                continue
            if ch == quote and self._closes(i):
                self.pos = i + 1
                return "".join(buf)
            buf.append(ch)
            i += 1
        raise _Syntax("unterminated string")


def _decode_object(text: str, start: int) -> dict | None:
    try:
        obj, _ = json.JSONDecoder().raw_decode(text, start)
        if isinstance(obj, dict):
            return obj
    except json.JSONDecodeError:
        pass
    parser = _LenientParser(text)
    parser.pos = start
    try:
        obj = parser.obj(0)
    except _Syntax:
        return None
    return obj


def _norm_key(key: str) -> str:
    k = re.sub(r"[\s\-]+", "_", str(key).strip().lower())
    return {
        "overall_quality": "overall",
        "explanations": "explanation",
        "rationale": "explanation",
        "rationales": "explanation",
        "reasoning": "explanation",
    }.get(k, k)


def _normalize(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {_norm_key(k): _normalize(v) for k, v in obj.items()}
    return obj


def extract_object(text: str, dimensions: Sequence[str] = LOOP_DIMENSIONS) -> dict:
    """Find the first brace-delimited object that mentions an evaluation key."""
    wanted = set(dimensions) | {"explanation"}
    fallback = None
    for m in re.finditer(r"\{", text):
        obj = _decode_object(text, m.start())
        if obj is None:
            continue
        obj = _normalize(obj)
        if wanted & set(obj):
            return obj
        if fallback is None:
            fallback = obj
    if fallback is not None:
        return fallback
    raise ResponseParseError("no dictionary object found in response")


def _coerce_score(dim: str, raw: Any, scale_max: int) -> int:
    if isinstance(raw, bool):
        raise ScoreRangeError(f"{dim}: score must be an integer, got {raw!r}")
    if isinstance(raw, str) and re.fullmatch(r"\s*-?\d+\s*", raw):
        raw = int(raw)
    if isinstance(raw, float) and raw.is_integer():
        raw = int(raw)
    if not isinstance(raw, int):
        raise ScoreRangeError(f"{dim}: score must be an integer, got {raw!r}")
    if not 1 <= raw <= scale_max:
        raise ScoreRangeError(f"{dim}: score {raw} outside [1, {scale_max}]")
    return raw


def parse_evaluation_response(
    text: str, scale_max: int = 5, dimensions: Sequence[str] = LOOP_DIMENSIONS
) -> dict[str, DimensionEvaluation]:
    """Parse an evaluation answer into per-dimension score and rationale.

    Accepts JSON or Python-dict syntax, ignores prose around the object, and
    also takes the nested ``{'clarity': {'score': 4, 'explanation': ...}}``
    shape. Raises ResponseParseError, IncompleteResponseError or
    ScoreRangeError.
    """
    obj = extract_object(text, dimensions)
    explanations = obj.get("explanation")
    if not isinstance(explanations, dict):
        explanations = {}
    out = {}
    for dim in dimensions:
        if dim not in obj:
            raise IncompleteResponseError(dim)
        raw = obj[dim]
        rationale = explanations.get(dim)
        if isinstance(raw, dict):
            if "score" not in raw:
                raise IncompleteResponseError(f"{dim}.score")
            rationale = raw.get("explanation", rationale)
            raw = raw["score"]
        score = _coerce_score(dim, raw, scale_max)
        if not isinstance(rationale, str) or not rationale.strip():
            raise IncompleteResponseError(f"explanation.{dim}")
        out[dim] = DimensionEvaluation(dim, score, rationale)
    return out


def format_evaluation_dict(per_dimension: Mapping[str, DimensionEvaluation]) -> str:
    """Serialize scores and rationales in the evaluation prompt's dictionary layout."""
    scores = ", ".join(f"{d!r}: {e.score}" for d, e in per_dimension.items())
    expl = ", ".join(f"{d!r}: {e.rationale!r}" for d, e in per_dimension.items())
    return "{" + scores + ", 'explanation': {" + expl + "}}"
