from pathlib import Path

import pytest
from hypothesis import given
from hypothesis import strategies as st

from resum.errors import ConfigurationError, IncompleteResponseError, InvalidInputError, ResponseParseError, ScoreRangeError
from resum.evaluation import EvaluationResult
from resum.prompt_kit import (
    DIMENSIONS,
    LOOP_DIMENSIONS,
    DimensionEvaluation,
    PromptTemplates,
    format_evaluation_dict,
    get_dimension,
    parse_evaluation_response,
    render_evaluation,
    render_initial,
    render_leader,
    render_refinement,
)

GOLDEN = Path(__file__).parent / "golden"
DOC = "<original_document>"
SUMMARY = "<summary_to_evaluate>"
FEEDBACK = {
    "clarity": (2, "<clarity_explanation>"),
    "accuracy": (3, "<accuracy_explanation>"),
    "coverage": (3, "<coverage_explanation>"),
    "overall": (2, "<overall_explanation>"),
}


def golden(name: str) -> str:
    text = (GOLDEN / name).read_text(encoding="utf-8")
    return text[:-1] if text.endswith("\n") else text


def golden_mismatches() -> list[str]:
    rendered = {
        "prompt1": render_initial(DOC),
        "prompt2": render_evaluation(DOC, SUMMARY),
        "prompt3": render_refinement(DOC, SUMMARY, FEEDBACK),
    }
    bad = []
    for prompt, (system, user) in rendered.items():
        if system != golden(f"{prompt}_system.txt"):
            bad.append(f"{prompt} system")
        if user != golden(f"{prompt}_user.txt"):
            bad.append(f"{prompt} user")
    if "'clarity': clarity_score" not in rendered["prompt2"][1]:
        bad.append("schema fragment")
    return bad


def test_prompts_match_golden_files():
    assert golden_mismatches() == []


def test_initial_substitution_once():
    system, user = render_initial("X marks the spot")
    assert user.count("X marks the spot") == 1
    assert system == "You are an expert summarization system specialized in creating concise, accurate, and comprehensive summaries."


@pytest.mark.parametrize("hostile", ["${summary} and $document", "{'clarity': 5}", "$$ {{}} %s {0}", "\\n\\u0000"])
def test_injection_safety(hostile):
    _, user = render_initial(hostile)
    assert hostile in user
    _, user = render_evaluation(hostile, hostile)
    assert user.count(hostile) == 2
    _, user = render_refinement(hostile, hostile, {"accuracy": (3, hostile)})
    assert user.count(hostile) == 3


def test_evaluation_prompt_lists_dimensions():
    _, user = render_evaluation("doc", "sum {braces}")
    for name in ("Clarity", "Accuracy", "Coverage", "Overall quality"):
        assert f"- {name}:" in user
    assert "sum {braces}" in user


@pytest.mark.parametrize("fn, args", [(render_initial, ("",)), (render_evaluation, ("d", " ")), (render_evaluation, ("", "s"))])
def test_empty_inputs_rejected(fn, args):
    with pytest.raises(InvalidInputError):
        fn(*args)


def test_refinement_feedback_block():
    _, user = render_refinement("doc", "prev", {"accuracy": (3, "fabricated date")})
    assert "- Accuracy [Score: 3]: fabricated date" in user
    assert "Clarity [Score" not in user
    with pytest.raises(InvalidInputError):
        render_refinement("doc", "prev", {})


def test_refinement_fixed_order_and_long_rationale():
    long = "r" * 500
    shuffled = {"overall": (1, "o"), "coverage": (2, long), "clarity": (3, "c"), "accuracy": (1, "a")}
    _, user = render_refinement("doc", "prev", shuffled)
    positions = [user.index(f"- {n} [Score") for n in ("Clarity", "Accuracy", "Coverage", "Overall quality")]
    assert positions == sorted(positions)
    assert long in user


def test_refinement_fractional_scores_formatted():
    from fractions import Fraction

    _, user = render_refinement("doc", "prev", {"clarity": (Fraction(10, 3), "x")})
    assert "[Score: 3.33]" in user


def _ev(agent_id, scores, note):
    per = {d: DimensionEvaluation(d, s, f"{note} {d}") for d, s in zip(LOOP_DIMENSIONS, scores)}
    return EvaluationResult("s1", agent_id, per, "")


def test_leader_prompt_anonymized():
    evals = [_ev("llama-secret", (4, 4, 3, 4), "alpha"), _ev("qwen-secret", (2, 3, 3, 3), "beta"), _ev("lb", (5, 5, 5, 5), "gamma")]
    system, user = render_leader(evals, "the doc", "the summary")
    for i in (1, 2, 3):
        assert f"Evaluator {i}" in user
    assert "secret" not in user and "'clarity':" in user
    assert "the doc" in user and "the summary" in user
    _, permuted = render_leader(evals[::-1], "the doc", "the summary")
    assert sorted(permuted.splitlines()) == sorted(user.splitlines())
    assert permuted != user
    with pytest.raises(InvalidInputError):
        render_leader(evals[:1], "d", "s")


def test_dimension_registry():
    assert set(LOOP_DIMENSIONS) == {"clarity", "accuracy", "coverage", "overall"}
    assert len(DIMENSIONS) == 8
    assert get_dimension("overall").display_name == "Overall quality"
    with pytest.raises(InvalidInputError):
        get_dimension("vibes")


def test_template_override_directory(tmp_path):
    src = PromptTemplates.load()
    for name, text in src.texts.items():
        (tmp_path / f"{name}.txt").write_text(text.replace("Task Description", "TASK") + "\n")
    custom = PromptTemplates.load(tmp_path)
    assert render_initial("d", custom)[1].startswith("TASK")
    (tmp_path / "initial.user.txt").unlink()
    with pytest.raises(ConfigurationError):
        PromptTemplates.load(tmp_path)


# --- parser -------------------------------------------------------------------------

CANON = "{'clarity': 4, 'accuracy': 5, 'coverage': 3, 'overall': 4, 'explanation': {'clarity': 'c', 'accuracy': 'a', 'coverage': 'v', 'overall': 'o'}}"
EXPECTED = {"clarity": (4, "c"), "accuracy": (5, "a"), "coverage": (3, "v"), "overall": (4, "o")}
JSON = '{"clarity": 4, "accuracy": 5, "coverage": 3, "overall": 4, "explanation": {"clarity": "c", "accuracy": "a", "coverage": "v", "overall": "o"}}'

VARIANTS = [
    CANON,
    JSON,
    f"Sure! Here is my rating: {CANON} Hope that helps.",
    f"```python\n{CANON}\n```",
    f"```json\n{JSON}\n```",
    CANON.replace(", ", ",\n    "),
    CANON.replace("'clarity': 4", "'clarity': '4'"),
    CANON.replace("'clarity': 4", "'clarity': 4.0"),
    JSON.replace('"clarity": 4', '"clarity": "4"'),
    CANON.replace("'overall': 4,", "'overall_quality': 4,", 1),
    CANON.replace("'explanation'", "'explanations'"),
    CANON.replace("'explanation'", "'rationale'"),
    "{'Clarity': 4, 'Accuracy': 5, 'Coverage': 3, 'Overall': 4, 'Explanation': {'Clarity': 'c', 'Accuracy': 'a', 'Coverage': 'v', 'Overall': 'o'}}",
    JSON.replace("}}", "},}").replace('"o"', '"o",'),
    "{'clarity': {'score': 4, 'explanation': 'c'}, 'accuracy': {'score': 5, 'explanation': 'a'}, 'coverage': {'score': 3, 'explanation': 'v'}, 'overall': {'score': 4, 'explanation': 'o'}}",
    f"Reasoning first. The format asks for {{scores}}. Final answer:\n{CANON}",
    "{'explanation': {'clarity': 'c', 'accuracy': 'a', 'coverage': 'v', 'overall': 'o'}, 'clarity': 4, 'accuracy': 5, 'coverage': 3, 'overall': 4}",
    "{clarity: 4, accuracy: 5, coverage: 3, overall: 4, explanation: {clarity: 'c', accuracy: 'a', coverage: 'v', overall: 'o'}}",
    CANON + "\n\nNote: scores reflect {my} judgement.",
    "{ 'clarity' : 4 , 'accuracy' : 5 , 'coverage' : 3 , 'overall' : 4 , 'explanation' : { 'clarity' : 'c' , 'accuracy' : 'a' , 'coverage' : 'v' , 'overall' : 'o' } }",
    "Evaluation:\n" + CANON.replace("'", '"'),
    "{'clarity': 4, 'accuracy': 5, 'coverage': 3, 'overall': 4, 'overall_score_note': 'x', 'explanation': {'clarity': 'c', 'accuracy': 'a', 'coverage': 'v', 'overall': 'o'}}",
]

APOSTROPHES = (
    "{'clarity': 4, 'accuracy': 5, 'coverage': 3, 'overall': 4, 'explanation': "
    "{'clarity': 'The summary's wording is plain.', 'accuracy': 'It doesn't add facts.', "
    "'coverage': 'Misses the \"budget\" part.', 'overall': 'Good, but it's short.'}}"
)


@pytest.mark.parametrize("text", VARIANTS)
def test_parser_variants(text):
    parsed = parse_evaluation_response(text)
    assert {d: (e.score, e.rationale) for d, e in parsed.items()} == EXPECTED


def test_parser_curated_variant_count():
    assert len(VARIANTS) >= 20


def test_parser_unescaped_apostrophes():
    parsed = parse_evaluation_response(APOSTROPHES)
    assert parsed["clarity"].rationale == "The summary's wording is plain."
    assert parsed["coverage"].rationale == 'Misses the "budget" part.'
    assert parsed["overall"].rationale == "Good, but it's short."


REJECTS = [
    (CANON.replace("'clarity': 4", "'clarity': 9"), ScoreRangeError, None),
    (CANON.replace("'clarity': 4", "'clarity': 0"), ScoreRangeError, None),
    (CANON.replace("'clarity': 4", "'clarity': 3.5"), ScoreRangeError, None),
    (CANON.replace("'clarity': 4", "'clarity': 'good'"), ScoreRangeError, None),
    (CANON.replace("'clarity': 4", "'clarity': True"), ScoreRangeError, None),
    (CANON.replace("'coverage': 3, ", ""), IncompleteResponseError, "coverage"),
    (CANON.replace(", 'overall': 'o'", ""), IncompleteResponseError, "explanation.overall"),
    (CANON.replace("'o'", "'  '"), IncompleteResponseError, "explanation.overall"),
    ("I rate it 4/5 overall.", ResponseParseError, None),
    ("{'clarity': 4, 'accuracy'", ResponseParseError, None),
    ("", ResponseParseError, None),
]


@pytest.mark.parametrize("text, kind, key", REJECTS)
def test_parser_rejections(text, kind, key):
    with pytest.raises(kind) as err:
        parse_evaluation_response(text)
    if key is not None:
        assert err.value.key == key


def test_parser_scale_max_and_custom_dimensions():
    text = "{'coherence': 7, 'fluency': 6, 'explanation': {'coherence': 'x', 'fluency': 'y'}}"
    parsed = parse_evaluation_response(text, scale_max=7, dimensions=("coherence", "fluency"))
    assert parsed["coherence"].score == 7
    with pytest.raises(ScoreRangeError):
        parse_evaluation_response(text, scale_max=5, dimensions=("coherence", "fluency"))


def test_parser_does_not_evaluate_code():
    text = "{'clarity': __import__('os').system('echo hi'), 'accuracy': 5, 'coverage': 3, 'overall': 4}"
    with pytest.raises(ResponseParseError):
        parse_evaluation_response(text)


def test_parser_deep_nesting_rejected_cleanly():
    with pytest.raises(ResponseParseError):
        parse_evaluation_response("{'a': " * 200 + "1" + "}" * 200)


rationales = st.text(min_size=1, max_size=60).filter(lambda s: s.strip())


@given(st.lists(st.integers(1, 5), min_size=4, max_size=4), st.lists(rationales, min_size=4, max_size=4))
def test_format_parse_round_trip(scores, notes):
    per = {d: DimensionEvaluation(d, s, r) for d, s, r in zip(LOOP_DIMENSIONS, scores, notes)}
    assert parse_evaluation_response(format_evaluation_dict(per)) == per
