"""Metric tests: revision accounting vs brute force, F1, normalization,
similarity against an independent Ratcliff-Obershelp implementation, and
majority-vote judging with scripted critics."""
import io
import random

import pytest

from critloop import metrics
from critloop.client import EndpointConfig, KeyedMockTransport, RoleConfig
from critloop.critique import Critique, Judgment, Problem, Solution
from critloop.loop import RoundRecord, Trajectory
from critloop.metrics import (
    F1Report,
    Preference,
    discrimination_f1,
    export_regression_csv,
    export_similarity_csv,
    initial_pass_rate,
    majority_vote_judge,
    normalize_code,
    outcome_at_round,
    regression_curve,
    revision_deltas,
    revision_similarity,
    similarity_ratio,
    timeout_rate,
)
from critloop.sandbox import (
    CaseResult,
    CaseStatus,
    ExecutionOutcome,
    FunctionCase,
    TestKind,
    TestSuite,
)


# -- synthetic trajectories ---------------------------------------------------

def synth_outcome(state: str) -> ExecutionOutcome:
    """'P' pass, 'F' wrong output, 'T' timeout."""
    status = {
        "P": CaseStatus.PASS,
        "F": CaseStatus.WRONG_OUTPUT,
        "T": CaseStatus.TIMEOUT,
    }[state]
    case = CaseResult(status=status)
    return ExecutionOutcome(
        per_case=(case,), pass_fraction=1.0 if state == "P" else 0.0, wall_time_ms=1
    )


def synth_critique(correct: bool) -> Critique:
    judgment = Judgment.CORRECT if correct else Judgment.INCORRECT
    return Critique(
        analysis="a", suggestions="s", judgment=judgment, raw=f"raw-{judgment.value}"
    )


def make_trajectory(pid: str, states: str, stop: bool = False) -> Trajectory:
    """Build a trajectory whose solution states per round are ``states``.

    ``states[0]`` is the zero-shot draft, ``states[i]`` the solution after
    revision round i.  With ``stop`` a final judged-Correct round (without a
    revision) is appended.
    """
    solutions = [Solution(source=f"print({i})", round=i) for i in range(len(states))]
    outcomes = [synth_outcome(s) for s in states]
    rounds = []
    for i in range(1, len(states)):
        rounds.append(
            RoundRecord(
                round=i,
                critique=synth_critique(False),
                critique_raw="r",
                parse_failure=None,
                solution_before=solutions[i - 1],
                solution_after=solutions[i],
                outcome_before=outcomes[i - 1],
                outcome_after=outcomes[i],
                stopped=False,
            )
        )
    if stop:
        rounds.append(
            RoundRecord(
                round=len(states),
                critique=synth_critique(True),
                critique_raw="r",
                parse_failure=None,
                solution_before=solutions[-1],
                solution_after=None,
                outcome_before=outcomes[-1],
                outcome_after=None,
                stopped=True,
            )
        )
    return Trajectory(
        problem_id=pid,
        rounds=tuple(rounds),
        final_reward=1 if states[-1] == "P" else 0,
        error=None,
    )


# -- revision accounting ------------------------------------------------------

def test_deltas_hand_computed():
    trajectories = [
        make_trajectory("a", "PF"),  # broken by revision
        make_trajectory("b", "FP"),  # fixed by revision
        make_trajectory("c", "PP"),  # stays correct
    ]
    delta = revision_deltas(trajectories, 1)
    assert delta.initial_passed == 2
    assert delta.passed == 2
    assert delta.fixed == 1
    assert delta.broken == 1
    assert delta.pass_at_1 == 2 / 3
    assert delta.delta_up == 1 / 3
    assert delta.delta_down == 1 / 3
    assert initial_pass_rate(trajectories) == 2 / 3


def test_deltas_denominator_is_all_problems():
    # only one problem changes state; fractions still divide by the full set
    trajectories = [make_trajectory("a", "FP")] + [
        make_trajectory(f"b{i}", "FF") for i in range(7)
    ]
    delta = revision_deltas(trajectories, 1)
    assert delta.delta_up == 1 / 8
    assert delta.delta_down == 0.0
    assert delta.pass_at_1 == 1 / 8


def test_deltas_match_brute_force_on_random_sets():
    rng = random.Random(424242)
    for _ in range(30):
        trajectories = []
        states_list = []
        for i in range(rng.randint(5, 12)):
            stop = rng.random() < 0.4
            length = rng.randint(1, 4) if stop else 4
            states = "".join(rng.choice("PFT") for _ in range(length))
            trajectories.append(make_trajectory(f"t{i}", states, stop=stop))
            states_list.append(states)
        for at_round in (1, 2, 3):
            delta = revision_deltas(trajectories, at_round)
            # independent accounting straight from the state strings
            init = sum(s[0] == "P" for s in states_list)
            now = sum(s[min(at_round, len(s) - 1)] == "P" for s in states_list)
            fixed = sum(
                s[0] != "P" and s[min(at_round, len(s) - 1)] == "P" for s in states_list
            )
            broken = sum(
                s[0] == "P" and s[min(at_round, len(s) - 1)] != "P" for s in states_list
            )
            assert (delta.initial_passed, delta.passed, delta.fixed, delta.broken) == (
                init,
                now,
                fixed,
                broken,
            )
            assert delta.passed == delta.initial_passed + delta.fixed - delta.broken


def test_outcome_at_round_bounds():
    unstopped = make_trajectory("a", "PFF")  # two revision rounds, no stop
    assert outcome_at_round(unstopped, 0).pass_fraction == 1.0
    assert outcome_at_round(unstopped, 2).pass_fraction == 0.0
    with pytest.raises(ValueError):
        outcome_at_round(unstopped, 3)
    with pytest.raises(ValueError):
        outcome_at_round(unstopped, -1)
    stopped = make_trajectory("b", "P", stop=True)
    # early stop freezes the state for all later rounds
    for r in range(0, 6):
        assert outcome_at_round(stopped, r).pass_fraction == 1.0


def test_deltas_validation():
    with pytest.raises(ValueError):
        revision_deltas([], 1)
    with pytest.raises(ValueError):
        revision_deltas([make_trajectory("a", "PF")], 0)


def test_regression_curve():
    trajectories = [make_trajectory("a", "PFF"), make_trajectory("b", "PPF")]
    assert regression_curve(trajectories) == [1 / 2, 1.0]
    assert regression_curve(trajectories, max_round=1) == [1 / 2]
    with pytest.raises(ValueError):
        regression_curve(trajectories, max_round=3)  # beyond unstopped bounds
    with pytest.raises(ValueError):
        regression_curve([])


def test_timeout_rate_counts_final_state_only():
    trajectories = [
        make_trajectory("a", "FT"),  # ends timed out
        make_trajectory("b", "TP"),  # recovered: timeout not final
        make_trajectory("c", "PP"),
    ]
    assert timeout_rate(trajectories) == 1 / 3
    with pytest.raises(ValueError):
        timeout_rate([])


# -- discrimination F1 --------------------------------------------------------

def test_f1_always_correct_judge_on_half_passing():
    judgments = [Judgment.CORRECT] * 4
    truths = [True, True, False, False]
    report = discrimination_f1(judgments, truths)
    assert report.f1_passed == pytest.approx(2 / 3)
    assert report.f1_failed == 0.0
    assert report.macro_f1 == pytest.approx(1 / 3)
    assert report.support_passed == 2
    assert report.support_failed == 2


def test_f1_perfect_judge():
    judgments = [Judgment.CORRECT, Judgment.INCORRECT, Judgment.CORRECT]
    truths = [True, False, True]
    report = discrimination_f1(judgments, truths)
    assert report == F1Report(
        f1_passed=1.0, f1_failed=1.0, macro_f1=1.0, support_passed=2, support_failed=1
    )


def test_f1_absent_class_scores_zero():
    # every solution passes and the judge agrees: the Failed class has no
    # predictions and no labels, so its F1 is 0 and the macro averages it in
    judgments = [Judgment.CORRECT, Judgment.CORRECT]
    truths = [True, True]
    report = discrimination_f1(judgments, truths)
    assert report.f1_passed == 1.0
    assert report.f1_failed == 0.0
    assert report.macro_f1 == 0.5


def test_f1_hand_computed_mixed():
    judgments = [
        Judgment.CORRECT,    # tp for Passed
        Judgment.INCORRECT,  # fn for Passed / fp for Failed
        Judgment.CORRECT,    # fp for Passed / fn for Failed
        Judgment.INCORRECT,  # tp for Failed
        Judgment.INCORRECT,  # tp for Failed
    ]
    truths = [True, True, False, False, False]
    report = discrimination_f1(judgments, truths)
    # Passed: tp=1 fp=1 fn=1 -> 2/4; Failed: tp=2 fp=1 fn=1 -> 4/6
    assert report.f1_passed == pytest.approx(0.5)
    assert report.f1_failed == pytest.approx(2 / 3)
    assert report.macro_f1 == pytest.approx((0.5 + 2 / 3) / 2)


def test_f1_validation():
    with pytest.raises(ValueError):
        discrimination_f1([], [])
    with pytest.raises(ValueError):
        discrimination_f1([Judgment.CORRECT], [True, False])


# -- lexical normalization ----------------------------------------------------

def test_normalize_renames_in_first_occurrence_order():
    assert normalize_code("a = 1\nb = a").text == "v0 = 1\nv1 = v0"


def test_normalize_is_alpha_invariant():
    original = "def total(items):\n    acc = 0\n    for item in items:\n        acc += item\n    return acc\n"
    renamed = "def summed(values):\n    box = 0\n    for v in values:\n        box += v\n    return box\n"
    assert normalize_code(original).text == normalize_code(renamed).text
    assert normalize_code(original).lex_failed is False


def test_normalize_preserves_keywords_builtins_and_structure():
    normalized = normalize_code("for i in range(3):\n    print(i)\n")
    assert normalized.text == "for v0 in range ( 3 ) :\n    print ( v0 )"


def test_normalize_strips_comments_keeps_literals():
    assert normalize_code("x = 1  # a note\n").text == "v0 = 1"
    assert normalize_code("x = 1\n").text != normalize_code("x = 2\n").text
    # string payloads are content, not identifiers
    assert normalize_code("x = 'abc'\n").text == "v0 = 'abc'"


def test_normalize_lex_failure_falls_back_to_raw():
    # an unterminated string produces error tokens; an unclosed bracket
    # raises inside the lexer -- both must fall back to the raw text
    for broken in ('x = "unterminated', "x = (1,"):
        result = normalize_code(broken)
        assert result.lex_failed is True
        assert result.text == broken


# -- similarity ---------------------------------------------------------------

def _oracle_matches(a: str, b: str) -> int:
    """Independent Ratcliff-Obershelp total match count (earliest-tie rules)."""
    best_i = best_j = best_size = 0
    for i in range(len(a)):
        for j in range(len(b)):
            k = 0
            while i + k < len(a) and j + k < len(b) and a[i + k] == b[j + k]:
                k += 1
            if k > best_size:
                best_i, best_j, best_size = i, j, k
    if best_size == 0:
        return 0
    return (
        best_size
        + _oracle_matches(a[:best_i], b[:best_j])
        + _oracle_matches(a[best_i + best_size :], b[best_j + best_size :])
    )


def _oracle_ratio(a: str, b: str) -> float:
    if not a and not b:
        return 1.0
    return 2.0 * _oracle_matches(a, b) / (len(a) + len(b))


def test_similarity_known_values():
    assert similarity_ratio("abcd", "bcde") == 0.75
    assert similarity_ratio("", "") == 1.0
    assert similarity_ratio("same", "same") == 1.0
    assert similarity_ratio("abc", "xyz") == 0.0


def test_similarity_matches_independent_oracle():
    rng = random.Random(77)
    for _ in range(300):
        a = "".join(rng.choice("ab") for _ in range(rng.randint(0, 8)))
        b = "".join(rng.choice("ab") for _ in range(rng.randint(0, 8)))
        assert similarity_ratio(a, b) == pytest.approx(_oracle_ratio(a, b)), (a, b)


def test_similarity_long_input_no_junk_heuristic():
    # with difflib's autojunk heuristic active, frequent characters in
    # 200+ char strings would be ignored; a repeated-letter pair must still
    # score as a perfect match
    a = "x" * 300
    assert similarity_ratio(a, a) == 1.0


def test_revision_similarity_ignores_renames():
    original = "def f(xs):\n    return sum(xs)\n"
    renamed = "def g(numbers):\n    return sum(numbers)\n"
    assert revision_similarity(original, renamed) == 1.0
    assert revision_similarity(original, "def f(xs):\n    return max(xs)\n") < 1.0


# -- majority vote ------------------------------------------------------------

JUDGE_PROBLEM = Problem(
    id="judge-1",
    description="Sort a list of integers ascending.",
    suite=TestSuite(TestKind.FUNCTION_BASED, (FunctionCase("assert True"),)),
)


def vote_reply(correct: bool) -> str:
    word = "Correct" if correct else "Incorrect"
    return f"Analysis:\nLooked at it.\n\nImprovement suggestions:\nNone.\n\nOverall judgment: {word}"


def make_vote_critic(script_by_source: dict) -> tuple[RoleConfig, KeyedMockTransport]:
    """Critic whose i-th vote on a given answer follows a per-answer script."""
    counters: dict = {}

    def reply_fn(payload: dict) -> str:
        prompt = payload["messages"][-1]["content"]
        source = prompt.split("<answer>\n", 1)[1].rsplit("\n</answer>", 1)[0]
        index = counters.get(source, 0)
        counters[source] = index + 1
        return script_by_source[source][index]

    transport = KeyedMockTransport(reply_fn)
    endpoint = EndpointConfig(base_url="http://mock.invalid/v1")
    return RoleConfig(endpoint=endpoint, model="judge-mock", transport=transport), transport


def test_majority_vote_prefers_more_correct_votes():
    a, b = Solution(source="sorted_a"), Solution(source="sorted_b")
    critic, transport = make_vote_critic(
        {
            # 3-2 for A, 1-4 for B: majority wins, unanimity not required
            "sorted_a": [vote_reply(True), vote_reply(True), vote_reply(False), vote_reply(True), vote_reply(False)],
            "sorted_b": [vote_reply(True), vote_reply(False), vote_reply(False), vote_reply(False), vote_reply(False)],
        }
    )
    assert majority_vote_judge(JUDGE_PROBLEM, a, b, critic, votes=5) is Preference.A
    assert len(transport.calls) == 10


def test_majority_vote_tie_and_reverse():
    a, b = Solution(source="tie_a"), Solution(source="tie_b")
    critic, _ = make_vote_critic(
        {"tie_a": [vote_reply(True)], "tie_b": [vote_reply(True)]}
    )
    assert majority_vote_judge(JUDGE_PROBLEM, a, b, critic, votes=1) is Preference.TIE

    a2, b2 = Solution(source="rev_a"), Solution(source="rev_b")
    critic2, _ = make_vote_critic(
        {"rev_a": [vote_reply(False)], "rev_b": [vote_reply(True)]}
    )
    assert majority_vote_judge(JUDGE_PROBLEM, a2, b2, critic2, votes=1) is Preference.B


def test_majority_vote_parse_failure_counts_against():
    a, b = Solution(source="garble_a"), Solution(source="garble_b")
    critic, _ = make_vote_critic(
        {
            "garble_a": ["no sections at all", "still nothing", vote_reply(True)],
            "garble_b": [vote_reply(True), vote_reply(True), "argh"],
        }
    )
    # A: 1 correct vote, B: 2 correct votes
    assert majority_vote_judge(JUDGE_PROBLEM, a, b, critic, votes=3) is Preference.B


def test_majority_vote_requires_positive_odd_votes():
    a, b = Solution(source="v_a"), Solution(source="v_b")
    critic, _ = make_vote_critic({"v_a": [], "v_b": []})
    for bad in (0, -1, 2, 4):
        with pytest.raises(ValueError):
            majority_vote_judge(JUDGE_PROBLEM, a, b, critic, votes=bad)


# -- CSV export ---------------------------------------------------------------

def test_regression_csv_round_trip(tmp_path):
    path = tmp_path / "curve.csv"
    export_regression_csv([0.5, 0.25], path)
    lines = path.read_text(encoding="utf-8").strip().splitlines()
    assert lines[0] == "round,delta_down"
    assert lines[1].startswith("1,") and lines[2].startswith("2,")
    assert [float(line.split(",")[1]) for line in lines[1:]] == [0.5, 0.25]


def test_similarity_csv_to_stream():
    buffer = io.StringIO()
    export_similarity_csv([1.0, 0.75], buffer)
    lines = buffer.getvalue().strip().splitlines()
    assert lines[0] == "pair,similarity"
    assert len(lines) == 3


def test_csv_export_rejects_empty():
    with pytest.raises(ValueError):
        export_regression_csv([], io.StringIO())
    with pytest.raises(ValueError):
        export_similarity_csv([], io.StringIO())
