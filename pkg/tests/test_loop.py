"""Orchestration tests: rounds, early stop, trajectories, batch evaluation.

Model endpoints are scripted as deterministic functions of the prompt via
KeyedMockTransport, so the same cast of problems produces the same rounds
regardless of worker count.  Sandbox runs are real child processes.
"""
import sys

import pytest

from critloop.client import (
    EndpointConfig,
    KeyedMockTransport,
    RoleConfig,
)
from critloop.critique import Judgment, Problem, Solution, render_critique_prompt
from critloop.loop import (
    EvalReport,
    LoopConfig,
    ProblemFailure,
    RoundRecord,
    Trajectory,
    evaluate_dataset,
    iterate,
    load_trajectories,
    report_to_dict,
    round_record_from_dict,
    round_record_to_dict,
    save_trajectories,
    single_round,
    trajectory_from_dict,
    trajectory_to_dict,
)
from critloop import metrics
from critloop.sandbox import (
    CaseStatus,
    IoCase,
    ResourceLimits,
    TestKind,
    TestSuite,
    reward,
)

PY = (sys.executable,)
FAST = ResourceLimits(per_case_timeout_ms=400, max_output_bytes=100_000)


def io_problem(pid: str, description: str, pairs: list[tuple[str, str]]) -> Problem:
    cases = tuple(IoCase(input=i, expected_output=o) for i, o in pairs)
    return Problem(id=pid, description=description, suite=TestSuite(TestKind.STDIN_STDOUT, cases))


def critique_reply(judgment: str, analysis: str, suggestions: str) -> str:
    return (
        f"Analysis:\n{analysis}\n\n"
        f"Improvement suggestions:\n{suggestions}\n\n"
        f"Overall judgment: {judgment}"
    )


def fence(source: str) -> str:
    return f"```\n{source}\n```"


# -- a fixed cast of six problems with fully scripted critic and generator ----
#
# P1 add         draft correct, judged Correct round 1 (stop immediately)
# P2 double      draft wrong, fixed by round-1 revision, judged Correct round 2
# P3 greet       draft wrong, two revisions, never fixed
# P4 parrot      draft correct, wrongly judged Incorrect, revision breaks it,
#                broken version wrongly judged Correct round 2 (stop)
# P5 sumlist     draft wrong, round-1 revision still wrong, round-2 fixes it
# P6 sleepy      draft wrong, both revisions hang until the sandbox timeout

SRC_ADD = "print(int(input()) + int(input()))"
SRC_DOUBLE_BAD = "print(int(input()) + 1)"
SRC_DOUBLE_OK = "print(int(input()) * 2)"
SRC_GREET_V0 = 'print("helo")'
SRC_GREET_V1 = 'print("helo!")'
SRC_GREET_V2 = 'print("h3llo")'
SRC_PARROT_OK = "print(input())"
SRC_PARROT_BAD = "print(input() + input())"
SRC_SUM_V0 = "print(sum(map(int, input().split())) - 1)"
SRC_SUM_V1 = "print(sum(map(int, input().split())) + 1)"
SRC_SUM_V2 = "print(sum(map(int, input().split())))"
SRC_SLEEPY_V0 = "print(0)"
SRC_SLEEPY_V1 = "while True:\n    pass"
SRC_SLEEPY_V2 = "import time\ntime.sleep(30)\nprint('done')"

CRITIC_BY_SOURCE = {
    SRC_ADD: critique_reply("Correct", "Reads two integers and adds them.", "None needed."),
    SRC_DOUBLE_BAD: critique_reply(
        "Incorrect", "The program adds one.", "Multiply the number by two instead of adding one."
    ),
    SRC_DOUBLE_OK: critique_reply("Correct", "Doubles the input.", "None needed."),
    SRC_GREET_V0: critique_reply(
        "Incorrect", "The greeting is misspelled.", "Fix the spelling of the greeting."
    ),
    SRC_GREET_V1: critique_reply(
        "Incorrect", "Still not right.", "The greeting is still misspelled."
    ),
    SRC_GREET_V2: critique_reply("Incorrect", "Wrong again.", "Digits do not belong here."),
    SRC_PARROT_OK: critique_reply(
        "Incorrect", "One line seems too few.", "Echo the line twice by reading two lines."
    ),
    SRC_PARROT_BAD: critique_reply("Correct", "Reads and echoes the input.", "None needed."),
    SRC_SUM_V0: critique_reply(
        "Incorrect", "The total looks shifted.", "There is an off-by-one; adjust the total."
    ),
    SRC_SUM_V1: critique_reply(
        "Incorrect", "Still shifted.", "Remove the adjustment entirely."
    ),
    SRC_SUM_V2: critique_reply("Correct", "Sums the numbers.", "None needed."),
    SRC_SLEEPY_V0: critique_reply(
        "Incorrect", "Prints too eagerly.", "The program must run a loop before printing."
    ),
    SRC_SLEEPY_V1: critique_reply(
        "Incorrect", "Spinning burns cycles.", "Use sleeping instead of spinning."
    ),
}

PROBLEMS = [
    io_problem("p1-add", "Read two integers on separate lines and print their sum.", [("1\n2", "3")]),
    io_problem("p2-double", "Read an integer and print twice its value.", [("5", "10")]),
    io_problem("p3-greet", "Print the word hello.", [("", "hello")]),
    io_problem("p4-parrot", "Read one line and print it unchanged.", [("moo", "moo")]),
    io_problem("p5-sumlist", "Read space-separated integers and print their sum.", [("1 2 3", "6")]),
    io_problem("p6-sleepy", "Print the word done.", [("", "done")]),
]

DRAFTS = {
    PROBLEMS[0].description: SRC_ADD,
    PROBLEMS[1].description: SRC_DOUBLE_BAD,
    PROBLEMS[2].description: SRC_GREET_V0,
    PROBLEMS[3].description: SRC_PARROT_OK,
    PROBLEMS[4].description: SRC_SUM_V0,
    PROBLEMS[5].description: SRC_SLEEPY_V0,
}

REVISIONS = {
    CRITIC_BY_SOURCE[SRC_DOUBLE_BAD]: SRC_DOUBLE_OK,
    CRITIC_BY_SOURCE[SRC_GREET_V0]: SRC_GREET_V1,
    CRITIC_BY_SOURCE[SRC_GREET_V1]: SRC_GREET_V2,
    CRITIC_BY_SOURCE[SRC_PARROT_OK]: SRC_PARROT_BAD,
    CRITIC_BY_SOURCE[SRC_SUM_V0]: SRC_SUM_V1,
    CRITIC_BY_SOURCE[SRC_SUM_V1]: SRC_SUM_V2,
    CRITIC_BY_SOURCE[SRC_SLEEPY_V0]: SRC_SLEEPY_V1,
    CRITIC_BY_SOURCE[SRC_SLEEPY_V1]: SRC_SLEEPY_V2,
}


def answer_in(prompt: str) -> str:
    return prompt.split("<answer>\n", 1)[1].rsplit("\n</answer>", 1)[0]


def scripted_critic_fn(payload: dict) -> str:
    return CRITIC_BY_SOURCE[answer_in(payload["messages"][-1]["content"])]


def scripted_generator_fn(payload: dict) -> str:
    messages = payload["messages"]
    if len(messages) == 1:
        return fence(DRAFTS[messages[0]["content"]])
    return fence(REVISIONS[messages[2]["content"]])


def make_config(critic_fn=scripted_critic_fn, generator_fn=scripted_generator_fn):
    endpoint = EndpointConfig(base_url="http://mock.invalid/v1")
    critic_transport = KeyedMockTransport(critic_fn)
    generator_transport = KeyedMockTransport(generator_fn)
    config = LoopConfig(
        critic=RoleConfig(endpoint=endpoint, model="critic-mock", transport=critic_transport),
        generator=RoleConfig(endpoint=endpoint, model="gen-mock", transport=generator_transport),
        interpreter=PY,
        limits=FAST,
    )
    return config, critic_transport, generator_transport


# -- dataclass invariants -----------------------------------------------------

def test_loop_config_rejects_empty_interpreter():
    endpoint = EndpointConfig(base_url="http://mock.invalid/v1")
    role = RoleConfig(endpoint=endpoint, model="m")
    with pytest.raises(ValueError):
        LoopConfig(critic=role, generator=role, interpreter=())


def test_trajectory_invariants():
    with pytest.raises(ValueError):
        Trajectory(problem_id="x", rounds=(), final_reward=2, error="boom")
    with pytest.raises(ValueError):
        Trajectory(problem_id="x", rounds=(), final_reward=0, error=None)
    # zero rounds is fine when the error explains why
    t = Trajectory(problem_id="x", rounds=(), final_reward=0, error="round 1: boom")
    assert t.error is not None


# -- single rounds ------------------------------------------------------------

def test_stop_on_correct_makes_no_generator_call():
    config, _, generator_transport = make_config()
    problem, draft = PROBLEMS[0], Solution(source=SRC_ADD)
    record = single_round(problem, draft, config)
    assert record.stopped is True
    assert record.critique is not None
    assert record.critique.judgment is Judgment.CORRECT
    assert record.solution_after is None
    assert record.outcome_after is None
    assert record.outcome_before.pass_fraction == 1.0
    assert generator_transport.calls == []


def test_incorrect_judgment_triggers_revision():
    config, _, generator_transport = make_config()
    problem, draft = PROBLEMS[1], Solution(source=SRC_DOUBLE_BAD)
    record = single_round(problem, draft, config)
    assert record.stopped is False
    assert record.solution_after.source == SRC_DOUBLE_OK
    assert record.solution_after.round == 1
    assert record.outcome_before.pass_fraction == 0.0
    assert record.outcome_after.pass_fraction == 1.0
    # the generator saw the critic's reply verbatim as the revision request
    (call,) = generator_transport.calls
    assert call["payload"]["messages"][2]["content"] == CRITIC_BY_SOURCE[SRC_DOUBLE_BAD]


def test_parse_failure_counts_as_incorrect_and_forwards_raw():
    garbage = "I refuse to fill in the sections."

    def mute_critic(payload):
        return garbage

    def echo_generator(payload):
        messages = payload["messages"]
        if len(messages) == 1:
            return fence(DRAFTS[messages[0]["content"]])
        assert messages[2]["content"] == garbage
        return fence(SRC_DOUBLE_OK)

    config, _, generator_transport = make_config(mute_critic, echo_generator)
    record = single_round(PROBLEMS[1], Solution(source=SRC_DOUBLE_BAD), config)
    assert record.critique is None
    assert record.parse_failure == "missing_section"
    assert record.critique_raw == garbage
    assert record.stopped is False
    assert len(generator_transport.calls) == 1


def test_critic_prompt_never_contains_execution_results():
    config, critic_transport, _ = make_config()
    # the draft prints 6 for input 5; the suite expects 10
    problem, draft = PROBLEMS[1], Solution(source=SRC_DOUBLE_BAD)
    single_round(problem, draft, config)
    (call,) = critic_transport.calls
    prompt = call["payload"]["messages"][0]["content"]
    assert prompt == render_critique_prompt(problem, draft)
    for execution_detail in ("10", "Traceback", "Expected Output", "Actual Output"):
        assert execution_detail not in prompt


# -- full trajectories --------------------------------------------------------

def test_iterate_rejects_bad_round_budget():
    config, _, _ = make_config()
    with pytest.raises(ValueError):
        iterate(PROBLEMS[0], 0, config)


def test_iterate_stops_early_with_single_generator_call():
    config, _, generator_transport = make_config()
    trajectory = iterate(PROBLEMS[0], 5, config)
    assert trajectory.error is None
    assert len(trajectory.rounds) == 1
    assert trajectory.rounds[0].stopped is True
    assert trajectory.final_reward == 1
    # only the zero-shot draft, no revisions
    assert len(generator_transport.calls) == 1


def test_iterate_fix_then_stop():
    config, _, _ = make_config()
    trajectory = iterate(PROBLEMS[1], 3, config)
    assert trajectory.error is None
    assert [r.stopped for r in trajectory.rounds] == [False, True]
    assert trajectory.rounds[0].outcome_after.pass_fraction == 1.0
    assert trajectory.final_reward == 1


def test_iterate_round_failure_keeps_partial_records():
    def flaky_generator(payload):
        messages = payload["messages"]
        if len(messages) == 1:
            return fence(DRAFTS[messages[0]["content"]])
        if messages[2]["content"] == CRITIC_BY_SOURCE[SRC_GREET_V0]:
            return fence(SRC_GREET_V1)
        return "no code fence here"  # second revision cannot be extracted

    config, _, _ = make_config(generator_fn=flaky_generator)
    trajectory = iterate(PROBLEMS[2], 3, config)
    assert trajectory.error is not None
    assert trajectory.error.startswith("round 2:")
    assert "NoCodeBlock" in trajectory.error
    assert len(trajectory.rounds) == 1
    assert trajectory.rounds[0].solution_after.source == SRC_GREET_V1
    assert trajectory.final_reward == 0


def test_timeout_trajectory_final_outcome_times_out():
    config, _, _ = make_config()
    trajectory = iterate(PROBLEMS[5], 2, config)
    assert trajectory.final_reward == 0
    final = metrics.outcome_at_round(trajectory, 2)
    assert any(r.status is CaseStatus.TIMEOUT for r in final.per_case)


# -- batch evaluation ---------------------------------------------------------

def expected_cast_report() -> dict:
    # Hand-computed for the six-problem cast at k=2; see the cast comment.
    return {
        "initial_pass_rate": 2 / 6,
        "pass_at_1": {1: 2 / 6, 2: 3 / 6},
        "delta_up": {1: 1 / 6, 2: 2 / 6},
        "delta_down": {1: 1 / 6, 2: 1 / 6},
        "regression_curve": (1 / 6, 1 / 6),
        "timeout_rate": 1 / 6,
    }


def test_evaluate_dataset_matches_hand_computed_aggregates():
    config, _, _ = make_config()
    report = evaluate_dataset(PROBLEMS, 2, config, workers=1)
    expected = expected_cast_report()
    assert report.initial_pass_rate == expected["initial_pass_rate"]
    assert report.pass_at_1 == expected["pass_at_1"]
    assert report.delta_up == expected["delta_up"]
    assert report.delta_down == expected["delta_down"]
    assert report.regression_curve == expected["regression_curve"]
    assert report.timeout_rate == expected["timeout_rate"]
    assert report.failures == ()
    assert [t.problem_id for t in report.trajectories] == [p.id for p in PROBLEMS]
    # the accounting identity holds exactly at every round (count level)
    for r in (1, 2):
        delta = metrics.revision_deltas(report.trajectories, r)
        assert delta.passed == delta.initial_passed + delta.fixed - delta.broken
        assert delta.pass_at_1 == delta.passed / delta.n_problems


def _strip_volatile(obj):
    if isinstance(obj, dict):
        return {k: _strip_volatile(v) for k, v in obj.items() if k != "wall_time_ms"}
    if isinstance(obj, list):
        return [_strip_volatile(v) for v in obj]
    return obj


def test_evaluate_dataset_worker_count_does_not_change_results():
    config1, _, _ = make_config()
    config4, _, _ = make_config()
    serial = evaluate_dataset(PROBLEMS, 2, config1, workers=1)
    parallel = evaluate_dataset(PROBLEMS, 2, config4, workers=4)
    assert _strip_volatile(report_to_dict(serial)) == _strip_volatile(report_to_dict(parallel))


def test_evaluate_dataset_records_draft_failures_and_continues():
    def failing_drafts(payload):
        messages = payload["messages"]
        if len(messages) == 1 and messages[0]["content"] == PROBLEMS[2].description:
            return "sorry, no code"
        return scripted_generator_fn(payload)

    config, _, _ = make_config(generator_fn=failing_drafts)
    report = evaluate_dataset(PROBLEMS, 2, config, workers=2)
    assert [f.problem_id for f in report.failures] == ["p3-greet"]
    assert "NoCodeBlock" in report.failures[0].error
    assert len(report.trajectories) == 5
    # aggregates now run over five problems
    assert report.initial_pass_rate == 2 / 5


def test_evaluate_dataset_input_validation():
    config, _, _ = make_config()
    with pytest.raises(ValueError):
        evaluate_dataset([], 2, config)
    with pytest.raises(ValueError):
        evaluate_dataset(PROBLEMS, 0, config)
    with pytest.raises(ValueError):
        evaluate_dataset(PROBLEMS, 2, config, workers=0)
    with pytest.raises(ValueError):
        evaluate_dataset([PROBLEMS[0], PROBLEMS[0]], 2, config)


# -- serialization ------------------------------------------------------------

def test_trajectory_jsonl_round_trip(tmp_path):
    config, _, _ = make_config()
    report = evaluate_dataset(PROBLEMS, 2, config, workers=2)
    path = tmp_path / "trajectories.jsonl"
    save_trajectories(report.trajectories, path)
    loaded = load_trajectories(path)
    assert loaded == list(report.trajectories)


def test_final_reward_replays_from_saved_trajectory(tmp_path):
    config, _, _ = make_config()
    report = evaluate_dataset(PROBLEMS, 2, config, workers=2)
    path = tmp_path / "trajectories.jsonl"
    save_trajectories(report.trajectories, path)
    for trajectory in load_trajectories(path):
        final = metrics.outcome_at_round(trajectory, len(trajectory.rounds))
        assert reward(final) == trajectory.final_reward


def test_round_record_dict_round_trip():
    config, _, _ = make_config()
    record = single_round(PROBLEMS[1], Solution(source=SRC_DOUBLE_BAD), config)
    assert round_record_from_dict(round_record_to_dict(record)) == record


def test_trajectory_dict_round_trip_preserves_error():
    trajectory = Trajectory(problem_id="x", rounds=(), final_reward=0, error="round 1: boom")
    assert trajectory_from_dict(trajectory_to_dict(trajectory)) == trajectory


def test_early_stop_state_carries_forward():
    config, _, _ = make_config()
    trajectory = iterate(PROBLEMS[0], 4, config)
    assert len(trajectory.rounds) == 1 and trajectory.rounds[0].stopped
    for later_round in (1, 2, 3, 4):
        assert reward(metrics.outcome_at_round(trajectory, later_round)) == 1
