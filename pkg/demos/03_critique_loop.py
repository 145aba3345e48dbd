"""A full critique-revision loop, with scripted models and a real sandbox.

Per round: the critic reads the problem and the current solution (never the
execution results — it must judge blind), and either declares it Correct
(the loop stops) or explains what to fix; the generator then revises.  The
endpoints here are deterministic mocks keyed on the request payload, so the
demo runs offline and reproducibly, while the sandbox runs are real child
processes.
"""
import sys

from critloop.client import EndpointConfig, KeyedMockTransport, RoleConfig
from critloop.critique import Problem
from critloop.loop import LoopConfig, evaluate_dataset
from critloop.sandbox import IoCase, ResourceLimits, TestKind, TestSuite

DESC_SUM = "Read space-separated integers and print their sum."
DESC_UPPER = "Read one word and print it uppercased."

SRC_SUM_BAD = "print(sum(map(int, input().split())) - 1)"
SRC_SUM_OK = "print(sum(map(int, input().split())))"
SRC_UPPER_OK = "print(input().upper())"

CRITIQUES = {
    SRC_SUM_BAD: (
        "Analysis:\nThe total comes out one lower than expected.\n\n"
        "Improvement suggestions:\nDrop the subtraction; sum the numbers directly.\n\n"
        "Overall judgment: Incorrect"
    ),
    SRC_SUM_OK: (
        "Analysis:\nSums the parsed integers and prints the result.\n\n"
        "Improvement suggestions:\nNone needed.\n\n"
        "Overall judgment: Correct"
    ),
    SRC_UPPER_OK: (
        "Analysis:\nUppercases the input word.\n\n"
        "Improvement suggestions:\nNone needed.\n\n"
        "Overall judgment: Correct"
    ),
}
DRAFTS = {DESC_SUM: SRC_SUM_BAD, DESC_UPPER: SRC_UPPER_OK}
REVISIONS = {CRITIQUES[SRC_SUM_BAD]: SRC_SUM_OK}


def critic_fn(payload: dict) -> str:
    prompt = payload["messages"][-1]["content"]
    source = prompt.split("<answer>\n", 1)[1].rsplit("\n</answer>", 1)[0]
    return CRITIQUES[source]


def generator_fn(payload: dict) -> str:
    messages = payload["messages"]
    source = DRAFTS[messages[0]["content"]] if len(messages) == 1 else REVISIONS[messages[2]["content"]]
    return f"```\n{source}\n```"


def main() -> None:
    endpoint = EndpointConfig(base_url="http://mock.invalid/v1")
    config = LoopConfig(
        critic=RoleConfig(endpoint=endpoint, model="critic", transport=KeyedMockTransport(critic_fn)),
        generator=RoleConfig(endpoint=endpoint, model="gen", transport=KeyedMockTransport(generator_fn)),
        interpreter=(sys.executable,),
        limits=ResourceLimits(per_case_timeout_ms=5000, max_output_bytes=100_000),
    )
    problems = [
        Problem(id="sumlist", description=DESC_SUM,
                suite=TestSuite(TestKind.STDIN_STDOUT, (IoCase(input="1 2 3", expected_output="6"),))),
        Problem(id="upper", description=DESC_UPPER,
                suite=TestSuite(TestKind.STDIN_STDOUT, (IoCase(input="cat", expected_output="CAT"),))),
    ]
    report = evaluate_dataset(problems, 2, config, workers=2)

    for trajectory in report.trajectories:
        print(f"--- {trajectory.problem_id} (final reward {trajectory.final_reward})")
        for record in trajectory.rounds:
            verdict = record.critique.judgment.value if record.critique else "unparseable"
            line = f"    round {record.round}: judged {verdict}"
            if record.stopped:
                line += " -> stop"
            else:
                line += f"; revised to {record.solution_after.source!r}"
            print(line)
    print()
    print(f"initial pass rate      {report.initial_pass_rate:.2f}")
    for at_round, rate in sorted(report.pass_at_1.items()):
        print(f"pass@1 after round {at_round}   {rate:.2f}"
              f"   (fixed {report.delta_up[at_round]:.2f}, broke {report.delta_down[at_round]:.2f})")


if __name__ == "__main__":
    main()
