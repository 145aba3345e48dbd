"""Synthesizing critique-finetuning records, and why some get thrown away.

Pipeline per problem: sample a draft, execute it, map the outcome to a hint,
ask the critic for a critique with the hint embedded in its prompt, then
filter.  Empty critiques are useless; critiques that *mention* the hint are
worse than useless — they would teach the critic to justify verdicts by
appeal to information it won't have at inference time.  The demo scripts one
clean critic and one leaky one to show both paths.
"""
import sys

from critloop.client import EndpointConfig, KeyedMockTransport, RoleConfig
from critloop.critique import Problem
from critloop.hints import synthesize_sft_dataset
from critloop.sandbox import IoCase, ResourceLimits, TestKind, TestSuite

DESC_ECHO = "Read one line and print it unchanged."
DESC_DOUBLE = "Read an integer and print twice its value."
DESC_GREET = "Print the word hello."

PROBLEMS = [
    Problem(id="echo", description=DESC_ECHO,
            suite=TestSuite(TestKind.STDIN_STDOUT, (IoCase(input="hi", expected_output="hi"),))),
    Problem(id="double", description=DESC_DOUBLE,
            suite=TestSuite(TestKind.STDIN_STDOUT, (IoCase(input="5", expected_output="10"),))),
    Problem(id="greet", description=DESC_GREET,
            suite=TestSuite(TestKind.STDIN_STDOUT, (IoCase(input="", expected_output="hello"),))),
]

DRAFTS = {
    DESC_ECHO: "print(input())",        # passes -> success hint
    DESC_DOUBLE: "print(int(input()) + 1)",  # fails -> failure hint
    DESC_GREET: "print('helo')",        # fails, and the critic will leak
}

CLEAN_CRITIQUE = (
    "Analysis:\nThe draft was checked against the task requirements.\n\n"
    "Improvement suggestions:\nAddress the mismatch between intent and output.\n\n"
    "Overall judgment: Incorrect"
)
LEAKY_CRITIQUE = CLEAN_CRITIQUE.replace(
    "The draft was checked", "As hinted, the draft was checked"
)


def generator_fn(payload: dict) -> str:
    return f"```\n{DRAFTS[payload['messages'][0]['content']]}\n```"


def critic_fn(payload: dict) -> str:
    prompt = payload["messages"][-1]["content"]
    return LEAKY_CRITIQUE if DESC_GREET in prompt else CLEAN_CRITIQUE


def main() -> None:
    endpoint = EndpointConfig(base_url="http://mock.invalid/v1")
    generator = RoleConfig(endpoint=endpoint, model="gen", transport=KeyedMockTransport(generator_fn))
    critic = RoleConfig(endpoint=endpoint, model="critic", transport=KeyedMockTransport(critic_fn))
    records, report = synthesize_sft_dataset(
        PROBLEMS,
        generator,
        critic,
        interpreter=(sys.executable,),
        limits=ResourceLimits(per_case_timeout_ms=5000, max_output_bytes=100_000),
        workers=2,
    )

    print(f"{report.produced} records kept out of {report.problems} problems")
    print(f"  rejected for hint leakage: {report.rejected_leakage}")
    print(f"  rejected as empty:         {report.rejected_empty}")
    print(f"  hint classes used:         {report.hints_by_class}")
    print()
    for record in records:
        print(f"--- kept record for {record.problem_id}")
        print(f"    solution: {record.solution!r}")
        first_line = record.critique.splitlines()[1]
        print(f"    critique starts: {first_line!r}")
    print()
    print("the greet critique began 'As hinted, ...' and was dropped:")
    print(f"  leaky text: {LEAKY_CRITIQUE.splitlines()[1]!r}")


if __name__ == "__main__":
    main()
