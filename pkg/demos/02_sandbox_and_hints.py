"""From execution results to critique-writing hints.

Candidate solutions run against their tests in a sandbox (one fresh child
process per case).  The outcome class — success, total failure, partial
success, runtime error — selects a hint template, and the hint is embedded
in the prompt a critic model would see when writing training critiques.
The critic is told what went wrong, but is never allowed to say how it
knows: critiques that mention the hint get filtered (see demo 04).
"""
import sys

from critloop.critique import Problem, Solution
from critloop.hints import build_hinted_prompt, synthesize_hint
from critloop.sandbox import (
    IoCase,
    ResourceLimits,
    TestKind,
    TestSuite,
    classify_outcome,
    run_tests,
)

PROBLEM = Problem(
    id="double",
    description="Read an integer and print twice its value.",
    suite=TestSuite(
        TestKind.STDIN_STDOUT,
        (IoCase(input="2", expected_output="4"), IoCase(input="10", expected_output="20")),
    ),
)

CANDIDATES = {
    "correct": "print(int(input()) * 2)",
    "half right": "print(int(input()) + 2)",   # passes 2 -> 4, fails 10 -> 12
    "crashes": "print(int(input()) / 0)",
    "entirely wrong": "print('banana')",
}

LIMITS = ResourceLimits(per_case_timeout_ms=5000, max_output_bytes=100_000)


def main() -> None:
    for label, source in CANDIDATES.items():
        solution = Solution(source=source)
        outcome = run_tests(solution.source, PROBLEM.suite, LIMITS, interpreter=(sys.executable,))
        cls = classify_outcome(outcome)
        hint = synthesize_hint(outcome, cls)
        print(f"--- {label}: {source!r}")
        print(f"    pass fraction {outcome.pass_fraction:.2f} -> class {cls.value}")
        print("    hint:")
        for line in hint.text.splitlines():
            print(f"      {line}")
        print()

    solution = Solution(source=CANDIDATES["half right"])
    outcome = run_tests(solution.source, PROBLEM.suite, LIMITS, interpreter=(sys.executable,))
    hint = synthesize_hint(outcome, classify_outcome(outcome))
    print("=== full critic prompt for the half-right candidate ===")
    print(build_hinted_prompt(PROBLEM, solution, hint))


if __name__ == "__main__":
    main()
