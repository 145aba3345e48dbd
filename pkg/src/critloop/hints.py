"""Execution-grounded hint synthesis and SFT-record emission.

Maps sandbox outcome classes onto fixed hint texts, builds the hinted critic
prompt, filters critiques that leak the hint's existence, and packages the
survivors as three-field supervised-finetuning records (problem, solution,
critique) — the hint itself never enters a record.
"""
from __future__ import annotations

import json
import logging
import os
from dataclasses import dataclass
from typing import IO, Iterable, Sequence, Union

from critloop.critique import Problem, Solution, fill_template
from critloop.sandbox import (
    CaseStatus,
    ExecutionOutcome,
    OutcomeClass,
    classify_outcome,
)

logger = logging.getLogger(__name__)

HINT_SUCCESS = (
    "The draft solution is correct. A concise and positive feedback is recommended."
)
HINT_FAILURE = (
    "The draft solution is entirely wrong. A concise feedback requesting a fresh "
    "restart is recommended."
)
HINT_PARTIAL_TEMPLATE = (
    "Input:\n{input}\n\nExpected Output:\n{expected_output}\n\nActual Output:\n{actual_output}"
)
# Note: the closing fence really is three single quotes; kept verbatim.
HINT_RUNTIME_TEMPLATE = "The code block:\n```python\n{code_block}\n'''\nraised {error}."

# Timed-out runs share the runtime-error template with a fixed error text.
TIMEOUT_ERROR_TEXT = "execution timed out"

# Fill text for the expected-output slot when the failing case is an
# assertion rather than an stdin/stdout pair.
_ASSERTION_EXPECTED_TEXT = "the assertion holds"

HINTED_PROMPT_TEMPLATE = """You are tasked with analyzing an answer to a problem and providing constructive feedback. Do NOT provide direct solutions.
Please carefully reason about the hint to guide the user.
**Important: Do NOT mention 'the hint' in your feedback.**

Problem description:
<problem>
{problem}
</problem>

Answer:
<answer>
{solution}
</answer>

Hint:
<hint>
{hint}
</hint>

Structure your response using the following format (without <format> tags):
<format>
Analysis:
{{Analysis}}

Improvement suggestions:
{{Suggestions}}

Overall judgment: {{Correct/Incorrect}}
</format>"""

DEFAULT_LEAKAGE_PATTERNS = ("the hint", "hint says", "as hinted")


@dataclass(frozen=True)
class Hint:
    text: str
    outcome_class: OutcomeClass


def synthesize_hint(outcome: ExecutionOutcome, cls: OutcomeClass) -> Hint:
    """Produce the hint for an execution outcome of the stated class.

    ``cls`` must equal ``classify_outcome(outcome)``; requiring the caller to
    pass it keeps mislabeled pipelines from silently producing the wrong
    hint.  Partial successes quote the first failing case; runtime errors
    and timeouts quote the failing program block.
    """
    actual = classify_outcome(outcome)
    if cls is not actual:
        raise ValueError(f"outcome classifies as {actual.value}, not {cls.value}")
    if cls is OutcomeClass.SUCCESS:
        return Hint(text=HINT_SUCCESS, outcome_class=cls)
    if cls is OutcomeClass.FAILURE:
        return Hint(text=HINT_FAILURE, outcome_class=cls)
    if cls is OutcomeClass.PARTIAL_SUCCESS:
        failing = next(r for r in outcome.per_case if r.status is not CaseStatus.PASS)
        expected = failing.expected_output
        if expected is None:
            expected = _ASSERTION_EXPECTED_TEXT
        text = fill_template(
            HINT_PARTIAL_TEMPLATE,
            {
                "input": failing.input or "",
                "expected_output": expected,
                "actual_output": failing.actual or "",
            },
        )
        return Hint(text=text, outcome_class=cls)
    if cls is OutcomeClass.RUNTIME_ERROR:
        failing = next(
            r for r in outcome.per_case if r.status is CaseStatus.RUNTIME_ERROR
        )
        text = fill_template(
            HINT_RUNTIME_TEMPLATE,
            {"code_block": failing.failing_block or "", "error": failing.message or "an error"},
        )
        return Hint(text=text, outcome_class=cls)
    failing = next(r for r in outcome.per_case if r.status is CaseStatus.TIMEOUT)
    text = fill_template(
        HINT_RUNTIME_TEMPLATE,
        {"code_block": failing.failing_block or "", "error": TIMEOUT_ERROR_TEXT},
    )
    return Hint(text=text, outcome_class=cls)


def build_hinted_prompt(problem: Problem, solution: Solution, hint: Union[Hint, str]) -> str:
    """Build the critic prompt that reasons over an execution hint."""
    hint_text = hint.text if isinstance(hint, Hint) else hint
    if not hint_text.strip():
        raise ValueError("hint text must be nonempty")
    if not solution.source.strip():
        raise ValueError("cannot request a critique of an empty solution")
    if "</answer>" in solution.source:
        raise ValueError("solution source contains the '</answer>' delimiter")
    if "</hint>" in hint_text:
        raise ValueError("hint text contains the '</hint>' delimiter")
    return fill_template(
        HINTED_PROMPT_TEMPLATE,
        {"problem": problem.description, "solution": solution.source, "hint": hint_text},
    )


def filter_hint_leakage(
    critique_text: str, patterns: Sequence[str] = DEFAULT_LEAKAGE_PATTERNS
) -> bool:
    """True iff the critique may be kept (no pattern matches, case-insensitive)."""
    lowered = critique_text.lower()
    return not any(p.lower() in lowered for p in patterns)


@dataclass(frozen=True)
class SftRecord:
    """One supervised-finetuning example.  Exactly these three fields; in
    particular, no hint text."""

    problem_id: str
    solution: str
    critique: str


class CritiqueRejected(Exception):
    """A synthesized critique was dropped before record emission."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


def synthesize_sft_record(
    problem: Problem,
    solution: Solution,
    outcome: ExecutionOutcome,
    critique_text: str,
    patterns: Sequence[str] = DEFAULT_LEAKAGE_PATTERNS,
) -> SftRecord:
    """Package a hinted critique as an SFT record, or raise CritiqueRejected.

    ``outcome`` is the execution result the hint was derived from; it gates
    nothing here beyond a sanity check, but callers must supply it so records
    can only be built where an execution actually happened.
    """
    if not isinstance(outcome, ExecutionOutcome):
        raise ValueError("outcome must be an ExecutionOutcome")
    if not critique_text.strip():
        raise CritiqueRejected("empty critique")
    lowered = critique_text.lower()
    for pattern in patterns:
        if pattern.lower() in lowered:
            raise CritiqueRejected(f"hint leakage: matched pattern {pattern!r}")
    return SftRecord(problem_id=problem.id, solution=solution.source, critique=critique_text)


def sft_record_to_dict(record: SftRecord) -> dict:
    return {
        "problem_id": record.problem_id,
        "solution": record.solution,
        "critique": record.critique,
    }


def sft_record_from_dict(data: dict) -> SftRecord:
    extra = set(data) - {"problem_id", "solution", "critique"}
    if extra:
        raise ValueError(f"SFT record carries unexpected fields: {sorted(extra)}")
    return SftRecord(
        problem_id=data["problem_id"], solution=data["solution"], critique=data["critique"]
    )


def save_sft_records(records: Iterable[SftRecord], destination: Union[str, os.PathLike, IO[str]]) -> None:
    """Write records as JSONL, one object per line."""
    if hasattr(destination, "write"):
        for record in records:
            destination.write(json.dumps(sft_record_to_dict(record)) + "\n")
        return
    with open(os.fspath(destination), "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(sft_record_to_dict(record)) + "\n")


def load_sft_records(path: Union[str, os.PathLike]) -> list[SftRecord]:
    records = []
    with open(os.fspath(path), encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                records.append(sft_record_from_dict(json.loads(line)))
    return records


# -- end-to-end synthesis pipeline ---------------------------------------------

@dataclass(frozen=True)
class SynthesisFailure:
    problem_id: str
    error: str


@dataclass(frozen=True)
class SftSynthesisReport:
    """Accounting for a synthesis run.

    ``produced + rejected_empty + rejected_leakage + failed`` equals the
    number of problems; ``hints_by_class`` counts the hint kinds that were
    actually built (failed problems may never have reached that stage).
    """

    problems: int
    produced: int
    rejected_empty: int
    rejected_leakage: int
    failed: int
    hints_by_class: dict
    failures: tuple[SynthesisFailure, ...]

    def __post_init__(self) -> None:
        accounted = self.produced + self.rejected_empty + self.rejected_leakage + self.failed
        if accounted != self.problems:
            raise ValueError(
                f"synthesis counts {accounted} do not sum to {self.problems} problems"
            )
        if self.failed != len(self.failures):
            raise ValueError("failed count must match the failures list")


def synthesize_sft_dataset(
    problems: Sequence[Problem],
    generator,
    critic,
    interpreter: tuple,
    limits=None,
    leakage_patterns: Sequence[str] = DEFAULT_LEAKAGE_PATTERNS,
    workers: int = 1,
):
    """Generate, execute, hint, critique, and filter — one record per survivor.

    For each problem: the generator drafts a zero-shot solution, the sandbox
    runs it, the outcome's hint goes into the hinted critic prompt, and the
    critique survives only if non-empty and leak-free.  Failures (endpoint or
    sandbox) are recorded per problem and do not stop the batch.  Results are
    aggregated in input order, so worker count cannot change them when the
    endpoints are deterministic functions of their prompts.

    Returns (records, report).
    """
    # imported here to keep module import costs low for template-only users
    from concurrent.futures import ThreadPoolExecutor

    from critloop.client import ChatMessage, ClientError, complete_for_role, generate_solution
    from critloop.sandbox import SandboxError, run_tests

    if not problems:
        raise ValueError("no problems given")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")

    def synthesize_one(problem: Problem):
        solution = generate_solution(problem, generator)
        outcome = run_tests(solution.source, problem.suite, limits, interpreter=interpreter)
        cls = classify_outcome(outcome)
        hint = synthesize_hint(outcome, cls)
        prompt = build_hinted_prompt(problem, solution, hint)
        critique_text = complete_for_role(critic, [ChatMessage(role="user", content=prompt)])
        try:
            record = synthesize_sft_record(
                problem, solution, outcome, critique_text, leakage_patterns
            )
        except CritiqueRejected as exc:
            return ("rejected", exc.reason, cls)
        return ("record", record, cls)

    results = [None] * len(problems)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(synthesize_one, p): i for i, p in enumerate(problems)}
        for future, index in futures.items():
            try:
                results[index] = future.result()
            except (ClientError, SandboxError, ValueError) as exc:
                results[index] = ("failed", f"{type(exc).__name__}: {exc}", None)

    records = []
    failures = []
    rejected_empty = rejected_leakage = 0
    hints_by_class: dict = {}
    for (kind, payload, cls), problem in zip(results, problems):
        if cls is not None:
            hints_by_class[cls.value] = hints_by_class.get(cls.value, 0) + 1
        if kind == "record":
            records.append(payload)
        elif kind == "rejected":
            logger.info("problem %s: critique rejected (%s)", problem.id, payload)
            if payload.startswith("hint leakage"):
                rejected_leakage += 1
            else:
                rejected_empty += 1
        else:
            logger.warning("problem %s: synthesis failed (%s)", problem.id, payload)
            failures.append(SynthesisFailure(problem_id=problem.id, error=payload))

    report = SftSynthesisReport(
        problems=len(problems),
        produced=len(records),
        rejected_empty=rejected_empty,
        rejected_leakage=rejected_leakage,
        failed=len(failures),
        hints_by_class=hints_by_class,
        failures=tuple(failures),
    )
    return records, report
