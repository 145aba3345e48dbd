"""Curation of raw programming problems into executable test suites.

Raw records arrive as JSON Lines with a ``description`` and a list of
``tests`` in one of two shapes: function calls ({"fn", "args", "expected"},
turned into assertion sources) or stdin/stdout pairs ({"input",
"expected_output"}).  Curation drops markup-polluted descriptions, rejects
unusable or mixed test lists, collapses duplicate problems, and removes
anything that collides with a held-out evaluation set.  Every drop is
counted, and the counts must sum back to the input size.
"""
from __future__ import annotations

import json
import logging
import os
import re
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence, Union

from critloop.critique import Problem, problem_from_dict, problem_to_dict
from critloop.sandbox import FunctionCase, IoCase, TestKind, TestSuite

logger = logging.getLogger(__name__)

DEFAULT_MALFORMED_PATTERNS: tuple[str, ...] = ("<img", "<span")

# stdin that smuggles in an assignment ("x = 5") was written for a harness
# that exec'd its inputs; it cannot be fed to a program's standard input
_ASSIGNMENT_RE = re.compile(r"(?m)^\s*[A-Za-z_]\w*\s*=(?!=)")


@dataclass(frozen=True)
class CurationReport:
    """Where every input record went.  The drop counts plus ``retained``
    must equal ``input_count``; ``tests_dropped`` counts individual tests
    removed from problems that were otherwise kept."""

    input_count: int
    malformed_removed: int
    unusable_tests_removed: int
    deduped: int
    decontaminated: int
    retained: int
    tests_dropped: int

    def __post_init__(self) -> None:
        accounted = (
            self.malformed_removed
            + self.unusable_tests_removed
            + self.deduped
            + self.decontaminated
            + self.retained
        )
        if accounted != self.input_count:
            raise ValueError(
                f"curation counts {accounted} do not sum to input {self.input_count}"
            )
        if min(
            self.input_count,
            self.malformed_removed,
            self.unusable_tests_removed,
            self.deduped,
            self.decontaminated,
            self.retained,
            self.tests_dropped,
        ) < 0:
            raise ValueError("curation counts cannot be negative")


def _collapse_whitespace(text: str) -> str:
    return " ".join(text.split())


def is_malformed(description: str, patterns: Sequence[str]) -> bool:
    """Markup artifacts or block-delimiter collisions make a description
    unusable for prompting."""
    lowered = description.lower()
    if any(p.lower() in lowered for p in patterns):
        return True
    return "</problem>" in description or not description.strip()


def function_case_from_record(record: dict) -> Optional[FunctionCase]:
    """Turn {"fn", "args", "expected"} into an assertion, or None if unusable."""
    fn = record.get("fn")
    if not isinstance(fn, str) or not fn.isidentifier():
        return None
    args = record.get("args", [])
    if not isinstance(args, list) or "expected" not in record:
        return None
    rendered_args = ", ".join(repr(a) for a in args)
    return FunctionCase(assertion_source=f"assert {fn}({rendered_args}) == {record['expected']!r}")


def io_case_from_record(record: dict) -> Optional[IoCase]:
    """Turn {"input", "expected_output"} into a case, or None if unusable."""
    stdin = record.get("input")
    expected = record.get("expected_output")
    if not isinstance(stdin, str) or not isinstance(expected, str):
        return None
    if _ASSIGNMENT_RE.search(stdin):
        return None
    return IoCase(input=stdin, expected_output=expected)


def standardize_tests(tests: Sequence[dict]) -> tuple[Optional[TestSuite], int]:
    """Build a homogeneous suite from raw test records.

    Returns (suite, dropped_count).  The suite is None when the problem as a
    whole must go: tests of both kinds mixed together, or nothing usable
    left.
    """
    function_cases: list[FunctionCase] = []
    io_cases: list[IoCase] = []
    dropped = 0
    for record in tests:
        if not isinstance(record, dict):
            dropped += 1
            continue
        if "fn" in record:
            case = function_case_from_record(record)
            if case is None:
                dropped += 1
            else:
                function_cases.append(case)
        elif "input" in record:
            io_case = io_case_from_record(record)
            if io_case is None:
                dropped += 1
            else:
                io_cases.append(io_case)
        else:
            dropped += 1
    if function_cases and io_cases:
        return None, dropped
    if function_cases:
        return TestSuite(TestKind.FUNCTION_BASED, tuple(function_cases)), dropped
    if io_cases:
        return TestSuite(TestKind.STDIN_STDOUT, tuple(io_cases)), dropped
    return None, dropped


def curate(
    records: Sequence[dict],
    eval_ids: Iterable[str] = (),
    eval_descriptions: Iterable[str] = (),
    malformed_patterns: Sequence[str] = DEFAULT_MALFORMED_PATTERNS,
) -> tuple[list[Problem], CurationReport]:
    """Run the full curation pipeline and account for every record.

    Stages, in order: malformed-description filter, test standardization,
    whitespace-insensitive dedup (first occurrence wins), decontamination
    against held-out ids and descriptions.
    """
    held_ids = set(eval_ids)
    held_descriptions = {_collapse_whitespace(d) for d in eval_descriptions}

    malformed = unusable = deduped = decontaminated = tests_dropped = 0
    seen_descriptions: set[str] = set()
    problems: list[Problem] = []
    for index, record in enumerate(records):
        description = record.get("description")
        if not isinstance(description, str) or is_malformed(description, malformed_patterns):
            malformed += 1
            continue
        tests = record.get("tests")
        if not isinstance(tests, list):
            unusable += 1
            continue
        suite, dropped = standardize_tests(tests)
        if suite is None:
            unusable += 1
            continue
        key = _collapse_whitespace(description)
        if key in seen_descriptions:
            deduped += 1
            continue
        seen_descriptions.add(key)
        problem_id = record.get("id") or f"p{index:05d}"
        if problem_id in held_ids or key in held_descriptions:
            decontaminated += 1
            continue
        tests_dropped += dropped
        problems.append(Problem(id=str(problem_id), description=description, suite=suite))

    report = CurationReport(
        input_count=len(records),
        malformed_removed=malformed,
        unusable_tests_removed=unusable,
        deduped=deduped,
        decontaminated=decontaminated,
        retained=len(problems),
        tests_dropped=tests_dropped,
    )
    logger.info(
        "curated %d records: %d retained, %d malformed, %d unusable, %d duplicates, %d held out",
        report.input_count,
        report.retained,
        report.malformed_removed,
        report.unusable_tests_removed,
        report.deduped,
        report.decontaminated,
    )
    return problems, report


# -- file I/O ------------------------------------------------------------------

def load_raw_records(path: Union[str, os.PathLike]) -> list[dict]:
    """Read raw problem records from JSON Lines; blank lines are skipped."""
    path = os.fspath(path)
    records = []
    try:
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    record = json.loads(line)
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{line_no}: invalid JSON: {exc}") from exc
                if not isinstance(record, dict):
                    raise ValueError(f"{path}:{line_no}: expected an object")
                records.append(record)
    except OSError as exc:
        raise OSError(f"cannot read raw records from {path}: {exc}") from exc
    return records


def save_problems(problems: Sequence[Problem], path: Union[str, os.PathLike]) -> None:
    path = os.fspath(path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for problem in problems:
                fh.write(json.dumps(problem_to_dict(problem), ensure_ascii=False) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write problems to {path}: {exc}") from exc


def load_problems(path: Union[str, os.PathLike]) -> list[Problem]:
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return [problem_from_dict(json.loads(line)) for line in fh if line.strip()]
    except OSError as exc:
        raise OSError(f"cannot read problems from {path}: {exc}") from exc


def report_to_dict(report: CurationReport) -> dict:
    return {
        "input_count": report.input_count,
        "malformed_removed": report.malformed_removed,
        "unusable_tests_removed": report.unusable_tests_removed,
        "deduped": report.deduped,
        "decontaminated": report.decontaminated,
        "retained": report.retained,
        "tests_dropped": report.tests_dropped,
    }
