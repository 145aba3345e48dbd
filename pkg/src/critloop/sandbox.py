"""Sandboxed execution of candidate programs against small test suites.

Every test case runs the candidate in a fresh child process under a
runtime-configured interpreter command, with a per-case wall-clock timeout
and a cap on captured output.  Two suite styles are supported: assertion
suites (the assertion block is appended to the program) and stdin/stdout
suites (input is fed on stdin and stdout is compared exactly after
trailing-whitespace and trailing-newline normalization).
"""
from __future__ import annotations

import enum
import logging
import os
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass
from typing import Any, Optional, Sequence, Union

logger = logging.getLogger(__name__)

# Marker prefix for cases whose output exceeded max_output_bytes.  Overflow is
# surfaced as a distinct runtime-error message, never as a wrong-output
# comparison against truncated text.
OUTPUT_OVERFLOW_PREFIX = "OutputOverflow:"

_READ_CHUNK = 65536


class SandboxError(Exception):
    """Base class for harness-level failures (not candidate failures)."""


class InterpreterNotFound(SandboxError):
    """The configured interpreter command does not exist."""


class SandboxSpawnFailure(SandboxError):
    """The child process could not be started for a non-lookup reason."""


class TestKind(enum.Enum):
    FUNCTION_BASED = "function_based"
    STDIN_STDOUT = "stdin_stdout"

    __test__ = False  # not a pytest class, despite the name


@dataclass(frozen=True)
class FunctionCase:
    """Assertion block appended to the candidate program."""

    assertion_source: str

    def __post_init__(self) -> None:
        if not self.assertion_source.strip():
            raise ValueError("assertion_source must be nonempty")


@dataclass(frozen=True)
class IoCase:
    """Stdin payload and the stdout it must produce."""

    input: str
    expected_output: str


TestCase = Union[FunctionCase, IoCase]

_CASE_TYPE = {TestKind.FUNCTION_BASED: FunctionCase, TestKind.STDIN_STDOUT: IoCase}


@dataclass(frozen=True)
class TestSuite:
    __test__ = False  # not a pytest class, despite the name

    kind: TestKind
    cases: tuple[TestCase, ...]

    def __post_init__(self) -> None:
        if not self.cases:
            raise ValueError("test suite must contain at least one case")
        want = _CASE_TYPE[self.kind]
        for case in self.cases:
            if not isinstance(case, want):
                raise ValueError(
                    f"suite of kind {self.kind.value} contains a {type(case).__name__}"
                )


@dataclass(frozen=True)
class ResourceLimits:
    per_case_timeout_ms: int = 5000
    max_output_bytes: int = 1_000_000

    def __post_init__(self) -> None:
        if self.per_case_timeout_ms <= 0:
            raise ValueError("per_case_timeout_ms must be positive")
        if self.max_output_bytes <= 0:
            raise ValueError("max_output_bytes must be positive")


class CaseStatus(enum.Enum):
    PASS = "pass"
    WRONG_OUTPUT = "wrong_output"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class CaseResult:
    """Outcome of one test case.

    Besides the status payload (``actual`` for wrong output, ``message`` and
    ``failing_block`` for runtime errors), failing results carry the case's
    own ``input``/``expected_output`` so a diagnosis can be built from the
    result alone.
    """

    status: CaseStatus
    actual: Optional[str] = None
    message: Optional[str] = None
    failing_block: Optional[str] = None
    input: Optional[str] = None
    expected_output: Optional[str] = None


@dataclass(frozen=True)
class ExecutionOutcome:
    per_case: tuple[CaseResult, ...]
    pass_fraction: float
    wall_time_ms: int

    def __post_init__(self) -> None:
        if not self.per_case:
            raise ValueError("outcome must cover at least one case")
        passed = sum(1 for r in self.per_case if r.status is CaseStatus.PASS)
        expected = passed / len(self.per_case)
        if abs(self.pass_fraction - expected) > 1e-12:
            raise ValueError(
                f"pass_fraction {self.pass_fraction} inconsistent with per_case ({expected})"
            )


class OutcomeClass(enum.Enum):
    SUCCESS = "success"
    FAILURE = "failure"
    PARTIAL_SUCCESS = "partial_success"
    RUNTIME_ERROR = "runtime_error"
    TIMEOUT = "timeout"


def classify_outcome(outcome: ExecutionOutcome) -> OutcomeClass:
    """Collapse per-case results into one outcome class.

    Success iff every case passed; otherwise a raised case wins over a
    timed-out case, which wins over plain wrong output; all-wrong is Failure
    and a mix of passes and wrong outputs is PartialSuccess.
    """
    statuses = [r.status for r in outcome.per_case]
    if outcome.pass_fraction == 1.0:
        return OutcomeClass.SUCCESS
    if any(s is CaseStatus.RUNTIME_ERROR for s in statuses):
        return OutcomeClass.RUNTIME_ERROR
    if any(s is CaseStatus.TIMEOUT for s in statuses):
        return OutcomeClass.TIMEOUT
    if outcome.pass_fraction == 0.0:
        return OutcomeClass.FAILURE
    return OutcomeClass.PARTIAL_SUCCESS


def reward(outcome: ExecutionOutcome) -> int:
    """Binary verifiable reward: 1 iff every case passed."""
    return 1 if classify_outcome(outcome) is OutcomeClass.SUCCESS else 0


def run_tests(
    solution: str,
    suite: TestSuite,
    limits: Optional[ResourceLimits] = None,
    *,
    interpreter: Sequence[str],
) -> ExecutionOutcome:
    """Execute ``solution`` against every case of ``suite``.

    ``interpreter`` is the argv prefix of the external interpreter command
    (e.g. ``("python3",)``); the candidate program's temp-file path is
    appended to it.  Candidate failures land in per-case results; only
    harness-level problems (unknown interpreter, spawn failure) raise.
    """
    if not interpreter or not all(isinstance(part, str) and part for part in interpreter):
        raise ValueError("interpreter must be a nonempty command sequence")
    limits = limits or ResourceLimits()
    results = []
    started = time.monotonic()
    for case in suite.cases:
        if suite.kind is TestKind.FUNCTION_BASED:
            results.append(_run_function_case(solution, case, limits, interpreter))
        else:
            results.append(_run_io_case(solution, case, limits, interpreter))
    wall_ms = int((time.monotonic() - started) * 1000)
    passed = sum(1 for r in results if r.status is CaseStatus.PASS)
    return ExecutionOutcome(
        per_case=tuple(results),
        pass_fraction=passed / len(results),
        wall_time_ms=wall_ms,
    )


def _run_function_case(
    solution: str, case: FunctionCase, limits: ResourceLimits, interpreter: Sequence[str]
) -> CaseResult:
    program = f"{solution}\n\n{case.assertion_source}\n"
    run = _run_child(program, None, limits, interpreter)
    if run.overflowed:
        return _overflow_result(solution, limits, input=case.assertion_source)
    if run.timed_out:
        return CaseResult(
            status=CaseStatus.TIMEOUT, failing_block=solution, input=case.assertion_source
        )
    if run.returncode == 0:
        return CaseResult(status=CaseStatus.PASS)
    last = _last_stderr_line(run.stderr, run.returncode)
    if last.startswith("AssertionError"):
        # The appended assertion itself failed: that is a wrong answer, not a
        # crash, so Failure/PartialSuccess stay reachable for assertion suites.
        return CaseResult(
            status=CaseStatus.WRONG_OUTPUT, actual=last, input=case.assertion_source
        )
    return CaseResult(
        status=CaseStatus.RUNTIME_ERROR,
        message=last,
        failing_block=solution,
        input=case.assertion_source,
    )


def _run_io_case(
    solution: str, case: IoCase, limits: ResourceLimits, interpreter: Sequence[str]
) -> CaseResult:
    run = _run_child(solution, case.input, limits, interpreter)
    if run.overflowed:
        return _overflow_result(
            solution, limits, input=case.input, expected_output=case.expected_output
        )
    if run.timed_out:
        return CaseResult(
            status=CaseStatus.TIMEOUT,
            failing_block=solution,
            input=case.input,
            expected_output=case.expected_output,
        )
    if run.returncode != 0:
        return CaseResult(
            status=CaseStatus.RUNTIME_ERROR,
            message=_last_stderr_line(run.stderr, run.returncode),
            failing_block=solution,
            input=case.input,
            expected_output=case.expected_output,
        )
    if _normalize_output(run.stdout) == _normalize_output(case.expected_output):
        return CaseResult(status=CaseStatus.PASS)
    return CaseResult(
        status=CaseStatus.WRONG_OUTPUT,
        actual=run.stdout,
        input=case.input,
        expected_output=case.expected_output,
    )


def _overflow_result(solution: str, limits: ResourceLimits, **fields: str) -> CaseResult:
    return CaseResult(
        status=CaseStatus.RUNTIME_ERROR,
        message=f"{OUTPUT_OVERFLOW_PREFIX} standard output exceeded {limits.max_output_bytes} bytes",
        failing_block=solution,
        **fields,
    )


def _normalize_output(text: str) -> str:
    lines = [line.rstrip() for line in text.split("\n")]
    while lines and lines[-1] == "":
        lines.pop()
    return "\n".join(lines)


def _last_stderr_line(stderr: str, returncode: int) -> str:
    for line in reversed(stderr.splitlines()):
        if line.strip():
            return line.strip()
    return f"exited with status {returncode}"


@dataclass
class _ChildRun:
    returncode: int = 0
    stdout: str = ""
    stderr: str = ""
    timed_out: bool = False
    overflowed: bool = False


def _run_child(
    program: str, stdin_data: Optional[str], limits: ResourceLimits, interpreter: Sequence[str]
) -> _ChildRun:
    """Run one fresh child process; never raises for candidate misbehaviour."""
    fd, path = tempfile.mkstemp(suffix=".py", prefix="critloop_case_")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(program)
        return _spawn_and_collect(list(interpreter) + [path], stdin_data, limits)
    finally:
        try:
            os.unlink(path)
        except OSError:  # pragma: no cover - best-effort cleanup
            pass


def _spawn_and_collect(
    argv: list[str], stdin_data: Optional[str], limits: ResourceLimits
) -> _ChildRun:
    try:
        proc = subprocess.Popen(
            argv,
            stdin=subprocess.PIPE,
            stdout=subprocess.PIPE,
            stderr=subprocess.PIPE,
        )
    except FileNotFoundError as exc:
        raise InterpreterNotFound(f"interpreter not found: {argv[0]}") from exc
    except OSError as exc:
        raise SandboxSpawnFailure(f"could not spawn {argv[0]}: {exc}") from exc

    run = _ChildRun()
    overflow = threading.Event()

    def read_stream(stream: Any, sink: list[bytes], enforce_cap: bool) -> None:
        total = 0
        while True:
            chunk = stream.read(_READ_CHUNK)
            if not chunk:
                break
            total += len(chunk)
            if total > limits.max_output_bytes:
                if enforce_cap:
                    overflow.set()
                    proc.kill()
                    break
                continue  # stderr past the cap: drop, keep draining
            sink.append(chunk)
        stream.close()

    out_chunks: list[bytes] = []
    err_chunks: list[bytes] = []
    readers = [
        threading.Thread(target=read_stream, args=(proc.stdout, out_chunks, True)),
        threading.Thread(target=read_stream, args=(proc.stderr, err_chunks, False)),
    ]
    for t in readers:
        t.start()

    def feed_stdin() -> None:
        try:
            if stdin_data is not None:
                proc.stdin.write(stdin_data.encode("utf-8"))
        except (BrokenPipeError, OSError):
            pass
        finally:
            try:
                proc.stdin.close()
            except OSError:
                pass

    writer = threading.Thread(target=feed_stdin)
    writer.start()

    try:
        run.returncode = proc.wait(timeout=limits.per_case_timeout_ms / 1000.0)
    except subprocess.TimeoutExpired:
        proc.kill()
        run.returncode = proc.wait()
        run.timed_out = True
    for t in readers:
        t.join()
    writer.join()

    if overflow.is_set():
        run.overflowed = True
        run.timed_out = False  # the kill was ours, not the clock's
    run.stdout = b"".join(out_chunks).decode("utf-8", errors="replace")
    run.stderr = b"".join(err_chunks).decode("utf-8", errors="replace")
    return run


# -- JSON plumbing -----------------------------------------------------------

def suite_to_dict(suite: TestSuite) -> dict:
    if suite.kind is TestKind.FUNCTION_BASED:
        cases = [{"assertion_source": c.assertion_source} for c in suite.cases]
    else:
        cases = [{"input": c.input, "expected_output": c.expected_output} for c in suite.cases]
    return {"kind": suite.kind.value, "cases": cases}


def suite_from_dict(data: dict) -> TestSuite:
    try:
        kind = TestKind(data["kind"])
        raw_cases = data["cases"]
    except (KeyError, ValueError, TypeError) as exc:
        raise ValueError(f"malformed test suite record: {exc}") from exc
    cases: list[TestCase] = []
    for raw in raw_cases:
        if kind is TestKind.FUNCTION_BASED:
            cases.append(FunctionCase(assertion_source=raw["assertion_source"]))
        else:
            cases.append(IoCase(input=raw["input"], expected_output=raw["expected_output"]))
    return TestSuite(kind=kind, cases=tuple(cases))


def case_result_to_dict(result: CaseResult) -> dict:
    data: dict = {"status": result.status.value}
    for key in ("actual", "message", "failing_block", "input", "expected_output"):
        value = getattr(result, key)
        if value is not None:
            data[key] = value
    return data


def case_result_from_dict(data: dict) -> CaseResult:
    return CaseResult(
        status=CaseStatus(data["status"]),
        actual=data.get("actual"),
        message=data.get("message"),
        failing_block=data.get("failing_block"),
        input=data.get("input"),
        expected_output=data.get("expected_output"),
    )


def outcome_to_dict(outcome: ExecutionOutcome) -> dict:
    return {
        "per_case": [case_result_to_dict(r) for r in outcome.per_case],
        "pass_fraction": outcome.pass_fraction,
        "wall_time_ms": outcome.wall_time_ms,
    }


def outcome_from_dict(data: dict) -> ExecutionOutcome:
    return ExecutionOutcome(
        per_case=tuple(case_result_from_dict(r) for r in data["per_case"]),
        pass_fraction=data["pass_fraction"],
        wall_time_ms=data["wall_time_ms"],
    )
