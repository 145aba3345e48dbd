"""Critique-revision orchestration.

A round shows the critic the problem and the current solution (never
execution results — the critic judges from the text alone), parses its
judgment, and either stops on Correct or forwards the critique verbatim to
the generator for a revision, which is then executed.  Trajectories record
every round; batches fan out over a thread pool and aggregate in input
order, so results are identical for any worker count when the model
endpoints are deterministic functions of their prompts.
"""
from __future__ import annotations

import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence, Union

from critloop import metrics
from critloop.client import (
    ChatMessage,
    ClientError,
    RoleConfig,
    complete_for_role,
    generate_solution,
    revise_solution,
)
from critloop.critique import (
    Critique,
    Judgment,
    ParseFailure,
    Problem,
    Solution,
    critique_from_dict,
    critique_to_dict,
    parse_critique,
    render_critique_prompt,
    solution_from_dict,
    solution_to_dict,
)
from critloop.sandbox import (
    ExecutionOutcome,
    ResourceLimits,
    SandboxError,
    outcome_from_dict,
    outcome_to_dict,
    reward,
    run_tests,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class LoopConfig:
    """Roles and sandbox settings shared by every round of a run."""

    critic: RoleConfig
    generator: RoleConfig
    interpreter: tuple[str, ...]
    limits: ResourceLimits = field(default_factory=ResourceLimits)

    def __post_init__(self) -> None:
        if not self.interpreter:
            raise ValueError("interpreter argv must be non-empty")


@dataclass(frozen=True)
class RoundRecord:
    """One critique-revision round.

    ``critique`` is None when the critic's reply did not parse; the verbatim
    reply is always kept in ``critique_raw`` and is what the generator saw.
    A round that stopped (judgment Correct) has no revision and no new
    outcome.
    """

    round: int
    critique: Optional[Critique]
    critique_raw: str
    parse_failure: Optional[str]
    solution_before: Solution
    solution_after: Optional[Solution]
    outcome_before: ExecutionOutcome
    outcome_after: Optional[ExecutionOutcome]
    stopped: bool

    def __post_init__(self) -> None:
        if self.round < 1:
            raise ValueError(f"round must be >= 1, got {self.round}")
        if (self.critique is None) != (self.parse_failure is not None):
            raise ValueError("exactly one of critique / parse_failure must be set")
        if self.stopped:
            if self.solution_after is not None or self.outcome_after is not None:
                raise ValueError("a stopped round cannot carry a revision")
        else:
            if self.solution_after is None or self.outcome_after is None:
                raise ValueError("an unstopped round must carry a revision and its outcome")


@dataclass(frozen=True)
class Trajectory:
    """All rounds for one problem.

    ``final_reward`` is the reward of the last solution that was actually
    executed.  ``error`` is set when a round failed mid-flight; the rounds
    that completed before it are retained.
    """

    problem_id: str
    rounds: tuple[RoundRecord, ...]
    final_reward: int
    error: Optional[str] = None

    def __post_init__(self) -> None:
        if self.final_reward not in (0, 1):
            raise ValueError(f"final_reward must be 0 or 1, got {self.final_reward}")
        if not self.rounds and self.error is None:
            raise ValueError("a trajectory without rounds must carry an error")


def judged_correct(record: RoundRecord) -> bool:
    return record.critique is not None and record.critique.judgment is Judgment.CORRECT


def single_round(
    problem: Problem,
    draft: Solution,
    config: LoopConfig,
    round_no: int = 1,
    outcome_before: Optional[ExecutionOutcome] = None,
) -> RoundRecord:
    """Critique ``draft`` and, unless judged Correct, revise and re-execute.

    The critic prompt is rendered from the problem and solution text only,
    before this round's sandbox run, so execution results cannot leak into
    it.  An unparseable critique counts as Incorrect and its raw text is
    forwarded to the generator unchanged.
    """
    prompt = render_critique_prompt(problem, draft)
    raw = complete_for_role(config.critic, [ChatMessage(role="user", content=prompt)])
    critique: Optional[Critique] = None
    failure: Optional[str] = None
    try:
        critique = parse_critique(raw)
    except ParseFailure as exc:
        failure = exc.kind.value
        logger.info("round %d: critique did not parse (%s)", round_no, exc.kind.value)

    if outcome_before is None:
        outcome_before = run_tests(
            draft.source, problem.suite, config.limits, interpreter=config.interpreter
        )

    if critique is not None and critique.judgment is Judgment.CORRECT:
        return RoundRecord(
            round=round_no,
            critique=critique,
            critique_raw=raw,
            parse_failure=None,
            solution_before=draft,
            solution_after=None,
            outcome_before=outcome_before,
            outcome_after=None,
            stopped=True,
        )

    revised = revise_solution(problem, draft, raw, config.generator)
    outcome_after = run_tests(
        revised.source, problem.suite, config.limits, interpreter=config.interpreter
    )
    return RoundRecord(
        round=round_no,
        critique=critique,
        critique_raw=raw,
        parse_failure=failure,
        solution_before=draft,
        solution_after=revised,
        outcome_before=outcome_before,
        outcome_after=outcome_after,
        stopped=False,
    )


def iterate(problem: Problem, k: int, config: LoopConfig) -> Trajectory:
    """Zero-shot draft, then up to ``k`` critique-revision rounds.

    Stops early when the critic judges the current solution Correct.  A
    failure inside a round (endpoint or sandbox) aborts the trajectory with
    the completed rounds retained and the error recorded; a failure while
    producing the draft propagates, since there is nothing to retain.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    draft = generate_solution(problem, config.generator)
    current = draft
    current_outcome = run_tests(
        draft.source, problem.suite, config.limits, interpreter=config.interpreter
    )
    rounds: list[RoundRecord] = []
    error: Optional[str] = None
    for round_no in range(1, k + 1):
        try:
            record = single_round(problem, current, config, round_no, current_outcome)
        except (ClientError, SandboxError, ValueError) as exc:
            error = f"round {round_no}: {type(exc).__name__}: {exc}"
            logger.warning("problem %s aborted: %s", problem.id, error)
            break
        rounds.append(record)
        if record.stopped:
            break
        assert record.solution_after is not None and record.outcome_after is not None
        current = record.solution_after
        current_outcome = record.outcome_after
    return Trajectory(
        problem_id=problem.id,
        rounds=tuple(rounds),
        final_reward=reward(current_outcome),
        error=error,
    )


# -- batch evaluation ---------------------------------------------------------

@dataclass(frozen=True)
class ProblemFailure:
    problem_id: str
    error: str


@dataclass(frozen=True)
class EvalReport:
    """Batch results plus the revision-accounting aggregates.

    Aggregates cover trajectories that completed without error; per-round
    maps are keyed by round number as produced by ``metrics.revision_deltas``.
    """

    trajectories: tuple[Trajectory, ...]
    failures: tuple[ProblemFailure, ...]
    rounds: int
    initial_pass_rate: float
    pass_at_1: dict[int, float]
    delta_up: dict[int, float]
    delta_down: dict[int, float]
    regression_curve: tuple[float, ...]
    timeout_rate: float


def evaluate_dataset(
    problems: Sequence[Problem],
    k: int,
    config: LoopConfig,
    workers: int = 1,
) -> EvalReport:
    """Run ``iterate`` over every problem and aggregate in input order.

    A problem whose draft phase fails is recorded as a failure and the batch
    continues; aggregates are over the remaining trajectories.
    """
    if not problems:
        raise ValueError("no problems given")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if workers < 1:
        raise ValueError(f"workers must be >= 1, got {workers}")
    seen: set[str] = set()
    for p in problems:
        if p.id in seen:
            raise ValueError(f"duplicate problem id: {p.id}")
        seen.add(p.id)

    results: list[Union[Trajectory, ProblemFailure]] = [None] * len(problems)  # type: ignore[list-item]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(iterate, p, k, config): i for i, p in enumerate(problems)}
        for future, index in futures.items():
            try:
                results[index] = future.result()
            except (ClientError, SandboxError, ValueError) as exc:
                results[index] = ProblemFailure(
                    problem_id=problems[index].id,
                    error=f"{type(exc).__name__}: {exc}",
                )

    trajectories = tuple(r for r in results if isinstance(r, Trajectory))
    failures = tuple(r for r in results if isinstance(r, ProblemFailure))
    clean = [t for t in trajectories if t.error is None]
    if not clean:
        raise ValueError("every problem failed; nothing to aggregate")

    pass_at_1: dict[int, float] = {}
    delta_up: dict[int, float] = {}
    delta_down: dict[int, float] = {}
    for r in range(1, k + 1):
        delta = metrics.revision_deltas(clean, r)
        pass_at_1[r] = delta.pass_at_1
        delta_up[r] = delta.delta_up
        delta_down[r] = delta.delta_down
    return EvalReport(
        trajectories=trajectories,
        failures=failures,
        rounds=k,
        initial_pass_rate=metrics.initial_pass_rate(clean),
        pass_at_1=pass_at_1,
        delta_up=delta_up,
        delta_down=delta_down,
        regression_curve=tuple(metrics.regression_curve(clean, k)),
        timeout_rate=metrics.timeout_rate(clean),
    )


# -- serialization -----------------------------------------------------------

def round_record_to_dict(record: RoundRecord) -> dict:
    return {
        "round": record.round,
        "critique": None if record.critique is None else critique_to_dict(record.critique),
        "critique_raw": record.critique_raw,
        "parse_failure": record.parse_failure,
        "solution_before": solution_to_dict(record.solution_before),
        "solution_after": (
            None if record.solution_after is None else solution_to_dict(record.solution_after)
        ),
        "outcome_before": outcome_to_dict(record.outcome_before),
        "outcome_after": (
            None if record.outcome_after is None else outcome_to_dict(record.outcome_after)
        ),
        "stopped": record.stopped,
    }


def round_record_from_dict(data: dict) -> RoundRecord:
    return RoundRecord(
        round=data["round"],
        critique=None if data["critique"] is None else critique_from_dict(data["critique"]),
        critique_raw=data["critique_raw"],
        parse_failure=data["parse_failure"],
        solution_before=solution_from_dict(data["solution_before"]),
        solution_after=(
            None if data["solution_after"] is None else solution_from_dict(data["solution_after"])
        ),
        outcome_before=outcome_from_dict(data["outcome_before"]),
        outcome_after=(
            None if data["outcome_after"] is None else outcome_from_dict(data["outcome_after"])
        ),
        stopped=data["stopped"],
    )


def trajectory_to_dict(trajectory: Trajectory) -> dict:
    return {
        "problem_id": trajectory.problem_id,
        "rounds": [round_record_to_dict(r) for r in trajectory.rounds],
        "final_reward": trajectory.final_reward,
        "error": trajectory.error,
    }


def trajectory_from_dict(data: dict) -> Trajectory:
    return Trajectory(
        problem_id=data["problem_id"],
        rounds=tuple(round_record_from_dict(r) for r in data["rounds"]),
        final_reward=data["final_reward"],
        error=data.get("error"),
    )


def save_trajectories(
    trajectories: Sequence[Trajectory], path: Union[str, os.PathLike]
) -> None:
    """Write trajectories as JSON Lines, one per problem."""
    path = os.fspath(path)
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for t in trajectories:
                fh.write(json.dumps(trajectory_to_dict(t), ensure_ascii=False) + "\n")
    except OSError as exc:
        raise OSError(f"cannot write trajectories to {path}: {exc}") from exc


def load_trajectories(path: Union[str, os.PathLike]) -> list[Trajectory]:
    path = os.fspath(path)
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return [trajectory_from_dict(json.loads(line)) for line in fh if line.strip()]
    except OSError as exc:
        raise OSError(f"cannot read trajectories from {path}: {exc}") from exc


def report_to_dict(report: EvalReport) -> dict:
    """JSON form of a batch report, aggregates first, trajectories inline."""
    return {
        "rounds": report.rounds,
        "problems_evaluated": len(report.trajectories),
        "problems_failed": len(report.failures),
        "initial_pass_rate": report.initial_pass_rate,
        "pass_at_1": {str(k): v for k, v in report.pass_at_1.items()},
        "delta_up": {str(k): v for k, v in report.delta_up.items()},
        "delta_down": {str(k): v for k, v in report.delta_down.items()},
        "regression_curve": list(report.regression_curve),
        "timeout_rate": report.timeout_rate,
        "failures": [{"problem_id": f.problem_id, "error": f.error} for f in report.failures],
        "trajectories": [trajectory_to_dict(t) for t in report.trajectories],
    }
