"""Evaluation metrics for critique-revision trajectories.

Covers the revision-accounting quantities (pass rate, fraction fixed,
fraction broken — which satisfy pass = initial + fixed - broken exactly, by
counting), discrimination F1 for critic judgments, timeout rates, lexical
code normalization for similarity scoring, Ratcliff-Obershelp similarity,
and pairwise preference judging by critic majority vote.
"""
from __future__ import annotations

import builtins
import csv
import difflib
import enum
import io
import keyword
import logging
import os
import tokenize
from dataclasses import dataclass
from typing import IO, TYPE_CHECKING, FrozenSet, Optional, Sequence, Union

from critloop.client import ChatMessage, RoleConfig, complete_for_role
from critloop.critique import (
    Judgment,
    ParseFailure,
    Problem,
    Solution,
    parse_critique,
    render_critique_prompt,
)
from critloop.sandbox import CaseStatus, ExecutionOutcome, reward

if TYPE_CHECKING:  # pragma: no cover - import cycle guard, types only
    from critloop.loop import Trajectory

logger = logging.getLogger(__name__)


# -- revision accounting -----------------------------------------------------

def initial_outcome(trajectory: "Trajectory") -> ExecutionOutcome:
    """The zero-shot draft's execution outcome."""
    if not trajectory.rounds:
        raise ValueError(f"trajectory {trajectory.problem_id} records no rounds")
    return trajectory.rounds[0].outcome_before


def outcome_at_round(trajectory: "Trajectory", at_round: int) -> ExecutionOutcome:
    """Outcome of the solution in play after ``at_round`` revision rounds.

    A trajectory that stopped early keeps its last state for later rounds;
    asking past the recorded rounds of a trajectory that did NOT stop is out
    of bounds.
    """
    if at_round < 0:
        raise ValueError(f"at_round must be >= 0, got {at_round}")
    if not trajectory.rounds:
        raise ValueError(f"trajectory {trajectory.problem_id} records no rounds")
    if at_round > len(trajectory.rounds) and not trajectory.rounds[-1].stopped:
        raise ValueError(
            f"trajectory {trajectory.problem_id} has only {len(trajectory.rounds)} rounds"
        )
    current = trajectory.rounds[0].outcome_before
    for record in trajectory.rounds[:at_round]:
        if record.outcome_after is not None:
            current = record.outcome_after
    return current


@dataclass(frozen=True)
class RevisionDelta:
    """Pass rate after a round, split into what was gained and what was lost.

    The fraction fields all share ``n_problems`` as denominator.  The
    accounting identity ``passed == initial_passed + fixed - broken`` holds
    exactly at the count level (floats cannot promise it after three separate
    divisions) and is enforced here as an invariant.
    """

    at_round: int
    n_problems: int
    initial_passed: int
    passed: int
    fixed: int
    broken: int
    pass_at_1: float
    delta_up: float
    delta_down: float

    def __post_init__(self) -> None:
        if self.passed != self.initial_passed + self.fixed - self.broken:
            raise ValueError(
                f"accounting identity violated: {self.passed} != "
                f"{self.initial_passed} + {self.fixed} - {self.broken}"
            )


def initial_pass_rate(trajectories: Sequence["Trajectory"]) -> float:
    if not trajectories:
        raise ValueError("no trajectories given")
    return sum(reward(initial_outcome(t)) for t in trajectories) / len(trajectories)


def revision_deltas(trajectories: Sequence["Trajectory"], at_round: int) -> RevisionDelta:
    """Pass rate, fixes, and regressions of the whole set after ``at_round``."""
    if not trajectories:
        raise ValueError("no trajectories given")
    if at_round < 1:
        raise ValueError(f"at_round must be >= 1, got {at_round}")
    n = len(trajectories)
    initial_passed = passed = fixed = broken = 0
    for t in trajectories:
        init_ok = reward(initial_outcome(t)) == 1
        now_ok = reward(outcome_at_round(t, at_round)) == 1
        initial_passed += init_ok
        passed += now_ok
        fixed += (not init_ok) and now_ok
        broken += init_ok and (not now_ok)
    return RevisionDelta(
        at_round=at_round,
        n_problems=n,
        initial_passed=initial_passed,
        passed=passed,
        fixed=fixed,
        broken=broken,
        pass_at_1=passed / n,
        delta_up=fixed / n,
        delta_down=broken / n,
    )


def regression_curve(
    trajectories: Sequence["Trajectory"], max_round: Optional[int] = None
) -> list[float]:
    """delta_down per round, 1..max_round (default: deepest recorded round)."""
    if not trajectories:
        raise ValueError("no trajectories given")
    if max_round is None:
        max_round = max(len(t.rounds) for t in trajectories)
    return [revision_deltas(trajectories, r).delta_down for r in range(1, max_round + 1)]


def timeout_rate(trajectories: Sequence["Trajectory"]) -> float:
    """Fraction of final solutions whose outcome contains a timed-out case."""
    if not trajectories:
        raise ValueError("no trajectories given")
    timed_out = 0
    for t in trajectories:
        final = outcome_at_round(t, len(t.rounds))
        timed_out += any(r.status is CaseStatus.TIMEOUT for r in final.per_case)
    return timed_out / len(trajectories)


# -- discrimination ----------------------------------------------------------

@dataclass(frozen=True)
class F1Report:
    f1_passed: float
    f1_failed: float
    macro_f1: float
    support_passed: int
    support_failed: int


def discrimination_f1(judgments: Sequence[Judgment], truths: Sequence[bool]) -> F1Report:
    """Per-class and macro F1 of critic judgments against execution truth.

    The Passed class treats judgment Correct as a positive prediction and a
    passing solution as a positive label; the Failed class is its mirror.  A
    class with zero F1 denominator (e.g. absent from both predictions and
    labels) scores 0, and the macro average is always over both classes.
    """
    if len(judgments) != len(truths):
        raise ValueError("judgments and truths must have equal length")
    if not judgments:
        raise ValueError("no judgments given")

    def f1(positive_judgment: Judgment, positive_truth: bool) -> float:
        tp = fp = fn = 0
        for j, t in zip(judgments, truths):
            predicted = j is positive_judgment
            actual = t is positive_truth
            tp += predicted and actual
            fp += predicted and not actual
            fn += actual and not predicted
        denom = 2 * tp + fp + fn
        return (2 * tp / denom) if denom else 0.0

    f1_passed = f1(Judgment.CORRECT, True)
    f1_failed = f1(Judgment.INCORRECT, False)
    return F1Report(
        f1_passed=f1_passed,
        f1_failed=f1_failed,
        macro_f1=(f1_passed + f1_failed) / 2.0,
        support_passed=sum(1 for t in truths if t),
        support_failed=sum(1 for t in truths if not t),
    )


# -- lexical normalization and similarity ------------------------------------

_PRESERVED_NAMES: FrozenSet[str] = (
    frozenset(keyword.kwlist) | frozenset(keyword.softkwlist) | frozenset(dir(builtins))
)


@dataclass(frozen=True)
class NormalizedCode:
    text: str
    lex_failed: bool


def normalize_code(source: str, preserved: FrozenSet[str] = _PRESERVED_NAMES) -> NormalizedCode:
    """Canonicalize a program for similarity comparison.

    Identifiers outside the preserved set (keywords and builtins by default)
    are renamed v0, v1, ... in first-occurrence order, comments are dropped,
    and tokens are joined by single spaces with line structure and
    indentation depth preserved.  Alpha-renaming a program therefore leaves
    its normalized text unchanged.  If the source does not lex, the raw text
    comes back with ``lex_failed`` set.
    """
    try:
        tokens = list(tokenize.generate_tokens(io.StringIO(source).readline))
    except (tokenize.TokenError, IndentationError, SyntaxError):
        logger.warning("lexing failed; similarity will use raw text")
        return NormalizedCode(text=source, lex_failed=True)
    if any(tok.type == tokenize.ERRORTOKEN for tok in tokens):
        # e.g. an unterminated string: the lexer limps along rather than
        # raising, but the token stream is no longer trustworthy
        logger.warning("lexing produced error tokens; similarity will use raw text")
        return NormalizedCode(text=source, lex_failed=True)

    rename: dict[str, str] = {}
    lines: list[str] = []
    current: list[str] = []
    depth = 0
    for tok in tokens:
        if tok.type in (tokenize.COMMENT, tokenize.ENCODING, tokenize.ENDMARKER):
            continue
        if tok.type == tokenize.INDENT:
            depth += 1
            continue
        if tok.type == tokenize.DEDENT:
            depth -= 1
            continue
        if tok.type in (tokenize.NEWLINE, tokenize.NL):
            if current:
                lines.append("    " * depth + " ".join(current))
                current = []
            continue
        text = tok.string
        if tok.type == tokenize.NAME and text not in preserved:
            if text not in rename:
                rename[text] = f"v{len(rename)}"
            text = rename[text]
        current.append(text)
    if current:
        lines.append("    " * depth + " ".join(current))
    return NormalizedCode(text="\n".join(lines), lex_failed=False)


def similarity_ratio(a: str, b: str) -> float:
    """Ratcliff-Obershelp similarity 2M/T over characters, in [0, 1].

    Two empty strings are identical (1.0).  Junk heuristics are disabled so
    long inputs score by the same rule as short ones.
    """
    return difflib.SequenceMatcher(a=a, b=b, autojunk=False).ratio()


def revision_similarity(source_a: str, source_b: str) -> float:
    """Similarity of two programs after lexical normalization."""
    return similarity_ratio(normalize_code(source_a).text, normalize_code(source_b).text)


# -- pairwise judging --------------------------------------------------------

class Preference(enum.Enum):
    A = "A"
    B = "B"
    TIE = "Tie"


def majority_vote_judge(
    problem: Problem,
    solution_a: Solution,
    solution_b: Solution,
    critic: RoleConfig,
    votes: int,
) -> Preference:
    """Prefer the solution the critic judges Correct more often.

    Each solution is critiqued ``votes`` times (odd, so self-comparison can't
    deadlock on vote counts); unparseable critiques count as Incorrect.
    Equal counts yield a Tie.
    """
    if votes < 1 or votes % 2 == 0:
        raise ValueError(f"votes must be a positive odd integer, got {votes}")

    def correct_votes(solution: Solution) -> int:
        prompt = render_critique_prompt(problem, solution)
        count = 0
        for _ in range(votes):
            raw = complete_for_role(critic, [ChatMessage(role="user", content=prompt)])
            try:
                if parse_critique(raw).judgment is Judgment.CORRECT:
                    count += 1
            except ParseFailure:
                pass  # an unreadable critique is a vote against
        return count

    a_votes = correct_votes(solution_a)
    b_votes = correct_votes(solution_b)
    if a_votes > b_votes:
        return Preference.A
    if b_votes > a_votes:
        return Preference.B
    return Preference.TIE


# -- CSV export --------------------------------------------------------------

def export_regression_csv(curve: Sequence[float], destination: Union[str, os.PathLike, IO[str]]) -> None:
    """Write the per-round regression curve as ``round,delta_down`` CSV."""
    if not curve:
        raise ValueError("refusing to export an empty regression curve")
    _write_csv(destination, ["round", "delta_down"], [(i + 1, v) for i, v in enumerate(curve)])


def export_similarity_csv(values: Sequence[float], destination: Union[str, os.PathLike, IO[str]]) -> None:
    """Write per-pair similarity scores as ``pair,similarity`` CSV."""
    if not values:
        raise ValueError("refusing to export an empty similarity list")
    _write_csv(destination, ["pair", "similarity"], [(i, v) for i, v in enumerate(values)])


def _write_csv(destination, header: list[str], rows: list[tuple]) -> None:
    if hasattr(destination, "write"):
        writer = csv.writer(destination)
        writer.writerow(header)
        writer.writerows(rows)
        return
    path = os.fspath(destination)
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc
