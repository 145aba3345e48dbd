"""Critique prompting and parsing.

The critic is asked for a fixed three-part format (Analysis / Improvement
suggestions / Overall judgment) around a problem statement and a candidate
answer wrapped in XML-ish delimiter tags.  Parsing is deliberately tolerant
of whitespace and casing but strict about the three sections existing and
the judgment being a clear Correct/Incorrect call; anything else raises a
typed ParseFailure so callers can apply their fallback policy.
"""
from __future__ import annotations

import enum
import logging
import re
from dataclasses import dataclass

from critloop.sandbox import TestSuite, suite_from_dict, suite_to_dict

logger = logging.getLogger(__name__)

CRITIQUE_PROMPT_TEMPLATE = """You are tasked with analyzing an answer to a problem and providing constructive feedback. Do NOT provide direct solutions.

Problem description:
<problem>
{problem}
</problem>

Answer:
<answer>
{answer}
</answer>

Structure your response using the following format (without <format> tags):
<format>
Analysis:
{{Analysis}}

Improvement suggestions:
{{Suggestions}}

Overall judgment: {{Correct/Incorrect}}
</format>"""


class Judgment(enum.Enum):
    CORRECT = "Correct"
    INCORRECT = "Incorrect"


class ParseFailureKind(enum.Enum):
    MISSING_SECTION = "missing_section"
    AMBIGUOUS_JUDGMENT = "ambiguous_judgment"


class ParseFailure(Exception):
    """A critique did not follow the expected three-section format."""

    def __init__(self, kind: ParseFailureKind, message: str):
        super().__init__(message)
        self.kind = kind


@dataclass(frozen=True)
class Problem:
    """A programming problem: natural-language description plus its tests."""

    id: str
    description: str
    suite: TestSuite

    def __post_init__(self) -> None:
        if not self.id.strip():
            raise ValueError("problem id must be nonempty")
        if not self.description.strip():
            raise ValueError("problem description must be nonempty")
        if "</problem>" in self.description:
            raise ValueError(
                f"problem {self.id}: description contains the '</problem>' delimiter"
            )


@dataclass(frozen=True)
class Solution:
    """Candidate program text.  round 0 is the zero-shot draft; round k >= 1
    is the k-th revision."""

    source: str
    round: int = 0

    def __post_init__(self) -> None:
        if self.round < 0:
            raise ValueError(f"solution round must be >= 0, got {self.round}")


@dataclass(frozen=True)
class Critique:
    analysis: str
    suggestions: str
    judgment: Judgment
    raw: str


def fill_template(template: str, mapping: dict[str, str]) -> str:
    """Substitute {name} markers in a single pass; inserted text is never
    rescanned, so values containing marker-like braces stay inert."""
    pattern = re.compile(r"\{(" + "|".join(map(re.escape, mapping)) + r")\}")
    return pattern.sub(lambda m: mapping[m.group(1)], template)


def render_critique_prompt(problem: Problem, solution: Solution) -> str:
    """Build the critic prompt for an unhinted critique of ``solution``."""
    if not solution.source.strip():
        raise ValueError("cannot request a critique of an empty solution")
    if "</answer>" in solution.source:
        raise ValueError("solution source contains the '</answer>' delimiter")
    return fill_template(
        CRITIQUE_PROMPT_TEMPLATE,
        {"problem": problem.description, "answer": solution.source},
    )


_ANALYSIS_RE = re.compile(r"(?im)^[ \t]*analysis[ \t]*:[ \t]*")
_SUGGESTIONS_RE = re.compile(r"(?im)^[ \t]*improvement suggestions[ \t]*:[ \t]*")
_JUDGMENT_RE = re.compile(r"(?im)^[ \t]*overall judgment[ \t]*:[ \t]*(.*)$")


def parse_critique(raw: str) -> Critique:
    """Parse critic output into its three sections.

    Headers are matched case-insensitively at line starts.  The judgment is
    read only from the final ``Overall judgment:`` line, so Correct/Incorrect
    tokens inside the prose never influence it.  Raises ParseFailure (and
    nothing else) on any arbitrary input that does not fit.
    """
    if not isinstance(raw, str):
        raise ParseFailure(ParseFailureKind.MISSING_SECTION, "critique is not text")
    m_analysis = _ANALYSIS_RE.search(raw)
    if m_analysis is None:
        raise ParseFailure(ParseFailureKind.MISSING_SECTION, "no Analysis section")
    m_suggestions = _SUGGESTIONS_RE.search(raw, m_analysis.end())
    if m_suggestions is None:
        raise ParseFailure(
            ParseFailureKind.MISSING_SECTION, "no Improvement suggestions section"
        )
    judgment_matches = list(_JUDGMENT_RE.finditer(raw))
    m_judgment = judgment_matches[-1] if judgment_matches else None
    if m_judgment is None or m_judgment.start() < m_suggestions.end():
        raise ParseFailure(ParseFailureKind.MISSING_SECTION, "no Overall judgment line")

    analysis = raw[m_analysis.end() : m_suggestions.start()].strip()
    suggestions = raw[m_suggestions.end() : m_judgment.start()].strip()
    if not analysis:
        raise ParseFailure(ParseFailureKind.MISSING_SECTION, "empty Analysis section")
    if not suggestions:
        raise ParseFailure(
            ParseFailureKind.MISSING_SECTION, "empty Improvement suggestions section"
        )

    token = m_judgment.group(1).strip().lstrip("*_`").lower()
    if token.startswith("incorrect"):
        judgment = Judgment.INCORRECT
    elif token.startswith("correct"):
        judgment = Judgment.CORRECT
    else:
        raise ParseFailure(
            ParseFailureKind.AMBIGUOUS_JUDGMENT,
            f"judgment token {m_judgment.group(1).strip()!r} is neither Correct nor Incorrect",
        )
    return Critique(analysis=analysis, suggestions=suggestions, judgment=judgment, raw=raw)


def render_critique(critique: Critique) -> str:
    """Format a Critique back into the canonical three-section layout."""
    return (
        f"Analysis:\n{critique.analysis}\n\n"
        f"Improvement suggestions:\n{critique.suggestions}\n\n"
        f"Overall judgment: {critique.judgment.value}"
    )


# -- JSON plumbing -----------------------------------------------------------

def problem_to_dict(problem: Problem) -> dict:
    data = {"id": problem.id, "description": problem.description}
    data.update(suite_to_dict(problem.suite))
    return data


def problem_from_dict(data: dict) -> Problem:
    try:
        return Problem(
            id=str(data["id"]),
            description=data["description"],
            suite=suite_from_dict(data),
        )
    except KeyError as exc:
        raise ValueError(f"malformed problem record: missing {exc}") from exc


def solution_to_dict(solution: Solution) -> dict:
    return {"source": solution.source, "round": solution.round}


def solution_from_dict(data: dict) -> Solution:
    return Solution(source=data["source"], round=data["round"])


def critique_to_dict(critique: Critique) -> dict:
    return {
        "analysis": critique.analysis,
        "suggestions": critique.suggestions,
        "judgment": critique.judgment.value,
        "raw": critique.raw,
    }


def critique_from_dict(data: dict) -> Critique:
    return Critique(
        analysis=data["analysis"],
        suggestions=data["suggestions"],
        judgment=Judgment(data["judgment"]),
        raw=data["raw"],
    )
