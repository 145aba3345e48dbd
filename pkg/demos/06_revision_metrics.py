"""Measuring critics: accounting identities, judgment F1, and code similarity.

Three measurement tools.  Revision accounting decomposes a batch's pass@1
into exact integers — everything that passes after k rounds either passed
initially, or was fixed, minus what was broken.  Discrimination F1 scores a
critic's Correct/Incorrect verdicts against ground truth (execution), per
class, so always-say-Correct cannot hide.  Similarity compares solutions
after stripping comments and renaming identifiers, which catches revisions
that only shuffled variable names.
"""
from critloop import metrics
from critloop.critique import Judgment, Solution
from critloop.loop import RoundRecord, Trajectory
from critloop.sandbox import CaseResult, CaseStatus, ExecutionOutcome

# -- discrimination F1 ---------------------------------------------------------

def f1_block() -> None:
    truths = [True, True, False, False, False, True]
    honest = [Judgment.CORRECT, Judgment.CORRECT, Judgment.INCORRECT,
              Judgment.INCORRECT, Judgment.CORRECT, Judgment.INCORRECT]
    sycophant = [Judgment.CORRECT] * 6

    for name, judgments in (("honest-ish critic", honest), ("always says Correct", sycophant)):
        report = metrics.discrimination_f1(judgments, truths)
        print(
            f"{name:>20}: F1(passed) {report.f1_passed:.2f}, "
            f"F1(failed) {report.f1_failed:.2f}, macro {report.macro_f1:.2f}"
        )
    print("  -> macro F1 averages both classes, so never flagging a failure costs half the score\n")


# -- code similarity under normalization ----------------------------------------

def similarity_block() -> None:
    original = "def area(width, height):\n    # rectangle\n    return width * height"
    renamed = "def area(w, h):\n    return w * h"
    changed = "def area(width, height):\n    return 2 * (width + height)"

    print("similarity on raw text vs. normalized (comments out, identifiers canonical):")
    for label, other in (("renamed only", renamed), ("actually changed", changed)):
        raw = metrics.similarity_ratio(original, other)
        norm = metrics.revision_similarity(original, other)
        print(f"  {label:>17}: raw {raw:.3f} -> normalized {norm:.3f}")
    normalized = metrics.normalize_code(renamed)
    print(f"  normalized form: {normalized.text!r}\n")


# -- revision accounting ---------------------------------------------------------

def _trajectory(pid: str, draft_passes: bool, after_passes: bool) -> Trajectory:
    def outcome(passes: bool) -> ExecutionOutcome:
        status = CaseStatus.PASS if passes else CaseStatus.WRONG_OUTPUT
        return ExecutionOutcome(
            per_case=(CaseResult(status=status),),
            pass_fraction=1.0 if passes else 0.0,
            wall_time_ms=1.0,
        )

    record = RoundRecord(
        round=1,
        critique=None,
        critique_raw="not a critique",
        parse_failure="missing_section",
        solution_before=Solution(source="print(0)", round=0),
        solution_after=Solution(source="print(1)", round=1),
        outcome_before=outcome(draft_passes),
        outcome_after=outcome(after_passes),
        stopped=False,
    )
    return Trajectory(problem_id=pid, rounds=(record,), final_reward=int(after_passes))


def accounting_block() -> None:
    batch = [
        _trajectory("p1-fixed", draft_passes=False, after_passes=True),
        _trajectory("p2-broken", draft_passes=True, after_passes=False),
        _trajectory("p3-held", draft_passes=True, after_passes=True),
        _trajectory("p4-still-failing", draft_passes=False, after_passes=False),
    ]
    delta = metrics.revision_deltas(batch, at_round=1)
    print("revision accounting over a four-problem batch (one round each):")
    for trajectory in batch:
        print(f"  {trajectory.problem_id:>17}: final reward {trajectory.final_reward}")
    print(
        f"  initial passed {delta.initial_passed}/{delta.n_problems}, after round 1 "
        f"passed {delta.passed}/{delta.n_problems} = initial + fixed({delta.fixed}) "
        f"- broken({delta.broken})"
    )
    print(
        f"  rates: pass@1 {delta.pass_at_1:.2f}, fixed {delta.delta_up:.2f}, "
        f"broke {delta.delta_down:.2f} (denominator is always the whole batch)"
    )
    assert delta.passed == delta.initial_passed + delta.fixed - delta.broken


def main() -> None:
    f1_block()
    similarity_block()
    accounting_block()


if __name__ == "__main__":
    main()
