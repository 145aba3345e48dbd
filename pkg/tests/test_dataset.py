"""Curation tests: test standardization, malformed filtering, dedup,
decontamination, and the count-accounting identity."""
import json
import random

import pytest

from critloop.dataset import (
    CurationReport,
    curate,
    function_case_from_record,
    io_case_from_record,
    is_malformed,
    load_problems,
    load_raw_records,
    report_to_dict,
    save_problems,
    standardize_tests,
)
from critloop.sandbox import TestKind


def raw(description: str, tests: list, **extra) -> dict:
    record = {"description": description, "tests": tests}
    record.update(extra)
    return record


FN_TEST = {"fn": "add", "args": [1, 2], "expected": 3}
IO_TEST = {"input": "1 2", "expected_output": "3"}


# -- test standardization -------------------------------------------------------

def test_function_record_renders_exact_assertion():
    case = function_case_from_record({"fn": "add", "args": [1, 2], "expected": 3})
    assert case.assertion_source == "assert add(1, 2) == 3"
    case = function_case_from_record({"fn": "rev", "args": ["ab"], "expected": "ba"})
    assert case.assertion_source == "assert rev('ab') == 'ba'"
    case = function_case_from_record({"fn": "pick", "args": [[1, 2], None], "expected": [2]})
    assert case.assertion_source == "assert pick([1, 2], None) == [2]"


def test_function_record_rejects_non_identifiers():
    for bad_fn in ("my func", "1bad", "os.path", "", None, 7):
        assert function_case_from_record({"fn": bad_fn, "args": [], "expected": 1}) is None
    # args must be a list and expected must exist
    assert function_case_from_record({"fn": "f", "args": "nope", "expected": 1}) is None
    assert function_case_from_record({"fn": "f", "args": []}) is None


def test_io_record_rejects_assignment_inputs():
    assert io_case_from_record({"input": "x = 5\n3", "expected_output": "8"}) is None
    assert io_case_from_record({"input": "  y   =  2", "expected_output": "2"}) is None
    kept = io_case_from_record({"input": "5\n3", "expected_output": "8"})
    assert kept.input == "5\n3"
    # equality comparisons are not assignments
    assert io_case_from_record({"input": "a==b", "expected_output": "no"}) is not None
    assert io_case_from_record({"input": 5, "expected_output": "8"}) is None


def test_standardize_rejects_mixed_kinds():
    suite, dropped = standardize_tests([FN_TEST, IO_TEST])
    assert suite is None
    assert dropped == 0


def test_standardize_builds_homogeneous_suites():
    suite, dropped = standardize_tests([FN_TEST, {"fn": "bad name", "expected": 0, "args": []}])
    assert suite.kind is TestKind.FUNCTION_BASED
    assert len(suite.cases) == 1
    assert dropped == 1
    suite, dropped = standardize_tests([IO_TEST, {"input": "z = 1", "expected_output": ""}])
    assert suite.kind is TestKind.STDIN_STDOUT
    assert len(suite.cases) == 1
    assert dropped == 1


def test_standardize_nothing_usable():
    suite, dropped = standardize_tests([{"fn": "no good"}, {"weird": True}, "not a dict"])
    assert suite is None
    assert dropped == 3


# -- malformed filter ------------------------------------------------------------

def test_malformed_patterns_case_insensitive():
    assert is_malformed('See <IMG SRC="x.png"> above.', ("<img", "<span"))
    assert is_malformed("text with <span>markup</span>", ("<img", "<span"))
    assert not is_malformed("an image of a span bridge", ("<img", "<span"))
    assert is_malformed("breaks the </problem> wrapper", ("<img",))
    assert is_malformed("   ", ("<img",))


# -- full pipeline ----------------------------------------------------------------

def test_curate_end_to_end_counts():
    records = [
        raw("Add two numbers.", [FN_TEST], id="keep-1"),
        raw('Broken <img src="a.png"> problem.', [FN_TEST]),
        raw("Mixed suite problem.", [FN_TEST, IO_TEST]),
        raw("Add  two\nnumbers.", [FN_TEST]),  # duplicate modulo whitespace
        raw("Held out by id.", [IO_TEST], id="eval-7"),
        raw("Held out by text.", [IO_TEST]),
        raw("Keep with a dropped test.", [IO_TEST, {"input": "q = 1", "expected_output": ""}]),
    ]
    problems, report = curate(
        records,
        eval_ids={"eval-7"},
        eval_descriptions=["Held   out by text."],
    )
    assert [p.id for p in problems] == ["keep-1", "p00006"]
    assert report == CurationReport(
        input_count=7,
        malformed_removed=1,
        unusable_tests_removed=1,
        deduped=1,
        decontaminated=2,
        retained=2,
        tests_dropped=1,
    )


def test_curate_generates_stable_ids_from_input_position():
    records = [
        raw("First problem.", [FN_TEST]),
        raw('Bad <span> problem.', [FN_TEST]),
        raw("Third problem.", [IO_TEST]),
    ]
    problems, _ = curate(records)
    assert [p.id for p in problems] == ["p00000", "p00002"]


def test_curate_first_duplicate_wins():
    records = [
        raw("Same problem.", [{"input": "1", "expected_output": "first"}]),
        raw("Same  problem.", [{"input": "1", "expected_output": "second"}]),
    ]
    problems, report = curate(records)
    assert len(problems) == 1
    assert problems[0].suite.cases[0].expected_output == "first"
    assert report.deduped == 1


def test_curate_report_identity_on_random_mixes():
    rng = random.Random(1234)
    fragments = ["Sum the list.", "Reverse a string.", "Broken <img> text.", "Count words."]
    for _ in range(50):
        records = []
        for i in range(rng.randint(1, 30)):
            description = rng.choice(fragments) + (" extra" * rng.randint(0, 2))
            kind = rng.random()
            if kind < 0.3:
                tests = [FN_TEST]
            elif kind < 0.6:
                tests = [IO_TEST]
            elif kind < 0.8:
                tests = [FN_TEST, IO_TEST]  # mixed: rejected
            else:
                tests = [{"weird": 1}]  # unusable
            records.append(raw(description, tests))
        problems, report = curate(records, eval_descriptions=["Count words."])
        assert (
            report.malformed_removed
            + report.unusable_tests_removed
            + report.deduped
            + report.decontaminated
            + report.retained
            == report.input_count
            == len(records)
        )
        assert report.retained == len(problems)


def test_report_rejects_inconsistent_counts():
    with pytest.raises(ValueError):
        CurationReport(
            input_count=5,
            malformed_removed=1,
            unusable_tests_removed=0,
            deduped=0,
            decontaminated=0,
            retained=5,
            tests_dropped=0,
        )


# -- file round trips --------------------------------------------------------------

def test_raw_records_jsonl_round_trip(tmp_path):
    path = tmp_path / "raw.jsonl"
    records = [raw("Problem one.", [FN_TEST]), raw("Problem two.", [IO_TEST], id="x")]
    path.write_text(
        "\n".join(json.dumps(r) for r in records) + "\n\n", encoding="utf-8"
    )
    assert load_raw_records(path) == records


def test_raw_records_loader_rejects_bad_lines(tmp_path):
    path = tmp_path / "bad.jsonl"
    path.write_text('{"description": "ok", "tests": []}\nnot json\n', encoding="utf-8")
    with pytest.raises(ValueError, match="bad.jsonl:2"):
        load_raw_records(path)
    path.write_text('["an", "array"]\n', encoding="utf-8")
    with pytest.raises(ValueError, match="expected an object"):
        load_raw_records(path)


def test_curated_problems_jsonl_round_trip(tmp_path):
    records = [raw("Add two numbers.", [FN_TEST], id="a"), raw("Echo input.", [IO_TEST], id="b")]
    problems, report = curate(records)
    path = tmp_path / "problems.jsonl"
    save_problems(problems, path)
    assert load_problems(path) == problems
    round_tripped = json.loads(json.dumps(report_to_dict(report)))
    assert round_tripped["retained"] == 2
