import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fpeval.dedup import (
    ALL_CANDIDATES,
    CONFIRMED,
    CONFIRMED_ONLY,
    REJECTED,
    DuplicateCandidate,
    build_exclusions,
    default_threshold,
    find_duplicates,
    merge_verdicts,
    read_duplicate_report,
    review_warning,
    write_duplicate_report,
)
from fpeval.errors import ConfigError, ParseError
from fpeval.records import ScoreRecord
from fpeval.templates import FingerKey, TemplateKey


def rec(pdb, pf, pi, gdb, gf, gi, score):
    return ScoreRecord(TemplateKey(pdb, pf, pi), TemplateKey(gdb, gf, gi), float(score))


def test_reports_high_pair_with_best_impressions():
    records = [rec("a", 1, 1, "b", 4, 1, 100), rec("a", 1, 2, "b", 4, 3, 267), rec("a", 2, 1, "b", 5, 1, 3)]
    (cand,) = find_duplicates(records, 48)
    assert cand.link == (FingerKey("a", 1), FingerKey("b", 4))
    assert (cand.best_score, cand.best_pair) == (267, (2, 3))


def test_all_below_threshold():
    assert find_duplicates([rec("a", 1, 1, "b", 1, 1, 10)], 48) == []


def test_same_finger_skipped():
    assert find_duplicates([rec("a", 1, 1, "a", 1, 2, 500)], 48) == []


def test_same_db_skipped_unless_requested():
    records = [rec("a", 1, 1, "a", 2, 1, 500)]
    assert find_duplicates(records, 48) == []
    assert len(find_duplicates(records, 48, cross_db_only=False)) == 1


def test_orientation_folded_and_ties_keep_lowest_impressions():
    records = [rec("b", 4, 2, "a", 1, 3, 90), rec("a", 1, 2, "b", 4, 2, 90), rec("a", 1, 5, "b", 4, 1, 90)]
    (cand,) = find_duplicates(records, 50)
    assert cand.finger_a == FingerKey("a", 1)
    assert cand.best_pair == (2, 2)


def test_sorted_by_score_descending():
    records = [rec("a", 1, 1, "b", 1, 1, 60), rec("a", 2, 1, "b", 2, 1, 155), rec("a", 3, 1, "b", 3, 1, 267)]
    assert [c.best_score for c in find_duplicates(records, 50)] == [267, 155, 60]


def test_threshold_must_be_positive():
    with pytest.raises(ConfigError):
        find_duplicates([], 0)


def _cands(verdicts):
    return [DuplicateCandidate(FingerKey("a", i), FingerKey("b", i), 100.0, (1, 1), v) for i, v in enumerate(verdicts, 1)]


def test_policies():
    cands = _cands([CONFIRMED, CONFIRMED, "candidate", "candidate", "candidate"])
    assert len(build_exclusions(cands, CONFIRMED_ONLY)) == 2
    assert len(build_exclusions(cands, ALL_CANDIDATES)) == 5
    assert len(build_exclusions([], ALL_CANDIDATES)) == 0
    rejected = _cands([REJECTED])
    assert len(build_exclusions(rejected, ALL_CANDIDATES)) == 0
    with pytest.raises(ConfigError):
        build_exclusions(cands, "everything")


def test_exclusions_symmetric():
    ex = build_exclusions(_cands([CONFIRMED]))
    assert ex.linked(FingerKey("a", 1), FingerKey("b", 1)) and ex.linked(FingerKey("b", 1), FingerKey("a", 1))


def test_report_round_trip_and_merge(tmp_path):
    cands = _cands([CONFIRMED, "candidate", REJECTED])
    path = tmp_path / "duplicates.csv"
    write_duplicate_report(cands, path)
    assert path.read_text().splitlines()[0] == "db_a,finger_a,db_b,finger_b,best_score,impr_a,impr_b,verdict"
    assert read_duplicate_report(path) == cands
    fresh = _cands(["candidate"] * 4)
    merged = merge_verdicts(fresh, cands)
    assert [c.verdict for c in merged] == [CONFIRMED, "candidate", REJECTED, "candidate"]


def test_bad_report(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("db_a,finger_a,db_b,finger_b,best_score,impr_a,impr_b,verdict\na,1,b,2,9,1,1,maybe\n")
    with pytest.raises(ParseError) as exc:
        read_duplicate_report(path)
    assert exc.value.line == 2


def test_review_warning():
    assert review_warning(_cands([CONFIRMED])) is None
    assert "2 duplicate" in review_warning(_cands(["candidate", "candidate", CONFIRMED]))


def test_default_threshold():
    assert default_threshold([1, 9, 5]) == 5
    assert default_threshold([1, 2, 4, 9]) == 3
    with pytest.raises(ConfigError):
        default_threshold([])


record_sets = st.lists(
    st.tuples(st.sampled_from("ab"), st.integers(1, 3), st.integers(1, 2), st.sampled_from("ab"), st.integers(1, 3),
              st.integers(1, 2), st.integers(0, 20)),
    max_size=40,
)


@settings(max_examples=150, deadline=None)
@given(record_sets, st.integers(1, 20))
def test_completeness_brute_force(rows, threshold):
    records = [rec(*r) for r in rows]
    expected = {}
    for r in records:
        fa, fb = r.probe.finger_key, r.gallery.finger_key
        if fa.db != fb.db and r.score >= threshold:
            link = frozenset((fa, fb))
            expected[link] = max(expected.get(link, 0), r.score)
    found = find_duplicates(records, threshold)
    assert len(found) == len({frozenset(c.link) for c in found})
    assert {frozenset(c.link): c.best_score for c in found} == expected
