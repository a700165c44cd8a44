import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mddkit.corpus import AnnotationEvent
from mddkit.metrics import (
    AlignmentOp,
    MddCounts,
    align,
    edit_distance,
    f_measure,
    format_report,
    hierarchical_eval,
    per,
    summarize,
)


def oracle_distance(ref, hyp):
    """Exhaustive recursion, memoized only by Python's call stack (tiny inputs)."""
    if not ref:
        return len(hyp)
    if not hyp:
        return len(ref)
    return min(
        oracle_distance(ref[1:], hyp[1:]) + (ref[0] != hyp[0]),
        oracle_distance(ref[1:], hyp) + 1,
        oracle_distance(ref, hyp[1:]) + 1,
    )


# ---------------------------------------------------------------------------
# alignment

def test_align_identity():
    ops = align([0, 1, 2, 3, 4], [0, 1, 2, 3, 4])
    assert [op.kind for op in ops] == ["match"] * 5
    assert edit_distance([0, 1, 2, 3, 4], [0, 1, 2, 3, 4]) == 0


def test_align_single_deletion():
    ops = align([0, 1, 2], [0, 2])  # K AE T vs K T
    assert [op.kind for op in ops] == ["match", "delete", "match"]
    assert ops[1].ref_id == 1


def test_align_matches_recursive_oracle(rng):
    for _ in range(300):
        n, m = int(rng.integers(0, 7)), int(rng.integers(0, 7))
        ref = rng.integers(0, 4, size=n).tolist()
        hyp = rng.integers(0, 4, size=m).tolist()
        assert edit_distance(ref, hyp) == oracle_distance(ref, hyp)


def test_align_ops_are_consistent(rng):
    for _ in range(50):
        ref = rng.integers(0, 3, size=int(rng.integers(0, 6))).tolist()
        hyp = rng.integers(0, 3, size=int(rng.integers(0, 6))).tolist()
        ops = align(ref, hyp)
        rebuilt_ref = [op.ref_id for op in ops if op.ref_id is not None]
        rebuilt_hyp = [op.hyp_id for op in ops if op.hyp_id is not None]
        assert rebuilt_ref == ref
        assert rebuilt_hyp == hyp


@settings(max_examples=150, deadline=None)
@given(
    a=st.lists(st.integers(0, 3), max_size=6),
    b=st.lists(st.integers(0, 3), max_size=6),
)
def test_align_distance_symmetry(a, b):
    assert edit_distance(a, b) == edit_distance(b, a)


@settings(max_examples=80, deadline=None)
@given(
    a=st.lists(st.integers(0, 2), max_size=5),
    b=st.lists(st.integers(0, 2), max_size=5),
    c=st.lists(st.integers(0, 2), max_size=5),
)
def test_align_triangle_inequality(a, b, c):
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)


def test_alignment_op_validation():
    with pytest.raises(ValueError):
        AlignmentOp("match", 0, 1)
    with pytest.raises(ValueError):
        AlignmentOp("insert", 0, 1)


# ---------------------------------------------------------------------------
# PER

def test_per_identity():
    assert per([0, 1, 2], [0, 1, 2]) == 0.0


def test_per_one_substitution_len4():
    assert per([0, 1, 2, 3], [0, 9, 2, 3]) == 0.25


def test_per_empty_hypothesis():
    assert per([0, 1, 2], []) == 1.0


def test_per_can_exceed_one():
    assert per([0], [1, 2, 3]) > 1.0


def test_per_empty_reference_rejected():
    with pytest.raises(ValueError):
        per([], [0])


# ---------------------------------------------------------------------------
# hierarchical evaluation

def test_hier_paper_dh_example():
    # canonical [DH, AH] -> 0, 1; actual [D, AH] -> 2, 1; recognized [D, AH]
    counts = hierarchical_eval([0, 1], [2, 1], [2, 1])
    assert (counts.ta, counts.fr, counts.fa, counts.cd, counts.de) == (1, 0, 0, 1, 0)


def test_hier_all_correct():
    counts = hierarchical_eval([0, 1, 2], [0, 1, 2], [0, 1, 2])
    assert (counts.ta, counts.fr, counts.fa, counts.cd, counts.de) == (3, 0, 0, 0, 0)


def test_hier_false_acceptance():
    counts = hierarchical_eval([0], [1], [0])
    assert counts.fa == 1 and counts.tr == 0


def test_hier_diagnosis_error():
    counts = hierarchical_eval([0], [1], [2])
    assert counts.de == 1


def test_hier_false_rejection():
    counts = hierarchical_eval([0, 1], [0, 1], [0, 2])
    assert counts.ta == 1 and counts.fr == 1


def test_hier_with_events_pivot():
    # canonical A B C; speaker deleted B and substituted C->A; recognizer
    # echoes the actual pronunciation -> CD for both mispronunciations
    events = [
        AnnotationEvent(1, 1, None, "deletion"),
        AnnotationEvent(2, 2, 0, "substitution"),
    ]
    counts = hierarchical_eval([0, 1, 2], [0, 0], [0, 0], events=events)
    assert (counts.ta, counts.fr, counts.fa, counts.cd, counts.de) == (1, 0, 0, 2, 0)


def test_hier_counts_partition_canonical_positions(rng):
    for _ in range(60):
        n = int(rng.integers(1, 8))
        canonical = rng.integers(0, 4, size=n).tolist()
        actual = [
            (c if rng.random() < 0.7 else int(rng.integers(0, 4))) for c in canonical
        ]
        recognized = rng.integers(0, 4, size=int(rng.integers(0, 9))).tolist()
        counts = hierarchical_eval(canonical, actual, recognized)
        correct = sum(1 for c, a in zip(canonical, actual) if c == a)
        assert counts.ta + counts.fr == correct
        assert counts.fa + counts.cd + counts.de == n - correct


def test_hier_shared_suffix_only_adds_ta():
    base = hierarchical_eval([0], [1], [1])
    suffixed = hierarchical_eval([0, 2, 3], [1, 2, 3], [1, 2, 3])
    assert suffixed.ta == base.ta + 2
    assert (suffixed.fr, suffixed.fa, suffixed.cd, suffixed.de) == (
        base.fr, base.fa, base.cd, base.de,
    )


def test_counts_merge_by_addition():
    a = MddCounts(1, 2, 3, 4, 5)
    b = MddCounts(10, 20, 30, 40, 50)
    c = a + b
    assert (c.ta, c.fr, c.fa, c.cd, c.de) == (11, 22, 33, 44, 55)
    assert c.tr == 44 + 55


# ---------------------------------------------------------------------------
# summarize

def test_f_measure_reproduces_table7_rows():
    # recall, precision, expected F (percent, two decimals)
    rows = [
        (74.78, 36.76, 49.29),
        (62.32, 45.02, 52.28),
        (50.41, 54.79, 52.51),
        (54.93, 55.72, 55.32),
        (56.82, 54.95, 55.87),
        (54.86, 56.07, 55.46),
        (57.68, 54.46, 56.02),
        (56.12, 56.04, 56.08),
        (56.42, 53.98, 55.17),
    ]
    for recall, precision, expected in rows:
        f = f_measure(precision / 100.0, recall / 100.0) * 100.0
        assert abs(f - expected) <= 0.01, (recall, precision, f, expected)


def test_summarize_rates_and_identities():
    counts = MddCounts(ta=80, fr=20, fa=25, cd=50, de=25)
    report = summarize(counts)
    assert report.recall == pytest.approx(75 / 100)
    assert report.precision == pytest.approx(75 / 95)
    assert report.ta_rate + report.fr_rate == pytest.approx(1.0)
    assert report.recall + report.fa_rate == pytest.approx(1.0)
    assert report.cd_rate + report.de_rate == pytest.approx(1.0)


def test_summarize_undefined_rates_are_none():
    report = summarize(MddCounts(ta=5, fr=0, fa=0, cd=0, de=0))
    assert report.recall is None  # no mispronounced positions at all
    assert report.cd_rate is None
    assert report.fa_rate is None
    assert report.ta_rate == 1.0
    text = format_report(report)
    assert "undefined" in text
    assert "nan" not in text.lower()


def test_format_report_contains_kv_block():
    report = summarize(MddCounts(1, 2, 3, 4, 5), per_value=0.25)
    text = format_report(report)
    assert "ta=1" in text
    assert "per=0.25" in text
    assert "f_measure=" in text
