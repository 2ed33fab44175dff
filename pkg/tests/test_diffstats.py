from __future__ import annotations

import logging

import pytest
from hypothesis import given, strategies as st

from regtrace.diffstats import (
    CorpusPartition,
    EdgeCategory,
    compare_distributions,
    correlate_metadata,
    diff_states,
    nonbaseline_transition_fraction,
    occurrence_histogram,
    occurrence_table,
    value_distribution,
)
from regtrace.errors import EmptyGroup, MissingField, NoTransitions, UnknownRegister
from regtrace.logmodel import RawLog, RegisterSchema, RunMetadata, Snapshot
from regtrace.stategraph import ExecutionTrace

SCHEMA = RegisterSchema(("HcControl", "Other"))


def tr(seq, run_id, condition="baseline", **meta):
    md = RunMetadata(run_id, condition, **meta)
    return ExecutionTrace(run_id, condition, tuple(seq), table={s: (s,) for s in seq}, metadata=md)


def raw(values, run_id, condition):
    snaps = tuple(Snapshot("f", {"HcControl": v, "Other": 0}, i) for i, v in enumerate(values))
    return RawLog(snaps, SCHEMA, RunMetadata(run_id, condition))


def test_diff_example():
    base = tr("ABA", "b1")  # nodes {A,B}, edges A->B, B->A
    esd = tr("AQRBB", "e1", "esd")
    report = diff_states(CorpusPartition.of([base, esd]))
    assert report.esd_only_states == {"Q", "R"}
    assert report.shared_states == {"A", "B"}
    assert report.edge_categories == {
        ("A", "Q"): EdgeCategory.TO_NON_BASELINE,
        ("Q", "R"): EdgeCategory.BETWEEN_NON_BASELINE,
        ("B", "B"): EdgeCategory.NON_BASELINE_EDGE_BETWEEN_BASELINE_STATES,
        ("R", "B"): EdgeCategory.FROM_NON_BASELINE_TO_BASELINE,
    }
    assert [int(c) for _, c in sorted(report.edge_categories.items())] == [1, 3, 2, 4]


def test_identical_traces_have_empty_diff():
    report = diff_states(CorpusPartition.of([tr("ABAB", "b1"), tr("ABAB", "e1", "esd")]))
    assert not report.esd_only_states and not report.esd_only_edges and not report.baseline_only_states
    assert report.rows() == []


def test_baseline_only_state():
    report = diff_states(CorpusPartition.of([tr("ABC", "b1"), tr("AB", "e1", "esd")]))
    assert report.baseline_only_states == {"C"}


def test_diff_needs_both_groups():
    with pytest.raises(EmptyGroup):
        diff_states(CorpusPartition.of([tr("AB", "b1")]))


def test_category_three_uses_union_of_baseline_edges():
    report = diff_states(CorpusPartition.of([tr("AB", "b1"), tr("BA", "b2"), tr("ABA", "e1", "esd")]))
    assert not report.esd_only_edges


seqs = st.lists(st.sampled_from("ABCDEFG"), min_size=0, max_size=15)


@given(st.lists(seqs, min_size=1, max_size=3), st.lists(seqs, min_size=1, max_size=3))
def test_diff_partition_laws(bases, esds):
    items = [tr(s, f"b{i}") for i, s in enumerate(bases)] + [tr(s, f"e{i}", "esd") for i, s in enumerate(esds)]
    report = diff_states(CorpusPartition.of(items))
    reached_base = {x for s in bases for x in s}
    reached_esd = {x for s in esds for x in s}
    assert report.esd_only_states | report.shared_states == reached_esd
    assert not report.esd_only_states & report.shared_states
    assert not report.esd_only_states & reached_base
    assert set(report.edge_categories) == set(report.esd_only_edges)
    for edge, cat in report.edge_categories.items():
        src_in, dst_in = edge[0] in reached_base, edge[1] in reached_base
        expected = {(True, False): 1, (False, False): 2, (True, True): 3, (False, True): 4}
        assert int(cat) == expected[(src_in, dst_in)]


# -- distributions ---------------------------------------------------------------

def test_value_distribution_counting():
    part = CorpusPartition.of([raw([0x83, 0x83, 0xA3, 0x93], "b1", "baseline"), raw([0x83], "e1", "esd")])
    dist = value_distribution(part, "HcControl")
    assert [(r.value, r.p_baseline) for r in dist.rows] == [(0x83, 0.5), (0x93, 0.25), (0xA3, 0.25)]
    assert dist.column("esd") == {0x83: 1.0, 0x93: 0.0, 0xA3: 0.0}


def test_value_distribution_pools_snapshots_across_logs():
    part = CorpusPartition.of([raw([1], "b1", "baseline"), raw([2, 2, 2], "b2", "baseline"),
                               raw([1], "e1", "esd")])
    assert value_distribution(part, "HcControl").column("baseline") == {2: 0.75, 1: 0.25}


def test_value_distribution_errors():
    part = CorpusPartition.of([raw([1], "b1", "baseline"), raw([1], "e1", "esd")])
    with pytest.raises(UnknownRegister):
        value_distribution(part, "Nope")
    with pytest.raises(EmptyGroup):
        value_distribution(CorpusPartition.of([raw([1], "b1", "baseline"), raw([], "e1", "esd")]), "HcControl")


@given(st.lists(st.lists(st.integers(0, 5), min_size=1, max_size=20), min_size=1, max_size=4))
def test_distribution_normalization(groups):
    items = [raw(g, f"b{i}", "baseline") for i, g in enumerate(groups)] + [raw(groups[0], "e0", "esd")]
    dist = value_distribution(CorpusPartition.of(items), "HcControl")
    for cond in ("baseline", "esd"):
        col = dist.column(cond)
        assert abs(sum(col.values()) - 1) <= 1e-9
        assert all(0 <= p <= 1 for p in col.values())


def test_compare_published_enable_disable():
    enable = {0x8000005E: 0.20041, 0x8000001A: 0.09677, 0x8000005A: 0.65932, 0x8000001E: 0.04359}
    disable = {0x8000005E: 0.20041, 0x8000001A: 0.09666, 0x8000005A: 0.65943, 0x8000001E: 0.04359}
    rows = {r.value: r for r in compare_distributions(enable, disable)}
    assert rows[0x8000005E].difference == 0 and not rows[0x8000005E].flagged
    assert rows[0x8000001A].difference == pytest.approx(0.00011, abs=1e-12)
    assert rows[0x8000005A].difference == pytest.approx(-0.00011, abs=1e-12)
    assert rows[0x8000001A].flagged


def test_compare_missing_is_zero_and_order():
    rows = compare_distributions({1: 0.8, 2: 0.2}, {1: 0.8, 3: 0.2})
    assert [(r.value, r.difference) for r in rows] == [(1, 0.0), (2, 0.2), (3, -0.2)]
    assert [r.difference for r in compare_distributions({1: 0.5}, {1: 0.5})] == [0.0]


probs = st.dictionaries(st.integers(0, 6), st.floats(0, 1), max_size=6)


@given(probs, probs)
def test_compare_antisymmetric(a, b):
    ab = {r.value: r.difference for r in compare_distributions(a, b)}
    ba = {r.value: r.difference for r in compare_distributions(b, a)}
    assert ab.keys() == ba.keys()
    assert all(ab[v] == -ba[v] for v in ab)


# -- occurrences and transitions -----------------------------------------------------

def test_occurrence_histogram():
    assert occurrence_histogram([tr("AAAA", "1"), tr("AA", "2")]) == [("A", 3.0)]
    assert occurrence_histogram([tr("AAAAA", "1")]) == [("A", 5.0)]
    assert occurrence_histogram([tr("AAAA", "1"), tr("B", "2")]) == [("A", 2.0), ("B", 0.5)]
    with pytest.raises(EmptyGroup):
        occurrence_histogram([])


def test_occurrence_histogram_ties_and_truncation():
    rows = occurrence_histogram([tr("CBA", "1")])
    assert [s for s, _ in rows] == ["A", "B", "C"]
    assert occurrence_histogram([tr("AAB", "1")], truncate_tail=1) == [("A", 2.0)]


def test_occurrence_table():
    part = CorpusPartition.of([tr("AAB", "b1"), tr("AQ", "e1", "esd")])
    assert occurrence_table(part) == [("A", 2.0, 1.0), ("B", 1.0, 0.0), ("Q", 0.0, 1.0)]


def test_nonbaseline_fraction():
    assert nonbaseline_transition_fraction(tr("ABQA", "x"), {"A", "B"}) == pytest.approx(200 / 3)
    assert nonbaseline_transition_fraction(tr("ABAB", "x"), {"A", "B"}) == 0.0
    assert nonbaseline_transition_fraction(tr("QRS", "x"), {"A", "B"}) == 100.0
    with pytest.raises(NoTransitions):
        nonbaseline_transition_fraction(tr("A", "x"), {"A"})


def test_correlate_voltage(caplog):
    part = CorpusPartition.of([
        tr("AB" * 5, "b1"),
        tr("ABABABABAB" + "Q", "r2", "esd", voltage=3000),  # 2 of 10 transitions
        tr("ABABABABABA" , "r1", "esd", voltage=3000),
        tr("ABQ", "r0", "esd"),
        tr("Q", "r9", "esd", voltage=500),
    ])
    with caplog.at_level(logging.WARNING):
        rows = correlate_metadata(part, "voltage")
    assert rows == [(3000.0, "r1", 0.0), (3000.0, "r2", 10.0)]
    assert "r0" in caplog.text and "r9" in caplog.text


def test_correlate_errors_and_empty():
    with pytest.raises(MissingField):
        correlate_metadata(CorpusPartition.of([tr("AB", "b1")]), "colour")
    assert correlate_metadata(CorpusPartition.of([tr("AB", "b1")]), "voltage") == []
