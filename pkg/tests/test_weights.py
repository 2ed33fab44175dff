from __future__ import annotations

import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

import oracles
from regtrace.diffstats import CorpusPartition
from regtrace.errors import EmptyGroup, EmptyTrace, InsufficientLogs, InvalidDelta
from regtrace.logmodel import RunMetadata
from regtrace.stategraph import ExecutionTrace
from regtrace.weights import (
    LEAVE_ONE_OUT,
    Label,
    Split,
    TrainingCounts,
    Variant,
    WeightTable,
    build_counts,
    build_weights,
    check_delta,
    classify,
    evaluate,
    middle_weight_abs,
    parse_protocol,
    straightline_deviation,
    sweep_delta,
)


def tr(seq, run_id, condition="baseline"):
    return ExecutionTrace(run_id, condition, tuple(seq), table={s: (s,) for s in seq},
                          metadata=RunMetadata(run_id, condition))


def part(bases, esds):
    return CorpusPartition.of([tr(s, f"b{i:02d}") for i, s in enumerate(bases)]
                              + [tr(s, f"e{i:02d}", "esd") for i, s in enumerate(esds)])


FIX = part(["XXY"], ["YZZZ"])


def test_fix1_weights():
    counts = build_counts(FIX)
    assert (counts.total_baseline, counts.total_esd) == (3, 4)
    assert build_weights(counts)["Y"] == Fraction(-1, 7)
    assert build_weights(counts, "add_delta", 2)["Y"] == Fraction(-1, 11)
    assert build_weights(counts, "scale_before", 7)["Y"] == Fraction(-1, 7)
    assert build_weights(counts, "scale_after", 0.5)["Y"] == Fraction(-1, 14)
    assert build_weights(counts)["X"] == -1
    assert build_weights(counts)["Z"] == 1


def test_fix1_scores():
    counts = build_counts(FIX)
    plain = classify(build_weights(counts), "YZ")
    after = classify(build_weights(counts, "scale_after", 0.5), "YZ")
    assert (plain.score, plain.label) == (Fraction(3, 7), Label.ESD)
    assert (after.score, after.label) == (Fraction(3, 14), Label.ESD)
    xx = classify(build_weights(counts), "XX")
    assert (xx.score, xx.label) == (-1, Label.BASELINE)
    unseen = classify(build_weights(counts), "W")
    assert (unseen.score, unseen.label, unseen.unseen_state_mass) == (0, Label.INDETERMINATE, 1)


def test_delta_validation():
    assert check_delta("plain", -3) == -3
    assert check_delta("add-delta", 0) == 0
    for variant, bad in [("add_delta", -1), ("scale_before", 0), ("scale_after", -0.5)]:
        with pytest.raises(InvalidDelta):
            check_delta(variant, bad)
    with pytest.raises(InvalidDelta):
        check_delta("plain", float("nan"))
    with pytest.raises(InvalidDelta):
        Variant.parse("cubic")
    assert check_delta("scale_before", 0.1) == Fraction(1, 10)


def test_empty_inputs():
    with pytest.raises(EmptyGroup):
        build_counts(part(["AB"], []))
    with pytest.raises(EmptyTrace):
        classify(build_weights(build_counts(FIX)), "")


def test_weight_table_json_round_trip():
    table = build_weights(build_counts(FIX), "add_delta", 2)
    back = WeightTable.from_dict(table.to_dict())
    assert back.variant is Variant.ADD_DELTA
    assert {k: float(v) for k, v in back.weights.items()} == {k: float(v) for k, v in table.weights.items()}
    assert back.counts.total_esd == 4


# -- properties -------------------------------------------------------------------

count_tables = st.dictionaries(
    st.sampled_from("abcdefgh"),
    st.tuples(st.integers(0, 30), st.integers(0, 30)).filter(lambda t: t != (0, 0)),
    min_size=1,
).filter(lambda d: sum(b for b, _ in d.values()) > 0 and sum(e for _, e in d.values()) > 0)

deltas = st.sampled_from([0, Fraction(1, 10), 1, 2, 7, 100])


def counts_of(table):
    return TrainingCounts({k: b for k, (b, e) in table.items() if b},
                          {k: e for k, (b, e) in table.items() if e})


@settings(max_examples=300)
@given(count_tables, st.sampled_from(["plain", "add_delta", "scale_before"]), deltas)
def test_endpoint_law_and_bounds(table, variant, delta):
    if variant == "scale_before" and delta == 0:
        delta = 1
    w = build_weights(counts_of(table), variant, delta)
    for sid, (b, e) in table.items():
        assert (w[sid] == 1) == (b == 0)
        assert (w[sid] == -1) == (e == 0)
        assert -1 <= w[sid] <= 1


@given(count_tables, deltas)
def test_weights_match_closed_forms(table, delta):
    c = counts_of(table)
    B, E = c.total_baseline, c.total_esd
    for variant in Variant:
        d = delta if variant in (Variant.PLAIN, Variant.ADD_DELTA) or delta else 1
        w = build_weights(c, variant, d)
        for sid, (b, e) in table.items():
            assert w[sid] == oracles.weight(variant.value, b, e, B, E, d)


@given(count_tables, st.integers(1, 5))
def test_log_repetition_invariance(table, n):
    c = counts_of(table)
    scaled = TrainingCounts({k: v * n for k, v in c.baseline.items()}, {k: v * n for k, v in c.esd.items()})
    assert build_weights(c).weights == build_weights(scaled).weights


@given(st.integers(1, 20), st.integers(1, 20), st.integers(0, 20), st.integers(0, 20))
def test_monotone_in_esd_count(B_rest, E_rest, b, e):
    def w(e_i):
        c = TrainingCounts({"s": b, "r": B_rest} if b else {"r": B_rest}, {"s": e_i, "r": E_rest} if e_i else {"r": E_rest})
        return build_weights(c)["s"] if b or e_i else None
    if b or e:
        assert w(e + 1) >= w(e)


@given(count_tables, st.sampled_from([Fraction(1, 10), 1, 7, 100]),
       st.lists(st.sampled_from("abcdefghz"), min_size=1, max_size=12))
def test_scale_after_keeps_labels(table, delta, log):
    c = counts_of(table)
    plain = classify(build_weights(c), log)
    after = classify(build_weights(c, "scale_after", delta), log)
    assert after.label is plain.label
    assert after.score == plain.score * Fraction(str(delta))
    assert build_weights(c, "scale_before", delta).weights == build_weights(c).weights
    assert build_weights(c, "add_delta", 0).weights == build_weights(c).weights


@given(count_tables, st.lists(st.sampled_from("abcdefghz"), min_size=1, max_size=12), st.randoms())
def test_score_ignores_order(table, log, rnd):
    w = build_weights(counts_of(table))
    shuffled = list(log)
    rnd.shuffle(shuffled)
    assert classify(w, log).score == classify(w, shuffled).score


# -- diagnostics and evaluation ----------------------------------------------------

def test_straightline_deviation():
    assert straightline_deviation([-1, 0, 1]) == 0
    assert straightline_deviation([Fraction(1, 2)]) == 0.5
    assert straightline_deviation([-1, 1, 1, -1]) == 0
    assert straightline_deviation([-1, 1, 0.5]) == pytest.approx((0.5 ** 2 / 3) ** 0.5)
    assert middle_weight_abs([-1, Fraction(-1, 4), 0.5, 1]) == 0.25
    assert middle_weight_abs([]) == 0.0


def test_parse_protocol():
    assert parse_protocol("loo") == LEAVE_ONE_OUT
    assert parse_protocol("split:0.25:9") == Split(0.25, 9)
    for bad in ("split:1.5:1", "kfold", "split:x:1"):
        with pytest.raises(ValueError):
            parse_protocol(bad)


SEPARABLE = part(["AAB", "ABA", "BAA"], ["AQQ", "QQB", "QAQ"])


def test_leave_one_out_matches_manual_recount():
    m = evaluate(SEPARABLE)
    assert m.accuracy == 1.0
    for t, p in zip(SEPARABLE, m.predictions):
        rest_b = [s.states for s in SEPARABLE.baseline if s is not t]
        rest_e = [s.states for s in SEPARABLE.esd if s is not t]
        assert p.score == oracles.score("plain", 0, rest_b, rest_e, t.states)
    assert m.weight_list == tuple(float(w) for w in build_weights(build_counts(SEPARABLE)).unique_weights())


def test_indeterminate_counts_as_wrong():
    m = evaluate(part(["A", "A"], ["Q", "Q"]))
    # with one log held out its state still occurs in the other log of the group
    assert m.accuracy == 1.0
    m = evaluate(part(["A", "B"], ["Q", "R"]))
    assert m.accuracy == 0.0
    assert all(p.label is Label.INDETERMINATE for p in m.predictions)


def test_insufficient_logs():
    with pytest.raises(InsufficientLogs):
        evaluate(part(["A"], ["Q", "R"]))
    with pytest.raises(InsufficientLogs):
        evaluate(part(["A"], ["Q", "R"]), protocol="split:0.5:1")


def test_split_is_seeded():
    p = part(["AAB"] * 6, ["AQQ"] * 6)
    a = evaluate(p, protocol="split:0.3:5")
    b = evaluate(p, protocol=Split(0.3, 5))
    assert a == b
    assert len(a.predictions) == 4  # two held out per group


def test_sweep_scale_after_accuracy_is_constant():
    rows = sweep_delta(SEPARABLE, "scale_after", [0.1, 1, 7, 100])
    assert len({r.accuracy for r in rows}) == 1
    assert [r.delta for r in rows] == [0.1, 1.0, 7.0, 100.0]
    with pytest.raises(InvalidDelta):
        sweep_delta(SEPARABLE, "scale_before", [1, 0])


def test_sweep_on_random_corpora_matches_plain():
    rnd = random.Random(3)
    for _ in range(20):
        p = part(["".join(rnd.choices("ABC", k=rnd.randint(1, 6))) for _ in range(3)],
                 ["".join(rnd.choices("ABQ", k=rnd.randint(1, 6))) for _ in range(3)])
        base = evaluate(p)
        for d in (0.1, 1, 7, 100):
            assert evaluate(p, "scale_before", d).predictions == base.predictions
            assert [x.label for x in evaluate(p, "scale_after", d).predictions] == [x.label for x in base.predictions]
