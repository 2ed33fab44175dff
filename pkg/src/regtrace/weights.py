"""Per-state weights and log classification.

For state ``i`` seen ``b_i`` times across all baseline logs and ``e_i`` times
across all ESD logs (totals ``|B|`` and ``|E|``), with base and error
multipliers ``w_b`` and ``w_e``::

    w_i = (w_b * b_i + w_e * e_i) / (|w_b * b_i| + |w_e * e_i|)

The variants choose ``w_b, w_e``:

============  ========================  ==================
plain         -|E|, |B|
add_delta     -|E| - delta, |B| + delta
scale_before  -|E| * delta, |B| * delta
scale_after   -|E|, |B|                 result times delta
============  ========================  ==================

A log's score is ``C_L = sum_i w_i * s_i / |L|`` over its states, where
``s_i`` counts occurrences and ``|L|`` is the log length.  Positive means
ESD.

Weights and scores are exact :class:`fractions.Fraction` values, so the
algebraic identities between variants hold exactly.  ``delta`` is converted
through its decimal string (``0.1`` means one tenth).
"""

from __future__ import annotations

import enum
import math
from collections import Counter
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

from .errors import EmptyGroup, EmptyTrace, InsufficientLogs, InvalidDelta
from .diffstats import CorpusPartition
from .logmodel import Condition
from .rng import SplitMix64
from .stategraph import ExecutionTrace


class Variant(str, enum.Enum):
    PLAIN = "plain"
    ADD_DELTA = "add_delta"
    SCALE_BEFORE = "scale_before"
    SCALE_AFTER = "scale_after"

    @classmethod
    def parse(cls, text: "str | Variant") -> "Variant":
        if isinstance(text, Variant):
            return text
        try:
            return cls(str(text).strip().lower().replace("-", "_"))
        except ValueError:
            raise InvalidDelta(f"unknown variant {text!r}") from None


class Label(str, enum.Enum):
    ESD = "esd"
    BASELINE = "baseline"
    INDETERMINATE = "indeterminate"


def as_fraction(delta) -> Fraction:
    if isinstance(delta, Fraction):
        return delta
    if isinstance(delta, int):
        return Fraction(delta)
    try:
        value = Fraction(str(delta))
    except (ValueError, ZeroDivisionError):
        raise InvalidDelta(f"delta is not a finite number: {delta!r}") from None
    return value


def check_delta(variant, delta) -> Fraction:
    """Validate ``delta`` for ``variant``; returns it as a Fraction."""
    variant = Variant.parse(variant)
    d = as_fraction(delta)
    if variant is Variant.PLAIN:
        return d
    if variant is Variant.ADD_DELTA and d < 0:
        raise InvalidDelta(f"add_delta needs delta >= 0, got {delta}")
    if variant in (Variant.SCALE_BEFORE, Variant.SCALE_AFTER) and d <= 0:
        raise InvalidDelta(f"{variant.value} needs delta > 0, got {delta}")
    return d


@dataclass(frozen=True)
class TrainingCounts:
    baseline: Mapping[str, int]
    esd: Mapping[str, int]

    @property
    def total_baseline(self) -> int:
        return sum(self.baseline.values())

    @property
    def total_esd(self) -> int:
        return sum(self.esd.values())

    def states(self) -> list[str]:
        return sorted(set(self.baseline) | set(self.esd))

    def __sub__(self, other: "TrainingCounts") -> "TrainingCounts":
        b = Counter(self.baseline)
        b.subtract(other.baseline)
        e = Counter(self.esd)
        e.subtract(other.esd)
        return TrainingCounts({k: v for k, v in b.items() if v > 0},
                              {k: v for k, v in e.items() if v > 0})


def build_counts(partition: CorpusPartition[ExecutionTrace]) -> TrainingCounts:
    if not partition.baseline:
        raise EmptyGroup("baseline group is empty")
    if not partition.esd:
        raise EmptyGroup("esd group is empty")
    b: Counter = Counter()
    e: Counter = Counter()
    for t in partition.baseline:
        b.update(t.states)
    for t in partition.esd:
        e.update(t.states)
    if not b or not e:
        raise EmptyGroup("a group has no state occurrences")
    return TrainingCounts(dict(b), dict(e))


@dataclass(frozen=True)
class WeightTable:
    variant: Variant
    delta: Fraction
    weights: Mapping[str, Fraction]
    counts: TrainingCounts | None = field(default=None, compare=False)

    def __getitem__(self, sid: str) -> Fraction:
        return self.weights[sid]

    def unique_weights(self) -> list[Fraction]:
        return sorted(set(self.weights.values()))

    def to_dict(self) -> dict:
        b = self.counts.baseline if self.counts else {}
        e = self.counts.esd if self.counts else {}
        return {
            "variant": self.variant.value,
            "delta": float(self.delta),
            "total_baseline": self.counts.total_baseline if self.counts else None,
            "total_esd": self.counts.total_esd if self.counts else None,
            "rows": [{"state_id": sid, "b": b.get(sid, 0), "e": e.get(sid, 0), "w": float(w)}
                     for sid, w in sorted(self.weights.items())],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "WeightTable":
        rows = data["rows"]
        counts = TrainingCounts({r["state_id"]: r["b"] for r in rows if r["b"]},
                                {r["state_id"]: r["e"] for r in rows if r["e"]})
        return cls(Variant.parse(data["variant"]), as_fraction(data["delta"]),
                   {r["state_id"]: Fraction(r["w"]) for r in rows}, counts)


def build_weights(counts: TrainingCounts, variant="plain", delta=0) -> WeightTable:
    variant = Variant.parse(variant)
    d = check_delta(variant, delta)
    B, E = counts.total_baseline, counts.total_esd
    if B < 1 or E < 1:
        raise EmptyGroup("both groups need at least one state occurrence")
    # Integer multipliers: scaling w_b and w_e by a common positive factor
    # leaves every weight unchanged, so clear delta's denominator first.
    p, q = d.numerator, d.denominator
    if variant is Variant.ADD_DELTA:
        wb, we = -(E * q + p), B * q + p
    elif variant is Variant.SCALE_BEFORE:
        wb, we = -E * p, B * p
    else:
        wb, we = -E, B
    weights = {}
    for sid in counts.states():
        bi, ei = counts.baseline.get(sid, 0), counts.esd.get(sid, 0)
        w = Fraction(wb * bi + we * ei, abs(wb * bi) + abs(we * ei))
        if variant is Variant.SCALE_AFTER:
            w *= d
        weights[sid] = w
    return WeightTable(variant, d, weights, counts)


@dataclass(frozen=True)
class ClassificationResult:
    run_id: str
    score: Fraction
    label: Label
    unseen_state_mass: Fraction


def classify(table: WeightTable, trace: ExecutionTrace | Sequence[str], run_id: str | None = None) -> ClassificationResult:
    """Score a log.  States missing from the table weigh 0."""
    if isinstance(trace, ExecutionTrace):
        states, run_id = trace.states, trace.run_id
    else:
        states = tuple(trace)
    if not states:
        raise EmptyTrace(f"cannot classify empty trace {run_id or ''}".rstrip())
    total = Fraction(0)
    unseen = 0
    for sid, n in Counter(states).items():
        w = table.weights.get(sid)
        if w is None:
            unseen += n
        else:
            total += w * n
    score = total / len(states)
    label = Label.ESD if score > 0 else Label.BASELINE if score < 0 else Label.INDETERMINATE
    return ClassificationResult(run_id or "", score, label, Fraction(unseen, len(states)))


def truth(trace: ExecutionTrace) -> Label:
    return Label.ESD if trace.condition is Condition.ESD else Label.BASELINE


@dataclass(frozen=True)
class Split:
    """Hold out ``fraction`` of each group (at least one log) for testing."""
    fraction: float
    seed: int

    def __post_init__(self):
        if not 0 < self.fraction < 1:
            raise ValueError(f"split fraction must be in (0, 1), got {self.fraction}")


LEAVE_ONE_OUT = "leave_one_out"


def parse_protocol(text: str) -> "str | Split":
    """``loo`` / ``leave_one_out`` or ``split:<fraction>:<seed>``."""
    text = text.strip()
    if text in ("loo", LEAVE_ONE_OUT):
        return LEAVE_ONE_OUT
    parts = text.split(":")
    if len(parts) == 3 and parts[0] == "split":
        try:
            return Split(float(parts[1]), int(parts[2]))
        except ValueError as exc:
            raise ValueError(f"bad split protocol {text!r}: {exc}") from None
    raise ValueError(f"unknown protocol {text!r}")


def straightline_deviation(weights: Sequence) -> float:
    """RMS distance of sorted unique weights from the line -1 -> 1."""
    ws = sorted(set(weights))
    m = len(ws)
    if m == 0:
        return 0.0
    if m == 1:
        return abs(float(ws[0]))
    sq = 0.0
    for j, w in enumerate(ws):
        ref = -1 + 2 * j / (m - 1)
        sq += (float(w) - ref) ** 2
    return math.sqrt(sq / m)


def middle_weight_abs(weights: Sequence) -> float:
    """Absolute value of the lower median of the sorted unique weights."""
    ws = sorted(set(weights))
    if not ws:
        return 0.0
    return abs(float(ws[(len(ws) - 1) // 2]))


@dataclass(frozen=True)
class EvaluationMetrics:
    accuracy: float
    straightline_deviation: float
    middle_weight_abs: float
    weight_list: tuple[float, ...]
    predictions: tuple[ClassificationResult, ...] = field(default=(), repr=False)


def _counts_of(traces: Sequence[ExecutionTrace], condition: Condition) -> TrainingCounts:
    c: Counter = Counter()
    for t in traces:
        c.update(t.states)
    return TrainingCounts(dict(c), {}) if condition is Condition.BASELINE else TrainingCounts({}, dict(c))


def _split(partition: CorpusPartition, split: Split):
    rng = SplitMix64(split.seed)
    train, test = [], []
    for group in (partition.baseline, partition.esd):
        items = list(group)
        rng.shuffle(items)
        n_test = max(1, round(len(items) * split.fraction))
        if len(items) - n_test < 1:
            raise InsufficientLogs("split leaves no training log in a group")
        test.extend(items[:n_test])
        train.extend(items[n_test:])
    return CorpusPartition.of(train), sorted(test, key=lambda t: t.run_id)


def evaluate(partition: CorpusPartition[ExecutionTrace], variant="plain", delta=0,
             protocol: "str | Split" = LEAVE_ONE_OUT) -> EvaluationMetrics:
    """Held-out accuracy plus weight-shape diagnostics.

    Indeterminate predictions count as wrong.  The weight diagnostics come
    from the table trained on the whole partition (leave-one-out) or on the
    training side of the split.
    """
    variant = Variant.parse(variant)
    check_delta(variant, delta)
    if isinstance(protocol, str):
        protocol = parse_protocol(protocol)

    predictions = []
    if protocol == LEAVE_ONE_OUT:
        if len(partition.baseline) < 2 or len(partition.esd) < 2:
            raise InsufficientLogs("leave-one-out needs at least two logs per group")
        full = build_counts(partition)
        for t in partition:
            held = _counts_of([t], t.condition)
            table = build_weights(full - held, variant, delta)
            predictions.append(classify(table, t))
        trained = build_weights(full, variant, delta)
        held_out = list(partition)
    else:
        if len(partition.baseline) < 2 or len(partition.esd) < 2:
            raise InsufficientLogs("split needs at least two logs per group")
        train, held_out = _split(partition, protocol)
        trained = build_weights(build_counts(train), variant, delta)
        predictions = [classify(trained, t) for t in held_out]

    correct = sum(1 for t, p in zip(held_out, predictions) if p.label is truth(t))
    ws = trained.unique_weights()
    return EvaluationMetrics(
        accuracy=correct / len(held_out),
        straightline_deviation=straightline_deviation(ws),
        middle_weight_abs=middle_weight_abs(ws),
        weight_list=tuple(float(w) for w in ws),
        predictions=tuple(predictions),
    )


@dataclass(frozen=True)
class SweepRow:
    delta: float
    accuracy: float
    straightline_deviation: float
    middle_weight_abs: float


def sweep_delta(partition: CorpusPartition[ExecutionTrace], variant, deltas: Sequence,
                protocol: "str | Split" = LEAVE_ONE_OUT) -> list[SweepRow]:
    variant = Variant.parse(variant)
    for d in deltas:
        check_delta(variant, d)
    rows = []
    for d in deltas:
        m = evaluate(partition, variant, d, protocol)
        rows.append(SweepRow(float(as_fraction(d)), m.accuracy, m.straightline_deviation, m.middle_weight_abs))
    return rows
