"""Baseline vs. ESD-exposed comparisons.

All outputs are canonically sorted so they do not depend on input order.
Probabilities are pooled over every snapshot in a group, and per-log means
divide by the number of logs in the group.
"""

from __future__ import annotations

import enum
import logging
from collections import Counter
from dataclasses import dataclass, field, fields
from typing import Generic, Iterable, Mapping, Sequence, TypeVar

from .errors import DuplicateRunId, EmptyGroup, MissingField, NoTransitions, UnknownRegister
from .logmodel import Condition, RawLog, RunMetadata
from .stategraph import ExecutionTrace, build_graph

log = logging.getLogger(__name__)

T = TypeVar("T", ExecutionTrace, RawLog)


@dataclass(frozen=True)
class CorpusPartition(Generic[T]):
    baseline: tuple[T, ...]
    esd: tuple[T, ...]

    @classmethod
    def of(cls, items: Iterable[T]) -> "CorpusPartition[T]":
        """Split by condition, each group sorted by run id."""
        groups: dict[Condition, list] = {Condition.BASELINE: [], Condition.ESD: []}
        seen = set()
        for item in items:
            if item.run_id is None or item.condition is None:
                raise ValueError("item has no run metadata")
            if item.run_id in seen:
                raise DuplicateRunId(f"run_id {item.run_id!r} appears twice")
            seen.add(item.run_id)
            groups[item.condition].append(item)
        key = lambda x: x.run_id
        return cls(tuple(sorted(groups[Condition.BASELINE], key=key)),
                   tuple(sorted(groups[Condition.ESD], key=key)))

    def group(self, condition: Condition | str) -> tuple[T, ...]:
        return self.baseline if Condition(condition) is Condition.BASELINE else self.esd

    def __iter__(self):
        yield from self.baseline
        yield from self.esd


def _require(partition: CorpusPartition, *conditions: Condition) -> None:
    for cond in conditions:
        if not partition.group(cond):
            raise EmptyGroup(f"{cond.value} group is empty")


class EdgeCategory(enum.IntEnum):
    TO_NON_BASELINE = 1
    BETWEEN_NON_BASELINE = 2
    NON_BASELINE_EDGE_BETWEEN_BASELINE_STATES = 3
    FROM_NON_BASELINE_TO_BASELINE = 4


def categorize_edge(edge: tuple[str, str], baseline_states: set[str] | frozenset[str]) -> EdgeCategory:
    src_known, dst_known = edge[0] in baseline_states, edge[1] in baseline_states
    if src_known and not dst_known:
        return EdgeCategory.TO_NON_BASELINE
    if not src_known and not dst_known:
        return EdgeCategory.BETWEEN_NON_BASELINE
    if src_known and dst_known:
        return EdgeCategory.NON_BASELINE_EDGE_BETWEEN_BASELINE_STATES
    return EdgeCategory.FROM_NON_BASELINE_TO_BASELINE


@dataclass(frozen=True)
class DiffReport:
    esd_only_states: frozenset[str]
    baseline_only_states: frozenset[str]
    shared_states: frozenset[str]
    esd_only_edges: frozenset[tuple[str, str]]
    edge_categories: Mapping[tuple[str, str], EdgeCategory]
    baseline_states: frozenset[str] = field(repr=False, default=frozenset())

    def rows(self) -> list[tuple[str, str, str, str, str]]:
        """(kind, state_id, src, dst, category) rows for CSV output."""
        out = []
        for sid in sorted(self.esd_only_states):
            out.append(("esd_only_state", sid, "", "", ""))
        for sid in sorted(self.baseline_only_states):
            out.append(("baseline_only_state", sid, "", "", ""))
        for s, t in sorted(self.esd_only_edges):
            out.append(("esd_only_edge", "", s, t, str(int(self.edge_categories[(s, t)]))))
        return out


def _reached(traces: Iterable[ExecutionTrace]) -> tuple[set[str], set[tuple[str, str]]]:
    states: set[str] = set()
    edges: set[tuple[str, str]] = set()
    for t in traces:
        g = build_graph(t)
        states |= g.nodes
        edges |= set(g.edges)
    return states, edges


def diff_states(partition: CorpusPartition[ExecutionTrace]) -> DiffReport:
    _require(partition, Condition.BASELINE, Condition.ESD)
    base_states, base_edges = _reached(partition.baseline)
    esd_states, esd_edges = _reached(partition.esd)
    only_edges = esd_edges - base_edges
    return DiffReport(
        esd_only_states=frozenset(esd_states - base_states),
        baseline_only_states=frozenset(base_states - esd_states),
        shared_states=frozenset(esd_states & base_states),
        esd_only_edges=frozenset(only_edges),
        edge_categories={e: categorize_edge(e, base_states) for e in sorted(only_edges)},
        baseline_states=frozenset(base_states),
    )


@dataclass(frozen=True)
class DistributionRow:
    value: int
    p_baseline: float
    p_esd: float

    @property
    def difference(self) -> float:
        return self.p_esd - self.p_baseline


@dataclass(frozen=True)
class Distribution:
    register: str
    rows: tuple[DistributionRow, ...]

    def column(self, condition: Condition | str) -> dict[int, float]:
        attr = "p_baseline" if Condition(condition) is Condition.BASELINE else "p_esd"
        return {r.value: getattr(r, attr) for r in self.rows}


def _value_probabilities(logs: Sequence[RawLog], register: str) -> dict[int, float]:
    counts = Counter(s.values[register] for raw in logs for s in raw.snapshots)
    total = sum(counts.values())
    if total == 0:
        raise EmptyGroup("group has no snapshots")
    return {v: c / total for v, c in counts.items()}


def value_distribution(partition: CorpusPartition[RawLog], register: str) -> Distribution:
    """Pooled per-group probability of each raw value of ``register``.

    Rows are sorted by descending baseline probability, then value.
    """
    for raw in partition:
        if register not in raw.schema:
            raise UnknownRegister(f"register {register!r} not in schema", source=raw.source)
    _require(partition, Condition.BASELINE, Condition.ESD)
    base = _value_probabilities(partition.baseline, register)
    esd = _value_probabilities(partition.esd, register)
    rows = [DistributionRow(v, base.get(v, 0.0), esd.get(v, 0.0)) for v in set(base) | set(esd)]
    rows.sort(key=lambda r: (-r.p_baseline, r.value))
    return Distribution(register, tuple(rows))


@dataclass(frozen=True)
class ComparisonRow:
    value: int
    a: float
    b: float
    difference: float
    flagged: bool


def compare_distributions(a: Mapping[int, float], b: Mapping[int, float]) -> list[ComparisonRow]:
    """Per-value signed difference ``a - b``; absent values count as 0.

    Rows follow ``a``'s order, then values only present in ``b``.
    """
    values = list(a) + [v for v in b if v not in a]
    rows = []
    for v in values:
        pa, pb = a.get(v, 0.0), b.get(v, 0.0)
        diff = pa - pb
        rows.append(ComparisonRow(v, pa, pb, diff, diff != 0))
    return rows


def occurrence_histogram(group: Sequence[ExecutionTrace], truncate_tail: int = 0) -> list[tuple[str, float]]:
    """Mean occurrences per log of each reached state.

    ``truncate_tail`` drops that many of the least frequent rows.
    """
    if not group:
        raise EmptyGroup("group is empty")
    totals: Counter = Counter()
    for t in group:
        totals.update(t.states)
    rows = sorted(((sid, n / len(group)) for sid, n in totals.items()), key=lambda r: (-r[1], r[0]))
    if truncate_tail > 0:
        rows = rows[:max(0, len(rows) - truncate_tail)]
    return rows


def occurrence_table(partition: CorpusPartition[ExecutionTrace]) -> list[tuple[str, float, float]]:
    """(state_id, mean_baseline, mean_esd) over the union of reached states."""
    _require(partition, Condition.BASELINE, Condition.ESD)
    base = dict(occurrence_histogram(partition.baseline))
    esd = dict(occurrence_histogram(partition.esd))
    rows = [(sid, base.get(sid, 0.0), esd.get(sid, 0.0)) for sid in set(base) | set(esd)]
    rows.sort(key=lambda r: (-r[1], -r[2], r[0]))
    return rows


def nonbaseline_transition_fraction(trace: ExecutionTrace | Sequence[str], baseline_states) -> float:
    """Percentage of transitions with at least one endpoint outside the baseline."""
    states = trace.states if isinstance(trace, ExecutionTrace) else tuple(trace)
    if len(states) < 2:
        raise NoTransitions("trace has fewer than two states")
    pairs = list(zip(states, states[1:]))
    odd = sum(1 for s, t in pairs if s not in baseline_states or t not in baseline_states)
    return 100.0 * odd / len(pairs)


METADATA_FIELDS = tuple(f.name for f in fields(RunMetadata) if f.name not in ("run_id", "condition"))


def correlate_metadata(
    partition: CorpusPartition[ExecutionTrace],
    metadata_field: str = "voltage",
    baseline_states=None,
) -> list[tuple[object, str, float]]:
    """(field value, run_id, percentage) for each ESD run.

    Runs lacking the field or with fewer than two snapshots are skipped with
    a logged warning.  ``baseline_states`` defaults to every state reached by
    the baseline group.
    """
    if metadata_field not in METADATA_FIELDS:
        raise MissingField(f"unknown metadata field {metadata_field!r}")
    if baseline_states is None:
        baseline_states, _ = _reached(partition.baseline)
    rows = []
    for t in partition.esd:
        value = getattr(t.metadata, metadata_field, None) if t.metadata else None
        if value is None:
            log.warning("run %s has no %s; excluded", t.run_id, metadata_field)
            continue
        if isinstance(value, enum.Enum):
            value = value.value
        try:
            pct = nonbaseline_transition_fraction(t, baseline_states)
        except NoTransitions:
            log.warning("run %s has fewer than two snapshots; excluded", t.run_id)
            continue
        rows.append((value, t.run_id, pct))
    rows.sort(key=lambda r: (r[0], r[1]))
    return rows
