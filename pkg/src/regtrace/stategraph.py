"""State abstraction, interning and execution graphs.

A state key is a tuple with one entry per schema register (in schema order).
Plain registers contribute their raw 32-bit value.  Address registers are
replaced by a token according to the abstraction mode:

``ignore``
    dropped from the key.
``delta``
    ``"same"`` or ``"changed"`` relative to the previous snapshot.
``counter``
    ``"#<n>"``, the number of changes of that register so far in the trace.
``unique``
    ``"#0"`` before the first change, then ``"<run_id>/<register>#<n>"``.

With ``include_function`` the key is prefixed by ``"fn:<function name>"``.

State ids are content hashes of the key's canonical JSON form, so interning
does not depend on the order traces are seen in.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import DuplicateRunId, EdgeNotInGraph, ModeMismatch
from .logmodel import Condition, RawLog, RegisterSchema, RunMetadata

ADDRESS_MODES = ("ignore", "delta", "counter", "unique")
DEFAULT_ADDRESS_MODE = "delta"

SAME = "same"
CHANGED = "changed"

StateKey = tuple  # of int | str


def counter_token(index: int) -> str:
    return f"#{index}"


def unique_token(run_id: str, register: str, index: int) -> str:
    return counter_token(0) if index == 0 else f"{run_id}/{register}#{index}"


def canonical(key: StateKey) -> str:
    return json.dumps(list(key), separators=(",", ":"))


def state_id(key: StateKey) -> str:
    return hashlib.sha256(canonical(key).encode()).hexdigest()[:16]


def abstract_trace(
    log: RawLog,
    schema: RegisterSchema | None = None,
    address_mode: str = DEFAULT_ADDRESS_MODE,
    include_function: bool = False,
) -> list[StateKey]:
    if address_mode not in ADDRESS_MODES:
        raise ValueError(f"unknown address mode {address_mode!r}")
    schema = schema or log.schema
    run_id = log.run_id or ""
    changes = dict.fromkeys(schema.address_set, 0)
    keys = []
    prev = None
    for snap in log.snapshots:
        entries: list = ["fn:" + snap.function_name] if include_function else []
        for name in schema.names:
            value = snap.values[name]
            if name not in schema.address_set:
                entries.append(value)
                continue
            if address_mode == "ignore":
                continue
            changed = prev is not None and prev[name] != value
            if changed:
                changes[name] += 1
            if address_mode == "delta":
                entries.append(CHANGED if changed else SAME)
            elif address_mode == "counter":
                entries.append(counter_token(changes[name]))
            else:
                entries.append(unique_token(run_id, name, changes[name]))
        keys.append(tuple(entries))
        prev = snap.values
    return keys


class StateTable:
    """Bijection between state ids and state keys."""

    def __init__(self, entries: Mapping[str, StateKey] | None = None):
        self._keys: dict[str, StateKey] = {}
        for sid, key in (entries or {}).items():
            self._add(sid, tuple(key))

    def _add(self, sid: str, key: StateKey) -> None:
        known = self._keys.get(sid)
        if known is not None and known != key:
            raise ValueError(f"state id collision on {sid}")
        self._keys[sid] = key

    def intern(self, key: StateKey) -> str:
        key = tuple(key)
        sid = state_id(key)
        self._add(sid, key)
        return sid

    def update(self, other: "StateTable | Mapping[str, StateKey]") -> None:
        items = other.items() if isinstance(other, (StateTable, Mapping)) else other
        for sid, key in items:
            self._add(sid, tuple(key))

    def key(self, sid: str) -> StateKey:
        return self._keys[sid]

    def items(self):
        return sorted(self._keys.items())

    def ids(self) -> list[str]:
        return sorted(self._keys)

    def as_dict(self) -> dict[str, StateKey]:
        return dict(self.items())

    def dense_labels(self) -> dict[str, str]:
        """``s0``, ``s1``, ... numbered by sorted canonical key form."""
        order = sorted(self._keys, key=lambda sid: canonical(self._keys[sid]))
        return {sid: f"s{i}" for i, sid in enumerate(order)}

    def __contains__(self, sid: object) -> bool:
        return sid in self._keys

    def __len__(self) -> int:
        return len(self._keys)

    def __eq__(self, other: object) -> bool:
        return isinstance(other, StateTable) and self._keys == other._keys

    def __repr__(self) -> str:
        return f"StateTable({len(self)} states)"


@dataclass(frozen=True)
class ExecutionTrace:
    run_id: str
    condition: Condition
    states: tuple[str, ...]
    functions: tuple[str, ...] = ()
    table: Mapping[str, StateKey] = field(default_factory=dict, compare=False)
    mode: str = DEFAULT_ADDRESS_MODE
    include_function: bool = False
    metadata: RunMetadata | None = field(default=None, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "condition", Condition(self.condition))
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "functions", tuple(self.functions))

    def __len__(self) -> int:
        return len(self.states)

    def keys(self) -> list[StateKey]:
        return [self.table[s] for s in self.states]

    def to_dict(self) -> dict:
        used = sorted(set(self.states))
        return {
            "run_id": self.run_id,
            "condition": self.condition.value,
            "mode": self.mode,
            "include_function": self.include_function,
            "metadata": self.metadata.to_dict() if self.metadata else None,
            "states": {sid: list(self.table[sid]) for sid in used},
            "sequence": list(self.states),
            "functions": list(self.functions),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "ExecutionTrace":
        meta = data.get("metadata")
        return cls(
            run_id=data["run_id"],
            condition=data["condition"],
            states=tuple(data["sequence"]),
            functions=tuple(data.get("functions", ())),
            table={sid: tuple(key) for sid, key in data["states"].items()},
            mode=data["mode"],
            include_function=bool(data.get("include_function", False)),
            metadata=RunMetadata.from_dict(meta) if meta else None,
        )


def make_trace(
    log: RawLog,
    schema: RegisterSchema | None = None,
    address_mode: str = DEFAULT_ADDRESS_MODE,
    include_function: bool = False,
) -> ExecutionTrace:
    if log.metadata is None:
        raise ValueError("log has no run metadata")
    keys = abstract_trace(log, schema, address_mode, include_function)
    table = StateTable()
    states = tuple(table.intern(k) for k in keys)
    return ExecutionTrace(
        run_id=log.metadata.run_id,
        condition=log.metadata.condition,
        states=states,
        functions=tuple(s.function_name for s in log.snapshots),
        table=table.as_dict(),
        mode=address_mode,
        include_function=include_function,
        metadata=log.metadata,
    )


@dataclass(frozen=True)
class ExecutionGraph:
    nodes: frozenset[str] = frozenset()
    edges: Mapping[tuple[str, str], int] = field(default_factory=dict)
    provenance: frozenset[str] = frozenset()

    def edge_total(self) -> int:
        return sum(self.edges.values())

    def to_dict(self) -> dict:
        return {
            "nodes": sorted(self.nodes),
            "edges": [{"src": s, "dst": t, "count": c} for (s, t), c in sorted(self.edges.items())],
            "provenance": sorted(self.provenance),
        }


def build_graph(trace: ExecutionTrace | Sequence[str], run_id: str | None = None) -> ExecutionGraph:
    """Per-run graph; accepts a trace or a bare sequence of state ids."""
    if isinstance(trace, ExecutionTrace):
        states, run_id = trace.states, trace.run_id
    else:
        states = tuple(trace)
    edges = Counter(zip(states, states[1:]))
    prov = frozenset() if run_id is None else frozenset({run_id})
    return ExecutionGraph(frozenset(states), dict(edges), prov)


def unify(traces: Iterable[ExecutionTrace]) -> tuple[StateTable, ExecutionGraph, dict[str, tuple[str, ...]]]:
    """Merge traces into one table and graph.  Paths are keyed by run id."""
    traces = sorted(traces, key=lambda t: t.run_id)
    table = StateTable()
    edges: Counter = Counter()
    nodes: set[str] = set()
    paths: dict[str, tuple[str, ...]] = {}
    modes = {(t.mode, t.include_function) for t in traces}
    if len(modes) > 1:
        raise ModeMismatch(f"traces abstracted under different modes: {sorted(modes)}")
    for t in traces:
        if t.run_id in paths:
            raise DuplicateRunId(f"run_id {t.run_id!r} appears twice")
        table.update(t.table)
        g = build_graph(t)
        nodes |= g.nodes
        edges.update(g.edges)
        paths[t.run_id] = t.states
    graph = ExecutionGraph(frozenset(nodes), dict(edges), frozenset(paths))
    return table, graph, paths


def reconstruct(graph: ExecutionGraph, path: Sequence[str], table: StateTable | Mapping[str, StateKey]) -> list[StateKey]:
    """De-intern a path, checking that it is walkable in ``graph``."""
    lookup = table.key if isinstance(table, StateTable) else table.__getitem__
    for sid in path:
        if sid not in graph.nodes:
            raise EdgeNotInGraph(f"state {sid} is not a node of the graph")
    for s, t in zip(path, path[1:]):
        if (s, t) not in graph.edges:
            raise EdgeNotInGraph(f"edge {s} -> {t} is not in the graph")
    return [lookup(sid) for sid in path]


def _dot_quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_dot(
    graph: ExecutionGraph,
    highlight_states: Iterable[str] = (),
    highlight_edges: Iterable[tuple[str, str]] = (),
    labels: Mapping[str, str] | None = None,
    name: str = "execution_graph",
) -> str:
    hs, he = set(highlight_states), set(highlight_edges)
    out = [f"digraph {name} {{\n"]
    for sid in sorted(graph.nodes):
        attrs = []
        if labels and sid in labels:
            attrs.append(f"label={_dot_quote(labels[sid])}")
        if sid in hs:
            attrs.append('color="red"')
            attrs.append('style="dashed"')
        suffix = f" [{', '.join(attrs)}]" if attrs else ""
        out.append(f"  {_dot_quote(sid)}{suffix};\n")
    for (s, t), count in sorted(graph.edges.items()):
        attrs = [f'label="{count}"']
        if (s, t) in he:
            attrs.append('color="red"')
            attrs.append('style="dashed"')
        out.append(f"  {_dot_quote(s)} -> {_dot_quote(t)} [{', '.join(attrs)}];\n")
    out.append("}\n")
    return "".join(out)
