"""Seeded synthetic corpora: a Markov register machine plus bit-flip faults.

Baseline logs are walks of the machine.  ESD logs are walks of the same
machine whose emitted snapshots are corrupted by bit flips; the chain itself
is never disturbed (transient mode), or the flipped bits stay latched until
the chain next changes that register (sticky mode).

Random draws come from :class:`regtrace.rng.SplitMix64`.  For a log seed
``s`` the chain uses the stream seeded with ``s`` and faults use the stream
seeded with ``s ^ FAULT_STREAM``, so a log generated with ``p = 0`` follows
the same path as one with ``p > 0``.  Per step the fault stream draws one
``random()`` for the event test and, on an event, ``below(len(positions))``
until ``k`` distinct (register, bit) positions are chosen.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

from .logmodel import (
    DEFAULT_SCHEMA,
    Condition,
    FieldType,
    RawLog,
    RegisterSchema,
    RunMetadata,
    Snapshot,
    serialize_log,
)
from .rng import SplitMix64
from .stategraph import abstract_trace

FAULT_STREAM = 0xD1B54A32D192ED03
META_STREAM = 0x8BB84B93962EACC9

# Register values from a real ohci_irq dump; used as the machine's base state.
OHCI_EXAMPLE_VALUES = {
    "HcControl": 0x83,
    "HcCommandStatus": 0x4,
    "HcInterruptStatus": 0x24,
    "HcInterruptEnable": 0x8000005E,
    "HcInterruptDisable": 0x8000005E,
    "HcHCCA": 0x338B1000,
    "HcPeriodCurrentED": 0x0,
    "HcControlHeadED": 0x339B2000,
    "HcControlCurrentED": 0x0,
    "HcBulkHeadED": 0x339B2080,
    "HcBulkCurrentED": 0x0,
    "HcDoneHead": 0x0,
    "HcFmInterval": 0xA7782EDF,
    "HcFmRemaining": 0x80002760,
    "HcFmNumber": 0x921D,
    "HcPeriodicStart": 0x2A2F,
    "HcLSThreshold": 0x628,
    "HcRhDescriptorA": 0x2001202,
    "HcRhDescriptorB": 0x0,
    "HcRhStatus": 0x8000,
    "HcRhPortStatus[0]": 0x103,
    "HcRhPortStatus[1]": 0x100,
}

# Control/status bits an ESD event plausibly toggles: HcControl CLE/BLE,
# HcInterruptStatus FNO/RHSC, HcRhPortStatus[0] PES/PRS.
SUSCEPTIBLE_BITS = {
    "HcControl": (4, 5),
    "HcInterruptStatus": (5, 6),
    "HcRhPortStatus[0]": (1, 4),
}

# Both read back the same interrupt mask.
MIRRORED = ("HcInterruptEnable", "HcInterruptDisable")

DRIVER_FUNCTIONS = (
    "ohci_irq",
    "ohci_urb_enqueue",
    "ohci_urb_dequeue",
    "ohci_hub_status_data",
    "ohci_hub_control",
    "ohci_endpoint_disable",
    "ohci_get_frame",
    "ohci_rh_resume",
)


@dataclass(frozen=True)
class BaselineMachine:
    schema: RegisterSchema
    states: tuple[tuple[int, ...], ...]
    transitions: tuple[tuple[float, ...], ...]
    labels: Mapping[tuple[int, int], str]
    initial: int = 0
    initial_function: str = "ohci_start"

    def values(self, index: int) -> dict[str, int]:
        return dict(zip(self.schema.names, self.states[index]))

    def to_dict(self) -> dict:
        return {
            "schema": self.schema.to_dict(),
            "states": [[f"{v:#x}" for v in s] for s in self.states],
            "transitions": [list(row) for row in self.transitions],
            "labels": [[i, j, fn] for (i, j), fn in sorted(self.labels.items())],
            "initial": self.initial,
            "initial_function": self.initial_function,
        }


def make_machine(seed: int, n_states: int, schema: RegisterSchema = DEFAULT_SCHEMA,
                 address_variation: float = 0.0) -> BaselineMachine:
    """Random strongly connected machine with ``n_states`` distinct register tuples.

    State 0 is the base tuple.  Every other state XORs a random low-byte mask
    into one to three plain registers and re-draws each address register with
    probability ``address_variation``.  Address registers that differ between
    states multiply the number of delta-abstracted keys, one per distinct
    change pattern along incoming edges.  Each row always has an edge to the
    next state (mod n) plus random extra edges, with unnormalized weights in
    [1, 4).
    """
    if n_states < 1:
        raise ValueError("n_states must be >= 1")
    if not 0.0 <= address_variation <= 1.0:
        raise ValueError("address_variation must be in [0, 1]")
    rng = SplitMix64(seed)
    names = schema.names
    base = {n: OHCI_EXAMPLE_VALUES[n] if n in OHCI_EXAMPLE_VALUES else rng.next_u32() for n in names}
    plain = [n for n in names if n not in schema.address_set]
    address = [n for n in names if n in schema.address_set]

    states = [tuple(base[n] for n in names)]
    seen = set(states)
    while len(states) < n_states:
        values = dict(base)
        if plain:
            for _ in range(1 + rng.below(3)):
                reg = rng.choice(plain)
                values[reg] ^= 1 + rng.below(255)
        for reg in address:
            if address_variation and rng.random() < address_variation:
                values[reg] = rng.next_u32() & ~0xF
        if MIRRORED[0] in values and MIRRORED[1] in values:
            values[MIRRORED[1]] = values[MIRRORED[0]]
        candidate = tuple(values[n] for n in names)
        if candidate not in seen:
            seen.add(candidate)
            states.append(candidate)

    transitions = []
    for i in range(n_states):
        w = [0.0] * n_states
        w[(i + 1) % n_states] = 1 + 3 * rng.random()
        for j in range(n_states):
            if j != (i + 1) % n_states and rng.random() < 0.3:
                w[j] = 1 + 3 * rng.random()
        total = sum(w)
        transitions.append(tuple(x / total for x in w))

    labels = {}
    for i in range(n_states):
        for j in range(n_states):
            if transitions[i][j] > 0:
                labels[(i, j)] = rng.choice(DRIVER_FUNCTIONS)
    return BaselineMachine(schema, tuple(states), tuple(transitions), labels)


@dataclass(frozen=True)
class PerturbationModel:
    """Per-step fault probability ``p`` flipping ``k`` distinct bits.

    ``eligible`` maps register name to the bit positions that may flip; None
    means every schema register, all 32 bits.
    """
    p: float = 0.0
    k: int = 1
    eligible: Mapping[str, tuple[int, ...]] | None = None
    sticky: bool = False

    def __post_init__(self):
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")

    def positions(self, schema: RegisterSchema) -> list[tuple[str, int]]:
        if self.eligible is None:
            return [(n, b) for n in schema.names for b in range(32)]
        unknown = set(self.eligible) - set(schema.names)
        if unknown:
            raise ValueError(f"eligible registers not in schema: {sorted(unknown)}")
        return [(n, b) for n in schema.names if n in self.eligible for b in sorted(set(self.eligible[n]))]

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "k": self.k,
            "eligible": None if self.eligible is None else {n: list(b) for n, b in sorted(self.eligible.items())},
            "sticky": self.sticky,
        }


def default_model(p: float = 0.05, k: int = 2, schema: RegisterSchema = DEFAULT_SCHEMA,
                  sticky: bool = False) -> PerturbationModel:
    """Susceptible-bit model when the schema has the OHCI registers, else all bits."""
    if all(n in schema for n in SUSCEPTIBLE_BITS):
        return PerturbationModel(p, k, dict(SUSCEPTIBLE_BITS), sticky)
    return PerturbationModel(p, k, None, sticky)


def _snapshots(machine: BaselineMachine, length: int, model: PerturbationModel, seed: int):
    chain = SplitMix64(seed)
    faults = SplitMix64(seed ^ FAULT_STREAM)
    positions = model.positions(machine.schema)
    if model.k > len(positions):
        raise ValueError(f"k={model.k} exceeds the {len(positions)} eligible bit positions")
    names = machine.schema.names
    cur, fn = machine.initial, machine.initial_function
    latched: dict[str, int] = {}
    snaps, flags = [], []
    for t in range(length):
        if t > 0:
            nxt = chain.weighted_index(machine.transitions[cur])
            fn = machine.labels[(cur, nxt)]
            if latched:
                for i, name in enumerate(names):
                    if name in latched and machine.states[cur][i] != machine.states[nxt][i]:
                        del latched[name]
            cur = nxt
        values = machine.values(cur)
        hit = faults.random() < model.p
        masks: dict[str, int] = {}
        if hit:
            chosen: list[tuple[str, int]] = []
            while len(chosen) < model.k:
                pos = positions[faults.below(len(positions))]
                if pos not in chosen:
                    chosen.append(pos)
            for reg, bit in chosen:
                masks[reg] = masks.get(reg, 0) ^ (1 << bit)
        if model.sticky:
            for reg, m in masks.items():
                latched[reg] = latched.get(reg, 0) ^ m
            latched = {r: m for r, m in latched.items() if m}
            masks = latched
        for reg, m in masks.items():
            values[reg] ^= m
        snaps.append(Snapshot(fn, values, t))
        flags.append(any(masks.values()))
    return snaps, flags


def generate_log(machine: BaselineMachine, length: int, model: PerturbationModel, seed: int,
                 metadata: RunMetadata | None = None) -> tuple[str, list[bool]]:
    """Return (log text, per-snapshot perturbed flags).

    ``metadata`` is not embedded in the text; it is accepted so callers can
    pass a run description through unchanged.
    """
    if length < 0:
        raise ValueError("length must be >= 0")
    snaps, flags = _snapshots(machine, length, model, seed)
    return serialize_log(snaps, machine.schema), flags


_PROBES = (
    # probe, field type, orientations, max volts, pulse widths
    ("EZ-3", FieldType.E, ("usb-port", "controller-ic"), 5500, (0.1, 0.15, 0.2, 0.25)),
    ("HX-5", FieldType.H, ("parallel", "perpendicular"), 8000, (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)),
    ("HX-1T2", FieldType.H, ("parallel", "perpendicular"), 8000, (0.1, 0.2, 0.3, 0.4, 0.5, 0.6)),
)


def _esd_metadata(run_id: str, rng: SplitMix64) -> RunMetadata:
    probe, ftype, orientations, vmax, widths = rng.choice(_PROBES)
    voltage = 500 * (1 + rng.below(vmax // 500))
    return RunMetadata(run_id, Condition.ESD, probe, ftype, rng.choice(orientations),
                       float(voltage), rng.choice(widths))


def _write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)


def generate_corpus(machine: BaselineMachine, n_baseline: int, n_esd: int, length: int,
                    model: PerturbationModel, seed: int, out_dir: str | os.PathLike) -> dict:
    """Write ``<run_id>.log`` + ``<run_id>.meta`` per run and ``manifest.json``.

    Log seeds are successive ``next_u64()`` draws of a stream seeded with
    ``seed``, baseline runs first.  Baseline runs use ``p = 0``.
    """
    if n_baseline < 1 or n_esd < 1:
        raise ValueError("need at least one baseline and one esd run")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seeds = SplitMix64(seed)
    meta_rng = SplitMix64(seed ^ META_STREAM)
    quiet = PerturbationModel(0.0, model.k, model.eligible, model.sticky)
    runs = []
    plan = [(f"baseline_{i:03d}", Condition.BASELINE) for i in range(n_baseline)]
    plan += [(f"esd_{i:03d}", Condition.ESD) for i in range(n_esd)]
    for run_id, cond in plan:
        log_seed = seeds.next_u64()
        if cond is Condition.BASELINE:
            meta, m = RunMetadata(run_id, cond), quiet
        else:
            meta, m = _esd_metadata(run_id, meta_rng), model
        text, flags = generate_log(machine, length, m, log_seed, meta)
        _write(out / f"{run_id}.log", text)
        _write(out / f"{run_id}.meta", meta.to_text())
        runs.append({"run_id": run_id, "condition": cond.value, "seed": log_seed,
                     "perturbed": [i for i, f in enumerate(flags) if f]})
    manifest = {
        "generator": "regtrace.synthcorpus",
        "seed": seed,
        "length": length,
        "model": model.to_dict(),
        "machine": machine.to_dict(),
        "runs": runs,
    }
    _write(out / "manifest.json", json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    return manifest


def machine_state_keys(machine: BaselineMachine, address_mode: str = "delta") -> set[tuple]:
    """Every abstract key an unperturbed walk can produce (ignore/delta only)."""
    if address_mode not in ("ignore", "delta"):
        raise ValueError("only ignore and delta keys are finite")

    def keys_of(indices: Sequence[int]) -> list[tuple]:
        snaps = tuple(Snapshot("", machine.values(i), n) for n, i in enumerate(indices))
        return abstract_trace(RawLog(snaps, machine.schema), machine.schema, address_mode)

    out = {keys_of([machine.initial])[0]}
    for i, row in enumerate(machine.transitions):
        for j, p in enumerate(row):
            if p > 0:
                out.add(keys_of([i, j])[1])
    return out
