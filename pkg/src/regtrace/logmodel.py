"""Instrumented-driver log format: parsing, serialization and run metadata.

A log is a sequence of snapshot blocks::

    function: ohci_irq
    HcControl: 0x83
    ...
    Done.

Each line may carry a ``[<seconds>]`` timestamp and a ``<N>`` syslog level
prefix; both are discarded.
"""

from __future__ import annotations

import enum
import json
import logging
import re
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

from .errors import (
    DuplicateRunId,
    IncompleteFirstSnapshot,
    IncompleteSnapshot,
    InvalidPulseWidth,
    InvalidVoltage,
    MalformedLine,
    MetadataError,
    MissingCondition,
    SchemaMismatch,
    TruncatedSnapshot,
    ValueOverflow,
)

log = logging.getLogger(__name__)

MAX_VALUE = 0xFFFFFFFF

OHCI_REGISTERS = (
    "HcControl",
    "HcCommandStatus",
    "HcInterruptStatus",
    "HcInterruptEnable",
    "HcInterruptDisable",
    "HcHCCA",
    "HcPeriodCurrentED",
    "HcControlHeadED",
    "HcControlCurrentED",
    "HcBulkHeadED",
    "HcBulkCurrentED",
    "HcDoneHead",
    "HcFmInterval",
    "HcFmRemaining",
    "HcFmNumber",
    "HcPeriodicStart",
    "HcLSThreshold",
    "HcRhDescriptorA",
    "HcRhDescriptorB",
    "HcRhStatus",
    "HcRhPortStatus[0]",
    "HcRhPortStatus[1]",
)

# Registers holding reload-dependent addresses or free-running counters.
OHCI_ADDRESS_REGISTERS = frozenset({
    "HcPeriodCurrentED",
    "HcBulkCurrentED",
    "HcFmRemaining",
    "HcHCCA",
    "HcControlHeadED",
    "HcControlCurrentED",
    "HcBulkHeadED",
    "HcFmNumber",
    "HcDoneHead",
})


@dataclass(frozen=True)
class RegisterSchema:
    names: tuple[str, ...]
    address_set: frozenset[str] = frozenset()

    def __post_init__(self):
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "address_set", frozenset(self.address_set))
        if not self.names:
            raise ValueError("schema must name at least one register")
        if len(set(self.names)) != len(self.names):
            raise ValueError("schema register names must be unique")
        extra = self.address_set - set(self.names)
        if extra:
            raise ValueError(f"address registers not in schema: {sorted(extra)}")

    def __len__(self) -> int:
        return len(self.names)

    def __contains__(self, name: object) -> bool:
        return name in self.names

    def to_dict(self) -> dict:
        return {"names": list(self.names),
                "address": [n for n in self.names if n in self.address_set]}

    @classmethod
    def from_dict(cls, data: Mapping) -> "RegisterSchema":
        return cls(tuple(data["names"]), frozenset(data.get("address", ())))

    @classmethod
    def from_json(cls, text: str) -> "RegisterSchema":
        try:
            return cls.from_dict(json.loads(text))
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise SchemaMismatch(f"invalid schema document: {exc}") from None


DEFAULT_SCHEMA = RegisterSchema(OHCI_REGISTERS, OHCI_ADDRESS_REGISTERS)


class Condition(str, enum.Enum):
    BASELINE = "baseline"
    ESD = "esd"


class FieldType(str, enum.Enum):
    E = "E"
    H = "H"


@dataclass(frozen=True)
class RunMetadata:
    run_id: str
    condition: Condition
    probe: str | None = None
    field_type: FieldType | None = None
    orientation: str | None = None
    voltage: float | None = None
    pulse_width: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "condition", Condition(self.condition))
        if self.field_type is not None:
            object.__setattr__(self, "field_type", FieldType(self.field_type))
        if self.voltage is not None and not self.voltage > 0:
            raise InvalidVoltage(f"voltage must be positive, got {self.voltage}")
        if self.pulse_width is not None and not self.pulse_width > 0:
            raise InvalidPulseWidth(f"pulse width must be positive, got {self.pulse_width}")

    def to_dict(self) -> dict:
        out = {"run_id": self.run_id, "condition": self.condition.value}
        for key in ("probe", "orientation", "voltage", "pulse_width"):
            if getattr(self, key) is not None:
                out[key] = getattr(self, key)
        if self.field_type is not None:
            out["field_type"] = self.field_type.value
        return out

    def to_text(self) -> str:
        """Sidecar document, one ``key: value`` per line in a fixed order."""
        d = self.to_dict()
        return "".join(f"{k}: {_fmt_meta(d[k])}\n" for k in METADATA_KEYS if k in d)

    @classmethod
    def from_dict(cls, data: Mapping) -> "RunMetadata":
        return load_metadata(json.dumps(dict(data)))


METADATA_KEYS = ("run_id", "condition", "probe", "field_type", "orientation",
                 "voltage", "pulse_width")


def _fmt_meta(value) -> str:
    if isinstance(value, float) and value.is_integer():
        return str(int(value))
    return str(value)


def _meta_number(key: str, raw, error: type[MetadataError]) -> float:
    try:
        value = float(str(raw).strip().rstrip("Vs").strip())
    except ValueError:
        raise error(f"{key} is not a number: {raw!r}") from None
    if not value > 0:
        raise error(f"{key} must be positive, got {raw!r}")
    return value


def load_metadata(text: str, default_run_id: str | None = None) -> RunMetadata:
    """Parse a metadata sidecar.

    Accepts either a JSON object or ``key: value`` / ``key = value`` lines
    (``#`` starts a comment).  Unknown keys are logged and ignored.
    """
    stripped = text.strip()
    if stripped.startswith("{"):
        try:
            raw = json.loads(stripped)
        except json.JSONDecodeError as exc:
            raise MetadataError(f"invalid JSON metadata: {exc.msg}", line=exc.lineno) from None
        raw = {str(k): v for k, v in raw.items() if v is not None}
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            m = re.match(r"^([A-Za-z_]+)\s*[:=]\s*(.*?)\s*$", line)
            if not m:
                raise MetadataError(f"malformed metadata line: {line!r}", line=lineno)
            value = m.group(2)
            if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
                value = value[1:-1]
            raw[m.group(1)] = value

    for key in sorted(set(raw) - set(METADATA_KEYS)):
        log.warning("unknown metadata key %r ignored", key)

    if "condition" not in raw or str(raw["condition"]).strip() == "":
        raise MissingCondition("metadata has no condition")
    try:
        condition = Condition(str(raw["condition"]).strip().lower())
    except ValueError:
        raise MetadataError(f"condition must be baseline or esd, got {raw['condition']!r}") from None

    run_id = str(raw.get("run_id", default_run_id or "")).strip()
    if not run_id:
        raise MetadataError("metadata has no run_id")

    field_type = raw.get("field_type")
    if field_type is not None:
        try:
            field_type = FieldType(str(field_type).strip().upper())
        except ValueError:
            raise MetadataError(f"field_type must be E or H, got {field_type!r}") from None

    voltage = raw.get("voltage")
    if voltage is not None:
        voltage = _meta_number("voltage", voltage, InvalidVoltage)
    pulse_width = raw.get("pulse_width")
    if pulse_width is not None:
        pulse_width = _meta_number("pulse_width", pulse_width, InvalidPulseWidth)

    return RunMetadata(
        run_id=run_id,
        condition=condition,
        probe=None if raw.get("probe") is None else str(raw["probe"]),
        field_type=field_type,
        orientation=None if raw.get("orientation") is None else str(raw["orientation"]),
        voltage=voltage,
        pulse_width=pulse_width,
    )


@dataclass(frozen=True)
class ParseWarning:
    line: int
    kind: str
    message: str

    def __str__(self) -> str:
        return f"line {self.line}: {self.kind}: {self.message}"


@dataclass(frozen=True)
class Snapshot:
    function_name: str
    values: Mapping[str, int]
    ordinal: int


@dataclass(frozen=True)
class RawLog:
    snapshots: tuple[Snapshot, ...]
    schema: RegisterSchema = DEFAULT_SCHEMA
    metadata: RunMetadata | None = None
    warnings: tuple[ParseWarning, ...] = ()
    source: str | None = None

    def __len__(self) -> int:
        return len(self.snapshots)

    @property
    def run_id(self) -> str | None:
        return self.metadata.run_id if self.metadata else None

    @property
    def condition(self) -> Condition | None:
        return self.metadata.condition if self.metadata else None


_PREFIX = re.compile(r"^(?:<\d+>)?\s*(?:\[\s*\d+(?:\.\d+)?\]\s*)?")
_FUNCTION = re.compile(r"^function:\s*(\S+)$")
_REGISTER = re.compile(r"^([A-Za-z_][A-Za-z0-9_]*(?:\[\d+\])?):\s*0[xX]([0-9a-fA-F]+)$")
_DONE = "Done."


def _strip(line: str) -> str:
    return _PREFIX.sub("", line.strip(), count=1).strip()


def parse_log(
    text: str,
    schema: RegisterSchema = DEFAULT_SCHEMA,
    mode: str = "strict",
    *,
    metadata: RunMetadata | None = None,
    source: str | None = None,
) -> RawLog:
    """Parse log text into snapshots.

    In ``strict`` mode any irregularity raises.  In ``lenient`` mode
    malformed lines and unterminated blocks are skipped with a warning, and
    registers missing from a block carry forward the previous snapshot's
    value.  Warnings raised inside a block that is later dropped are
    discarded with it.  Register lines repeated within a block keep the last
    value; registers outside the schema are ignored.  Both produce warnings
    in either mode.
    """
    if mode not in ("strict", "lenient"):
        raise ValueError(f"mode must be 'strict' or 'lenient', got {mode!r}")
    strict = mode == "strict"

    snapshots: list[Snapshot] = []
    warnings: list[ParseWarning] = []
    block: dict | None = None  # {"name", "line", "values", "warnings"}

    def problem(exc_type, lineno, kind, message, pending=None):
        if strict:
            raise exc_type(message, source=source, line=lineno)
        (warnings if pending is None else pending).append(ParseWarning(lineno, kind, message))

    def close(lineno: int):
        values = block["values"]
        missing = [n for n in schema.names if n not in values]
        pending = block["warnings"]
        if missing:
            if strict:
                raise IncompleteSnapshot(
                    f"block {block['name']!r} missing registers: {', '.join(missing)}",
                    source=source, line=block["line"])
            if not snapshots:
                raise IncompleteFirstSnapshot(
                    f"first block {block['name']!r} missing registers: {', '.join(missing)}",
                    source=source, line=block["line"])
            prev = snapshots[-1].values
            for n in missing:
                values[n] = prev[n]
            pending.append(ParseWarning(block["line"], "carry-forward",
                                        f"carried forward {', '.join(missing)}"))
        ordered = {n: values[n] for n in schema.names}
        snapshots.append(Snapshot(block["name"], ordered, len(snapshots)))
        warnings.extend(pending)

    for lineno, raw_line in enumerate(text.splitlines(), 1):
        line = _strip(raw_line)
        if not line:
            continue
        m = _FUNCTION.match(line)
        if m:
            if block is not None:
                problem(TruncatedSnapshot, block["line"], "truncated-block",
                        f"block {block['name']!r} has no Done. terminator")
            block = {"name": m.group(1), "line": lineno, "values": {}, "warnings": []}
            continue
        if line == _DONE:
            if block is None:
                problem(MalformedLine, lineno, "stray-line", "Done. outside a block")
            else:
                close(lineno)
                block = None
            continue
        m = _REGISTER.match(line)
        if not m:
            problem(MalformedLine, lineno, "malformed-line", f"unparseable line {line!r}",
                    None if block is None else block["warnings"])
            continue
        name, value = m.group(1), int(m.group(2), 16)
        if value > MAX_VALUE:
            raise ValueOverflow(f"{name} value 0x{m.group(2)} exceeds 32 bits",
                                source=source, line=lineno)
        if block is None:
            problem(MalformedLine, lineno, "stray-line", f"register line outside a block: {line!r}")
            continue
        if name not in schema:
            block["warnings"].append(ParseWarning(lineno, "unknown-register",
                                                  f"{name} not in schema, ignored"))
            continue
        if name in block["values"]:
            block["warnings"].append(ParseWarning(lineno, "duplicate-register",
                                                  f"{name} repeated, keeping last value"))
        block["values"][name] = value

    if block is not None:
        problem(TruncatedSnapshot, block["line"], "truncated-block",
                f"block {block['name']!r} has no Done. terminator (end of input)")

    return RawLog(tuple(snapshots), schema, metadata, tuple(warnings), source)


def serialize_log(log_or_snapshots: RawLog | Iterable[Snapshot],
                  schema: RegisterSchema | None = None) -> str:
    """Canonical log text: schema order, lowercase hex, no timestamps."""
    if isinstance(log_or_snapshots, RawLog):
        schema = schema or log_or_snapshots.schema
        snapshots = log_or_snapshots.snapshots
    else:
        snapshots = log_or_snapshots
    schema = schema or DEFAULT_SCHEMA
    out = []
    for snap in snapshots:
        out.append(f"function: {snap.function_name}\n")
        for name in schema.names:
            out.append(f"{name}: {snap.values[name]:#x}\n")
        out.append("Done.\n")
    return "".join(out)


@dataclass
class ValidationReport:
    warnings: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return bool(self.warnings)


def validate_corpus(logs: Sequence[RawLog]) -> ValidationReport:
    """Cross-log checks.  Duplicate run ids and schema disagreement raise."""
    report = ValidationReport()
    seen: dict[str, str | None] = {}
    schema = None
    for i, raw in enumerate(logs):
        label = raw.source or (raw.run_id or f"log #{i}")
        if schema is None:
            schema = raw.schema
        elif raw.schema != schema:
            raise SchemaMismatch(f"{label} uses a different register schema", source=raw.source)
        if raw.metadata is None:
            report.warnings.append(f"{label}: no metadata")
        else:
            if raw.run_id in seen:
                raise DuplicateRunId(
                    f"run_id {raw.run_id!r} used by {seen[raw.run_id] or 'an earlier log'} and {label}",
                    source=raw.source)
            seen[raw.run_id] = raw.source
        if not raw.snapshots:
            report.warnings.append(f"{label}: empty log")
        for w in raw.warnings:
            report.warnings.append(f"{label}: {w}")
    return report
