"""``regtrace`` command line.

Exit status: 0 on success, 1 on usage errors, 2 on data errors.  Every
subcommand computes all of its outputs before writing any of them, and each
file is written to a temporary name and renamed into place.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import shutil
import sys
from pathlib import Path

from . import __version__
from .diffstats import (
    CorpusPartition,
    compare_distributions,
    correlate_metadata,
    diff_states,
    METADATA_FIELDS,
    occurrence_table,
    value_distribution,
)
from .errors import DataError, InvalidDelta, RegtraceError, UsageError
from .logmodel import DEFAULT_SCHEMA, Condition, RegisterSchema, load_metadata, parse_log, validate_corpus
from .stategraph import ADDRESS_MODES, ExecutionTrace, build_graph, export_dot, make_trace, unify
from .synthcorpus import PerturbationModel, default_model, generate_corpus, make_machine
from .weights import (
    Variant,
    WeightTable,
    as_fraction,
    build_counts,
    build_weights,
    check_delta,
    classify,
    parse_protocol,
    sweep_delta,
)

log = logging.getLogger("regtrace")

REGISTERS_OF_INTEREST = (
    "HcInterruptEnable",
    "HcInterruptDisable",
    "HcInterruptStatus",
    "HcControl",
    "HcRhPortStatus[0]",
)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# -- output helpers ------------------------------------------------------------

def _num(x) -> str:
    return repr(float(x))


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _json(obj) -> str:
    return json.dumps(obj, indent=1, sort_keys=True) + "\n"


def _write_outputs(out_dir: Path, files: dict[str, str]) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    for name, text in files.items():
        path = out_dir / name
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(f".{path.name}.tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)


# -- input helpers -------------------------------------------------------------

def _log_files(inputs: list[str]) -> list[Path]:
    files: list[Path] = []
    for item in inputs:
        p = Path(item)
        if p.is_dir():
            files.extend(sorted(p.glob("*.log")))
        elif p.is_file():
            files.append(p)
        else:
            raise DataError("no such file or directory", source=item)
    if not files:
        raise DataError("no .log files found", source=", ".join(inputs))
    return files


def _load_schema(path: str | None) -> RegisterSchema:
    if path is None:
        return DEFAULT_SCHEMA
    try:
        return RegisterSchema.from_json(Path(path).read_text(encoding="utf-8"))
    except ValueError as exc:
        raise DataError(str(exc), source=path) from None


def _read_logs(inputs: list[str], schema: RegisterSchema, strict: bool):
    logs = []
    for path in _log_files(inputs):
        meta_path = path.with_suffix(".meta")
        if not meta_path.exists():
            raise DataError("missing metadata sidecar", source=str(meta_path))
        try:
            meta = load_metadata(meta_path.read_text(encoding="utf-8"), default_run_id=path.stem)
        except DataError as exc:
            exc.source = str(meta_path)
            raise
        raw = parse_log(path.read_text(encoding="utf-8"), schema, "strict" if strict else "lenient",
                        metadata=meta, source=str(path))
        logs.append(raw)
    report = validate_corpus(logs)
    for w in report.warnings:
        log.warning("%s", w)
    return logs


def _load_artifact(art: str) -> tuple[dict, list[ExecutionTrace]]:
    root = Path(art)
    manifest_path = root / "manifest.json"
    if not manifest_path.exists():
        raise DataError("not an ingest artifact directory (no manifest.json)", source=art)
    manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    traces = []
    for run in manifest["runs"]:
        path = root / "traces" / f"{run['run_id']}.json"
        try:
            traces.append(ExecutionTrace.from_dict(json.loads(path.read_text(encoding="utf-8"))))
        except (OSError, KeyError, json.JSONDecodeError) as exc:
            raise DataError(f"unreadable trace file: {exc}", source=str(path)) from None
    return manifest, traces


def _partition(traces) -> CorpusPartition:
    return CorpusPartition.of(traces)


def _delta_list(text: str) -> list[str]:
    items = [t.strip() for t in text.split(",") if t.strip()]
    if not items:
        raise UsageError("--delta needs at least one value")
    for t in items:
        try:
            as_fraction(t)
        except InvalidDelta:
            raise UsageError(f"--delta: not a number: {t!r}") from None
    return items


def _variant(text: str) -> Variant:
    try:
        return Variant.parse(text)
    except InvalidDelta as exc:
        raise UsageError(f"--variant: {exc}") from None


def _check_deltas(variant: Variant, deltas: list[str]) -> None:
    for d in deltas:
        try:
            check_delta(variant, d)
        except InvalidDelta as exc:
            raise UsageError(f"--delta: {exc}") from None


# -- subcommands ---------------------------------------------------------------

def cmd_gen(args) -> dict[str, str] | None:
    if args.baseline < 1 or args.esd < 1:
        raise UsageError("--baseline and --esd must be >= 1")
    if args.length < 0:
        raise UsageError("--length must be >= 0")
    if args.states < 1:
        raise UsageError("--states must be >= 1")
    if not 0 <= args.p <= 1:
        raise UsageError("--p must be in [0, 1]")
    if args.k < 1:
        raise UsageError("--k must be >= 1")
    if not 0 <= args.address_variation <= 1:
        raise UsageError("--address-variation must be in [0, 1]")
    schema = _load_schema(args.schema)
    if args.eligible == "all":
        model = PerturbationModel(args.p, args.k, None, args.sticky)
    else:
        model = default_model(args.p, args.k, schema, args.sticky)
    if args.k > len(model.positions(schema)):
        raise UsageError(f"--k {args.k} exceeds the number of eligible bits")
    machine = make_machine(args.seed, args.states, schema, args.address_variation)
    generate_corpus(machine, args.baseline, args.esd, args.length, model, args.seed, args.out)
    return None


def cmd_ingest(args):
    schema = _load_schema(args.schema)
    logs = _read_logs(args.inputs, schema, args.strict)
    traces = [make_trace(raw, schema, args.address_mode, args.include_function) for raw in logs]
    runs = []
    files = {}
    for raw, t in sorted(zip(logs, traces), key=lambda p: p[1].run_id):
        runs.append({"run_id": t.run_id, "condition": t.condition.value,
                     "source": Path(raw.source).name, "snapshots": len(raw),
                     "warnings": len(raw.warnings)})
        files[f"{t.run_id}.json"] = _json(t.to_dict())
    manifest = {
        "tool": "regtrace",
        "version": __version__,
        "schema": schema.to_dict(),
        "address_mode": args.address_mode,
        "include_function": args.include_function,
        "runs": runs,
    }
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    staging = out / ".traces.tmp"
    shutil.rmtree(staging, ignore_errors=True)
    _write_outputs(staging, files)
    shutil.rmtree(out / "traces", ignore_errors=True)
    os.replace(staging, out / "traces")
    _write_outputs(out, {"manifest.json": _json(manifest)})
    return None


def _labels(traces):
    table, _, _ = unify(traces)
    return table.dense_labels()


def cmd_graph(args):
    _, traces = _load_artifact(args.artifact)
    labels = _labels(traces)
    files = {}
    for t in traces:
        g = build_graph(t)
        files[f"{t.run_id}.dot"] = export_dot(g, labels=labels)
        files[f"{t.run_id}.json"] = _json(g.to_dict())
    return files


def cmd_unify(args):
    _, traces = _load_artifact(args.artifact)
    table, graph, paths = unify(traces)
    doc = graph.to_dict()
    doc["states"] = {sid: list(key) for sid, key in table.items()}
    doc["labels"] = table.dense_labels()
    doc["paths"] = {rid: list(p) for rid, p in sorted(paths.items())}
    return {"unified.dot": export_dot(graph, labels=table.dense_labels()), "unified.json": _json(doc)}


def cmd_diff(args):
    _, traces = _load_artifact(args.artifact)
    report = diff_states(_partition(traces))
    table, graph, _ = unify(traces)
    dot = export_dot(graph, report.esd_only_states, report.esd_only_edges, table.dense_labels(), "diff")
    return {"diff.csv": _csv(("kind", "state_id", "src", "dst", "category"), report.rows()),
            "diff.dot": dot}


def cmd_stats(args):
    if args.stats_command == "dist":
        schema = _load_schema(args.schema)
        logs = _read_logs(args.inputs, schema, args.strict)
        part = CorpusPartition.of(logs)
        rows = []
        for reg in args.register or [r for r in REGISTERS_OF_INTEREST if r in schema]:
            dist = value_distribution(part, reg)
            rows.extend((reg, f"{r.value:#x}", _num(r.p_baseline), _num(r.p_esd), _num(r.difference))
                        for r in dist.rows)
        return {"distributions.csv": _csv(("register", "value_hex", "p_baseline", "p_esd", "difference"), rows)}
    if args.stats_command == "compare":
        schema = _load_schema(args.schema)
        logs = _read_logs(args.inputs, schema, args.strict)
        part = CorpusPartition.of(logs)
        a = value_distribution(part, args.a).column(args.group)
        b = value_distribution(part, args.b).column(args.group)
        rows = [(f"{r.value:#x}", _num(r.a), _num(r.b), _num(r.difference), int(r.flagged))
                for r in compare_distributions(a, b)]
        return {"comparison.csv": _csv(("value_hex", f"p_{args.a}", f"p_{args.b}", "difference", "flagged"), rows)}
    _, traces = _load_artifact(args.artifact)
    part = _partition(traces)
    if args.stats_command == "occurrences":
        rows = [(sid, _num(mb), _num(me)) for sid, mb, me in occurrence_table(part)]
        return {"occurrences.csv": _csv(("state_id", "mean_baseline", "mean_esd"), rows)}
    # transitions
    if args.field not in METADATA_FIELDS:
        raise UsageError(f"--field must be one of {', '.join(METADATA_FIELDS)}")
    rows = [(v if isinstance(v, str) else _num(v), rid, _num(pct))
            for v, rid, pct in correlate_metadata(part, args.field)]
    return {"transitions.csv": _csv((args.field, "run_id", "pct_nonbaseline"), rows)}


def cmd_train(args):
    variant = _variant(args.variant)
    deltas = _delta_list(args.delta)
    if len(deltas) != 1:
        raise UsageError("train takes a single --delta")
    _check_deltas(variant, deltas)
    _, traces = _load_artifact(args.artifact)
    table = build_weights(build_counts(_partition(traces)), variant, deltas[0])
    return {"weights.json": _json(table.to_dict())}


def cmd_classify(args):
    try:
        table = WeightTable.from_dict(json.loads(Path(args.weights).read_text(encoding="utf-8")))
    except (OSError, KeyError, ValueError) as exc:
        raise DataError(f"unreadable weight table: {exc}", source=args.weights) from None
    _, traces = _load_artifact(args.artifact)
    rows = []
    for t in traces:
        r = classify(table, t)
        rows.append((t.run_id, t.condition.value, _num(r.score), r.label.value, _num(r.unseen_state_mass)))
    return {"classification.csv": _csv(("run_id", "condition", "score", "label", "unseen_state_mass"), rows)}


def cmd_sweep(args):
    variant = _variant(args.variant)
    deltas = _delta_list(args.delta)
    _check_deltas(variant, deltas)
    try:
        protocol = parse_protocol(args.protocol)
    except ValueError as exc:
        raise UsageError(f"--protocol: {exc}") from None
    _, traces = _load_artifact(args.artifact)
    rows = [(_num(r.delta), _num(r.accuracy), _num(r.straightline_deviation), _num(r.middle_weight_abs))
            for r in sweep_delta(_partition(traces), variant, deltas, protocol)]
    return {"sweep.csv": _csv(("delta", "accuracy", "straightline_deviation", "middle_weight_abs"), rows)}


# -- argument parsing ----------------------------------------------------------

def _add_log_inputs(p):
    p.add_argument("inputs", nargs="+", help="log files or directories of .log files")
    p.add_argument("--schema", help="JSON register schema {names: [...], address: [...]}")
    p.add_argument("--strict", action="store_true", help="reject malformed or truncated blocks")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="regtrace", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"regtrace {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="generate a seeded synthetic corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--states", type=int, default=6)
    p.add_argument("--baseline", type=int, default=20)
    p.add_argument("--esd", type=int, default=20)
    p.add_argument("--length", type=int, default=200)
    p.add_argument("--p", type=float, default=0.05, help="per-snapshot fault probability")
    p.add_argument("--k", type=int, default=2, help="bits flipped per fault")
    p.add_argument("--eligible", choices=("susceptible", "all"), default="susceptible")
    p.add_argument("--sticky", action="store_true", help="latch flipped bits until the chain rewrites the register")
    p.add_argument("--address-variation", type=float, default=0.0)
    p.add_argument("--schema")
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("ingest", help="parse logs and sidecars into trace files")
    _add_log_inputs(p)
    p.add_argument("--out", required=True)
    p.add_argument("--address-mode", choices=ADDRESS_MODES, default="delta")
    p.add_argument("--include-function", action="store_true")
    p.set_defaults(func=cmd_ingest)

    for name, func, help_ in (("graph", cmd_graph, "per-run execution graphs"),
                              ("unify", cmd_unify, "unified execution graph"),
                              ("diff", cmd_diff, "baseline vs ESD differential report")):
        p = sub.add_parser(name, help=help_)
        p.add_argument("artifact")
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("stats", help="statistical summaries as CSV")
    ssub = p.add_subparsers(dest="stats_command", required=True, parser_class=_Parser)
    q = ssub.add_parser("dist", help="register value distributions")
    _add_log_inputs(q)
    q.add_argument("--register", action="append")
    q.add_argument("--out", required=True)
    q = ssub.add_parser("compare", help="compare two registers' value distributions within a group")
    _add_log_inputs(q)
    q.add_argument("--a", default="HcInterruptEnable")
    q.add_argument("--b", default="HcInterruptDisable")
    q.add_argument("--group", choices=[c.value for c in Condition], default="esd")
    q.add_argument("--out", required=True)
    q = ssub.add_parser("occurrences", help="mean state occurrences per log")
    q.add_argument("artifact")
    q.add_argument("--out", required=True)
    q = ssub.add_parser("transitions", help="non-baseline transition percentage vs metadata")
    q.add_argument("artifact")
    q.add_argument("--field", default="voltage")
    q.add_argument("--out", required=True)
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("train", help="build a weight table")
    p.add_argument("artifact")
    p.add_argument("--variant", default="plain", help="plain, add-delta, scale-before or scale-after")
    p.add_argument("--delta", default="0")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="score traces with a weight table")
    p.add_argument("artifact")
    p.add_argument("--weights", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("sweep", help="evaluate a variant over several deltas")
    p.add_argument("artifact")
    p.add_argument("--variant", default="plain")
    p.add_argument("--delta", default="0", help="comma-separated list")
    p.add_argument("--protocol", default="loo", help="loo or split:<fraction>:<seed>")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)
    return parser


def run(argv=None) -> int:
    logging.basicConfig(format="warning: %(message)s", level=logging.WARNING, stream=sys.stderr)
    try:
        args = build_parser().parse_args(argv)
        files = args.func(args)
        if files:
            _write_outputs(Path(args.out), files)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (DataError, RegtraceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


def main(argv=None) -> None:
    sys.exit(run(argv))
