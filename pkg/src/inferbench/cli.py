"""Command-line entry point: run, score, rank, plan, export.

Exit codes: 0 success, 1 fatal (bad config, unreadable input, schema
mismatch), 2 partial (some tests errored) or integrity warning.
"""

from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping, Optional, Sequence

import jsonschema
import yaml

from . import analytics, delegation
from .backends import create_backend
from .clock import MonotonicClock, SimulatedClock
from .core import InferenceMode, TestResult, load_suite
from .errors import ConfigError, InferBenchError, ScoringError
from .harness import MemoryLadder, TestOutcome, aggregate_latencies, run_suite
from .scoring import final_score, load_score_config

SCHEMA_VERSION = "1.0"
EXIT_OK, EXIT_FATAL, EXIT_PARTIAL = 0, 1, 2


def result_schema() -> dict:
    return json.loads(resources.files("inferbench.data").joinpath("result_schema.json").read_text())


# --- result documents -------------------------------------------------------

def result_to_dict(r: TestResult) -> dict:
    return {
        "test_id": r.test_id,
        "workload_id": r.workload_id,
        "mode": r.mode.key,
        "status": "ok",
        "latencies_ms": list(r.latencies_ms),
        "mean_ms": r.mean_ms,
        "std_ms": r.std_ms,
        "init_ms": r.init_ms,
        "l1_error": r.l1_error,
        "images_processed": r.images_processed,
        "max_memory_resolution_px": r.max_memory_resolution_px,
        "sustained": r.sustained,
    }


def result_from_dict(d: Mapping, *, reaggregate: bool = False) -> TestResult:
    latencies = tuple(float(x) for x in d["latencies_ms"])
    mean, std = float(d["mean_ms"]), float(d["std_ms"])
    if reaggregate:
        mean, std = aggregate_latencies(latencies) if latencies else (0.0, 0.0)
    return TestResult(
        workload_id=d["workload_id"],
        mode=InferenceMode.parse(d["mode"]),
        latencies_ms=latencies,
        mean_ms=mean,
        std_ms=std,
        init_ms=float(d["init_ms"]),
        l1_error=d["l1_error"],
        images_processed=len(latencies) if reaggregate else int(d["images_processed"]),
        max_memory_resolution_px=d["max_memory_resolution_px"],
        test_id=d["test_id"],
        sustained=bool(d["sustained"]),
    )


def outcome_to_dict(o: TestOutcome) -> dict:
    if o.result is not None:
        return result_to_dict(o.result)
    return {"test_id": o.plan.test_id, "workload_id": o.plan.workload.id,
            "mode": o.plan.mode.key, "status": "error", "error": o.error or "unknown error"}


@dataclass
class ResultDocument:
    suite: str
    backend: str
    backend_params: dict
    results: list[dict]
    score: Optional[dict]
    config_fingerprint: str
    device: dict = field(default_factory=dict)
    seed: int = 0
    sustained: bool = False
    clock: str = "simulated"
    timestamp: str = ""
    score_error: Optional[str] = None
    schema_version: str = SCHEMA_VERSION

    def to_dict(self) -> dict:
        doc = {
            "schema_version": self.schema_version,
            "timestamp": self.timestamp,
            "suite": self.suite,
            "backend": {"name": self.backend, "params": self.backend_params},
            "device": self.device,
            "run": {"seed": self.seed, "sustained": self.sustained, "clock": self.clock},
            "results": self.results,
            "score": self.score,
            "config_fingerprint": self.config_fingerprint,
        }
        if self.score_error is not None:
            doc["score_error"] = self.score_error
        return doc

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"

    @classmethod
    def from_dict(cls, doc: Mapping) -> "ResultDocument":
        version = doc.get("schema_version") if isinstance(doc, Mapping) else None
        if version != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema_version {version!r}; expected {SCHEMA_VERSION!r}")
        try:
            jsonschema.validate(doc, result_schema())
        except jsonschema.ValidationError as exc:
            path = "/".join(str(p) for p in exc.absolute_path) or "<root>"
            raise ConfigError(f"result document violates the schema at {path}: {exc.message}") from None
        return cls(
            suite=doc["suite"], backend=doc["backend"]["name"], backend_params=doc["backend"]["params"],
            results=list(doc["results"]), score=doc["score"], config_fingerprint=doc["config_fingerprint"],
            device=doc["device"], seed=doc["run"]["seed"], sustained=doc["run"]["sustained"],
            clock=doc["run"]["clock"], timestamp=doc["timestamp"], score_error=doc.get("score_error"),
        )

    @classmethod
    def load(cls, path: str | Path) -> "ResultDocument":
        try:
            text = sys.stdin.read() if str(path) == "-" else Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read result document {path}: {exc}") from None
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path} is not JSON: {exc}") from None

    def ok_results(self, *, reaggregate: bool = False) -> list[TestResult]:
        return [result_from_dict(r, reaggregate=reaggregate) for r in self.results if r["status"] == "ok"]


def validate_document(doc: Mapping) -> None:
    """Raise ``jsonschema.ValidationError`` if ``doc`` does not match the shipped schema."""
    jsonschema.validate(doc, result_schema())


# --- rendering --------------------------------------------------------------

def _fmt(x: Optional[float], spec: str = ".3f") -> str:
    return "-" if x is None else format(x, spec)


def breakdown_text(b: Mapping) -> str:
    lines = ["per-test scores:"]
    width = max((len(k) for k in b["per_test_scores"]), default=0)
    for key, s in sorted(b["per_test_scores"].items()):
        lines.append(f"  {key:<{width}}  {s:.6f}")
    lines.append("category scores:")
    for cat, s in b["category_scores"].items():
        lines.append(f"  {cat:<10}  {s:.6f}")
    lines.append(f"memory multiplier: {b['memory_multiplier']:.2f}")
    lines.append(f"final score: {b['final_score']:.2f}")
    return "\n".join(lines) + "\n"


def document_text(doc: ResultDocument) -> str:
    out = [f"suite: {doc.suite}", f"backend: {doc.backend}", f"timestamp: {doc.timestamp}"]
    for k, v in sorted(doc.device.items()):
        out.append(f"device.{k}: {v}")
    out.append("")
    header = f"{'test':<44} {'mode':<17} {'mean ms':>10} {'std ms':>9} {'init ms':>9} {'images':>6} {'L1':>9}"
    out.append(header)
    for r in doc.results:
        if r["status"] != "ok":
            out.append(f"{r['test_id']:<44} {r['mode']:<17} ERROR: {r['error']}")
            continue
        mem = r["max_memory_resolution_px"]
        extra = f"  max resolution {mem} px" if mem is not None else ""
        out.append(f"{r['test_id']:<44} {r['mode']:<17} {r['mean_ms']:>10.2f} {r['std_ms']:>9.2f} "
                   f"{r['init_ms']:>9.1f} {r['images_processed']:>6} {_fmt(r['l1_error'], '.5f'):>9}{extra}")
    out.append("")
    if doc.score is not None:
        out.append(breakdown_text(doc.score).rstrip("\n"))
    elif doc.score_error:
        out.append(f"score unavailable: {doc.score_error}")
    return "\n".join(out) + "\n"


CSV_FIELDS = ("test_id", "workload_id", "mode", "status", "mean_ms", "std_ms", "init_ms", "l1_error",
              "images_processed", "max_memory_resolution_px", "error")


def document_csv(doc: ResultDocument) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, CSV_FIELDS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in doc.results:
        w.writerow({k: ("" if r.get(k) is None else r.get(k)) for k in CSV_FIELDS})
    return buf.getvalue()


def render_document(doc: ResultDocument, fmt: str) -> str:
    if fmt == "json":
        return doc.dumps()
    if fmt == "txt":
        return document_text(doc)
    return document_csv(doc)


def _emit(text: str, out: Optional[str]) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
        return
    try:
        Path(out).write_text(text)
    except OSError as exc:
        raise ConfigError(f"cannot write {out}: {exc}") from None


# --- configuration ----------------------------------------------------------

@dataclass
class RunConfig:
    backend: str = "synthetic"
    params: dict = field(default_factory=dict)
    device: dict = field(default_factory=dict)
    seed: int = 0
    sustained: bool = False
    clock: str = "simulated"
    suite: Optional[str] = None
    score_config: Optional[str] = None
    out: Optional[str] = None
    format: str = "json"
    base_dir: Path = Path(".")


_RUN_KEYS = {"seed", "sustained", "clock", "suite", "score_config", "out", "format"}


def load_run_config(spec: Optional[str]) -> RunConfig:
    """``spec`` is a backend config path or a bare registered backend name."""
    if spec is None:
        return RunConfig()
    path = Path(spec)
    if not path.exists() and "/" not in spec and not spec.endswith((".yaml", ".yml", ".json")):
        return RunConfig(backend=spec)
    try:
        data = yaml.safe_load(path.read_text()) or {}
    except OSError as exc:
        raise ConfigError(f"cannot read backend config {spec}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"backend config {spec} is not valid YAML: {exc}") from None
    if not isinstance(data, Mapping):
        raise ConfigError(f"backend config {spec} must be a mapping")
    unknown = set(data) - {"backend", "params", "device", "run"}
    if unknown:
        raise ConfigError(f"backend config {spec}: unknown sections {sorted(unknown)}")
    run = dict(data.get("run") or {})
    bad = set(run) - _RUN_KEYS
    if bad:
        raise ConfigError(f"backend config {spec}: unknown run keys {sorted(bad)}")
    cfg = RunConfig(backend=str(data.get("backend", "synthetic")), params=dict(data.get("params") or {}),
                    device=dict(data.get("device") or {}), base_dir=path.parent, **run)
    base = path.parent
    for name in ("suite", "score_config", "out"):
        value = getattr(cfg, name)
        if value is not None and value != "-" and not Path(value).is_absolute():
            setattr(cfg, name, str(base / value))
    return cfg


# --- commands ---------------------------------------------------------------

def cmd_run(args: argparse.Namespace) -> int:
    cfg = load_run_config(args.backend)
    suite_path = args.suite or cfg.suite
    score_path = args.score_config or cfg.score_config
    out = args.out or cfg.out
    sustained = bool(args.sustained or cfg.sustained)
    seed = cfg.seed if args.seed is None else args.seed
    fmt = args.format or cfg.format
    if fmt not in ("json", "txt", "csv"):
        raise ConfigError(f"unknown output format {fmt!r}")
    if cfg.clock not in ("simulated", "monotonic"):
        raise ConfigError(f"unknown clock {cfg.clock!r}")

    suite = load_suite(suite_path)
    config = load_score_config(score_path)
    backend = create_backend(cfg.backend, cfg.params, cfg.base_dir)
    clock = SimulatedClock() if cfg.clock == "simulated" else MonotonicClock()
    ladder = MemoryLadder(suite.memory_ladder_px) if suite.memory_ladder_px else None
    outcomes = run_suite(suite.workloads, backend, clock, sustained=sustained, seed=int(seed), ladder=ladder)

    results = [o.result for o in outcomes if o.ok]
    score, score_error = None, None
    try:
        score = final_score(results, config).to_dict()
    except ScoringError as exc:
        score_error = str(exc)
    doc = ResultDocument(
        suite=suite.name, backend=cfg.backend, backend_params=_jsonable(cfg.params),
        results=[outcome_to_dict(o) for o in outcomes], score=score,
        config_fingerprint=config.fingerprint(), device=_jsonable(cfg.device), seed=int(seed),
        sustained=sustained, clock=cfg.clock, score_error=score_error,
        timestamp=_dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds"),
    )
    validate_document(doc.to_dict())
    _emit(render_document(doc, fmt), out)

    failed = [o for o in outcomes if not o.ok]
    for o in failed:
        print(f"warning: {o.plan.test_id} failed: {o.error}", file=sys.stderr)
    if score_error:
        print(f"warning: score not computed: {score_error}", file=sys.stderr)
    return EXIT_PARTIAL if failed or score_error else EXIT_OK


def _jsonable(obj: Any) -> Any:
    return json.loads(json.dumps(obj, default=str))


def cmd_score(args: argparse.Namespace) -> int:
    doc = ResultDocument.load(args.document)
    config = load_score_config(args.score_config)
    warnings = []
    stored = {r.test_id: r for r in doc.ok_results()}
    fresh = doc.ok_results(reaggregate=True)
    for r in fresh:
        old = stored[r.test_id]
        diffs = [f"{name} {getattr(old, name)!r} vs {getattr(r, name)!r}"
                 for name in ("mean_ms", "std_ms", "images_processed") if getattr(old, name) != getattr(r, name)]
        if diffs:
            warnings.append(f"{r.test_id}: stored statistics do not match its latencies ({'; '.join(diffs)})")
    breakdown = final_score(fresh, config).to_dict()
    if config.fingerprint() != doc.config_fingerprint:
        warnings.append("score config fingerprint differs from the one the document was scored with")
    elif doc.score is None:
        warnings.append("document carries no embedded score")
    elif breakdown["final_score"] != doc.score["final_score"]:
        warnings.append(f"final score {breakdown['final_score']!r} differs from embedded "
                        f"{doc.score['final_score']!r}")
    if args.format == "json":
        payload = {**breakdown, "config_fingerprint": config.fingerprint(), "warnings": warnings}
        _emit(json.dumps(payload, indent=2) + "\n", args.out)
    else:
        _emit(breakdown_text(breakdown), args.out)
    for w in warnings:
        print(f"integrity warning: {w}", file=sys.stderr)
    return EXIT_PARTIAL if warnings else EXIT_OK


def _table_records(spec: str) -> list[analytics.DeviceRecord]:
    if not Path(spec).exists() and spec in ("float", "quant"):
        return analytics.bundled_table(spec)
    return analytics.load_table(spec)


def cmd_rank(args: argparse.Namespace) -> int:
    records = _table_records(args.table)
    policy = analytics.BaselinePolicy.parse(args.policy)
    percents = analytics.relative_performance(records, policy, min_overlap=args.min_overlap)
    ranking = analytics.rank(records, percents)
    fmt = args.format or "txt"
    if fmt == "json":
        text = json.dumps([{"rank": e.rank, "device_name": e.record.device_name, "soc_name": e.record.soc_name,
                            "accelerator": e.record.accelerator, "relative_perf_percent": e.relative_perf_percent,
                            "display_percent": e.display_percent} for e in ranking], indent=2) + "\n"
    elif fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["rank", "soc_name", "accelerator", "relative_perf_percent", "device_name"])
        for e in ranking:
            w.writerow([e.rank, e.record.soc_name, e.record.accelerator, repr(e.relative_perf_percent),
                        e.record.device_name])
        text = buf.getvalue()
    else:
        soc_w = max(len(e.record.soc_name) for e in ranking)
        acc_w = max(len(e.record.accelerator) for e in ranking)
        rows = [f"{'rank':>4}  {'SoC':<{soc_w}}  {'accelerator':<{acc_w}}  relative perf"]
        for e in ranking:
            rows.append(f"{e.rank:>4}  {e.record.soc_name:<{soc_w}}  {e.record.accelerator:<{acc_w}}  "
                        f"{e.display_percent:>4d}%")
        text = "\n".join(rows) + "\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_plan(args: argparse.Namespace) -> int:
    gdoc = delegation.load_graph(args.graph)
    caps = delegation.load_capabilities(args.capabilities)
    plan = delegation.partition(gdoc.graph, lambda kind, prec: (kind, prec) in caps)
    latency = delegation.estimate_latency(plan, gdoc.costs, args.overhead)
    order = gdoc.graph.topological_order()
    if args.format == "json":
        payload = {
            "assignments": {n: plan.assignments[n] for n in order},
            "subgraphs": [sorted(s) for s in plan.subgraphs],
            "boundary_crossings": plan.boundary_crossings,
            "estimated_latency_ms": latency,
            "exact": plan.exact,
        }
        _emit(json.dumps(payload, indent=2) + "\n", args.out)
        return EXIT_OK
    width = max(len(n) for n in order)
    lines = [f"subgraphs: {len(plan.subgraphs)}"]
    for k, members in enumerate(plan.subgraphs):
        lines.append(f"  DELEGATE({k}): {', '.join(n for n in order if n in members)}")
    lines.append("assignments:")
    lines += [f"  {n:<{width}}  {plan.label(n)}" for n in order]
    lines.append(f"boundary crossings: {plan.boundary_crossings}")
    lines.append(f"estimated latency: {latency:.3f} ms")
    if not plan.exact:
        lines.append("note: search budget exhausted, plan is a heuristic upper bound")
    _emit("\n".join(lines) + "\n", args.out)
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    doc = ResultDocument.load(args.document)
    _emit(render_document(doc, args.format or "json"), args.out)
    return EXIT_OK


# --- argument parsing -------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="inferbench", description="Mobile inference benchmark harness.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run the benchmark suite and write a result document")
    p.add_argument("--suite", help="suite config (default: bundled suite)")
    p.add_argument("--backend", help="backend config file or backend name (default: synthetic)")
    p.add_argument("--score-config", help="score config (default: bundled)")
    p.add_argument("--out", help="output path (default: stdout)")
    p.add_argument("--format", choices=("json", "txt", "csv"))
    p.add_argument("--sustained", action="store_true", help="request sustained performance mode")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("score", help="re-score a result document")
    p.add_argument("document")
    p.add_argument("--score-config")
    p.add_argument("--format", choices=("json", "txt"), default="txt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("rank", help="rank devices in a latency table by relative performance")
    p.add_argument("table", help="table path, or 'float' / 'quant' for the bundled tables")
    p.add_argument("--policy", choices=[b.value for b in analytics.BaselinePolicy], default="top-record")
    p.add_argument("--min-overlap", type=int, default=analytics.DEFAULT_MIN_OVERLAP)
    p.add_argument("--format", choices=("json", "txt", "csv"))
    p.add_argument("--out")
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("plan", help="partition an op graph between delegate and CPU")
    p.add_argument("graph")
    p.add_argument("capabilities")
    p.add_argument("--overhead", type=float, default=0.0, help="cost per boundary crossing, ms")
    p.add_argument("--format", choices=("json", "txt"), default="txt")
    p.add_argument("--out")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("export", help="convert a result document to json, txt or csv")
    p.add_argument("document")
    p.add_argument("--format", choices=("json", "txt", "csv"), default="json")
    p.add_argument("--out")
    p.set_defaults(func=cmd_export)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InferBenchError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FATAL


if __name__ == "__main__":
    sys.exit(main())
