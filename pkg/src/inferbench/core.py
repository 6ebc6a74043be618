"""Domain types and the bundled workload registry.

A suite is a YAML document (see ``docs/formats.md``)::

    suite: <name>
    memory_ladder_px: [200, 300, ...]     # optional
    workloads:
      - id: section01_mobilenet_v2_cpu_float
        section: 1
        ...

Workload ids are stable; display names are metadata only.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional

import yaml

from .errors import ConfigError


class Target(enum.Enum):
    CPU = "cpu"
    ACCELERATOR = "accelerator"


class Precision(enum.Enum):
    INT8 = "int8"
    FP16 = "fp16"
    FP32 = "fp32"

    @property
    def bytes_per_element(self) -> int:
        return {"int8": 1, "fp16": 2, "fp32": 4}[self.value]

    @property
    def is_float(self) -> bool:
        return self is not Precision.INT8


# Canonical ordering used for serialization and sorting.
_TARGET_ORDER = {Target.CPU: 0, Target.ACCELERATOR: 1}
_PRECISION_ORDER = {Precision.INT8: 0, Precision.FP16: 1, Precision.FP32: 2}


@dataclass(frozen=True, order=False)
class InferenceMode:
    """One (target, precision) execution mode."""

    target: Target
    precision: Precision

    @property
    def key(self) -> str:
        return f"{self.target.value}_{self.precision.value}"

    @property
    def app_label(self) -> str:
        """Name of the corresponding inference type in the benchmark app."""
        if self.target is Target.CPU:
            return "CPU-quantized" if self.precision is Precision.INT8 else "CPU-float"
        return {
            Precision.INT8: "int-8-NNAPI",
            Precision.FP16: "float-16-NNAPI",
            Precision.FP32: "float-32-NNAPI",
        }[self.precision]

    def sort_key(self) -> tuple[int, int]:
        return (_TARGET_ORDER[self.target], _PRECISION_ORDER[self.precision])

    @classmethod
    def parse(cls, text: str) -> "InferenceMode":
        try:
            target, precision = text.strip().lower().rsplit("_", 1)
            return cls(Target(target), Precision(precision))
        except ValueError:
            raise ConfigError(f"unknown inference mode {text!r}") from None

    def __str__(self) -> str:
        return self.key


CPU_FP16 = InferenceMode(Target.CPU, Precision.FP16)
CPU_FP32 = InferenceMode(Target.CPU, Precision.FP32)
CPU_INT8 = InferenceMode(Target.CPU, Precision.INT8)
ACC_INT8 = InferenceMode(Target.ACCELERATOR, Precision.INT8)
ACC_FP16 = InferenceMode(Target.ACCELERATOR, Precision.FP16)
ACC_FP32 = InferenceMode(Target.ACCELERATOR, Precision.FP32)

ALL_MODES = (CPU_INT8, CPU_FP16, CPU_FP32, ACC_INT8, ACC_FP16, ACC_FP32)

# CPU (FP16) and CPU (FP32) collapse to the same "CPU-float" type.
MODE_LABELS = frozenset(m.app_label for m in ALL_MODES)

SEGMENTATION_TASK = "Image Segmentation"


@dataclass(frozen=True)
class WorkloadSpec:
    id: str
    section: int
    task: str
    architecture: str
    input_resolution: tuple[int, int]  # (width, height) in px
    param_count: int
    model_size_mb: float
    supported_modes: frozenset[InferenceMode]
    time_limit_s: float
    parallel_instances: int = 1
    is_memory_test: bool = False
    accuracy_check: bool = False
    display_name: str = ""

    @property
    def pixels(self) -> int:
        return self.input_resolution[0] * self.input_resolution[1]

    def sorted_modes(self) -> list[InferenceMode]:
        return sorted(self.supported_modes, key=InferenceMode.sort_key)


def make_test_id(workload: WorkloadSpec, mode: InferenceMode) -> str:
    """Identifier under which a (workload, mode) result is scored.

    Single-mode workloads (the whole default suite) use the workload id
    itself; multi-mode custom workloads get a ``@<mode>`` suffix.
    """
    if len(workload.supported_modes) == 1:
        return workload.id
    return f"{workload.id}@{mode.key}"


@dataclass(frozen=True)
class TestResult:
    """Outcome of one (workload, mode) run."""

    __test__ = False

    workload_id: str
    mode: InferenceMode
    latencies_ms: tuple[float, ...]
    mean_ms: float
    std_ms: float
    init_ms: float
    l1_error: Optional[float] = None
    images_processed: int = 0
    max_memory_resolution_px: Optional[int] = None
    test_id: str = ""
    sustained: bool = False

    def __post_init__(self):
        if not self.test_id:
            object.__setattr__(self, "test_id", self.workload_id)


@dataclass(frozen=True)
class Violation:
    field: str
    message: str

    def __str__(self) -> str:
        return f"{self.field}: {self.message}"


def validate_spec(spec: WorkloadSpec) -> list[Violation]:
    """Return every violated WorkloadSpec invariant; empty means valid."""
    out: list[Violation] = []
    if not spec.id:
        out.append(Violation("id", "must be non-empty"))
    if not 1 <= spec.section <= 11:
        out.append(Violation("section", f"must be in 1..11, got {spec.section}"))
    if not spec.time_limit_s > 0:
        out.append(Violation("time_limit_s", f"must be > 0, got {spec.time_limit_s}"))
    w, h = spec.input_resolution
    if w <= 0 or h <= 0:
        out.append(Violation("input_resolution", f"components must be > 0, got {w}x{h}"))
    if spec.param_count <= 0:
        out.append(Violation("param_count", "must be > 0"))
    if not spec.model_size_mb > 0:
        out.append(Violation("model_size_mb", "must be > 0"))
    if not spec.supported_modes:
        out.append(Violation("supported_modes", "must name at least one mode"))
    for mode in spec.supported_modes:
        if not isinstance(mode, InferenceMode) or mode.app_label not in MODE_LABELS:
            out.append(Violation("supported_modes", f"unknown mode {mode!r}"))
    n = spec.parallel_instances
    if n < 1:
        out.append(Violation("parallel_instances", f"must be >= 1, got {n}"))
    elif n > 2:
        out.append(Violation("parallel_instances", f"at most 2 instances are supported, got {n}"))
    elif n == 2 and spec.task != SEGMENTATION_TASK:
        out.append(Violation("parallel_instances", "2 instances only allowed for the segmentation workload"))
    if spec.is_memory_test and n != 1:
        out.append(Violation("is_memory_test", "memory test cannot run parallel instances"))
    return out


# --- serialization --------------------------------------------------------

def spec_to_dict(spec: WorkloadSpec) -> dict:
    return {
        "id": spec.id,
        "display_name": spec.display_name,
        "section": spec.section,
        "task": spec.task,
        "architecture": spec.architecture,
        "input_resolution": list(spec.input_resolution),
        "param_count": spec.param_count,
        "model_size_mb": spec.model_size_mb,
        "modes": [m.key for m in spec.sorted_modes()],
        "time_limit_s": spec.time_limit_s,
        "parallel_instances": spec.parallel_instances,
        "is_memory_test": spec.is_memory_test,
        "accuracy_check": spec.accuracy_check,
    }


_REQUIRED_KEYS = ("id", "section", "task", "architecture", "input_resolution",
                  "param_count", "model_size_mb", "modes", "time_limit_s")


def spec_from_dict(data: dict) -> WorkloadSpec:
    missing = [k for k in _REQUIRED_KEYS if k not in data]
    if missing:
        raise ConfigError(f"workload {data.get('id', '?')!r} is missing keys: {', '.join(missing)}")
    try:
        w, h = data["input_resolution"]
        return WorkloadSpec(
            id=str(data["id"]),
            section=int(data["section"]),
            task=str(data["task"]),
            architecture=str(data["architecture"]),
            input_resolution=(int(w), int(h)),
            param_count=int(data["param_count"]),
            model_size_mb=float(data["model_size_mb"]),
            supported_modes=frozenset(InferenceMode.parse(m) for m in data["modes"]),
            time_limit_s=float(data["time_limit_s"]),
            parallel_instances=int(data.get("parallel_instances", 1)),
            is_memory_test=bool(data.get("is_memory_test", False)),
            accuracy_check=bool(data.get("accuracy_check", False)),
            display_name=str(data.get("display_name", "")),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"workload {data.get('id', '?')!r}: {exc}") from None


@dataclass(frozen=True)
class Suite:
    name: str
    workloads: tuple[WorkloadSpec, ...]
    memory_ladder_px: Optional[tuple[int, ...]] = None
    metadata: dict = field(default_factory=dict, compare=False)


def dump_suite(suite: Suite) -> str:
    """Canonical YAML rendering of a suite."""
    doc: dict = {"suite": suite.name}
    if suite.memory_ladder_px is not None:
        doc["memory_ladder_px"] = list(suite.memory_ladder_px)
    doc["workloads"] = [spec_to_dict(s) for s in suite.workloads]
    return yaml.safe_dump(doc, sort_keys=False, default_flow_style=None, width=100)


def parse_suite(text: str, *, validate: bool = True) -> Suite:
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"suite document is not valid YAML: {exc}") from None
    if not isinstance(doc, dict) or not isinstance(doc.get("workloads"), list):
        raise ConfigError("suite document must be a mapping with a 'workloads' list")
    specs = tuple(spec_from_dict(d) for d in doc["workloads"])
    ids = [s.id for s in specs]
    dupes = sorted({i for i in ids if ids.count(i) > 1})
    if dupes:
        raise ConfigError(f"duplicate workload ids: {', '.join(dupes)}")
    if validate:
        problems = [f"{s.id}: {v}" for s in specs for v in validate_spec(s)]
        if problems:
            raise ConfigError("invalid workloads:\n  " + "\n  ".join(problems))
    ladder = doc.get("memory_ladder_px")
    return Suite(
        name=str(doc.get("suite", "custom")),
        workloads=specs,
        memory_ladder_px=tuple(int(r) for r in ladder) if ladder is not None else None,
    )


def load_suite(path: Optional[str | Path] = None) -> Suite:
    """Load a suite file; ``None`` loads the bundled default suite."""
    if path is None:
        text = resources.files("inferbench.data").joinpath("suite_default.yaml").read_text()
    else:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read suite {path}: {exc}") from None
    return parse_suite(text)


def registry_default() -> list[WorkloadSpec]:
    """The 21 tests of the bundled suite, in section order."""
    return list(load_suite().workloads)


def dump_registry(specs: Iterable[WorkloadSpec], name: str = "custom") -> str:
    return dump_suite(Suite(name=name, workloads=tuple(specs)))


def parse_registry(text: str) -> list[WorkloadSpec]:
    return list(parse_suite(text).workloads)
