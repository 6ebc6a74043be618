"""Trace-replay backend: every inference takes exactly the next recorded latency.

Trace files have an ``init_ms=<value>`` header followed by one latency (ms)
per line; blank lines and ``#`` comments are ignored.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Optional, Sequence

import numpy as np

from ..clock import Clock
from ..core import InferenceMode, WorkloadSpec, make_test_id
from ..errors import ConfigError, OutOfMemoryError, SessionOpenError, TraceExhaustedError
from .base import Backend, BackendDescriptor, Session, full_support


@dataclass(frozen=True)
class LatencyTrace:
    entries_ms: tuple[float, ...]
    init_ms: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "entries_ms", tuple(float(e) for e in self.entries_ms))
        bad = [e for e in self.entries_ms if not e > 0]
        if bad:
            raise ValueError(f"trace entries must be > 0, got {bad[:3]}")
        if self.init_ms < 0:
            raise ValueError("init_ms must be >= 0")

    @classmethod
    def parse(cls, text: str, source: str = "<trace>") -> "LatencyTrace":
        init = None
        entries = []
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if line.startswith("init_ms="):
                if init is not None or entries:
                    raise ConfigError(f"{source}:{lineno}: init_ms header must come first, once")
                value = line.partition("=")[2]
            else:
                value = line
            try:
                number = float(value)
            except ValueError:
                raise ConfigError(f"{source}:{lineno}: not a number: {value!r}") from None
            if line.startswith("init_ms="):
                init = number
            else:
                entries.append(number)
        if init is None:
            raise ConfigError(f"{source}: missing init_ms=<value> header")
        try:
            return cls(tuple(entries), init)
        except ValueError as exc:
            raise ConfigError(f"{source}: {exc}") from None

    @classmethod
    def load(cls, path: str | Path) -> "LatencyTrace":
        try:
            return cls.parse(Path(path).read_text(), str(path))
        except OSError as exc:
            raise ConfigError(f"cannot read trace {path}: {exc}") from None

    def dumps(self) -> str:
        return "".join([f"init_ms={self.init_ms!r}\n"] + [f"{e!r}\n" for e in self.entries_ms])


class ReplaySession(Session):
    def __init__(self, *args, trace: LatencyTrace, **kwargs):
        super().__init__(*args, **kwargs)
        self.trace = trace
        self._cursor = 0

    def replay_infer(self) -> float:
        if self._cursor >= len(self.trace.entries_ms):
            raise TraceExhaustedError(
                f"{self.workload.id}: trace exhausted after {self._cursor} inferences")
        latency = self.trace.entries_ms[self._cursor]
        self._cursor += 1
        self.clock.advance(latency)
        self.inferences += 1
        return latency

    def infer(self, inputs: np.ndarray) -> None:
        pixels = inputs.shape[0] * inputs.shape[1]
        if not self.backend.fits_memory(pixels, self.mode.precision):
            raise OutOfMemoryError(f"{self.workload.id}: {inputs.shape[1]}x{inputs.shape[0]} over budget")
        self.replay_infer()
        return None


class ReplayBackend(Backend):
    """Traces are keyed by test id, workload id, or ``"*"`` as a fallback.

    Session ``instance`` k of a test replays ``traces[key][k % len]`` from its
    first entry.
    """

    name = "replay"

    def __init__(self, traces: Mapping[str, LatencyTrace | Sequence[LatencyTrace]], *,
                 max_concurrent_sessions: int = 2, memory_budget_bytes: Optional[int] = None,
                 declared_init_ms: Optional[float] = None, fail_open: Sequence[str] = ()):
        super().__init__(BackendDescriptor(
            name=self.name,
            supported=full_support(),
            max_concurrent_sessions=max_concurrent_sessions,
            memory_budget_bytes=memory_budget_bytes,
            declared_init_ms=declared_init_ms,
        ))
        self.traces = {k: (tuple(v) if isinstance(v, (list, tuple)) else (v,)) for k, v in traces.items()}
        self.fail_open = tuple(fail_open)

    def _traces_for(self, workload: WorkloadSpec, mode: InferenceMode):
        return (self.traces.get(make_test_id(workload, mode)) or self.traces.get(workload.id)
                or self.traces.get("*"))

    def supports(self, workload: WorkloadSpec, mode: InferenceMode) -> bool:
        return super().supports(workload, mode) and bool(self._traces_for(workload, mode))

    def _create_session(self, workload, mode, clock: Clock, instance, sustained) -> ReplaySession:
        if workload.id in self.fail_open or f"{workload.id}#{instance}" in self.fail_open:
            raise SessionOpenError(f"injected open failure for {workload.id} instance {instance}")
        traces = self._traces_for(workload, mode)
        trace = traces[instance % len(traces)]
        init = self.descriptor.declared_init_ms
        clock.advance(trace.init_ms if init is None else init)
        return ReplaySession(self, workload, mode, clock, instance, sustained, trace=trace)
