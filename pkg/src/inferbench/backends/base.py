"""Backend/session interface that out-of-repo adapters implement.

A backend is a session factory. The harness opens sessions with
:meth:`Backend.open_session`, runs single-image inferences through
:meth:`Session.infer` and closes them again. Session accounting is guarded
by a lock, so factories may be called from several threads; an individual
session is owned by exactly one caller.
"""

from __future__ import annotations

import abc
import threading
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Mapping, Optional

import numpy as np

from ..clock import Clock
from ..core import InferenceMode, Precision, WorkloadSpec
from ..delegation import OP_KINDS
from ..errors import SessionLimitError, UnsupportedModeError

DEFAULT_OVERHEAD_FACTOR = 3.0
DEFAULT_CHANNELS = 4


def footprint_bytes(pixels: int, precision: Precision, *,
                    channels: int = DEFAULT_CHANNELS,
                    overhead_factor: float = DEFAULT_OVERHEAD_FACTOR) -> float:
    """Working-set model: ``pixels * channels * bytes_per_element * overhead``."""
    return pixels * channels * precision.bytes_per_element * overhead_factor


def full_support(unsupported: Iterable[tuple[str, Precision]] = ()) -> dict[tuple[str, Precision], bool]:
    """Op-support map over the whole op vocabulary, all True except ``unsupported``."""
    blocked = {(k, p) for k, p in unsupported}
    unknown = {k for k, _ in blocked} - set(OP_KINDS)
    if unknown:
        raise ValueError(f"unknown op kinds: {sorted(unknown)}")
    return {(k, p): (k, p) not in blocked for k in OP_KINDS for p in Precision}


@dataclass(frozen=True)
class BackendDescriptor:
    name: str
    supported: Mapping[tuple[str, Precision], bool] = field(default_factory=full_support)
    max_concurrent_sessions: int = 1
    memory_budget_bytes: Optional[int] = None
    declared_init_ms: Optional[float] = None

    def __post_init__(self):
        if self.max_concurrent_sessions < 1:
            raise ValueError("max_concurrent_sessions must be >= 1")
        missing = [(k, p) for k in OP_KINDS for p in Precision if (k, p) not in self.supported]
        if missing:
            raise ValueError(f"support map is not total; missing {missing[:3]}...")
        object.__setattr__(self, "supported", MappingProxyType(dict(self.supported)))

    def supports_op(self, kind: str, precision: Precision) -> bool:
        return self.supported.get((kind, precision), False)


class Session(abc.ABC):
    """A prepared model instance. Not thread-safe; one owner."""

    def __init__(self, backend: "Backend", workload: WorkloadSpec, mode: InferenceMode,
                 clock: Clock, instance: int, sustained: bool):
        self.backend = backend
        self.workload = workload
        self.mode = mode
        self.clock = clock
        self.instance = instance
        self.sustained = sustained
        self.inferences = 0
        self._closed = False

    @abc.abstractmethod
    def infer(self, inputs: np.ndarray) -> Optional[np.ndarray]:
        """Run one single-image inference; return the output tensor, if any."""

    def close(self) -> None:
        if not self._closed:
            self._closed = True
            self.backend._release()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class Backend(abc.ABC):
    name: str = "abstract"

    def __init__(self, descriptor: BackendDescriptor):
        self.descriptor = descriptor
        self._lock = threading.Lock()
        self._open = 0
        self.peak_sessions = 0

    @property
    def open_sessions(self) -> int:
        return self._open

    def supports(self, workload: WorkloadSpec, mode: InferenceMode) -> bool:
        return mode in workload.supported_modes

    def open_session(self, workload: WorkloadSpec, mode: InferenceMode, clock: Clock, *,
                     instance: int = 0, sustained: bool = False) -> Session:
        """Open and prepare a session; preparation cost elapses on ``clock``."""
        if not self.supports(workload, mode):
            raise UnsupportedModeError(f"{self.name}: {workload.id} does not support mode {mode}")
        with self._lock:
            if self._open >= self.descriptor.max_concurrent_sessions:
                raise SessionLimitError(
                    f"{self.name}: session limit {self.descriptor.max_concurrent_sessions} reached")
            self._open += 1
            self.peak_sessions = max(self.peak_sessions, self._open)
        try:
            return self._create_session(workload, mode, clock, instance, sustained)
        except BaseException:
            self._release()
            raise

    @abc.abstractmethod
    def _create_session(self, workload: WorkloadSpec, mode: InferenceMode, clock: Clock,
                        instance: int, sustained: bool) -> Session:
        ...

    def reference_output(self, workload: WorkloadSpec, inputs: np.ndarray) -> Optional[np.ndarray]:
        """Target output for the accuracy check; ``None`` if the backend has none."""
        return None

    def _release(self) -> None:
        with self._lock:
            self._open -= 1

    def fits_memory(self, pixels: int, precision: Precision) -> bool:
        budget = self.descriptor.memory_budget_bytes
        return budget is None or footprint_bytes(pixels, precision) <= budget
